"""End-to-end stages shared by the command line and the benchmark suite."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baseline import BASELINE_LABEL, BaselineFitPredict
from .ensemble import DEFAULT_SEEDS, aggregate_table, check_models, smooth_arrays, window_probabilities
from .evaluation import combine_folds, score_fold, temporal_folds
from .features import FrameTable, build_frames, read_frame_csv, read_stat_csv, write_frame_csv, write_stat_csv
from .ingest import (DataError, ParseReport, align_labels, day_label, merge_readings, parse_ble_csv,
                     parse_labels_csv, read_mac_map, write_labeled_csv, write_report)
from .nn.train import TrainConfig, train
from .parallel import run_ordered
from .sequencing import segment_days

log = logging.getLogger(__name__)

# pipeline name -> (directions, smoothing); None marks the baselines
PIPELINES = {
    "baseline": None,
    "baseline_v1": None,
    "dasel": ("all", True),
    "dasel_ablation": ("backward_10", False),
}
APPROACH_LABELS = {
    "baseline": BASELINE_LABEL,
    "baseline_v1": BASELINE_LABEL + " + dominant beacons",
    "dasel": "dasel",
    "dasel_ablation": "dasel (backward_10 only, no smoothing)",
}


def resolve_pipelines(names):
    if isinstance(names, str):
        names = [n.strip() for n in names.split(",") if n.strip()]
    unknown = [n for n in names if n not in PIPELINES]
    if unknown:
        raise ValueError(f"unknown pipeline(s): {', '.join(unknown)}")
    return [n for n in PIPELINES if n in names]


# --------------------------------------------------------------------------
# prepare
# --------------------------------------------------------------------------


@dataclass
class Prepared:
    table: FrameTable
    labeled: object
    coverage: float
    reports: list
    rejected_seconds: int
    overlapping_readings: int
    overlapping_intervals: int
    extra: dict = field(default_factory=dict)


def raw_files(raw_dir):
    raw = Path(raw_dir)
    if not raw.is_dir():
        raise DataError(f"raw directory {raw} does not exist")
    ble = sorted(raw.glob("ble_*.csv"))
    if not ble:
        raise DataError(f"no ble_*.csv files in {raw}")
    for name in ("labels.csv", "macmap.csv"):
        if not (raw / name).is_file():
            raise DataError(f"missing {raw / name}")
    return ble, raw / "labels.csv", raw / "macmap.csv"


def prepare(raw_dir, observer_id=97) -> Prepared:
    ble, labels_path, mac_path = raw_files(raw_dir)
    mac_map = read_mac_map(mac_path)
    reports, parts = [], []
    for path in ble:
        rep = ParseReport(path.name)
        parts.append(parse_ble_csv(path, mac_map, rep))
        reports.append(rep)
    readings = merge_readings(parts)
    lab_rep = ParseReport(labels_path.name)
    intervals = parse_labels_csv(labels_path, observer_id, lab_rep)
    reports.append(lab_rep)
    aligned = align_labels(readings, intervals)
    table, rejected = build_frames(aligned.readings)
    return Prepared(table, aligned.readings, aligned.coverage, reports, rejected,
                    aligned.overlapping_readings, aligned.overlapping_intervals)


def write_prepared(prep: Prepared, out_dir, labeled_csv=True):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    if labeled_csv:
        write_labeled_csv(out / "labeled.csv", prep.labeled)
        files.append("labeled.csv")
    write_frame_csv(out / "frames.csv", prep.table)
    write_stat_csv(out / "stats.csv", prep.table)
    write_report(out / "report.json", prep.reports, {
        "coverage": prep.coverage,
        "frames": len(prep.table),
        "rejected_seconds": prep.rejected_seconds,
        "overlapping_readings": prep.overlapping_readings,
        "overlapping_intervals": prep.overlapping_intervals,
    })
    return files + ["frames.csv", "stats.csv", "report.json"]


def load_frames(frames_dir, need_stats=True) -> FrameTable:
    """Frame table from a prepared directory (frequency plus optional stat columns)."""
    d = Path(frames_dir)
    table = read_frame_csv(d / "frames.csv")
    if need_stats:
        st = read_stat_csv(d / "stats.csv")
        if not np.array_equal(st.timestamp, table.timestamp):
            raise DataError(f"{d}: frames.csv and stats.csv disagree on timestamps")
        table.stats, table.dominant = st.stats, st.dominant
    return table


def select_days(table, days):
    """Rows of ``table`` whose local date (YYYY-MM-DD) is in ``days``."""
    if not days:
        return table
    if isinstance(days, str):
        days = [d.strip() for d in days.split(",") if d.strip()]
    labels = np.array([day_label(d) for d in table.day.tolist()], dtype=object)
    keep = np.isin(labels, list(days))
    if not keep.any():
        raise DataError(f"no frames on day(s) {', '.join(days)}")
    return table.subset(np.flatnonzero(keep))


# --------------------------------------------------------------------------
# train / predict
# --------------------------------------------------------------------------


def training_set(table):
    if table.room is None:
        raise DataError("training frames carry no room labels")
    seg = segment_days(table)
    if not seg.sequences:
        raise DataError("no training sequences (every room run shorter than 3 frames)")
    classes = sorted({s.room for s in seg.sequences})
    return seg, classes


@dataclass
class TrainTask:
    """One (data, seed) training unit; picklable for process pools."""

    sequences: list
    classes: list
    config: TrainConfig
    backend: str | None = None

    def __call__(self, seed):
        return train(self.sequences, self.config, seed, classes=self.classes, backend=self.backend)


def train_models(table, config: TrainConfig, seeds=DEFAULT_SEEDS, jobs=1, backend=None):
    seg, classes = training_set(table)
    models = run_ordered(TrainTask(seg.sequences, classes, config, backend), list(seeds), jobs)
    return models, seg


def predict_variants(table, models, variants: dict, backend=None) -> dict:
    """{name: PredictionTable} for several (directions, smoothing) choices sharing one
    evaluation of the windows."""
    wp = window_probabilities(table, models, "all", backend=backend)
    return {name: aggregate_table(table, wp, dirs, smooth) for name, (dirs, smooth) in variants.items()}


@dataclass
class _DayProbs:
    models: list
    directions: object
    backend: str | None

    def __call__(self, day_table):
        wp = window_probabilities(day_table, self.models, self.directions, backend=self.backend)
        return aggregate_table(day_table, wp, self.directions, smooth=False)


def predict_frames(table, models, directions="all", smooth=True, jobs=1, backend=None):
    """Per-day window inference (parallel over days), then smoothing over the whole table."""
    check_models(models)
    if len(table) == 0:
        raise DataError("no frames to predict")
    day = table.day
    days = np.unique(day)
    parts = run_ordered(_DayProbs(models, directions, backend),
                        [table.subset(np.flatnonzero(day == d)) for d in days], jobs)
    order = np.concatenate([np.flatnonzero(day == d) for d in days])
    if np.any(np.diff(table.timestamp[order]) <= 0):
        raise DataError("frame timestamps must be strictly increasing")
    pred = parts[0]
    for extra in parts[1:]:
        pred.timestamp = np.concatenate([pred.timestamp, extra.timestamp])
        pred.utc_offset = np.concatenate([pred.utc_offset, extra.utc_offset])
        pred.probs = np.concatenate([pred.probs, extra.probs])
        pred.final = np.concatenate([pred.final, extra.final])
        pred.directions = np.concatenate([pred.directions, extra.directions])
    pred.smoothed = smooth_arrays(pred.timestamp, pred.probs) if smooth else pred.final.copy()
    pred.meta["smoothing"] = bool(smooth)
    return pred


# --------------------------------------------------------------------------
# cross-validation
# --------------------------------------------------------------------------


@dataclass
class _CvTrain:
    config: TrainConfig
    backend: str | None

    def __call__(self, item):
        seqs, classes, seed = item
        return train(seqs, self.config, seed, classes=classes, backend=self.backend)


@dataclass
class _CvPredict:
    variants: dict
    backend: str | None

    def __call__(self, item):
        test, models = item
        return predict_variants(test, models, self.variants, self.backend)


@dataclass
class _CvBaseline:
    fit_predict: object

    def __call__(self, item):
        train_t, test_t = item
        return self.fit_predict(train_t, test_t)


@dataclass
class CvResult:
    folds: list
    reports: dict  # pipeline -> ScoreReport
    predictions: dict  # pipeline -> {fold id: labels}
    tables: dict = field(default_factory=dict)  # dasel pipeline -> {fold id: PredictionTable}
    models: dict = field(default_factory=dict)  # fold id -> models


def cross_validate_pipelines(table, pipelines, train_config: TrainConfig, seeds=DEFAULT_SEEDS,
                             jobs=1, backend=None, baseline_epochs=10, progress=None) -> CvResult:
    """Day-held-out CV of the named pipelines.

    All DASEL variants of a fold share its trained models. Work runs as
    independent (fold, seed) and per-fold units, so outputs do not depend
    on ``jobs``.
    """
    pipelines = resolve_pipelines(pipelines)
    folds = temporal_folds(table)
    splits = {f.fold_id: f.split(table) for f in folds}
    subsets = {fid: (table.subset(tr), table.subset(te)) for fid, (tr, te) in splits.items()}
    preds, reports, tables, fold_models = {}, {}, {}, {}

    nn_names = [p for p in pipelines if PIPELINES[p] is not None]
    if nn_names:
        units, keys = [], []
        for f in folds:
            seg, classes = training_set(subsets[f.fold_id][0])
            for s in seeds:
                units.append((seg.sequences, classes, int(s)))
                keys.append(f.fold_id)
        if progress:
            progress(f"training {len(units)} models ({len(folds)} folds x {len(seeds)} seeds)")
        trained = run_ordered(_CvTrain(train_config, backend), units, jobs)
        for fid, m in zip(keys, trained):
            fold_models.setdefault(fid, []).append(m)
        for fid, models in fold_models.items():
            check_models(models)
        if progress:
            progress("predicting held-out days")
        variants = {p: PIPELINES[p] for p in nn_names}
        outs = run_ordered(_CvPredict(variants, backend),
                           [(subsets[f.fold_id][1], fold_models[f.fold_id]) for f in folds], jobs)
        for f, out in zip(folds, outs):
            for p in nn_names:
                tables.setdefault(p, {})[f.fold_id] = out[p]
                preds.setdefault(p, {})[f.fold_id] = out[p].labels(smoothed=True)

    for p in pipelines:
        if PIPELINES[p] is not None:
            continue
        if progress:
            progress(f"fitting {p}")
        fp = BaselineFitPredict(dominant=(p == "baseline_v1"), epochs=baseline_epochs)
        outs = run_ordered(_CvBaseline(fp), [subsets[f.fold_id] for f in folds], jobs)
        preds[p] = {f.fold_id: o for f, o in zip(folds, outs)}

    for p in pipelines:
        per_fold = {}
        for f in folds:
            train_t, test_t = subsets[f.fold_id]
            per_fold[f.fold_id] = score_fold(test_t.room, preds[p][f.fold_id], train_t.room)
        reports[p] = combine_folds(per_fold)
    return CvResult(folds, reports, preds, tables, fold_models)
