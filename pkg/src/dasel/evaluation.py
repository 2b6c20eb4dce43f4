"""Macro-F1 scoring and day-held-out cross-validation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ingest import day_label
from .parallel import run_ordered


@dataclass
class ScoreReport:
    per_class_f1: dict
    macro_f1: float
    per_fold: dict = field(default_factory=dict)
    mean: float = 0.0
    std: float = 0.0
    unknown_classes: list = field(default_factory=list)  # scored but never trained on


def f1_scores(truth, pred, class_set):
    truth = np.asarray(truth, dtype=object)
    pred = np.asarray(pred, dtype=object)
    out = {}
    for c in class_set:
        t, p = truth == c, pred == c
        tp = int(np.sum(t & p))
        fp = int(np.sum(~t & p))
        fn = int(np.sum(t & ~p))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        out[c] = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return out


def macro_f1(truth, pred, class_set=None) -> ScoreReport:
    """Unweighted mean of per-class F1; ``class_set`` defaults to the classes in ``truth``."""
    if len(truth) != len(pred):
        raise ValueError(f"truth and pred differ in length ({len(truth)} vs {len(pred)})")
    if len(truth) == 0:
        raise ValueError("nothing to score")
    if class_set is None:
        class_set = sorted(set(np.asarray(truth, dtype=object).tolist()))
    class_set = list(class_set)
    if not class_set:
        raise ValueError("empty class set")
    per = f1_scores(truth, pred, class_set)
    macro = sum(per[c] for c in class_set) / len(class_set)
    return ScoreReport(per, macro, mean=macro)


def sample_std(values):
    v = np.asarray(values, dtype=np.float64)
    return float(np.std(v, ddof=1)) if len(v) > 1 else 0.0


# --------------------------------------------------------------------------
# folds
# --------------------------------------------------------------------------


@dataclass
class FoldSpec:
    fold_id: int
    test_day: str
    train_days: list
    train_frames: int
    test_frames: int
    ratio: float
    train_classes: int
    test_classes: int
    test_day_index: int = 0

    def split(self, table):
        """(train indices, test indices) of ``table``."""
        test = table.day == self.test_day_index
        return np.flatnonzero(~test), np.flatnonzero(test)


def temporal_folds(table) -> list:
    """One fold per local calendar day; fold 1 holds out the last day."""
    day = table.day
    days = np.unique(day)
    if len(days) < 2:
        raise ValueError("cross-validation needs at least two days")
    rooms = np.asarray(table.room, dtype=object)
    folds = []
    for k, d in enumerate(sorted(days.tolist(), reverse=True), start=1):
        test = day == d
        n_test, n_train = int(test.sum()), int((~test).sum())
        folds.append(FoldSpec(
            fold_id=k,
            test_day=day_label(d),
            train_days=[day_label(x) for x in days.tolist() if x != d],
            train_frames=n_train,
            test_frames=n_test,
            ratio=n_train / n_test,
            train_classes=len(set(rooms[~test].tolist())),
            test_classes=len(set(rooms[test].tolist())),
            test_day_index=int(d),
        ))
    return folds


FOLD_HEADER = ["fold", "test_day", "train_frames", "test_frames", "ratio", "train_classes",
               "test_classes"]


def write_folds_csv(path, folds):
    lines = [",".join(FOLD_HEADER)]
    for f in folds:
        lines.append(f"{f.fold_id},{f.test_day},{f.train_frames},{f.test_frames},{f.ratio:.4f},"
                     f"{f.train_classes},{f.test_classes}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# cross-validation
# --------------------------------------------------------------------------


def score_fold(truth, pred, train_rooms):
    """Score one held-out day over the classes present in its ground truth."""
    class_set = sorted(set(np.asarray(truth, dtype=object).tolist()))
    rep = macro_f1(truth, pred, class_set)
    seen = set(np.asarray(train_rooms, dtype=object).tolist())
    rep.unknown_classes = [c for c in class_set if c not in seen]
    return rep


def combine_folds(reports: dict) -> ScoreReport:
    """Merge per-fold reports (keyed by fold id) into mean and sample std."""
    ids = sorted(reports)
    scores = [reports[i].macro_f1 for i in ids]
    per_class = {}
    for i in ids:
        for c, v in reports[i].per_class_f1.items():
            per_class.setdefault(c, []).append(v)
    unknown = sorted({c for i in ids for c in reports[i].unknown_classes})
    mean = float(np.mean(scores))
    return ScoreReport({c: float(np.mean(v)) for c, v in sorted(per_class.items())}, mean,
                       {i: reports[i].macro_f1 for i in ids}, mean, sample_std(scores), unknown)


class _FoldTask:
    def __init__(self, table, fit_predict):
        self.table, self.fit_predict = table, fit_predict

    def __call__(self, fold):
        tr, te = fold.split(self.table)
        train, test = self.table.subset(tr), self.table.subset(te)
        pred = self.fit_predict(train, test)
        return fold.fold_id, pred, score_fold(test.room, pred, train.room)


def run_cv(table, fit_predict, folds=None, jobs=1):
    """Day-held-out CV of ``fit_predict(train_table, test_table) -> labels``.

    Returns (ScoreReport, {fold_id: predicted labels}). ``fit_predict`` must
    be picklable when ``jobs > 1``.
    """
    folds = folds if folds is not None else temporal_folds(table)
    results = run_ordered(_FoldTask(table, fit_predict), folds, jobs)
    reports = {fid: rep for fid, _, rep in results}
    preds = {fid: pred for fid, pred, _ in results}
    return combine_folds(reports), preds


def cross_validate(table, approaches: dict, folds=None, jobs=1):
    """:func:`run_cv` for several named approaches on the same folds."""
    folds = folds if folds is not None else temporal_folds(table)
    return {name: run_cv(table, fn, folds, jobs)[0] for name, fn in approaches.items()}


RESULTS_FIXED = ["approach"]


def results_header(n_folds):
    return RESULTS_FIXED + [f"fold{i}" for i in range(1, n_folds + 1)] + ["mean", "std"]


def write_results_csv(path, results: dict):
    """One row per approach, per-fold macro F1 then mean and sample std."""
    n = max(len(r.per_fold) for r in results.values())
    lines = [",".join(results_header(n))]
    for name, r in results.items():
        cells = [f"{r.per_fold[i]:.6f}" for i in sorted(r.per_fold)]
        lines.append(",".join([name] + cells + [f"{r.mean:.6f}", f"{r.std:.6f}"]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_per_class_csv(path, results: dict):
    classes = sorted({c for r in results.values() for c in r.per_class_f1})
    lines = [",".join(["approach"] + classes + ["unknown_classes"])]
    for name, r in results.items():
        cells = [f"{r.per_class_f1[c]:.6f}" if c in r.per_class_f1 else "" for c in classes]
        lines.append(",".join([name] + cells + [";".join(r.unknown_classes)]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
