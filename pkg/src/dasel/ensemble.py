"""Two-level ensemble inference and confidence-weighted temporal smoothing.

Level one averages each direction's class distribution over the seed
models; level two merges the directions with confidence weights. Every
sum runs in a fixed order (seeds ascending, directions in canonical order)
so results do not depend on how inputs were listed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .ingest import DataError, format_timestamp, parse_timestamp
from .nn.model import forward_batch, model_forward
from .nn.train import TrainConfig, train
from .parallel import run_ordered, single_thread_blas
from .sequencing import DIRECTION_NAMES, resolve_directions, window_bounds

DEFAULT_SEEDS = (42, 1042, 2042, 3042, 4042)
SMOOTH_HALF_WIDTH = 2
_DIR_RANK = {n: i for i, n in enumerate(DIRECTION_NAMES)}


@dataclass
class DirectionalPrediction:
    anchor_timestamp: int
    direction: str
    probs: np.ndarray

    @property
    def confidence(self) -> float:
        return float(np.max(self.probs))


@dataclass
class PredictionRecord:
    timestamp: int
    final_probs: np.ndarray
    final_label: str
    smoothed_label: str
    contributing_directions: int
    utc_offset: int = 0

    @property
    def confidence(self) -> float:
        return float(np.max(self.final_probs))


# --------------------------------------------------------------------------
# level 1: seeds
# --------------------------------------------------------------------------


def _train_one(seed, sequences, config, classes, backend):
    return train(sequences, config, seed, classes=classes, backend=backend)


def train_multi_seed(sequences, config: TrainConfig | None = None, seeds=DEFAULT_SEEDS,
                     classes=None, jobs=1, backend=None) -> list:
    """One model per seed, sharing data and class table. Any failure aborts."""
    config = config or TrainConfig()
    if classes is None:
        classes = sorted({s.room for s in sequences})
    fn = partial(_train_one, sequences=sequences, config=config, classes=list(classes),
                 backend=backend)
    return run_ordered(fn, list(seeds), jobs)


def check_models(models):
    if not models:
        raise ValueError("no models")
    classes = list(models[0].classes)
    for m in models[1:]:
        if list(m.classes) != classes:
            raise DataError("models disagree on the class table")
    return classes


def _seed_order(models):
    return sorted(range(len(models)), key=lambda i: (models[i].seed, i))


def mean_probs(prob_list, order):
    """Arithmetic mean accumulated in ``order``."""
    acc = None
    for i in order:
        acc = prob_list[i].copy() if acc is None else acc + prob_list[i]
    return acc / len(order)


def direction_probs(window, models, backend=None) -> DirectionalPrediction:
    check_models(models)
    outs = [model_forward(window, m, backend=backend) for m in models]
    return DirectionalPrediction(window.anchor_timestamp, window.direction,
                                 mean_probs(outs, _seed_order(models)))


# --------------------------------------------------------------------------
# level 2: directions
# --------------------------------------------------------------------------


def aggregate_directions(preds, classes) -> PredictionRecord:
    """Confidence-weighted merge: sum(p_d * c_d) / sum(c_d)."""
    if not preds:
        raise ValueError("aggregate_directions needs at least one direction")
    anchors = {p.anchor_timestamp for p in preds}
    if len(anchors) != 1:
        raise ValueError("predictions belong to different anchors")
    if any(len(p.probs) != len(classes) for p in preds):
        raise DataError("probability vectors do not match the class table")
    ordered = sorted(preds, key=lambda p: _DIR_RANK.get(p.direction, len(_DIR_RANK)))
    num = np.zeros(len(classes))
    den = 0.0
    for p in ordered:
        c = p.confidence
        num = num + p.probs * c
        den = den + c
    final = num / den
    label = classes[int(np.argmax(final))]
    return PredictionRecord(anchors.pop(), final, label, label, len(preds))


def temporal_smooth(records, classes=None):
    """Re-vote each record over existing records within two seconds either side.

    Sets ``smoothed_label`` in place (returns the list too); ``final_probs``
    are untouched.
    """
    if not records:
        return records
    ts = np.array([r.timestamp for r in records], dtype=np.int64)
    if np.any(np.diff(ts) < 0):
        raise ValueError("records must be sorted by timestamp")
    if classes is None:
        raise ValueError("classes are required to name smoothed labels")
    for i, r in enumerate(records):
        lo = np.searchsorted(ts, r.timestamp - SMOOTH_HALF_WIDTH, side="left")
        hi = np.searchsorted(ts, r.timestamp + SMOOTH_HALF_WIDTH, side="right")
        acc = np.zeros(len(classes))
        for j in range(lo, hi):
            p = records[j].final_probs
            acc = acc + p * np.max(p)
        r.smoothed_label = classes[int(np.argmax(acc))]
    return records


def smooth_arrays(ts, probs):
    """Vectorized twin of :func:`temporal_smooth`; returns smoothed class indices."""
    ts = np.asarray(ts, dtype=np.int64)
    n = len(ts)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    w = probs * probs.max(axis=1, keepdims=True)
    lo = np.searchsorted(ts, ts - SMOOTH_HALF_WIDTH, side="left")
    hi = np.searchsorted(ts, ts + SMOOTH_HALF_WIDTH, side="right")
    acc = np.zeros_like(probs)
    for m in range(int((hi - lo).max())):
        idx = lo + m
        ok = idx < hi
        acc = acc + np.where(ok[:, None], w[np.minimum(idx, n - 1)], 0.0)
    return np.argmax(acc, axis=1)


# --------------------------------------------------------------------------
# table inference
# --------------------------------------------------------------------------


@dataclass
class PredictionTable:
    classes: list
    timestamp: np.ndarray
    utc_offset: np.ndarray
    probs: np.ndarray  # (n, C) aggregated distributions
    final: np.ndarray  # class indices
    smoothed: np.ndarray
    directions: np.ndarray  # contributing direction counts
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.timestamp)

    @property
    def confidence(self):
        return self.probs.max(axis=1)

    def labels(self, smoothed=True):
        cls = np.array(self.classes, dtype=object)
        return cls[self.smoothed if smoothed else self.final]

    def records(self):
        cls = self.classes
        return [PredictionRecord(int(self.timestamp[i]), self.probs[i].copy(),
                                 cls[self.final[i]], cls[self.smoothed[i]],
                                 int(self.directions[i]), int(self.utc_offset[i]))
                for i in range(len(self))]


def _unique_window_probs(freq, lo, hi, models, order, batch_size, backend):
    """Seed-averaged probabilities for each distinct ``[lo, hi)`` range."""
    C = models[0].n_classes
    valid = hi > lo
    key = lo * (len(freq) + 1) + hi
    uniq, inverse = np.unique(np.where(valid, key, -1), return_inverse=True)
    inverse = inverse.reshape(lo.shape)
    u_lo = np.where(uniq >= 0, uniq // (len(freq) + 1), 0)
    u_hi = np.where(uniq >= 0, uniq % (len(freq) + 1), 0)
    length = u_hi - u_lo
    per_model = [np.zeros((len(uniq), C)) for _ in models]
    for L in np.unique(length[length > 0]).tolist():
        rows = np.flatnonzero(length == L)
        for s in range(0, len(rows), batch_size):
            r = rows[s:s + batch_size]
            X = freq[u_lo[r][None, :] + np.arange(L)[:, None]]  # (L, B, D)
            M = np.ones((L, len(r)), dtype=bool)
            for k, m in enumerate(models):
                per_model[k][r] = forward_batch(m, X, M, backend)
    P = mean_probs(per_model, order)
    return P, inverse, valid


@dataclass
class WindowProbs:
    """Seed-averaged probabilities of every directional window of a table."""

    classes: list
    directions: tuple
    probs: np.ndarray  # (n_unique, C)
    inverse: np.ndarray  # (n_frames, n_dirs) row into ``probs``
    valid: np.ndarray  # (n_frames, n_dirs) window non-empty


def window_probabilities(table, models, directions=None, batch_size=1024,
                         backend=None) -> WindowProbs:
    """Evaluate each distinct window once; windows never cross a local-day boundary."""
    classes = check_models(models)
    dirs = resolve_directions(directions)
    lo, hi = window_bounds(table.timestamp, table.day, dirs)
    with single_thread_blas():
        P, inverse, valid = _unique_window_probs(table.freq, lo, hi, models, _seed_order(models),
                                                 batch_size, backend)
    return WindowProbs(classes, dirs, P, inverse, valid)


def aggregate_table(table, wp: WindowProbs, directions=None, smooth=True) -> PredictionTable:
    """Direction merge (and optional smoothing) for a subset of the computed directions."""
    names = [d.name for d in wp.directions]
    use = [d.name for d in resolve_directions(directions)]
    missing = [u for u in use if u not in names]
    if missing:
        raise ValueError(f"directions not computed: {missing}")
    n, C = len(table), len(wp.classes)
    num = np.zeros((n, C))
    den = np.zeros(n)
    count = np.zeros(n, dtype=np.int64)
    for name in use:
        k = names.index(name)
        p = wp.probs[wp.inverse[:, k]]
        c = p.max(axis=1)
        ok = wp.valid[:, k]
        num = num + np.where(ok[:, None], p * c[:, None], 0.0)
        den = den + np.where(ok, c, 0.0)
        count += ok
    if np.any(count == 0):
        raise ValueError("an anchor has no non-empty window")
    probs = num / den[:, None]
    final = np.argmax(probs, axis=1)
    smoothed = smooth_arrays(table.timestamp, probs) if smooth else final.copy()
    return PredictionTable(wp.classes, table.timestamp.copy(), table.utc_offset.copy(), probs,
                           final, smoothed, count, {"directions": use, "smoothing": bool(smooth)})


def predict_table(table, models, directions=None, smooth=True, batch_size=1024,
                  backend=None) -> PredictionTable:
    """Predict every frame of a (possibly multi-day) table as an anchor."""
    if len(table) == 0:
        classes = check_models(models)
        z = np.zeros(0, dtype=np.int64)
        return PredictionTable(classes, z, z, np.zeros((0, len(classes))), z, z, z)
    wp = window_probabilities(table, models, directions, batch_size, backend)
    return aggregate_table(table, wp, directions, smooth)


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def prediction_header(classes):
    return (["timestamp", "final_label", "smoothed_label", "confidence", "directions"]
            + [f"p_{c}" for c in classes])


def write_predictions_csv(path, pred: PredictionTable):
    cls = pred.classes
    conf = pred.confidence
    lines = [",".join(prediction_header(cls))]
    for i in range(len(pred)):
        probs = ",".join(f"{v:.6f}" for v in pred.probs[i])
        lines.append(f"{format_timestamp(pred.timestamp[i], pred.utc_offset[i])},"
                     f"{cls[pred.final[i]]},{cls[pred.smoothed[i]]},{conf[i]:.6f},"
                     f"{pred.directions[i]},{probs}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_predictions_csv(path) -> PredictionTable:
    try:
        with open(path, encoding="utf-8") as fh:
            rows = [ln.rstrip("\n").split(",") for ln in fh if ln.strip()]
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if not rows or rows[0][:5] != prediction_header([])[:5]:
        raise DataError(f"{path}: not a prediction file")
    head = rows[0]
    classes = [h[2:] for h in head[5:]]
    index = {c: i for i, c in enumerate(classes)}
    n = len(rows) - 1
    ts = np.zeros(n, dtype=np.int64)
    off = np.zeros(n, dtype=np.int64)
    probs = np.zeros((n, len(classes)))
    final = np.zeros(n, dtype=np.int64)
    smoothed = np.zeros(n, dtype=np.int64)
    ndir = np.zeros(n, dtype=np.int64)
    for i, row in enumerate(rows[1:]):
        if len(row) != len(head):
            raise DataError(f"{path}:{i + 2}: expected {len(head)} fields")
        try:
            ts[i], off[i] = parse_timestamp(row[0])
            final[i] = index[row[1]]
            smoothed[i] = index[row[2]]
            ndir[i] = int(row[4])
            probs[i] = [float(v) for v in row[5:]]
        except (KeyError, ValueError, DataError) as exc:
            raise DataError(f"{path}:{i + 2}: {exc}") from exc
    return PredictionTable(classes, ts, off, probs, final, smoothed, ndir)
