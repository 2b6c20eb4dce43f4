"""Training sequences from same-room runs and directional inference windows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SEQ_LEN = 50
MIN_TRAIN_LEN = 3


@dataclass(frozen=True)
class DirectionSpec:
    name: str
    lo: int
    hi: int


DIRECTIONS = (
    DirectionSpec("backward_10", -9, 0),
    DirectionSpec("centered_10", -4, 5),
    DirectionSpec("forward_10", 0, 9),
    DirectionSpec("backward_15", -14, 0),
    DirectionSpec("forward_15", 0, 14),
    DirectionSpec("asymm_past", -11, 3),
    DirectionSpec("asymm_future", -3, 11),
)
DIRECTION_NAMES = tuple(d.name for d in DIRECTIONS)
DIRECTION_BY_NAME = {d.name: d for d in DIRECTIONS}


def resolve_directions(names=None):
    """Direction specs in canonical order; ``names`` selects a subset."""
    if names is None or names == "all":
        return DIRECTIONS
    if isinstance(names, str):
        names = [n.strip() for n in names.split(",") if n.strip()]
    names = [n.name if isinstance(n, DirectionSpec) else n for n in names]
    unknown = [n for n in names if n not in DIRECTION_BY_NAME]
    if unknown:
        raise ValueError(f"unknown direction(s): {', '.join(unknown)}")
    chosen = set(names)
    return tuple(d for d in DIRECTIONS if d.name in chosen)


@dataclass
class Sequence:
    values: np.ndarray  # (SEQ_LEN, dim), zero rows on padding
    mask: np.ndarray  # (SEQ_LEN,) bool, True on real frames (right-aligned)
    room: str | None = None
    group_id: int = 0
    anchor_timestamp: int | None = None
    direction: str | None = None

    @property
    def length(self):
        return int(self.mask.sum())

    @property
    def frames(self):
        """The real (unpadded) frames."""
        return self.values[SEQ_LEN - self.length:]


def pad_and_mask(frames, room=None, group_id=0, anchor_timestamp=None, direction=None) -> Sequence:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ValueError("frames must be a 2-D array (length, dim)")
    n = frames.shape[0]
    if not 1 <= n <= SEQ_LEN:
        raise ValueError(f"sequence length must be in 1..{SEQ_LEN}, got {n}")
    values = np.zeros((SEQ_LEN, frames.shape[1]))
    values[SEQ_LEN - n:] = frames
    mask = np.zeros(SEQ_LEN, dtype=bool)
    mask[SEQ_LEN - n:] = True
    return Sequence(values, mask, room, group_id, anchor_timestamp, direction)


def room_group_ids(labels) -> np.ndarray:
    """Run identifiers: cumulative count of label changes, starting at 1."""
    labels = np.asarray(labels, dtype=object)
    if len(labels) == 0:
        return np.zeros(0, dtype=np.int64)
    change = np.r_[True, labels[1:] != labels[:-1]]
    return np.cumsum(change).astype(np.int64)


@dataclass
class Segmentation:
    sequences: list
    group_ids: np.ndarray
    discarded: int
    truncated: int


def segment_by_room(freq, labels) -> Segmentation:
    """Cut a labelled frame stream into one sequence per contiguous same-room run.

    Runs shorter than 3 frames are discarded; longer than 50 keep their last 50.
    """
    freq = np.asarray(freq, dtype=np.float64)
    gids = room_group_ids(labels)
    seqs, discarded, truncated = [], 0, 0
    if len(gids) == 0:
        return Segmentation(seqs, gids, 0, 0)
    starts = np.flatnonzero(np.r_[True, gids[1:] != gids[:-1]])
    ends = np.r_[starts[1:], len(gids)]
    for s, e in zip(starts.tolist(), ends.tolist()):
        n = e - s
        if n < MIN_TRAIN_LEN:
            discarded += 1
            continue
        if n > SEQ_LEN:
            truncated += 1
            s = e - SEQ_LEN
        seqs.append(pad_and_mask(freq[s:e], room=labels[s], group_id=int(gids[s])))
    return Segmentation(seqs, gids, discarded, truncated)


def segment_days(table) -> Segmentation:
    """Segment each local calendar day of a frame table separately.

    Group ids keep increasing across days.
    """
    day = table.day
    seqs, gid_parts, discarded, truncated = [], [], 0, 0
    offset = 0
    for d in np.unique(day):
        idx = np.flatnonzero(day == d)
        seg = segment_by_room(table.freq[idx], table.room[idx])
        for s in seg.sequences:
            s.group_id += offset
        seqs.extend(seg.sequences)
        gid_parts.append(seg.group_ids + offset)
        offset += int(seg.group_ids.max()) if len(seg.group_ids) else 0
        discarded += seg.discarded
        truncated += seg.truncated
    gids = np.concatenate(gid_parts) if gid_parts else np.zeros(0, dtype=np.int64)
    return Segmentation(seqs, gids, discarded, truncated)


def directional_windows(anchor: int, timestamps, freq, directions=None) -> list:
    """Build the directional windows around ``anchor`` from a time-sorted frame store.

    Membership is by timestamp value; gaps shrink a window, empty windows are
    omitted.  The store should hold one day only.
    """
    timestamps = np.asarray(timestamps, dtype=np.int64)
    out = []
    for d in resolve_directions(directions):
        lo = np.searchsorted(timestamps, anchor + d.lo, side="left")
        hi = np.searchsorted(timestamps, anchor + d.hi, side="right")
        if hi > lo:
            out.append(pad_and_mask(freq[lo:hi], anchor_timestamp=int(anchor), direction=d.name))
    return out


def window_bounds(timestamps, day, directions=None):
    """Index ranges ``[lo, hi)`` of every direction for every frame as anchor.

    ``timestamps`` must be sorted within each day and days contiguous; windows
    never cross a day boundary.  Returns arrays of shape (n_frames, n_dirs).
    """
    timestamps = np.asarray(timestamps, dtype=np.int64)
    day = np.asarray(day, dtype=np.int64)
    dirs = resolve_directions(directions)
    n = len(timestamps)
    lo = np.zeros((n, len(dirs)), dtype=np.int64)
    hi = np.zeros((n, len(dirs)), dtype=np.int64)
    if n == 0:
        return lo, hi
    bounds = np.flatnonzero(np.r_[True, day[1:] != day[:-1], True])
    for s, e in zip(bounds[:-1].tolist(), bounds[1:].tolist()):
        ts = timestamps[s:e]
        if np.any(np.diff(ts) <= 0):
            raise ValueError("frame timestamps must be strictly increasing within a day")
        for k, d in enumerate(dirs):
            lo[s:e, k] = s + np.searchsorted(ts, ts + d.lo, side="left")
            hi[s:e, k] = s + np.searchsorted(ts, ts + d.hi, side="right")
    return lo, hi
