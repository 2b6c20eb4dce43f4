"""Per-second featurization.

Two representations are produced from the same one-second grouping:

* frequency frames: share of the second's detections contributed by each of
  beacons 1..23 (beacons 24/25 still count towards the denominator);
* statistical frames: per-beacon mean / population std / count of RSSI over
  all 25 beacons, plus the three most frequently seen beacon ids.

The per-group functions (:func:`frequency_frame`, :func:`stat_frame`) are the
reference definitions; :func:`build_frames` computes both for a whole reading
table with array operations and must agree with them exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import N_BEACONS, DataError, Readings, format_timestamp, parse_timestamp

FREQ_DIM = 23
STAT_DIM = 3 * N_BEACONS
N_DOMINANT = 3


@dataclass
class SecondGroup:
    timestamp: int
    utc_offset: int
    beacon_id: np.ndarray
    rssi: np.ndarray
    room: str | None = None

    def __len__(self):
        return len(self.beacon_id)


@dataclass
class FrequencyFrame:
    timestamp: int
    freq: np.ndarray
    total_detections: int
    room: str | None = None
    utc_offset: int = 0


@dataclass
class StatFrame:
    timestamp: int
    stats: np.ndarray
    dominant: tuple
    room: str | None = None
    utc_offset: int = 0

    @property
    def mean(self):
        return self.stats[:N_BEACONS]

    @property
    def std(self):
        return self.stats[N_BEACONS:2 * N_BEACONS]

    @property
    def count(self):
        return self.stats[2 * N_BEACONS:]


@dataclass
class GroupingResult:
    groups: list
    rejected: int = 0


def group_by_second(readings: Readings) -> GroupingResult:
    """Split time-sorted readings into one group per distinct second.

    Groups whose members disagree on the room label are dropped and counted.
    """
    n = len(readings)
    if n == 0:
        return GroupingResult([], 0)
    ts = readings.timestamp
    if np.any(np.diff(ts) < 0):
        raise DataError("readings must be sorted by timestamp")
    starts = np.flatnonzero(np.r_[True, ts[1:] != ts[:-1]])
    ends = np.r_[starts[1:], n]
    groups, rejected = [], 0
    for s, e in zip(starts.tolist(), ends.tolist()):
        room = None
        if readings.room is not None:
            rooms = set(readings.room[s:e].tolist())
            if len(rooms) != 1:
                rejected += 1
                continue
            room = rooms.pop()
        groups.append(SecondGroup(int(ts[s]), int(readings.utc_offset[s]),
                                  readings.beacon_id[s:e].copy(), readings.rssi[s:e].copy(), room))
    return GroupingResult(groups, rejected)


def frequency_frame(group: SecondGroup) -> FrequencyFrame:
    if len(group) == 0:
        raise ValueError("empty group")
    counts = np.bincount(group.beacon_id, minlength=N_BEACONS + 1)
    total = int(len(group))
    freq = counts[1:FREQ_DIM + 1] / total
    return FrequencyFrame(group.timestamp, freq, total, group.room, group.utc_offset)


def _dominant(counts):
    # counts indexed by beacon id (index 0 unused); ties go to the lower id.
    ids = np.arange(1, N_BEACONS + 1)
    c = counts[1:N_BEACONS + 1]
    order = np.lexsort((ids, -c))
    top = [int(ids[k]) for k in order[:N_DOMINANT] if c[k] > 0]
    return tuple(top + [0] * (N_DOMINANT - len(top)))


def stat_frame(group: SecondGroup) -> StatFrame:
    if len(group) == 0:
        raise ValueError("empty group")
    idx = group.beacon_id
    x = group.rssi.astype(np.int64)
    counts = np.bincount(idx, minlength=N_BEACONS + 1)
    sx, sxx = _int_sums(idx, x, N_BEACONS + 1)
    mean, std = _moments(counts, sx, sxx)
    stats = np.concatenate([mean[1:], std[1:], counts[1:].astype(np.float64)])
    return StatFrame(group.timestamp, stats, _dominant(counts), group.room, group.utc_offset)


def _int_sums(index, x, size):
    # Exact integer sums so results do not depend on reading order.
    sx = np.zeros(size, dtype=np.int64)
    sxx = np.zeros(size, dtype=np.int64)
    np.add.at(sx, index, x)
    np.add.at(sxx, index, x * x)
    return sx, sxx


def _moments(counts, sx, sxx):
    counts = np.asarray(counts, dtype=np.int64)
    safe = np.maximum(counts, 1)
    mean = np.where(counts > 0, sx / safe, 0.0)
    # population variance = (n * sum(x^2) - sum(x)^2) / n^2, numerator exact in int64
    num = counts * sxx - sx * sx
    var = np.where(counts > 0, num / (safe * safe).astype(np.float64), 0.0)
    return mean, np.sqrt(np.maximum(var, 0.0))


@dataclass
class FrameTable:
    """Column store of per-second frames (both representations)."""

    timestamp: np.ndarray
    utc_offset: np.ndarray
    total: np.ndarray
    freq: np.ndarray
    stats: np.ndarray | None = None
    dominant: np.ndarray | None = None
    room: np.ndarray | None = None

    def __len__(self):
        return len(self.timestamp)

    def subset(self, idx):
        opt = lambda a: None if a is None else a[idx]  # noqa: E731
        return FrameTable(self.timestamp[idx], self.utc_offset[idx], self.total[idx],
                          self.freq[idx], opt(self.stats), opt(self.dominant), opt(self.room))

    @property
    def day(self):
        return (self.timestamp + self.utc_offset) // 86400

    def frequency_frames(self):
        return [FrequencyFrame(int(self.timestamp[i]), self.freq[i].copy(), int(self.total[i]),
                               None if self.room is None else self.room[i],
                               int(self.utc_offset[i])) for i in range(len(self))]


def build_frames(readings: Readings) -> tuple[FrameTable, int]:
    """Vectorized featurization of a sorted reading table.

    Returns the frame table and the number of seconds rejected for carrying
    conflicting room labels.
    """
    n = len(readings)
    if n == 0:
        z = np.zeros(0, dtype=np.int64)
        return FrameTable(z, z, z, np.zeros((0, FREQ_DIM)), np.zeros((0, STAT_DIM)),
                          np.zeros((0, N_DOMINANT), dtype=np.int64),
                          None if readings.room is None else np.zeros(0, dtype=object)), 0
    ts = readings.timestamp
    if np.any(np.diff(ts) < 0):
        raise DataError("readings must be sorted by timestamp")
    new = np.r_[True, ts[1:] != ts[:-1]]
    gid = np.cumsum(new) - 1
    starts = np.flatnonzero(new)
    g = len(starts)
    W = N_BEACONS + 1
    flat = gid * W + readings.beacon_id
    counts = np.bincount(flat, minlength=g * W).reshape(g, W)
    x = readings.rssi
    sx = np.bincount(flat, weights=x.astype(np.float64), minlength=g * W).reshape(g, W)
    sxx = np.bincount(flat, weights=(x * x).astype(np.float64), minlength=g * W).reshape(g, W)
    # bincount accumulates in float64; the integer sums involved stay far below 2**53
    sx = np.rint(sx).astype(np.int64)
    sxx = np.rint(sxx).astype(np.int64)
    total = counts.sum(axis=1)
    freq = counts[:, 1:FREQ_DIM + 1] / total[:, None]
    mean, std = _moments(counts, sx, sxx)
    stats = np.concatenate([mean[:, 1:], std[:, 1:], counts[:, 1:].astype(np.float64)], axis=1)
    c = counts[:, 1:]
    ids = np.arange(1, N_BEACONS + 1)
    order = np.argsort(-c, axis=1, kind="stable")[:, :N_DOMINANT]
    top_counts = np.take_along_axis(c, order, axis=1)
    dominant = np.where(top_counts > 0, ids[order], 0)

    keep = np.ones(g, dtype=bool)
    room = None
    if readings.room is not None:
        codes_lookup = {}
        codes = np.array([codes_lookup.setdefault(r, len(codes_lookup)) for r in readings.room.tolist()])
        lo = np.minimum.reduceat(codes, starts)
        hi = np.maximum.reduceat(codes, starts)
        keep = lo == hi
        room = readings.room[starts]
    table = FrameTable(ts[starts], readings.utc_offset[starts], total, freq, stats, dominant, room)
    rejected = int((~keep).sum())
    if rejected:
        table = table.subset(np.flatnonzero(keep))
    return table, rejected


# --------------------------------------------------------------------------
# CSV formats
# --------------------------------------------------------------------------

FRAME_HEADER = ["timestamp", "room", "total"] + [f"f{i}" for i in range(1, FREQ_DIM + 1)]
STAT_HEADER = (["timestamp", "room"] + [f"mean{i}" for i in range(1, N_BEACONS + 1)]
               + [f"std{i}" for i in range(1, N_BEACONS + 1)]
               + [f"count{i}" for i in range(1, N_BEACONS + 1)] + ["dom1", "dom2", "dom3"])


def _ts_strings(table):
    cache = {}
    out = []
    for t, o in zip(table.timestamp.tolist(), table.utc_offset.tolist()):
        s = cache.get((t, o))
        if s is None:
            s = cache[(t, o)] = format_timestamp(t, o)
        out.append(s)
    return out


def write_frame_csv(path, table: FrameTable):
    rooms = table.room.tolist() if table.room is not None else [""] * len(table)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(FRAME_HEADER) + "\n")
        for s, room, tot, row in zip(_ts_strings(table), rooms, table.total.tolist(), table.freq.tolist()):
            fh.write(f"{s},{room},{tot}," + ",".join(f"{v:.9f}" for v in row) + "\n")


def write_stat_csv(path, table: FrameTable):
    rooms = table.room.tolist() if table.room is not None else [""] * len(table)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(STAT_HEADER) + "\n")
        for s, room, row, dom in zip(_ts_strings(table), rooms, table.stats.tolist(), table.dominant.tolist()):
            means = ",".join(f"{v:.9f}" for v in row[:N_BEACONS])
            stds = ",".join(f"{v:.9f}" for v in row[N_BEACONS:2 * N_BEACONS])
            cnts = ",".join(str(int(v)) for v in row[2 * N_BEACONS:])
            fh.write(f"{s},{room},{means},{stds},{cnts},{dom[0]},{dom[1]},{dom[2]}\n")


def _read_table(path, header):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not lines or lines[0].split(",") != header:
        raise DataError(f"{path}: unexpected header")
    ts, off, rooms, rows = [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} columns")
        try:
            e, o = parse_timestamp(parts[0])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        ts.append(e)
        off.append(o)
        rooms.append(parts[1])
        rows.append(parts[2:])
    room = np.array(rooms, dtype=object)
    if len(room) and not any(rooms):
        room = None
    return np.array(ts, dtype=np.int64), np.array(off, dtype=np.int64), room, rows


def read_frame_csv(path) -> FrameTable:
    ts, off, room, rows = _read_table(path, FRAME_HEADER)
    arr = np.array(rows, dtype=np.float64).reshape(len(rows), FREQ_DIM + 1)
    return FrameTable(ts, off, arr[:, 0].astype(np.int64), arr[:, 1:], room=room)


def read_stat_csv(path) -> FrameTable:
    ts, off, room, rows = _read_table(path, STAT_HEADER)
    arr = np.array(rows, dtype=np.float64).reshape(len(rows), STAT_DIM + N_DOMINANT)
    stats = arr[:, :STAT_DIM]
    total = stats[:, 2 * N_BEACONS:].sum(axis=1).astype(np.int64)
    return FrameTable(ts, off, total, np.zeros((len(ts), FREQ_DIM)), stats,
                      arr[:, STAT_DIM:].astype(np.int64), room)
