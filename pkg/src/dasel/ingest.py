"""BLE scan / annotation CSV parsing and label alignment.

Readings are held column-wise (:class:`Readings`) because a single day of
scans easily runs to hundreds of thousands of rows; :class:`BleReading` is
the row view.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

N_BEACONS = 25
BLE_HEADER = ["timestamp", "mac_address", "rssi"]
LABEL_HEADER = ["start", "end", "room", "observer_id"]
LABELED_HEADER = ["timestamp", "beacon_id", "rssi", "room"]
MACMAP_HEADER = ["mac_address", "beacon_id"]


class DataError(Exception):
    """Unreadable or structurally invalid input."""


# --------------------------------------------------------------------------
# time handling
# --------------------------------------------------------------------------

_TS_CACHE: dict[str, tuple[int, int]] = {}


def parse_timestamp(text: str) -> tuple[int, int]:
    """Parse ``YYYY-MM-DD HH:MM:SS±HH:MM`` into (epoch seconds, UTC offset seconds)."""
    hit = _TS_CACHE.get(text)
    if hit is not None:
        return hit
    s = text.strip()
    if len(s) != 25 or s[10] != " " or s[19] not in "+-":
        raise ValueError(f"bad timestamp {text!r}")
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        raise ValueError(f"timestamp without offset {text!r}")
    off = dt.utcoffset()
    out = (int(dt.timestamp()), int(off.total_seconds()))
    if len(_TS_CACHE) > 500_000:
        _TS_CACHE.clear()
    _TS_CACHE[text] = out
    return out


def format_timestamp(epoch: int, offset: int) -> str:
    tz = timezone(timedelta(seconds=int(offset)))
    return datetime.fromtimestamp(int(epoch), tz).isoformat(sep=" ")


def local_day(epoch, offset):
    """Local calendar day index (days since 1970-01-01 in the source offset)."""
    return (np.asarray(epoch, dtype=np.int64) + np.asarray(offset, dtype=np.int64)) // 86400


def day_label(day_index: int) -> str:
    return (datetime(1970, 1, 1) + timedelta(days=int(day_index))).strftime("%Y-%m-%d")


# --------------------------------------------------------------------------
# domain types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BleReading:
    timestamp: int
    beacon_id: int
    rssi: int
    utc_offset: int = 0

    def __post_init__(self):
        if not 1 <= self.beacon_id <= N_BEACONS:
            raise ValueError(f"beacon_id {self.beacon_id} outside 1..{N_BEACONS}")
        if not -120 <= self.rssi <= 0:
            raise ValueError(f"rssi {self.rssi} outside [-120, 0]")


@dataclass(frozen=True)
class LabelInterval:
    start: int
    end: int
    room: str
    observer_id: int
    utc_offset: int = 0

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError("interval start must precede end")
        if not self.room:
            raise ValueError("empty room name")

    def contains(self, t: int) -> bool:
        return self.start <= t <= self.end


@dataclass(frozen=True)
class LabeledReading:
    reading: BleReading
    room: str


@dataclass
class Readings:
    """Column store of BLE readings, optionally labelled with rooms."""

    timestamp: np.ndarray
    beacon_id: np.ndarray
    rssi: np.ndarray
    utc_offset: np.ndarray
    room: np.ndarray | None = None

    def __post_init__(self):
        self.timestamp = np.asarray(self.timestamp, dtype=np.int64)
        self.beacon_id = np.asarray(self.beacon_id, dtype=np.int64)
        self.rssi = np.asarray(self.rssi, dtype=np.int64)
        self.utc_offset = np.asarray(self.utc_offset, dtype=np.int64)
        if self.room is not None:
            self.room = np.asarray(self.room, dtype=object)

    @classmethod
    def empty(cls, labeled=False):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, np.zeros(0, dtype=object) if labeled else None)

    @classmethod
    def from_records(cls, readings, rooms=None):
        readings = list(readings)
        return cls(
            [r.timestamp for r in readings],
            [r.beacon_id for r in readings],
            [r.rssi for r in readings],
            [r.utc_offset for r in readings],
            None if rooms is None else list(rooms),
        )

    def __len__(self):
        return len(self.timestamp)

    def __getitem__(self, i):
        if isinstance(i, (slice, np.ndarray, list)):
            return Readings(
                self.timestamp[i], self.beacon_id[i], self.rssi[i], self.utc_offset[i],
                None if self.room is None else self.room[i],
            )
        r = BleReading(int(self.timestamp[i]), int(self.beacon_id[i]), int(self.rssi[i]),
                       int(self.utc_offset[i]))
        if self.room is None:
            return r
        return LabeledReading(r, self.room[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def records(self):
        return [self[i] for i in range(len(self))]

    def sorted(self):
        order = np.argsort(self.timestamp, kind="stable")
        return self[order]

    @staticmethod
    def concat(parts):
        parts = [p for p in parts]
        if not parts:
            return Readings.empty()
        labeled = all(p.room is not None for p in parts)
        return Readings(
            np.concatenate([p.timestamp for p in parts]),
            np.concatenate([p.beacon_id for p in parts]),
            np.concatenate([p.rssi for p in parts]),
            np.concatenate([p.utc_offset for p in parts]),
            np.concatenate([p.room for p in parts]) if labeled else None,
        )


@dataclass
class ParseReport:
    """Row-level diagnostics collected while parsing one file."""

    path: str
    rows: int = 0
    kept: int = 0
    dropped_unknown_mac: int = 0
    dropped_other_observer: int = 0
    dropped_incomplete: int = 0
    dropped_deleted: int = 0
    errors: list = field(default_factory=list)

    def error(self, line, message):
        self.errors.append({"line": line, "error": message})

    def to_dict(self):
        return {
            "path": self.path,
            "rows": self.rows,
            "kept": self.kept,
            "dropped_unknown_mac": self.dropped_unknown_mac,
            "dropped_other_observer": self.dropped_other_observer,
            "dropped_incomplete": self.dropped_incomplete,
            "dropped_deleted": self.dropped_deleted,
            "rejected": len(self.errors),
            "errors": self.errors,
        }


def write_report(path, reports, extra=None):
    """Write parse diagnostics as JSON (kept apart from data outputs)."""
    doc = {"files": [r.to_dict() for r in reports]}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# MAC map
# --------------------------------------------------------------------------


def normalize_mac(mac: str) -> str:
    return mac.strip().upper()


def validate_mac_map(mac_map: dict) -> dict:
    if len(mac_map) != N_BEACONS:
        raise DataError(f"MAC map must have exactly {N_BEACONS} entries, got {len(mac_map)}")
    ids = list(mac_map.values())
    if len(set(ids)) != len(ids):
        raise DataError("MAC map is not injective")
    if any(not 1 <= i <= N_BEACONS for i in ids):
        raise DataError("MAC map beacon ids must lie in 1..25")
    return mac_map


def read_mac_map(path) -> dict:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read MAC map {path}: {exc}") from exc
    if not lines or [c.strip() for c in lines[0].split(",")] != MACMAP_HEADER:
        raise DataError(f"{path}: expected header {','.join(MACMAP_HEADER)}")
    out = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 2 columns")
        out[normalize_mac(parts[0])] = int(parts[1])
    return validate_mac_map(out)


def write_mac_map(path, mac_map):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(MACMAP_HEADER) + "\n")
        for mac, bid in sorted(mac_map.items(), key=lambda kv: kv[1]):
            fh.write(f"{mac},{bid}\n")


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------


def _read_lines(path):
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            return fh.read().splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def parse_ble_csv(path, mac_map, report: ParseReport | None = None) -> Readings:
    """Parse one BLE scan CSV, keeping only readings from beacons in ``mac_map``.

    Malformed rows are recorded in ``report`` with their line number and
    skipped. The result is sorted by timestamp (stable).
    """
    report = report if report is not None else ParseReport(str(path))
    lines = _read_lines(path)
    if not lines:
        raise DataError(f"{path}: missing header")
    header = [c.strip() for c in lines[0].split(",")]
    if header != BLE_HEADER:
        raise DataError(f"{path}: expected header {','.join(BLE_HEADER)}, got {lines[0]!r}")
    lookup = {normalize_mac(k): v for k, v in mac_map.items()}
    ts, bid, rssi, off = [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        report.rows += 1
        parts = line.split(",")
        if len(parts) != 3:
            report.error(lineno, f"expected 3 columns, got {len(parts)}")
            continue
        try:
            epoch, offset = parse_timestamp(parts[0])
            value = int(parts[2])
        except ValueError as exc:
            report.error(lineno, str(exc))
            continue
        beacon = lookup.get(normalize_mac(parts[1]))
        if beacon is None:
            report.dropped_unknown_mac += 1
            continue
        if not -120 <= value <= 0:
            report.error(lineno, f"rssi {value} outside [-120, 0]")
            continue
        ts.append(epoch)
        bid.append(beacon)
        rssi.append(value)
        off.append(offset)
    report.kept += len(ts)
    return Readings(ts, bid, rssi, off).sorted()


_TRUTHY = {"1", "true", "yes", "y", "deleted"}


def parse_labels_csv(path, observer_id: int, report: ParseReport | None = None) -> list[LabelInterval]:
    """Parse annotation intervals, keeping complete, undeleted rows of ``observer_id``.

    An optional trailing ``deleted`` column marks removed annotations.
    """
    report = report if report is not None else ParseReport(str(path))
    lines = _read_lines(path)
    if not lines:
        return []
    header = [c.strip() for c in lines[0].split(",")]
    if header[:4] != LABEL_HEADER or len(header) > 5 or (len(header) == 5 and header[4] != "deleted"):
        raise DataError(f"{path}: expected header {','.join(LABEL_HEADER)}[,deleted]")
    ncol = len(header)
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        report.rows += 1
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != ncol:
            report.error(lineno, f"expected {ncol} columns, got {len(parts)}")
            continue
        try:
            obs = int(parts[3])
        except ValueError:
            report.error(lineno, f"bad observer id {parts[3]!r}")
            continue
        if obs != observer_id:
            report.dropped_other_observer += 1
            continue
        if ncol == 5 and parts[4].lower() in _TRUTHY:
            report.dropped_deleted += 1
            continue
        if not parts[0] or not parts[1] or not parts[2]:
            report.dropped_incomplete += 1
            continue
        try:
            start, off = parse_timestamp(parts[0])
            end, _ = parse_timestamp(parts[1])
        except ValueError as exc:
            report.error(lineno, str(exc))
            continue
        if start >= end:
            report.error(lineno, "start is not before end")
            continue
        out.append(LabelInterval(start, end, parts[2], obs, off))
    out.sort(key=lambda iv: iv.start)
    report.kept += len(out)
    return out


# --------------------------------------------------------------------------
# alignment
# --------------------------------------------------------------------------


@dataclass
class AlignResult:
    readings: Readings
    coverage: float
    overlapping_readings: int = 0
    overlapping_intervals: int = 0


def align_labels(readings: Readings, intervals: list[LabelInterval]) -> AlignResult:
    """Attach room labels by closed-interval containment.

    Where intervals overlap the later-starting one wins; such readings are
    counted in ``overlapping_readings``.
    """
    if isinstance(readings, list):
        readings = Readings.from_records(readings)
    n = len(readings)
    if n == 0:
        return AlignResult(Readings.empty(labeled=True), 0.0)
    ts = readings.timestamp
    owner = np.full(n, -1, dtype=np.int64)
    hits = np.zeros(n, dtype=np.int64)
    order = sorted(range(len(intervals)), key=lambda k: (intervals[k].start, k))
    overlapping_intervals = 0
    last_end = None
    for k in order:
        iv = intervals[k]
        if last_end is not None and iv.start <= last_end:
            overlapping_intervals += 1
        last_end = iv.end if last_end is None else max(last_end, iv.end)
        lo = np.searchsorted(ts, iv.start, side="left")
        hi = np.searchsorted(ts, iv.end, side="right")
        owner[lo:hi] = k
        hits[lo:hi] += 1
    keep = owner >= 0
    rooms = np.array([iv.room for iv in intervals] + [""], dtype=object)
    labeled = readings[keep]
    labeled.room = rooms[owner[keep]]
    return AlignResult(
        labeled,
        float(keep.sum()) / n,
        overlapping_readings=int((hits > 1).sum()),
        overlapping_intervals=overlapping_intervals,
    )


def write_labeled_csv(path, readings: Readings):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(LABELED_HEADER) + "\n")
        cache = {}
        for t, o, b, r, room in zip(readings.timestamp.tolist(), readings.utc_offset.tolist(),
                                    readings.beacon_id.tolist(), readings.rssi.tolist(),
                                    readings.room.tolist()):
            key = (t, o)
            s = cache.get(key)
            if s is None:
                s = cache[key] = format_timestamp(t, o)
            fh.write(f"{s},{b},{r},{room}\n")


def read_labeled_csv(path) -> Readings:
    lines = _read_lines(path)
    if not lines or [c.strip() for c in lines[0].split(",")] != LABELED_HEADER:
        raise DataError(f"{path}: expected header {','.join(LABELED_HEADER)}")
    ts, off, bid, rssi, room = [], [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 columns")
        e, o = parse_timestamp(parts[0])
        ts.append(e)
        off.append(o)
        bid.append(int(parts[1]))
        rssi.append(int(parts[2]))
        room.append(parts[3])
    return Readings(ts, bid, rssi, off, room)


def write_ble_csv(path, readings: Readings, id_to_mac: dict):
    """Serialize readings back to the raw scan format."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(BLE_HEADER) + "\n")
        cache = {}
        for t, o, b, r in zip(readings.timestamp.tolist(), readings.utc_offset.tolist(),
                              readings.beacon_id.tolist(), readings.rssi.tolist()):
            s = cache.get((t, o))
            if s is None:
                s = cache[(t, o)] = format_timestamp(t, o)
            fh.write(f"{s},{id_to_mac[b]},{r}\n")


def merge_readings(parts) -> Readings:
    """Deterministic merge of per-file reading sets (stable on input order)."""
    return Readings.concat(list(parts)).sorted()


__all__ = [
    "AlignResult", "BleReading", "DataError", "LabelInterval", "LabeledReading",
    "ParseReport", "Readings", "align_labels", "format_timestamp", "local_day",
    "merge_readings", "parse_ble_csv", "parse_labels_csv", "parse_timestamp",
    "read_labeled_csv", "read_mac_map", "validate_mac_map", "write_ble_csv",
    "write_labeled_csv", "write_mac_map", "write_report",
]
