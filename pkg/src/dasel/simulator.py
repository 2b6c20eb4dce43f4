"""Synthetic multi-day facility datasets: one person walking between rooms.

The walk is semi-Markov (next room drawn by weight, dwell drawn uniformly);
beacon detections fall off logistically with distance and RSSI follows a
log-distance path-loss law with gaussian noise. Output files use the same
formats the ingest module reads.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from datetime import datetime, timedelta, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import kvconfig
from .ingest import BLE_HEADER, LABEL_HEADER, N_BEACONS, format_timestamp, write_mac_map

PRESETS = ("benchmark", "small")


@dataclass
class Room:
    name: str
    x: float
    y: float
    weight: float = 1.0


@dataclass
class Beacon:
    id: int
    x: float
    y: float


@dataclass
class FacilityConfig:
    rooms: list
    beacons: list
    days: int = 4
    seconds_per_day: int = 3600
    seed: int = 0
    start_date: str = "2024-03-04"
    day_start_hour: int = 7
    utc_offset_minutes: int = 60
    dwell_min: int = 60
    dwell_max: int = 300
    transit_seconds: int = 0  # walking time at the start of each visit
    visit_offset_std: float = 0.0  # m, where in the room the person settles
    jitter_std: float = 0.0  # m, per-second position noise
    p0: float = -59.0  # dBm at 1 m
    path_loss_n: float = 2.2
    noise_std: float = 6.0
    detect_mid: float = 8.0  # m, distance of half the maximum detection probability
    detect_steepness: float = 0.35  # 1/m
    detect_pmax: float = 0.9
    events_min: int = 1
    events_max: int = 3
    device_offset_std: float = 0.0  # dB, per-day receiver gain offset
    beacon_offset_std: float = 0.0  # dB, per beacon and day transmit offset
    foreign_rate: float = 0.0  # chance per second of a reading from a non-beacon MAC
    observer_id: int = 97
    other_observer_rate: float = 0.0  # chance per visit of a second observer's annotation

    def __post_init__(self):
        if len(self.rooms) < 1:
            raise ValueError("at least one room is required")
        if len(self.beacons) < 1:
            raise ValueError("at least one beacon is required")
        if len({r.name for r in self.rooms}) != len(self.rooms):
            raise ValueError("room names must be unique")
        if any(not 1 <= b.id <= N_BEACONS for b in self.beacons):
            raise ValueError(f"beacon ids must lie in 1..{N_BEACONS}")
        if len({b.id for b in self.beacons}) != len(self.beacons):
            raise ValueError("beacon ids must be unique")
        if not 1 <= self.dwell_min <= self.dwell_max:
            raise ValueError("dwell range must be positive and ordered")
        if self.transit_seconds >= self.dwell_min:
            raise ValueError("transit must be shorter than the minimum dwell")
        if self.noise_std < 0 or self.jitter_std < 0 or self.visit_offset_std < 0:
            raise ValueError("noise levels must be non-negative")
        if not 0 <= self.detect_pmax <= 1:
            raise ValueError("detect_pmax must lie in [0, 1]")
        if not 1 <= self.events_min <= self.events_max:
            raise ValueError("events range must be positive and ordered")
        if any(r.weight <= 0 for r in self.rooms):
            raise ValueError("room weights must be positive")
        if self.days < 1 or self.seconds_per_day < 1:
            raise ValueError("days and seconds_per_day must be positive")

    @property
    def room_names(self):
        return [r.name for r in self.rooms]

    def day_origin(self, day):
        """(epoch of the first second of ``day``, utc offset seconds)."""
        off = self.utc_offset_minutes * 60
        tz = timezone(timedelta(seconds=off))
        base = datetime.fromisoformat(self.start_date).replace(hour=self.day_start_hour, tzinfo=tz)
        return int((base + timedelta(days=day)).timestamp()), off

    # --- flat key/value form -------------------------------------------------

    def to_kv(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name not in ("rooms", "beacons"):
                out[f.name] = getattr(self, f.name)
        for i, r in enumerate(self.rooms, start=1):
            out.update({f"room.{i}.name": r.name, f"room.{i}.x": r.x, f"room.{i}.y": r.y,
                        f"room.{i}.weight": r.weight})
        for b in self.beacons:
            out.update({f"beacon.{b.id}.x": b.x, f"beacon.{b.id}.y": b.y})
        return out

    @classmethod
    def from_kv(cls, cfg: dict, **overrides):
        rooms = [Room(v["name"], float(v["x"]), float(v["y"]), float(v.get("weight", 1.0)))
                 for v in kvconfig.indexed(cfg, "room").values()]
        beacons = [Beacon(i, float(v["x"]), float(v["y"]))
                   for i, v in kvconfig.indexed(cfg, "beacon").items()]
        kw = {}
        for f in fields(cls):
            if f.name in ("rooms", "beacons") or f.name not in cfg:
                continue
            cast = {"int": int, "float": float, "str": str}[f.type]
            kw[f.name] = kvconfig.get(cfg, f.name, cast=cast)
        kw.update(overrides)
        try:
            return cls(rooms, beacons, **kw)
        except (TypeError, KeyError) as exc:
            raise kvconfig.ConfigError(f"incomplete facility config: {exc}") from exc


def load_preset(name="benchmark", **overrides) -> FacilityConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("dasel").joinpath("presets", f"{name}.cfg").read_text("utf-8")
    return FacilityConfig.from_kv(kvconfig.parse_kv(text, f"preset:{name}"), **overrides)


def load_config(path, **overrides) -> FacilityConfig:
    cfg = kvconfig.read_kv(path)
    preset = cfg.pop("preset", None)
    if preset:
        base = load_preset(preset).to_kv()
        base = {k: str(v) for k, v in base.items()}
        base.update(cfg)
        cfg = base
    return FacilityConfig.from_kv(cfg, **overrides)


# --------------------------------------------------------------------------
# trajectories
# --------------------------------------------------------------------------


@dataclass
class GroundTruthTrace:
    timestamp: np.ndarray  # epoch seconds, contiguous
    utc_offset: int
    room: np.ndarray  # room index per second
    x: np.ndarray
    y: np.ndarray
    visits: list = field(default_factory=list)  # (start index, end index exclusive, room index)

    def __len__(self):
        return len(self.timestamp)

    def room_names(self, config):
        return np.array(config.room_names, dtype=object)[self.room]


def generate_trace(config: FacilityConfig, day: int) -> GroundTruthTrace:
    """Deterministic per (seed, day)."""
    rng = np.random.default_rng([int(config.seed), int(day), 0])
    S = config.seconds_per_day
    K = len(config.rooms)
    w = np.array([r.weight for r in config.rooms], dtype=np.float64)
    cx = np.array([r.x for r in config.rooms])
    cy = np.array([r.y for r in config.rooms])
    room = np.zeros(S, dtype=np.int64)
    x = np.zeros(S)
    y = np.zeros(S)
    visits = []
    cur = int(rng.choice(K, p=w / w.sum()))
    px = py = None
    t = 0
    while t < S:
        dwell = int(rng.integers(config.dwell_min, config.dwell_max + 1))
        end = min(S, t + dwell)
        ox, oy = rng.normal(0.0, config.visit_offset_std, size=2) if config.visit_offset_std else (0.0, 0.0)
        tx, ty = cx[cur] + ox, cy[cur] + oy
        room[t:end] = cur
        x[t:end], y[t:end] = tx, ty
        if px is not None and config.transit_seconds:
            walk = min(config.transit_seconds, end - t)
            frac = (np.arange(walk) + 1.0) / (config.transit_seconds + 1.0)
            x[t:t + walk] = px + (tx - px) * frac
            y[t:t + walk] = py + (ty - py) * frac
        visits.append((t, end, cur))
        px, py = tx, ty
        t = end
        if K > 1:
            p = w.copy()
            p[cur] = 0.0
            cur = int(rng.choice(K, p=p / p.sum()))
    if config.jitter_std:
        x = x + rng.normal(0.0, config.jitter_std, size=S)
        y = y + rng.normal(0.0, config.jitter_std, size=S)
    t0, off = config.day_origin(day)
    return GroundTruthTrace(t0 + np.arange(S, dtype=np.int64), off, room, x, y, visits)


# --------------------------------------------------------------------------
# signal model
# --------------------------------------------------------------------------


def detection_probability(d, config: FacilityConfig):
    d = np.asarray(d, dtype=np.float64)
    return config.detect_pmax / (1.0 + np.exp(config.detect_steepness * (d - config.detect_mid)))


def expected_rssi(d, config: FacilityConfig):
    return config.p0 - 10.0 * config.path_loss_n * np.log10(np.maximum(d, 0.5))


@dataclass
class EmittedDay:
    timestamp: np.ndarray
    beacon_id: np.ndarray  # 0 marks a foreign (non-beacon) device
    rssi: np.ndarray
    utc_offset: int


def emit_readings(trace: GroundTruthTrace, config: FacilityConfig, day: int = 0) -> EmittedDay:
    """Scanner readings for one day's trace, ordered by second then beacon id."""
    rng = np.random.default_rng([int(config.seed), int(day), 1])
    bx = np.array([b.x for b in config.beacons])
    by = np.array([b.y for b in config.beacons])
    ids = np.array([b.id for b in config.beacons], dtype=np.int64)
    order = np.argsort(ids)
    bx, by, ids = bx[order], by[order], ids[order]
    device = rng.normal(0.0, config.device_offset_std) if config.device_offset_std else 0.0
    per_beacon = (rng.normal(0.0, config.beacon_offset_std, size=len(ids))
                  if config.beacon_offset_std else np.zeros(len(ids)))
    d = np.hypot(trace.x[:, None] - bx[None, :], trace.y[:, None] - by[None, :])  # (S, B)
    detected = rng.random(d.shape) < detection_probability(d, config)
    events = rng.integers(config.events_min, config.events_max + 1, size=d.shape)
    events = np.where(detected, events, 0)
    sec, col = np.nonzero(events)
    reps = events[sec, col]
    sec = np.repeat(sec, reps)
    col = np.repeat(col, reps)
    mean = expected_rssi(d[sec, col], config) + device + per_beacon[col]
    noise = rng.normal(0.0, config.noise_std, size=len(sec)) if config.noise_std else 0.0
    rssi = np.clip(np.rint(mean + noise), -110, -30).astype(np.int64)
    ts = trace.timestamp[sec]
    bid = ids[col]
    if config.foreign_rate > 0:
        fsec = np.flatnonzero(rng.random(len(trace)) < config.foreign_rate)
        fts = trace.timestamp[fsec]
        frssi = rng.integers(-100, -60, size=len(fsec))
        ts = np.concatenate([ts, fts])
        bid = np.concatenate([bid, np.zeros(len(fsec), dtype=np.int64)])
        rssi = np.concatenate([rssi, frssi])
        o = np.lexsort((bid, ts))
        ts, bid, rssi = ts[o], bid[o], rssi[o]
    return EmittedDay(ts, bid, rssi, trace.utc_offset)


# --------------------------------------------------------------------------
# files
# --------------------------------------------------------------------------


def beacon_macs(seed=0) -> dict:
    """Deterministic locally administered MACs, beacon id -> MAC."""
    return {i: "02:DA:5E:00:{:02X}:{:02X}".format((seed + i) % 256, i) for i in range(1, N_BEACONS + 1)}


FOREIGN_MAC = "0E:00:00:00:00:99"


def _second_strings(t0, n, off):
    return [format_timestamp(t0 + k, off) for k in range(n)]


def write_ble_day(path, emitted: EmittedDay, t0, n_seconds, macs):
    strings = np.array(_second_strings(t0, n_seconds, emitted.utc_offset), dtype=object)
    mac_arr = np.array([FOREIGN_MAC] + [macs[i] for i in range(1, N_BEACONS + 1)], dtype=object)
    ts = strings[emitted.timestamp - t0]
    mc = mac_arr[emitted.beacon_id]
    rs = emitted.rssi.astype(str).astype(object)
    body = ts + "," + mc + "," + rs
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(BLE_HEADER) + "\n")
        if len(body):
            fh.write("\n".join(body.tolist()) + "\n")


def label_rows(trace: GroundTruthTrace, config: FacilityConfig, day: int):
    """Closed label intervals, one per visit, plus optional decoy observer rows."""
    rng = np.random.default_rng([int(config.seed), int(day), 2])
    names = config.room_names
    off = trace.utc_offset
    rows = []
    for s, e, r in trace.visits:
        start, end = int(trace.timestamp[s]), int(trace.timestamp[e - 1])
        if end <= start:
            # a one-second visit cannot form a start < end interval; extend it backwards
            start = end - 1
        rows.append((format_timestamp(start, off), format_timestamp(end, off), names[r],
                     config.observer_id))
        if config.other_observer_rate and rng.random() < config.other_observer_rate:
            other = names[int(rng.integers(len(names)))]
            rows.append((format_timestamp(start, off), format_timestamp(end, off), other,
                         config.observer_id + 1))
    return rows


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def simulate_day(config: FacilityConfig, day: int):
    trace = generate_trace(config, day)
    return trace, emit_readings(trace, config, day)


def write_dataset(config: FacilityConfig, out_dir) -> dict:
    """Write ``ble_<date>.csv`` per day, ``labels.csv``, ``macmap.csv`` and
    ``dataset.cfg``; returns {file name: sha256}."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    macs = beacon_macs(config.seed)
    write_mac_map(out / "macmap.csv", {m: i for i, m in macs.items()})
    labels = []
    files = ["macmap.csv"]
    for day in range(config.days):
        trace, emitted = simulate_day(config, day)
        t0, _ = config.day_origin(day)
        date = (datetime.fromisoformat(config.start_date) + timedelta(days=day)).strftime("%Y-%m-%d")
        name = f"ble_{date}.csv"
        write_ble_day(out / name, emitted, t0, config.seconds_per_day, macs)
        files.append(name)
        labels.extend(label_rows(trace, config, day))
    with open(out / "labels.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(LABEL_HEADER) + "\n")
        for row in labels:
            fh.write(",".join(str(c) for c in row) + "\n")
    files.append("labels.csv")
    kvconfig.write_kv(out / "dataset.cfg", config.to_kv(), ["synthetic facility dataset"])
    files.append("dataset.cfg")
    return {f: _sha256(out / f) for f in files}


def frame_counts(config: FacilityConfig):
    """Ground-truth seconds per room over all days (for imbalance checks)."""
    counts = np.zeros(len(config.rooms), dtype=np.int64)
    for day in range(config.days):
        counts += np.bincount(generate_trace(config, day).room, minlength=len(config.rooms))
    return dict(zip(config.room_names, counts.tolist()))


__all__ = [
    "Beacon", "EmittedDay", "FacilityConfig", "GroundTruthTrace", "Room",
    "detection_probability", "emit_readings", "expected_rssi", "frame_counts",
    "generate_trace", "label_rows", "load_config", "load_preset", "write_dataset",
]
