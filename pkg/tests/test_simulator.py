import numpy as np
import pytest

from dasel.kvconfig import ConfigError, write_kv
from dasel.pipeline import prepare
from dasel.simulator import (
    Beacon, FacilityConfig, Room, detection_probability, emit_readings, expected_rssi,
    frame_counts, generate_trace, load_config, load_preset, write_dataset,
)


def two_rooms(**kw):
    base = dict(rooms=[Room("a", 0, 0), Room("b", 10, 0)], beacons=[Beacon(1, 0, 1), Beacon(2, 10, 1)],
                days=1, seconds_per_day=900, seed=3)
    base.update(kw)
    return FacilityConfig(**base)


def test_fixed_dwell_three_visits():
    tr = generate_trace(two_rooms(dwell_min=300, dwell_max=300), 0)
    assert len(tr.visits) == 3 and len(tr) == 900
    assert [e - s for s, e, _ in tr.visits] == [300, 300, 300]
    # consecutive visits are to different rooms
    rooms = [r for _, _, r in tr.visits]
    assert all(a != b for a, b in zip(rooms, rooms[1:]))


def test_single_room_constant():
    cfg = FacilityConfig([Room("only", 1, 1)], [Beacon(1, 0, 0)], days=1, seconds_per_day=500)
    tr = generate_trace(cfg, 0)
    assert np.all(tr.room == 0)


def test_deterministic():
    cfg = load_preset("small")
    a, b = generate_trace(cfg, 1), generate_trace(cfg, 1)
    assert np.array_equal(a.room, b.room) and np.array_equal(a.x, b.x)
    ea, eb = emit_readings(a, cfg, 1), emit_readings(b, cfg, 1)
    assert np.array_equal(ea.rssi, eb.rssi) and np.array_equal(ea.beacon_id, eb.beacon_id)
    assert not np.array_equal(generate_trace(cfg, 0).room, a.room)


def test_rssi_formula():
    cfg = two_rooms(p0=-45.0, path_loss_n=2.0)
    assert expected_rssi(1.0, cfg) == -45.0
    assert expected_rssi(10.0, cfg) == -65.0
    assert expected_rssi(0.1, cfg) == expected_rssi(0.5, cfg)
    # zero noise, certain detection at 1 m gives exactly -45
    cfg = FacilityConfig([Room("a", 0, 0)], [Beacon(1, 0, 1)], days=1, seconds_per_day=20, p0=-45.0,
                         path_loss_n=2.0, noise_std=0.0, detect_pmax=1.0, detect_steepness=50.0,
                         detect_mid=5.0)
    e = emit_readings(generate_trace(cfg, 0), cfg)
    assert len(e.rssi) >= 20 and np.all(e.rssi == -45)


def test_zero_detection_probability():
    cfg = two_rooms(detect_pmax=0.0)
    e = emit_readings(generate_trace(cfg, 0), cfg)
    assert len(e.timestamp) == 0


def test_detection_monotonic():
    cfg = load_preset("benchmark")
    d = np.linspace(0, 40, 200)
    assert np.all(np.diff(detection_probability(d, cfg)) < 0)
    assert np.all(np.diff(expected_rssi(d[d >= 0.5], cfg)) < 0)


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        two_rooms(dwell_min=10, dwell_max=5)
    with pytest.raises(ValueError):
        FacilityConfig([Room("a", 0, 0)], [Beacon(26, 0, 0)])
    with pytest.raises(ValueError):
        load_preset("nope")
    write_kv(tmp_path / "c.cfg", {"preset": "small", "days": 3, "noise_std": 2.5})
    cfg = load_config(tmp_path / "c.cfg")
    assert cfg.days == 3 and cfg.noise_std == 2.5 and len(cfg.rooms) == 4
    write_kv(tmp_path / "e.cfg", {"days": 3})
    with pytest.raises((ConfigError, ValueError)):
        load_config(tmp_path / "e.cfg")


def test_benchmark_imbalance():
    counts = frame_counts(load_preset("benchmark"))
    assert len(counts) == 12
    assert max(counts.values()) >= 5 * min(counts.values())


def test_dataset_roundtrip(tmp_path):
    cfg = load_preset("small", days=4, seconds_per_day=600)
    files = write_dataset(cfg, tmp_path)
    assert sum(1 for f in files if f.startswith("ble_")) == 4
    assert write_dataset(cfg, tmp_path / "again") == files
    prep = prepare(tmp_path)
    assert prep.coverage == 1.0
    assert all(not r.errors for r in prep.reports)
    assert sum(r.dropped_unknown_mac for r in prep.reports) > 0
    assert len(np.unique(prep.table.day)) == 4
    # frames carry the ground-truth room of their second
    trace = generate_trace(cfg, 0)
    truth = dict(zip(trace.timestamp.tolist(), trace.room_names(cfg).tolist()))
    sel = [i for i, t in enumerate(prep.table.timestamp.tolist()) if t in truth]
    assert sel and all(prep.table.room[i] == truth[prep.table.timestamp[i]] for i in sel)
