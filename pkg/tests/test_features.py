import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dasel.features import (
    FREQ_DIM, STAT_DIM, SecondGroup, build_frames, frequency_frame, group_by_second,
    read_frame_csv, read_stat_csv, stat_frame, write_frame_csv, write_stat_csv,
)
from dasel.ingest import Readings


def group(ids, rssi=None):
    ids = np.asarray(ids, dtype=np.int64)
    rssi = np.full(len(ids), -70) if rssi is None else np.asarray(rssi, dtype=np.int64)
    return SecondGroup(0, 0, ids, rssi)


def test_group_by_second_sizes():
    r = Readings([10] * 5 + [11] * 2, [1] * 7, [-60] * 7, [0] * 7)
    g = group_by_second(r).groups
    assert [len(x) for x in g] == [5, 2]
    assert group_by_second(Readings.empty()).groups == []
    assert len(group_by_second(Readings([3], [1], [-60], [0])).groups) == 1


def test_group_conflicting_rooms_rejected():
    r = Readings([10, 10, 11], [1, 2, 3], [-60] * 3, [0] * 3, ["a", "b", "a"])
    res = group_by_second(r)
    assert res.rejected == 1 and len(res.groups) == 1


def test_frequency_examples():
    f = frequency_frame(group([1, 1, 4, 4, 4]))
    expect = np.zeros(FREQ_DIM)
    expect[0], expect[3] = 0.4, 0.6
    np.testing.assert_array_equal(f.freq, expect)
    f = frequency_frame(group([7]))
    assert f.freq[6] == 1.0 and f.freq.sum() == 1.0
    f = frequency_frame(group([3, 24]))
    assert f.total_detections == 2 and f.freq[2] == 0.5 and f.freq.sum() == 0.5


def test_stat_examples():
    s = stat_frame(group([2, 2], [-90, -92]))
    assert (s.mean[1], s.std[1], s.count[1]) == (-91.0, 1.0, 2.0)
    s = stat_frame(group([5], [-80]))
    assert (s.mean[4], s.std[4], s.count[4]) == (-80.0, 0.0, 1.0)
    assert s.dominant == (5, 0, 0)
    s = stat_frame(group([9, 1, 2, 1, 2, 1, 2]))
    assert s.dominant == (1, 2, 9)
    assert s.stats.shape == (STAT_DIM,)
    assert np.all(s.mean[[k for k in range(25) if k not in (0, 1, 8)]] == 0)


group_strategy = st.lists(st.tuples(st.integers(1, 25), st.integers(-110, -30)), min_size=1, max_size=40)


@settings(max_examples=100, deadline=None)
@given(group_strategy, st.randoms())
def test_order_invariance_and_scale(items, rnd):
    ids, rssi = map(list, zip(*items))
    a_f, a_s = frequency_frame(group(ids, rssi)), stat_frame(group(ids, rssi))
    perm = list(range(len(ids)))
    rnd.shuffle(perm)
    b_f = frequency_frame(group([ids[k] for k in perm], [rssi[k] for k in perm]))
    b_s = stat_frame(group([ids[k] for k in perm], [rssi[k] for k in perm]))
    np.testing.assert_array_equal(a_f.freq, b_f.freq)
    np.testing.assert_array_equal(a_s.stats, b_s.stats)
    assert a_s.dominant == b_s.dominant
    d_f = frequency_frame(group(ids * 2, rssi * 2))
    d_s = stat_frame(group(ids * 2, rssi * 2))
    np.testing.assert_allclose(d_f.freq, a_f.freq, rtol=0, atol=1e-15)
    np.testing.assert_array_equal(d_s.count, 2 * a_s.count)
    inside = sum(1 for i in ids if i <= FREQ_DIM)
    assert abs(a_f.freq.sum() - inside / len(ids)) < 1e-12
    assert a_f.freq.sum() <= 1 + 1e-12
    assert np.all(a_s.std >= 0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 30), st.integers(1, 25), st.integers(-110, -30)), min_size=0, max_size=120))
def test_bulk_matches_per_group(rows):
    rows = sorted(rows, key=lambda r: r[0])
    r = Readings([t for t, _, _ in rows], [b for _, b, _ in rows], [x for _, _, x in rows], [0] * len(rows),
                 ["a" if t % 7 else "b" for t, _, _ in rows])
    table, rejected = build_frames(r)
    res = group_by_second(r)
    assert rejected == res.rejected == 0
    assert len(table) == len(res.groups)
    for i, g in enumerate(res.groups):
        f, s = frequency_frame(g), stat_frame(g)
        assert table.timestamp[i] == g.timestamp and table.total[i] == f.total_detections
        np.testing.assert_array_equal(table.freq[i], f.freq)
        np.testing.assert_array_equal(table.stats[i], s.stats)
        assert tuple(table.dominant[i]) == s.dominant
        assert table.room[i] == g.room


def test_bulk_rejects_conflicts():
    r = Readings([1, 1, 2], [1, 2, 3], [-60] * 3, [0] * 3, ["a", "b", "a"])
    table, rejected = build_frames(r)
    assert rejected == 1 and table.timestamp.tolist() == [2]


def test_frame_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    n = 50
    ts = np.sort(rng.choice(10_000, n, replace=False)) + 1_700_000_000
    r = Readings(np.repeat(ts, 3), rng.integers(1, 26, 3 * n), rng.integers(-100, -40, 3 * n),
                 np.full(3 * n, 3600), np.repeat(np.array(["x", "y"] * (n // 2), dtype=object), 3))
    table, _ = build_frames(r)
    write_frame_csv(tmp_path / "f.csv", table)
    write_stat_csv(tmp_path / "s.csv", table)
    header = (tmp_path / "f.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["timestamp", "room", "total"] and header[-1] == "f23"
    f = read_frame_csv(tmp_path / "f.csv")
    s = read_stat_csv(tmp_path / "s.csv")
    np.testing.assert_array_equal(f.timestamp, table.timestamp)
    np.testing.assert_allclose(f.freq, table.freq, atol=5e-10)
    np.testing.assert_array_equal(s.dominant, table.dominant)
    np.testing.assert_allclose(s.stats, table.stats, atol=5e-10)
    assert f.room.tolist() == table.room.tolist()
