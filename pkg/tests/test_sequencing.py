import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dasel.sequencing import (
    DIRECTION_NAMES, SEQ_LEN, directional_windows, pad_and_mask, resolve_directions,
    room_group_ids, segment_by_room, window_bounds,
)


def frames(n, dim=23):
    return np.arange(n * dim, dtype=float).reshape(n, dim) + 1


def test_group_ids_example():
    np.testing.assert_array_equal(room_group_ids(list("AABBBC")), [1, 1, 2, 2, 2, 3])
    assert len(room_group_ids([])) == 0


def test_short_run_discarded():
    seg = segment_by_room(frames(2), ["A", "A"])
    assert seg.sequences == [] and seg.discarded == 1


def test_long_run_keeps_last_50():
    f = frames(60)
    seg = segment_by_room(f, ["A"] * 60)
    assert len(seg.sequences) == 1 and seg.truncated == 1
    s = seg.sequences[0]
    np.testing.assert_array_equal(s.values, f[10:])
    assert s.mask.all() and s.room == "A"


def test_pad_positions():
    s = pad_and_mask(frames(3))
    assert s.mask.tolist() == [False] * 47 + [True] * 3
    assert np.all(s.values[:47] == 0)
    np.testing.assert_array_equal(s.frames, frames(3))
    with pytest.raises(ValueError):
        pad_and_mask(frames(51))
    with pytest.raises(ValueError):
        pad_and_mask(np.zeros((0, 23)))


def test_windows_examples():
    ts = np.arange(100, 200)
    f = frames(100)
    w = {x.direction: x for x in directional_windows(150, ts, f)}
    assert tuple(w) == DIRECTION_NAMES
    lens = {k: v.length for k, v in w.items()}
    assert lens == {"backward_10": 10, "centered_10": 10, "forward_10": 10, "backward_15": 15,
                    "forward_15": 15, "asymm_past": 15, "asymm_future": 15}
    np.testing.assert_array_equal(w["backward_10"].frames, f[41:51])
    # anchor at the start of the store: backward window holds only the anchor
    w0 = {x.direction: x for x in directional_windows(100, ts, f)}
    assert w0["backward_10"].length == 1 and w0["forward_10"].length == 10
    # a gap shrinks the window
    gap = np.r_[np.arange(100, 145), np.arange(148, 200)]
    wg = {x.direction: x for x in directional_windows(150, gap, frames(len(gap)))}
    assert wg["backward_10"].length == 7


def test_empty_windows_omitted():
    ts = np.array([100, 200])
    out = directional_windows(150, ts, frames(2))
    assert out == []


def test_resolve_directions():
    assert resolve_directions("forward_10,backward_10")[0].name == "backward_10"
    with pytest.raises(ValueError):
        resolve_directions("sideways")


def brute_runs(labels):
    runs, i = [], 0
    while i < len(labels):
        j = i
        while j < len(labels) and labels[j] == labels[i]:
            j += 1
        runs.append((i, j))
        i = j
    return runs


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from("ABC"), max_size=200))
def test_segment_invariants(labels):
    f = frames(len(labels), 4) if labels else np.zeros((0, 4))
    seg = segment_by_room(f, labels)
    runs = brute_runs(labels)
    kept = [(a, b) for a, b in runs if b - a >= 3]
    assert len(seg.sequences) == len(kept)
    assert seg.discarded == len(runs) - len(kept)
    for s, (a, b) in zip(seg.sequences, kept):
        n = min(b - a, SEQ_LEN)
        assert s.length == n and not s.mask[: SEQ_LEN - n].any()
        np.testing.assert_array_equal(s.frames, f[b - n:b])
        assert s.room == labels[a]
    gids = seg.group_ids
    if len(labels):
        assert gids[0] == 1 and np.all(np.diff(gids) >= 0)
        assert gids[-1] == len(runs)


def test_window_bounds_match_windows_and_days():
    rng = np.random.default_rng(0)
    ts = np.sort(rng.choice(np.arange(1000), 300, replace=False))
    day = (ts >= 500).astype(np.int64)
    f = frames(300, 3)
    lo, hi = window_bounds(ts, day)
    for i in range(0, 300, 7):
        sel = day == day[i]
        base = np.flatnonzero(sel)[0]
        wins = {w.direction: w for w in directional_windows(int(ts[i]), ts[sel], f[sel])}
        for k, name in enumerate(DIRECTION_NAMES):
            assert lo[i, k] <= i < hi[i, k]
            np.testing.assert_array_equal(wins[name].frames, f[lo[i, k]:hi[i, k]])
            assert np.all(day[lo[i, k]:hi[i, k]] == day[i])
            assert lo[i, k] >= base
