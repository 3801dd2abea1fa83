import itertools
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusion_track.association import (
    LifecycleAction,
    apply_match_outcome,
    cost_matrix,
    merge_overlaps,
    new_track_status,
    solve_assignment,
)
from fusion_track.geometry import Detection


def exhaustive_min(C):
    """Minimum total cost over all one-to-one assignments of the smaller side."""
    n, m = C.shape
    if n <= m:
        return min(sum(C[i, p[i]] for i in range(n)) for p in itertools.permutations(range(m), n))
    return min(sum(C[p[j], j] for j in range(m)) for p in itertools.permutations(range(n), m))


def test_hungarian_matches_exhaustive_search():
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    for _ in range(1000):
        n, m = rng.integers(1, 7, size=2)
        C = rng.uniform(0, 10, (n, m))
        if rng.random() < 0.3:
            C = np.round(C)  # ties
        res = solve_assignment(C, math.inf)
        assert len(res.pairs) == min(n, m)
        assert res.total_cost == pytest.approx(exhaustive_min(C), abs=1e-9)
    assert time.perf_counter() - start < 5.0


def test_gate_never_admits_far_pairs():
    rng = np.random.default_rng(1)
    for _ in range(500):
        C = rng.uniform(0, 10, rng.integers(1, 6, size=2))
        res = solve_assignment(C, 4.0)
        assert all(C[i, j] <= 4.0 for i, j in res.pairs)
        assert sorted(res.unmatched_tracks + [i for i, _ in res.pairs]) == list(range(C.shape[0]))
        assert sorted(res.unmatched_detections + [j for _, j in res.pairs]) == list(range(C.shape[1]))
        # the gated solution is optimal among assignments that only use admissible pairs,
        # counting every unmatched row as the gate cost
        n, m = C.shape
        size = max(n, m)
        best = math.inf
        for perm in itertools.permutations(range(size)):
            cost = sum(C[i, perm[i]] if perm[i] < m and C[i, perm[i]] <= 4.0 else 4.0 for i in range(n))
            best = min(best, cost)
        assert res.total_cost + 4.0 * len(res.unmatched_tracks) == pytest.approx(best)


def test_gate_rejects_cheaper_infeasible_pair():
    res = solve_assignment([[1.0, 5.0], [2.0, 9.0]], 4.0)
    assert res.pairs == [(0, 0)] and res.unmatched_tracks == [1] and res.unmatched_detections == [1]


def test_tie_break_prefers_lowest_column():
    res = solve_assignment(np.ones((3, 3)), 2.0)
    assert res.pairs == [(0, 0), (1, 1), (2, 2)]


def test_empty_inputs():
    assert solve_assignment(np.zeros((0, 3)), 1.0).unmatched_detections == [0, 1, 2]
    assert solve_assignment(np.zeros((2, 0)), 1.0).unmatched_tracks == [0, 1]


def test_cost_matrix():
    C = cost_matrix([(0, 0), (3, 0)], [(0, 4), (3, 4), (6, 4)])
    assert C.shape == (2, 3) and C[0, 0] == 4.0 and C[1, 2] == 5.0


# -- overlap merge ---------------------------------------------------------
def connected_components(pts, r):
    n = len(pts)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            a = parent[a]
        return a

    for i in range(n):
        for j in range(i + 1, n):
            if math.dist(pts[i], pts[j]) <= r:
                parent[find(j)] = find(i)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def test_merge_single_pass_matches_components():
    # widely spaced clusters: one round of single linkage is final
    rng = np.random.default_rng(5)
    centers = np.arange(6)[:, None] * np.array([40.0, 0.0])
    pts = np.vstack([c + rng.uniform(-1, 1, (rng.integers(1, 4), 2)) for c in centers])
    dets = [Detection(float(x), float(y), yaw=0.1, v=10.0) for x, y in pts]
    out = merge_overlaps(dets, 5.1)
    comps = connected_components(pts.tolist(), 5.1)
    assert len(out) == len(comps) == 6
    for o, comp in zip(out, comps):
        assert (o.x, o.y) == pytest.approx(tuple(pts[comp].mean(axis=0)))
        assert o.yaw == pytest.approx(0.1) and o.v == pytest.approx(10.0)


@given(st.lists(st.tuples(st.floats(-30, 30), st.floats(-30, 30)), max_size=25), st.floats(0.5, 8.0))
@settings(max_examples=200, deadline=None)
def test_merge_is_idempotent_and_separated(pts, r):
    dets = [Detection(x, y) for x, y in pts]
    out = merge_overlaps(dets, r)
    assert len(out) <= len(dets)
    assert merge_overlaps(out, r) == out
    for a, b in itertools.combinations(out, 2):
        assert math.dist((a.x, a.y), (b.x, b.y)) > r


def test_merge_uses_circular_heading_mean():
    out = merge_overlaps([Detection(0, 0, yaw=math.pi - 0.1), Detection(1, 0, yaw=-math.pi + 0.1)], 5.0)
    assert len(out) == 1 and abs(abs(out[0].yaw) - math.pi) < 1e-9


# -- lifecycle -------------------------------------------------------------
def test_lifecycle_random_sequences():
    """Reference model of the status counter checked on 10^4 random match/miss sequences."""
    rng = np.random.default_rng(11)
    t_mtc = 25
    for _ in range(10_000):
        w0 = int(rng.integers(1, 4))
        st_ = new_track_status(w0, t_mtc, 0.0)
        counter, matches, alive = min(w0, t_mtc), 0, True
        for _ in range(int(rng.integers(1, 60))):
            matched = bool(rng.random() < 0.6)
            w = int(rng.integers(1, 4))
            action = apply_match_outcome(st_, matched, w, t_mtc)
            if matched:
                counter, matches = min(counter + w, t_mtc), matches + 1
            else:
                counter -= 1
            assert st_.counter == counter
            assert 0 <= st_.counter <= t_mtc
            assert st_.confirmed == (matches >= 2)
            assert (action is LifecycleAction.REMOVE) == (counter == 0)
            if counter == 0:
                alive = False
                break
        assert alive == (st_.counter > 0)


def test_counter_clamps_at_t_mtc():
    s = new_track_status(3, 25, 0.0)
    for _ in range(20):
        apply_match_outcome(s, True, 3, 25)
    assert s.counter == 25
    # a clamped track survives exactly 24 misses
    for k in range(24):
        assert apply_match_outcome(s, False, 3, 25) is LifecycleAction.KEEP
    assert apply_match_outcome(s, False, 3, 25) is LifecycleAction.REMOVE
