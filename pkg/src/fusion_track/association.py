"""Overlap merging, gated Hungarian assignment and the status-counter lifecycle."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .geometry import Detection


def _circular_mean(angles):
    return math.atan2(sum(math.sin(a) for a in angles), sum(math.cos(a) for a in angles))


def _centroid(members: list[Detection]) -> Detection:
    if len(members) == 1:
        return members[0]
    n = len(members)
    yaws = [d.yaw for d in members if d.yaw is not None]
    speeds = [d.v for d in members if d.v is not None]
    return Detection(
        x=sum(d.x for d in members) / n,
        y=sum(d.y for d in members) / n,
        yaw=_circular_mean(yaws) if yaws else None,
        v=sum(speeds) / len(speeds) if speeds else None,
    )


def merge_overlaps(dets: list[Detection], d_merge: float) -> list[Detection]:
    """Merge detections of one frame that lie within ``d_merge`` of each other.

    Single-linkage clustering on a k-d tree radius query.  Each cluster is
    replaced by the feature-wise centroid of its original members (circular
    mean for heading).  Clustering repeats on the centroids until no two are
    within ``d_merge``, which makes the operation idempotent.  Output is
    ordered by the smallest original index in each cluster.
    """
    if len(dets) < 2 or d_merge <= 0:
        return list(dets)
    clusters = [[i] for i in range(len(dets))]
    while True:
        reps = [_centroid([dets[i] for i in c]) for c in clusters]
        pts = np.array([(d.x, d.y) for d in reps])
        pairs = cKDTree(pts).query_pairs(d_merge)
        if not pairs:
            return reps
        parent = list(range(len(clusters)))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for a, b in sorted(pairs):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        groups: dict[int, list[int]] = {}
        for k, c in enumerate(clusters):
            groups.setdefault(find(k), []).extend(c)
        clusters = sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])


def cost_matrix(track_pos, det_pos) -> np.ndarray:
    """Pairwise Euclidean distance between track positions (rows) and detections (columns)."""
    a = np.asarray(track_pos, dtype=float).reshape(-1, 2)
    b = np.asarray(det_pos, dtype=float).reshape(-1, 2)
    return np.hypot(a[:, None, 0] - b[None, :, 0], a[:, None, 1] - b[None, :, 1])


@dataclass
class Assignment:
    pairs: list[tuple[int, int]] = field(default_factory=list)
    unmatched_tracks: list[int] = field(default_factory=list)
    unmatched_detections: list[int] = field(default_factory=list)
    total_cost: float = 0.0


def solve_assignment(C, gate: float) -> Assignment:
    """Minimum-cost track/detection assignment with a distance gate.

    Entries above ``gate`` are clipped to a sentinel just above it and the
    matrix is padded to square with the same sentinel, so leaving a track or
    detection unmatched costs the same as a gated pair.  After the solve,
    sentinel pairs are dropped into the unmatched lists.  Among equal-cost
    optima, rows take the lowest-index admissible column in row order.
    """
    C = np.asarray(C, dtype=float)
    if C.size == 0 and C.ndim != 2:
        C = C.reshape(0, 0)
    n, m = C.shape
    if n == 0 or m == 0:
        return Assignment([], list(range(n)), list(range(m)), 0.0)
    if math.isinf(gate):
        sentinel = float(C.max()) * 2.0 + 1.0
    else:
        sentinel = gate + max(1e-6, 1e-9 * abs(gate))
    admissible = C <= gate
    size = max(n, m)
    Cp = np.full((size, size), sentinel)
    Cp[:n, :m] = np.where(admissible, C, sentinel)

    rows, cols = linear_sum_assignment(Cp)
    assign = cols.copy()
    tol = 1e-9 * max(1.0, float(Cp[rows, cols].sum()))
    free = list(range(size))
    for i in range(n):
        cur = assign[i]
        rest_cost = float(Cp[np.arange(i, size), assign[i:]].sum())
        cur_valid = cur < m and admissible[i, cur]
        for j in free:
            if cur_valid and j >= cur:
                break
            if j == cur or j >= m or not admissible[i, j]:
                continue
            sub_cols = [c for c in free if c != j]
            sub = Cp[i + 1:, :][:, sub_cols]
            r2, c2 = linear_sum_assignment(sub) if sub.size else ((), ())
            alt = Cp[i, j] + (float(sub[r2, c2].sum()) if sub.size else 0.0)
            if alt <= rest_cost + tol:
                assign[i] = j
                for rr, cc in zip(r2, c2):
                    assign[i + 1 + rr] = sub_cols[cc]
                break
        free.remove(assign[i])

    pairs = [(i, int(assign[i])) for i in range(n) if assign[i] < m and admissible[i, assign[i]]]
    matched_t = {p[0] for p in pairs}
    matched_d = {p[1] for p in pairs}
    return Assignment(
        pairs=pairs,
        unmatched_tracks=[i for i in range(n) if i not in matched_t],
        unmatched_detections=[j for j in range(m) if j not in matched_d],
        total_cost=float(sum(C[i, j] for i, j in pairs)),
    )


class LifecycleAction(Enum):
    KEEP = "keep"
    REMOVE = "remove"
    CREATE = "create"


@dataclass
class TrackStatus:
    """Status counter bookkeeping for one track.

    ``counter`` is the number of unmatched detection inputs the track may
    still absorb before it is removed.
    """

    counter: int
    successful_matches: int = 0
    created_at: float = 0.0

    @property
    def confirmed(self) -> bool:
        return self.successful_matches >= 2


def new_track_status(sensor_weight: int, t_mtc: int, created_at: float) -> TrackStatus:
    return TrackStatus(counter=min(sensor_weight, t_mtc), created_at=created_at)


def apply_match_outcome(status: TrackStatus, matched: bool, sensor_weight: int, t_mtc: int) -> LifecycleAction:
    """Advance the status counter after one assignment round.

    A match adds the sensor's weight (clamped at ``t_mtc``); a miss subtracts
    one.  Reaching zero means the track must be removed.
    """
    if matched:
        status.counter = min(status.counter + sensor_weight, t_mtc)
        status.successful_matches += 1
        return LifecycleAction.KEEP
    status.counter = max(status.counter - 1, 0)
    return LifecycleAction.REMOVE if status.counter == 0 else LifecycleAction.KEEP
