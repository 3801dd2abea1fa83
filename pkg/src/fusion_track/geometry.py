"""Planar frames, the race-track map and the out-of-track plausibility filter.

Heading convention used throughout the package: ``yaw`` is measured
counterclockwise from the global +y axis, so a vehicle with speed ``v`` and
heading ``yaw`` moves with ``(dx, dy) = (-v sin(yaw), v cos(yaw))``.  In the
vehicle frame +y points forward and +x points to the right.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree


class MapError(ValueError):
    """Raised for track maps that violate closure, size or ordering rules."""


def wrap_angle(a):
    """Wrap an angle (scalar or array) to [-pi, pi)."""
    if not isinstance(a, float) and np.ndim(a):
        w = (np.asarray(a, dtype=float) + np.pi) % (2.0 * np.pi) - np.pi
        # a tiny negative input can round up to exactly 2*pi before the shift
        return np.where(w >= np.pi, w - 2.0 * np.pi, w)
    w = (float(a) + math.pi) % (2.0 * math.pi) - math.pi
    return w - 2.0 * math.pi if w >= math.pi else w


def heading_of(dx, dy):
    """Heading of a direction vector under the +y-forward convention."""
    return np.arctan2(-np.asarray(dx, dtype=float), np.asarray(dy, dtype=float))


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    yaw: float = 0.0


@dataclass(frozen=True)
class Detection:
    """A detected object: position plus the optional features a sensor may report."""

    x: float
    y: float
    yaw: float | None = None
    v: float | None = None

    def is_finite(self) -> bool:
        vals = [self.x, self.y] + [f for f in (self.yaw, self.v) if f is not None]
        return all(math.isfinite(f) for f in vals)


@dataclass(frozen=True)
class EgoState:
    t: float
    x: float
    y: float
    yaw: float
    v: float
    yaw_rate: float = 0.0

    def is_finite(self) -> bool:
        return all(math.isfinite(f) for f in (self.t, self.x, self.y, self.yaw, self.v, self.yaw_rate))


def local_to_global(det, ego):
    """Transform a detection (or Pose2D) from the ego vehicle frame to the global frame.

    Position is rotated by the ego heading and translated by the ego
    position; a reported heading is offset by the ego heading.  Speed is a
    scalar and passes through unchanged.
    """
    c, s = math.cos(ego.yaw), math.sin(ego.yaw)
    gx = ego.x + c * det.x - s * det.y
    gy = ego.y + s * det.x + c * det.y
    yaw = None if det.yaw is None else wrap_angle(det.yaw + ego.yaw)
    if isinstance(det, Pose2D):
        return Pose2D(gx, gy, yaw)
    return replace(det, x=gx, y=gy, yaw=yaw)


def global_to_local(det, ego):
    """Inverse of :func:`local_to_global`."""
    c, s = math.cos(ego.yaw), math.sin(ego.yaw)
    dx, dy = det.x - ego.x, det.y - ego.y
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    yaw = None if det.yaw is None else wrap_angle(det.yaw - ego.yaw)
    if isinstance(det, Pose2D):
        return Pose2D(lx, ly, yaw)
    return replace(det, x=lx, y=ly, yaw=yaw)


def lowpass_ego(prev_filtered: EgoState, raw: EgoState, alpha: float) -> EgoState:
    """First-order exponential smoothing of an ego state.

    ``y_k = alpha * x_k + (1 - alpha) * y_{k-1}`` per field.  The heading is
    smoothed on the unit circle (sin/cos averaged, then re-normalised by
    ``atan2``).  The timestamp is taken from ``raw``.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"low-pass alpha must be in (0, 1], got {alpha}")
    if raw.t < prev_filtered.t:
        raise ValueError(f"ego timestamps out of order: {raw.t} < {prev_filtered.t}")
    b = 1.0 - alpha
    s = alpha * math.sin(raw.yaw) + b * math.sin(prev_filtered.yaw)
    c = alpha * math.cos(raw.yaw) + b * math.cos(prev_filtered.yaw)
    yaw = raw.yaw if s == 0.0 and c == 0.0 else math.atan2(s, c)
    return EgoState(
        t=raw.t,
        x=alpha * raw.x + b * prev_filtered.x,
        y=alpha * raw.y + b * prev_filtered.y,
        yaw=wrap_angle(yaw),
        v=alpha * raw.v + b * prev_filtered.v,
        yaw_rate=alpha * raw.yaw_rate + b * prev_filtered.yaw_rate,
    )


def _as_closed(poly) -> np.ndarray:
    poly = np.asarray(poly, dtype=float).reshape(-1, 2)
    if len(poly) and not np.array_equal(poly[0], poly[-1]):
        poly = np.vstack([poly, poly[:1]])
    return poly


def _edges(poly: np.ndarray):
    # per-edge data for ray casting: start point, end y and inverse slope dx/dy
    x0, y0 = poly[:-1, 0], poly[:-1, 1]
    x1, y1 = poly[1:, 0], poly[1:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_slope = (x1 - x0) / (y1 - y0)
    return x0, y0, y1, inv_slope


def _points_in_polygon(pts: np.ndarray, poly: np.ndarray, edges=None) -> np.ndarray:
    # even-odd ray casting along +x; poly is closed
    x0, y0, y1, inv_slope = _edges(poly) if edges is None else edges
    x = pts[:, :1]
    y = pts[:, 1:]
    straddle = (y0 > y) != (y1 > y)
    with np.errstate(invalid="ignore"):
        # horizontal edges never straddle, so their nan crossings are masked out
        hits = straddle & (x < x0 + (y - y0) * inv_slope)
    return (np.count_nonzero(hits, axis=1) % 2) == 1


def _clear_of_polyline(pts: np.ndarray, poly: np.ndarray, seg_lo: np.ndarray, seg_hi: np.ndarray, buffer: float):
    # True where the point is at least `buffer` from every segment; only
    # segments whose bounding box comes within `buffer` can violate that
    out = np.ones(len(pts), dtype=bool)
    lo, hi = seg_lo - buffer, seg_hi + buffer
    px, py = pts[:, :1], pts[:, 1:]
    in_box = (px >= lo[:, 0]) & (px <= hi[:, 0]) & (py >= lo[:, 1]) & (py <= hi[:, 1])
    for k in np.flatnonzero(in_box.any(axis=1)):
        p = pts[k]
        near = np.flatnonzero(in_box[k])
        if len(near):
            a = poly[near]
            ab = poly[near + 1] - a
            len2 = np.einsum("ij,ij->i", ab, ab)
            t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.where(len2 > 0, len2, 1.0), 0.0, 1.0)
            d = np.hypot(*(p - (a + t[:, None] * ab)).T)
            out[k] = d.min() >= buffer
    return out


class TrackMap:
    """Inner/outer boundary polygons and a centerline with per-vertex headings.

    Immutable after construction.  Polylines are stored closed (first vertex
    repeated at the end).  Centerline headings come from forward differences
    between consecutive vertices, so the heading stored at vertex ``i`` is the
    direction of travel towards vertex ``i + 1``.
    """

    def __init__(self, inner, outer, centerline):
        self.inner = _as_closed(inner)
        self.outer = _as_closed(outer)
        self.centerline = _as_closed(centerline)
        for name, poly in (("inner", self.inner), ("outer", self.outer), ("center", self.centerline)):
            if not np.all(np.isfinite(poly)):
                raise MapError(f"{name} polyline has non-finite vertices")
            if len(np.unique(poly[:-1], axis=0)) < 4:
                raise MapError(f"{name} polyline needs at least 4 distinct vertices")
        d = np.diff(self.centerline, axis=0)
        if np.any(np.hypot(d[:, 0], d[:, 1]) == 0.0):
            raise MapError("centerline has repeated consecutive vertices")
        h = heading_of(d[:, 0], d[:, 1])
        self.center_heading = wrap_angle(np.append(h, h[0]))
        self._bbox = (self.outer.min(axis=0), self.outer.max(axis=0))
        self._seg_box = {
            name: (np.minimum(poly[:-1], poly[1:]), np.maximum(poly[:-1], poly[1:]))
            for name, poly in (("inner", self.inner), ("outer", self.outer))
        }
        self._edges = {"inner": _edges(self.inner), "outer": _edges(self.outer)}
        self._center_tree = cKDTree(self.centerline[:-1])
        for a in (self.inner, self.outer, self.centerline, self.center_heading):
            a.setflags(write=False)
        if not np.all(self.contains(self.centerline[:-1], 0.0, 0.0)):
            raise MapError("centerline leaves the drivable area")

    def contains(self, pts, buffer_out: float = 0.0, buffer_in: float = 0.0) -> np.ndarray:
        """Vectorised inside-track test for an (n, 2) array of points."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        lo, hi = self._bbox
        result = np.all((pts >= lo) & (pts <= hi), axis=1)
        if not result.any():
            return result
        idx = np.flatnonzero(result)
        sub = pts[idx]
        ok = _points_in_polygon(sub, self.outer, self._edges["outer"])
        ok &= ~_points_in_polygon(sub, self.inner, self._edges["inner"])
        if buffer_out > 0.0 and ok.any():
            ok[ok] = _clear_of_polyline(sub[ok], self.outer, *self._seg_box["outer"], buffer_out)
        if buffer_in > 0.0 and ok.any():
            ok[ok] = _clear_of_polyline(sub[ok], self.inner, *self._seg_box["inner"], buffer_in)
        result[idx] = ok
        return result

    def nearest_center_index(self, p) -> int:
        """Index of the nearest centerline vertex; ties resolve to the lower index."""
        return int(self.nearest_center_indices(np.asarray(p, dtype=float)[None, :2])[0])

    def nearest_center_indices(self, pts) -> np.ndarray:
        """:meth:`nearest_center_index` for an (n, 2) array of points."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        k = min(4, len(self.centerline) - 1)
        _, idx = self._center_tree.query(pts, k=k)
        idx = idx.reshape(len(pts), k)
        out = np.empty(len(pts), dtype=int)
        for i, q in enumerate(pts):
            d2 = np.sum((self.centerline[idx[i]] - q) ** 2, axis=1)
            best = np.flatnonzero(d2 == d2.min())
            if len(best) == k:
                # every candidate ties, so more equidistant vertices may exist
                out[i] = np.argmin(np.sum((self.centerline[:-1] - q) ** 2, axis=1))
            else:
                out[i] = idx[i][best].min()
        return out

    @classmethod
    def from_csv(cls, path) -> "TrackMap":
        """Load a map from CSV rows ``kind,x_m,y_m`` with kind in {inner, outer, center}."""
        pts = {"inner": [], "outer": [], "center": []}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                kind = row["kind"].strip()
                if kind not in pts:
                    raise MapError(f"unknown vertex kind {kind!r} in {path}")
                pts[kind].append((float(row["x_m"]), float(row["y_m"])))
        for kind, vals in pts.items():
            if not vals:
                raise MapError(f"map {path} has no {kind} vertices")
            if vals[0] != vals[-1]:
                raise MapError(f"{kind} polyline in {path} is not closed")
        return cls(pts["inner"], pts["outer"], pts["center"])

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "x_m", "y_m"])
            for kind, poly in (("inner", self.inner), ("outer", self.outer), ("center", self.centerline)):
                for x, y in poly:
                    w.writerow([kind, repr(float(x)), repr(float(y))])


def is_inside_track(p, track_map: TrackMap, buffer_out: float = 0.0, buffer_in: float = 0.0) -> bool:
    """True if ``p`` lies on the drivable annulus, at least ``buffer_out`` metres
    inside the outer wall and ``buffer_in`` metres outside the inner wall."""
    if buffer_out < 0 or buffer_in < 0:
        raise ValueError("out-of-track buffers must be non-negative")
    return bool(track_map.contains(np.asarray(p, dtype=float)[None, :2], buffer_out, buffer_in)[0])


def centerline_heading_at(p, track_map: TrackMap) -> float:
    """Heading of the centerline vertex nearest to ``p``."""
    return float(track_map.center_heading[track_map.nearest_center_index(p)])


def centerline_headings_at(pts, track_map: TrackMap) -> np.ndarray:
    """:func:`centerline_heading_at` for an (n, 2) array of points."""
    return track_map.center_heading[track_map.nearest_center_indices(pts)]
