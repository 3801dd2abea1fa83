"""Residual, precision, delay and transient metrics over tracker logs."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .geometry import wrap_angle

RESIDUAL_FEATURES = ("lon", "lat", "yaw", "v")


@dataclass(frozen=True)
class ResidualRecord:
    """Pre-update residual ``z - h(prior)`` of one measurement update.

    ``yaw_est`` is the prior heading used to express the position residual
    as longitudinal (along the heading) and lateral (positive to the left)
    components.
    """

    uid: int
    sensor: str
    t: float
    age: float
    features: tuple[str, ...]
    residual: tuple[float, ...]
    yaw_est: float

    def components(self) -> dict[str, float]:
        r = dict(zip(self.features, self.residual))
        out = {}
        if "x" in r and "y" in r:
            s, c = math.sin(self.yaw_est), math.cos(self.yaw_est)
            out["lon"] = -r["x"] * s + r["y"] * c
            out["lat"] = -r["x"] * c - r["y"] * s
        if "yaw" in r:
            out["yaw"] = wrap_angle(r["yaw"])
        if "v" in r:
            out["v"] = r["v"]
        return out

    def to_json(self) -> dict:
        return {
            "uid": self.uid,
            "sensor": self.sensor,
            "t": self.t,
            "age": self.age,
            "features": list(self.features),
            "residual": list(self.residual),
            "yaw_est": self.yaw_est,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ResidualRecord":
        return cls(
            uid=int(d["uid"]),
            sensor=d["sensor"],
            t=float(d["t"]),
            age=float(d["age"]),
            features=tuple(d["features"]),
            residual=tuple(float(v) for v in d["residual"]),
            yaw_est=float(d["yaw_est"]),
        )


@dataclass(frozen=True)
class FeatureStats:
    mean: float
    std: float
    count: int


def residual_stats(records) -> dict[str, FeatureStats]:
    """Sample mean and standard deviation (ddof=1) per residual component.

    Components without records are absent from the result; a component
    with a single record reports ``std = nan``.
    """
    values = defaultdict(list)
    for rec in records:
        for k, v in rec.components().items():
            values[k].append(v)
    out = {}
    for k in RESIDUAL_FEATURES:
        if values[k]:
            a = np.asarray(values[k])
            out[k] = FeatureStats(float(a.mean()), float(a.std(ddof=1)) if len(a) > 1 else math.nan, len(a))
    return out


def transient_profile(records, bin_width: float = 1.0, horizon: float = 3.0):
    """Residual statistics binned by observation age (time since track creation).

    Returns a list of ``(lo, hi, stats)`` tuples covering ``[0, horizon)``;
    empty bins carry an empty stats dict.
    """
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    n_bins = int(math.ceil(horizon / bin_width - 1e-12))
    bins = [[] for _ in range(n_bins)]
    for rec in records:
        if 0.0 <= rec.age < horizon:
            bins[min(int(rec.age // bin_width), n_bins - 1)].append(rec)
    return [(i * bin_width, min((i + 1) * bin_width, horizon), residual_stats(b)) for i, b in enumerate(bins)]


class GroundTruth:
    """Per-agent true states sampled on a common time base.

    ``states`` has shape ``(n_times, n_agents, 5)`` with columns
    ``x, y, yaw, v, yaw_rate``; ``ego_id`` marks the agent carrying the sensors.
    """

    def __init__(self, times, agent_ids, states, ego_id=0):
        self.times = np.asarray(times, dtype=float)
        self.agent_ids = list(agent_ids)
        self.states = np.asarray(states, dtype=float)
        self.ego_id = ego_id

    def positions_at(self, t) -> np.ndarray:
        """Linearly interpolated (n_agents, 2) positions at time ``t``."""
        i = int(np.clip(np.searchsorted(self.times, t), 1, len(self.times) - 1))
        t0, t1 = self.times[i - 1], self.times[i]
        w = 0.0 if t1 == t0 else min(max((t - t0) / (t1 - t0), 0.0), 1.0)
        return (1.0 - w) * self.states[i - 1, :, :2] + w * self.states[i, :, :2]

    def target_indices(self) -> list[int]:
        return [k for k, a in enumerate(self.agent_ids) if a != self.ego_id]


@dataclass(frozen=True)
class PrecisionReport:
    tp: int
    fp: int

    @property
    def precision(self) -> float:
        n = self.tp + self.fp
        return self.tp / n if n else math.nan


def track_histories(track_log) -> dict[int, list[tuple[float, float, float]]]:
    """Group published track states by uid: ``uid -> [(t, x, y), ...]``."""
    hist = defaultdict(list)
    for out in track_log:
        for obj in out.tracks:
            hist[obj.uid].append((out.t_out, obj.state[0], obj.state[1]))
    return dict(hist)


def precision(track_log, truth: GroundTruth | None, t_min: float = 2.0, d_tp: float = 2.0) -> PrecisionReport | None:
    """Scenario-level precision ``TP / (TP + FP)`` over published tracks.

    A track qualifies if it was published for at least ``t_min`` seconds and
    its mean distance to a single true (non-ego) agent over that time is at
    most ``d_tp``.  Each agent carries one identity at a time, so among
    qualifying tracks of the same agent whose publication intervals overlap
    only the longest-lived one is a true positive; the duplicates and every
    non-qualifying track are false positives.  Returns ``None`` when no
    ground truth is available.
    """
    if truth is None:
        return None
    targets = truth.target_indices()
    candidates = []  # (agent, start, end, uid)
    n_tracks = 0
    for uid, rows in track_histories(track_log).items():
        n_tracks += 1
        start, end = rows[0][0], rows[-1][0]
        if end - start < t_min - 1e-9 or not targets:
            continue
        d = np.zeros(len(targets))
        for t, x, y in rows:
            p = truth.positions_at(t)[targets]
            d += np.hypot(p[:, 0] - x, p[:, 1] - y)
        d /= len(rows)
        k = int(np.argmin(d))
        if d[k] <= d_tp:
            candidates.append((targets[k], start, end, float(d[k])))
    # longest first; ties go to the earlier start, then the closer track
    candidates.sort(key=lambda c: (c[0], -(c[2] - c[1]), c[1], c[3]))
    tp = 0
    kept: dict[int, list[tuple[float, float]]] = defaultdict(list)
    for agent, start, end, _ in candidates:
        if all(end < s0 or start > e0 for s0, e0 in kept[agent]):
            kept[agent].append((start, end))
            tp += 1
    return PrecisionReport(tp, n_tracks - tp)


def tracking_errors(track_log, truth: GroundTruth) -> np.ndarray:
    """Distance from every true target to its nearest published track, per output cycle.

    Cycles without published tracks contribute nothing.
    """
    targets = truth.target_indices()
    errs = []
    for out in track_log:
        if not out.tracks or not targets:
            continue
        p = truth.positions_at(out.t_out)[targets]
        q = np.array([obj.state[:2] for obj in out.tracks])
        d = np.hypot(p[:, None, 0] - q[None, :, 0], p[:, None, 1] - q[None, :, 1])
        errs.extend(d.min(axis=1).tolist())
    return np.asarray(errs)


def tracking_rmse(track_log, truth: GroundTruth) -> float:
    e = tracking_errors(track_log, truth)
    return float(np.sqrt(np.mean(e**2))) if len(e) else math.nan


@dataclass(frozen=True)
class DelayReport:
    count: int
    mean_ms: float
    median_ms: float
    p90_ms: float
    mean_moved_m: float
    max_moved_m: float
    rejected: int


def delay_stats(frames, speed_at) -> dict[str, DelayReport]:
    """Perception delay statistics per sensor.

    ``delay = delivery time - sensor timestamp``; the moved distance is the
    delay times ``speed_at(t)`` evaluated at the sensor timestamp (the ego
    speed in the standard setup).  Frames with a negative delay are counted
    in ``rejected`` and excluded.
    """
    delays = defaultdict(list)
    moved = defaultdict(list)
    rejected = defaultdict(int)
    for f in frames:
        d = f.delivery_time - f.t
        if d < 0:
            rejected[f.sensor_id] += 1
            continue
        delays[f.sensor_id].append(d)
        moved[f.sensor_id].append(d * abs(speed_at(f.t)))
    out = {}
    for sensor in sorted(set(delays) | set(rejected)):
        d = np.asarray(delays[sensor]) * 1e3
        m = np.asarray(moved[sensor])
        if len(d) == 0:
            out[sensor] = DelayReport(0, math.nan, math.nan, math.nan, math.nan, math.nan, rejected[sensor])
            continue
        out[sensor] = DelayReport(
            count=len(d),
            mean_ms=float(d.mean()),
            median_ms=float(np.median(d)),
            p90_ms=float(np.percentile(d, 90)),
            mean_moved_m=float(m.mean()),
            max_moved_m=float(m.max()),
            rejected=rejected[sensor],
        )
    return out


def ego_speed_lookup(ego_log):
    """Nearest-sample ego speed as a function of time."""
    ts = np.array([e.t for e in ego_log])
    vs = np.array([e.v for e in ego_log])

    def speed_at(t):
        i = int(np.clip(np.searchsorted(ts, t), 0, len(ts) - 1))
        if i > 0 and abs(ts[i - 1] - t) <= abs(ts[i] - t):
            i -= 1
        return float(vs[i])

    return speed_at


def stats_to_dict(stats: dict[str, FeatureStats]) -> dict:
    return {k: {"mean": s.mean, "std": s.std, "count": s.count} for k, s in stats.items()}
