import math

import numpy as np
import pytest

from fusion_track.evaluation import (
    GroundTruth,
    ResidualRecord,
    delay_stats,
    precision,
    residual_stats,
    tracking_errors,
    transient_profile,
)
from fusion_track.pipeline import DetectionFrame, TrackedObject, TrackedObjectList


def rec(res, yaw_est=0.0, age=0.0, feats=("x", "y", "yaw")):
    return ResidualRecord(0, "lidar", 1.0, age, feats, tuple(res), yaw_est)


def test_longitudinal_and_lateral_components():
    # heading 0 is +y: a residual along +y is longitudinal, along -x is to the left
    c = rec((0.0, 1.0, 0.1)).components()
    assert c["lon"] == pytest.approx(1.0) and c["lat"] == pytest.approx(0.0)
    c = rec((-1.0, 0.0, 0.1)).components()
    assert c["lat"] == pytest.approx(1.0) and c["lon"] == pytest.approx(0.0)
    c = rec((-1.0, 0.0, 0.0), yaw_est=math.pi / 2).components()  # heading along -x
    assert c["lon"] == pytest.approx(1.0) and c["lat"] == pytest.approx(0.0)
    assert "v" not in c


def test_residual_stats_sample_std():
    recs = [rec((0.0, y, 0.0)) for y in (1.0, 2.0, 3.0, 6.0)]
    st = residual_stats(recs)
    assert st["lon"].mean == 3.0 and st["lon"].count == 4
    assert st["lon"].std == pytest.approx(np.std([1, 2, 3, 6], ddof=1))
    assert math.isnan(residual_stats(recs[:1])["lon"].std)
    assert residual_stats([]) == {}


def test_transient_bins():
    recs = [rec((0.0, a, 0.0), age=a) for a in (0.1, 0.5, 1.2, 2.9, 3.0, 7.0)]
    prof = transient_profile(recs)
    assert [(lo, hi) for lo, hi, _ in prof] == [(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)]
    assert [st["lon"].count for _, _, st in prof] == [2, 1, 1]
    assert transient_profile([], 0.5, 1.0)[1][2] == {}


def straight_truth(duration=10.0):
    # ego at the origin, target moving along +y at 10 m/s from y = 20
    t = np.arange(0.0, duration + 1e-9, 0.01)
    states = np.zeros((len(t), 2, 5))
    states[:, 1, 1] = 20.0 + 10.0 * t
    states[:, 1, 3] = 10.0
    return GroundTruth(t, [0, 1], states, ego_id=0)


def track_log(tracks_by_time):
    return [TrackedObjectList(t, tuple(TrackedObject(u, (x, y, 0, 0, 0), (1,) * 5) for u, x, y in objs))
            for t, objs in tracks_by_time]


def test_precision_rules():
    truth = straight_truth()
    times = np.arange(0.0, 10.0, 0.02)
    rows = []
    for t in times:
        objs = [(0, 0.5, 20 + 10 * t)]  # follows the target
        if t < 1.0:
            objs.append((1, 0.0, 20 + 10 * t))  # right place, too short
        if 2.0 <= t < 6.0:
            objs.append((2, 1.0, 20 + 10 * t))  # duplicate of the target while track 0 is alive
        if t >= 3.0:
            objs.append((3, 5.0, 20 + 10 * t))  # too far from any agent
        rows.append((float(t), objs))
    p = precision(track_log(rows), truth)
    assert (p.tp, p.fp) == (1, 3)
    assert precision(track_log(rows), None) is None


def test_sequential_tracks_of_one_agent_both_count():
    truth = straight_truth()
    rows = [(float(t), [(0 if t < 4 else 1, 0.0, 20 + 10 * t)]) for t in np.arange(0.0, 10.0, 0.02)]
    assert precision(track_log(rows), truth).tp == 2


def test_tracking_errors_use_nearest_track():
    truth = straight_truth()
    log = track_log([(1.0, [(0, 3.0, 30.0), (1, 0.0, 31.0)]), (2.0, []), (3.0, [(0, 0.0, 50.0)])])
    e = tracking_errors(log, truth)
    assert e == pytest.approx([1.0, 0.0])


def test_delay_stats():
    frames = [DetectionFrame("r", t, [], 0, t + d) for t, d in ((0.0, 0.1), (1.0, 0.2), (2.0, 0.3), (3.0, -0.1))]
    rep = delay_stats(frames, lambda t: 20.0)["r"]
    assert rep.count == 3 and rep.rejected == 1
    assert rep.mean_ms == pytest.approx(200.0) and rep.median_ms == pytest.approx(200.0)
    assert rep.p90_ms == pytest.approx(np.percentile([100, 200, 300], 90))
    assert rep.mean_moved_m == pytest.approx(4.0) and rep.max_moved_m == pytest.approx(6.0)


def test_residual_json_round_trip():
    r = rec((0.1, -0.2, 0.3), yaw_est=1.0, age=0.5)
    assert ResidualRecord.from_json(r.to_json()) == r
