"""Oracles and scenario builders shared by the unit and acceptance tests."""
import math

import numpy as np

from fusion_track.config import RunConfig
from fusion_track.pipeline import DetectionFrame, replay
from fusion_track.simulator import AgentSpec, ScenarioSpec, agent_states, default_lidar, default_radar, generate

QUIET = dict(noise={}, delay_mean_ms=0.0, delay_p90_ms=0.0, dropout=0.0, ghost_rate=0.0)


def straight_line_run(n_cycles=500, speed=40.0, gap=30.0):
    """Noiseless lidar-only run of one car ahead of the ego on the right straight.

    Returns the published track lists, the config and the simulation.
    """
    duration = n_cycles / 50.0 + 0.5
    agents = [AgentSpec(0.0, [[0.0, speed]], [[0.0, 0.0]]), AgentSpec(gap, [[0.0, speed]], [[0.0, 0.0]])]
    spec = ScenarioSpec(duration=duration, agents=agents, sensors=[default_lidar(**QUIET)])
    sim = generate(spec)
    cfg = RunConfig(k_v=1.0, active_sensors=["lidar_cluster"])
    outs, _ = replay(cfg, sim.track_map, sim.ego_log, sim.all_frames())
    return outs[:n_cycles], cfg, sim


def linear_kf_oracle(cfg, sim, speed, n_slots):
    """Hand-rolled time-invariant Kalman filter for straight motion at heading 0.

    With the heading fixed at 0 and the speed known, the CTRV step is the
    linear map ``x' = x - v dt yaw``, ``y' = y + v dt``, ``yaw' = yaw + dt yaw_rate``.
    Returns means and covariances per 100 Hz slot.
    """
    dt = 1.0 / cfg.f_ekf
    A = np.eye(5)
    A[0, 2] = -speed * dt
    A[1, 3] = dt
    A[2, 4] = dt
    d2r = math.pi / 180.0
    q = cfg.process_std
    Q = np.diag([q["x"] ** 2, q["y"] ** 2, (q["yaw_deg"] * d2r) ** 2, q["v"] ** 2, (q["yaw_rate_deg"] * d2r) ** 2]) * dt
    i0 = cfg.init_std
    P = np.diag([i0["x"] ** 2, i0["y"] ** 2, (i0["yaw_deg"] * d2r) ** 2, i0["v"] ** 2, (i0["yaw_rate_deg"] * d2r) ** 2])
    s = cfg.sensors["lidar_cluster"]["std"]
    R = np.diag([s["x"] ** 2, s["y"] ** 2, (s["yaw_deg"] * d2r) ** 2])
    H = np.zeros((3, 5))
    H[0, 0] = H[1, 1] = H[2, 2] = 1.0
    target = sim.spec.agents[1]
    x0 = agent_states(sim.spec.track, target, [0.0])[0]
    m = np.array([x0[0], x0[1], 0.0, speed, 0.0])
    means, covs = [m.copy()], [P.copy()]
    for k in range(1, n_slots):
        m = A @ m
        P = A @ P @ A.T + Q
        if k % 5 == 0:  # lidar at 20 Hz
            truth = agent_states(sim.spec.track, target, [k * dt])[0]
            z = np.array([truth[0], truth[1], 0.0])
            K = P @ H.T @ np.linalg.inv(H @ P @ H.T + R)
            m = m + K @ (z - H @ m)
            P = (np.eye(5) - K @ H) @ P
        means.append(m.copy())
        covs.append(P.copy())
    return np.array(means), np.array(covs)


def linear_regime_deviation(n_cycles=500):
    """Largest deviation of published states and covariance diagonals from the oracle."""
    speed = 40.0
    outs, cfg, sim = straight_line_run(n_cycles, speed)
    means, covs = linear_kf_oracle(cfg, sim, speed, 2 * n_cycles + 2)
    worst, compared = 0.0, 0
    for out in outs:
        if not out.tracks:
            continue
        assert len(out.tracks) == 1
        k = round(out.t_out * cfg.f_ekf)
        obj = out.tracks[0]
        worst = max(worst, np.abs(np.array(obj.state) - means[k]).max(), np.abs(np.array(obj.cov_diag) - np.diag(covs[k])).max())
        compared += 1
    return worst, compared


def quiet_overtake(duration=30.0):
    from fusion_track.simulator import overtake_scenario

    return generate(overtake_scenario(duration=duration, sensors=[default_lidar(**QUIET), default_radar(**QUIET)]))


def with_random_delays(frames, max_delay, seed=0, keep_first=True):
    """Copies of ``frames`` delivered after a uniform random delay in ``[0, max_delay]``."""
    rng = np.random.default_rng(seed)
    frames = sorted(frames, key=lambda f: (f.t, f.sensor_id, f.frame_seq))
    out = []
    for i, f in enumerate(frames):
        d = 0.0 if (keep_first and i == 0) else float(rng.uniform(0.0, max_delay))
        out.append(DetectionFrame(f.sensor_id, f.t, f.objects, f.frame_seq, round(f.t + d, 9)))
    return out


def delay_equivalence_error(duration=30.0, max_delay=0.325, seed=0):
    """Largest final-state position difference between delayed and in-sequence replays.

    Frames stamped in the last ``max_delay + 0.025`` s are left out so that
    every delayed frame is delivered before the run ends.
    """
    sim = quiet_overtake(duration)
    cutoff = duration - max_delay - 0.025
    frames = [f for f in sim.all_frames() if f.t <= cutoff]
    instant = [DetectionFrame(f.sensor_id, f.t, f.objects, f.frame_seq, f.t) for f in frames]
    delayed = with_random_delays(frames, max_delay, seed)
    cfg = RunConfig()
    _, ta = replay(cfg, sim.track_map, sim.ego_log, instant)
    _, tb = replay(cfg, sim.track_map, sim.ego_log, delayed)
    assert [t.uid for t in ta.tracks] == [t.uid for t in tb.tracks] and ta.tracks
    return max(
        float(np.hypot(*(a.gaussian.mean[:2] - b.gaussian.mean[:2]))) for a, b in zip(ta.tracks, tb.tracks)
    )
