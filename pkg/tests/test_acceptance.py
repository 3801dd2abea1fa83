"""Acceptance checks, one per criterion, each printing a single PASS/FAIL line.

Runs under pytest (the lines are repeated in the terminal summary) or
directly: ``python3 tests/test_acceptance.py``.
"""
import itertools
import math
import sys
import time
from functools import lru_cache
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from helpers import delay_equivalence_error, linear_regime_deviation  # noqa: E402

from fusion_track.association import LifecycleAction, apply_match_outcome, new_track_status, solve_assignment  # noqa: E402
from fusion_track.config import RunConfig  # noqa: E402
from fusion_track.evaluation import residual_stats, tracking_rmse, transient_profile  # noqa: E402
from fusion_track.geometry import Detection, EgoState  # noqa: E402
from fusion_track.motion import ModelKind, jacobian_F, propagate  # noqa: E402
from fusion_track.pipeline import DetectionFrame, Tracker, replay  # noqa: E402
from fusion_track.simulator import OvalTrack, generate, overtake_scenario, pack_scenario  # noqa: E402
from fusion_track.sweep import ScenarioRef, SweepSpec, run_experiment, run_sweep  # noqa: E402
from fusion_track.cli import main as cli_main  # noqa: E402

RESULTS = []


def report(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


@lru_cache(maxsize=None)
def default_overtake():
    """Default noisy overtake, replayed with and without the backward step."""
    sim = generate(overtake_scenario(seed=0))
    records = []
    comp, _ = replay(RunConfig(), sim.track_map, sim.ego_log, sim.all_frames(), residual_sink=records.append)
    uncomp, _ = replay(RunConfig(), sim.track_map, sim.ego_log, sim.all_frames(), compensate_delay=False)
    return sim, records, comp, uncomp


# 1 ------------------------------------------------------------------------
def _brute_force(C):
    n, m = C.shape
    if n <= m:
        return min(sum(C[i, p[i]] for i in range(n)) for p in itertools.permutations(range(m), n))
    return min(sum(C[p[j], j] for j in range(m)) for p in itertools.permutations(range(n), m))


def test_hungarian_oracle():
    rng = np.random.default_rng(2024)
    # multiples of 1/64 add up exactly in floating point, so "equal" can mean equal
    mats = [rng.integers(0, 640, size=rng.integers(1, 7, size=2)) / 64.0 for _ in range(1000)]
    elapsed, mismatches = 0.0, 0
    for C in mats:
        t0 = time.perf_counter()
        res = solve_assignment(C, math.inf)
        elapsed += time.perf_counter() - t0
        mismatches += res.total_cost != _brute_force(C)
    ok = mismatches == 0 and elapsed < 1.0
    assert report("Hungarian oracle", ok, f"{mismatches} mismatches in 1000 matrices, solver time {elapsed:.3f} s (< 1 s)")


# 2 ------------------------------------------------------------------------
def test_jacobian_check():
    rng = np.random.default_rng(5)
    worst = 0.0
    for model in ModelKind:
        for _ in range(500):
            s = np.array([rng.uniform(-500, 500), rng.uniform(-500, 500), rng.uniform(-math.pi, math.pi),
                          rng.uniform(0, 80), rng.uniform(-0.5, 0.5)] + ([rng.uniform(-5, 5)] if model.dim == 6 else []))
            dt = rng.uniform(0.001, 0.1)
            J = np.empty((model.dim, model.dim))
            for j in range(model.dim):
                h = 1e-6 * max(1.0, abs(s[j]))
                e = np.zeros(model.dim)
                e[j] = h
                d = propagate(s + e, dt, model) - propagate(s - e, dt, model)
                d[2] = (d[2] + math.pi) % (2 * math.pi) - math.pi
                J[:, j] = d / (2 * h)
            F = jacobian_F(s, dt, model)
            worst = max(worst, np.linalg.norm(F - J) / np.linalg.norm(F))
    assert report("Jacobian check", worst <= 1e-6, f"worst relative error {worst:.2e} over 3 x 500 states (<= 1e-6)")


# 3 ------------------------------------------------------------------------
def test_linear_regime_oracle():
    worst, compared = linear_regime_deviation(500)
    ok = worst <= 1e-9 and compared >= 490
    assert report("Linear-regime oracle", ok, f"max deviation {worst:.2e} over {compared} published cycles of 500 (<= 1e-9)")


# 4 ------------------------------------------------------------------------
def test_delay_compensation():
    eq = max(delay_equivalence_error(30.0, 0.325, seed) for seed in (0, 1, 2))
    sim, _, comp, uncomp = default_overtake()
    r_comp, r_unc = tracking_rmse(comp, sim.truth), tracking_rmse(uncomp, sim.truth)
    ratio = r_comp / r_unc
    ok = eq <= 1e-4 and ratio <= 0.5
    assert report(
        "Delay compensation",
        ok,
        f"noiseless equivalence {eq:.1e} m (<= 1e-4); RMSE {r_comp:.3f} m vs {r_unc:.3f} m uncompensated, "
        f"ratio {ratio:.3f} (<= 0.5)",
    )


# 5 ------------------------------------------------------------------------
def test_residual_quality():
    _, records, _, _ = default_overtake()
    lat = residual_stats(records)["lat"]
    ok = abs(lat.mean) <= 0.1 and lat.std <= 0.5 and lat.count >= 5000
    assert report(
        "Residual quality",
        ok,
        f"lateral mean {lat.mean:+.3f} m (|.| <= 0.1), std {lat.std:.3f} m (<= 0.5), {lat.count} updates (>= 5000)",
    )


# 6 ------------------------------------------------------------------------
def _status_sequences(rng, n):
    bad = 0
    for _ in range(n):
        w0 = int(rng.integers(1, 4))
        st = new_track_status(w0, 25, 0.0)
        counter, matches = w0, 0
        while True:
            matched = bool(rng.random() < 0.6)
            w = int(rng.integers(1, 4))
            action = apply_match_outcome(st, matched, w, 25)
            counter = min(counter + w, 25) if matched else counter - 1
            matches += matched
            bad += st.counter != counter or st.confirmed != (matches >= 2) or not 0 <= st.counter <= 25
            bad += (action is LifecycleAction.REMOVE) != (counter == 0)
            if counter == 0 or matches > 40:
                break
    return bad


def _tracker_sequences(rng, n, track_map):
    bad = 0
    for _ in range(n):
        t_mtc = int(rng.integers(1, 26))
        trk = Tracker(RunConfig(t_mtc=t_mtc), track_map)
        seen, prev_live = set(), set()
        for k in range(8):
            t = 0.05 * k
            trk.add_ego(EgoState(t, 250.0, -200.0 + 50.0 * t, 0.0, 50.0))
            dets = [Detection(float(rng.uniform(-5, 5)), float(rng.uniform(-30, 60)), v=50.0)
                    for _ in range(int(rng.integers(0, 4)))]
            sensor = "lidar_cluster" if rng.random() < 0.5 else "radar"
            out = trk.run_cycle([DetectionFrame(sensor, t, dets, k)])
            live = [tr.uid for tr in trk.tracks]
            born = set(live) - prev_live
            bad += len(live) != len(set(live)) or bool(born & seen)  # unique and never reused
            seen |= set(live)
            prev_live = set(live)
            for tr in trk.tracks:
                bad += not 0 < tr.status.counter <= t_mtc
            published = {o.uid for o in out.tracks}
            bad += published != {tr.uid for tr in trk.tracks if tr.status.successful_matches >= 2}
    return bad


def test_lifecycle_properties():
    rng = np.random.default_rng(99)
    bad_status = _status_sequences(rng, 10_000)
    bad_tracker = _tracker_sequences(rng, 10_000, OvalTrack().to_map())
    ok = bad_status == 0 and bad_tracker == 0
    assert report(
        "Lifecycle properties",
        ok,
        f"{bad_status} violations in 10^4 counter sequences, {bad_tracker} in 10^4 tracker sequences "
        "(clamp at 25, removal at 0, confirmation at 2, unique uids)",
    )


# 7 ------------------------------------------------------------------------
SEEDS = (0, 1, 2)


def _buffer_precision(buffer):
    # both wall buffers move together; precision is pooled over seeds
    cfg = RunConfig(d_obf_out=buffer, d_obf_in=buffer)
    runs = [run_experiment(cfg, ScenarioRef("ghost_heavy").build(seed))[0] for seed in SEEDS]
    tp = sum(m.tp for m in runs)
    return tp / (tp + sum(m.fp for m in runs))


def test_sweep_directions():
    spec = SweepSpec("d_mtc", [1.0, 2.0, 7.0], RunConfig(), [ScenarioRef("overtake")], seeds=list(SEEDS))
    rows = run_sweep(spec)
    p_mtc = [r["precision"] for r in rows[1:]]
    p_obf = [_buffer_precision(b) for b in (0.0, 0.3)]
    mono = all(a <= b for a, b in zip(p_mtc, p_mtc[1:]))
    ok = mono and p_obf[0] <= p_obf[1] and all(r["status"] == "ok" for r in rows)
    assert report(
        "Sweep directions",
        ok,
        "d_MTC 1/2/7 m precision " + "/".join(f"{p:.3f}" for p in p_mtc)
        + f" (non-decreasing); ghost-heavy buffer 0 -> 0.3 m {p_obf[0]:.3f} -> {p_obf[1]:.3f} (non-decreasing)",
    )


# 8 ------------------------------------------------------------------------
def test_transient_trend():
    _, records, _, _ = default_overtake()
    (_, _, first), _, (_, _, third) = transient_profile(records, 1.0, 3.0)
    ok = third["lat"].std <= first["lat"].std and third["yaw"].std <= first["yaw"].std
    assert report(
        "Transient trend",
        ok,
        f"lateral std {first['lat'].std:.3f} -> {third['lat'].std:.3f} m, "
        f"yaw std {first['yaw'].std:.4f} -> {third['yaw'].std:.4f} rad from age [0,1) to [2,3) s (non-increasing)",
    )


# 9 ------------------------------------------------------------------------
def test_cycle_latency():
    sim = generate(pack_scenario(n_opponents=10, duration=60.0))
    times, sizes = [], []

    def timed(tracker, frames):
        t0 = time.perf_counter()
        out = tracker.run_cycle(frames)
        times.append(time.perf_counter() - t0)
        sizes.append(len(tracker.tracks))
        return out

    replay(RunConfig(), sim.track_map, sim.ego_log, sim.all_frames(), cycle_hook=timed)
    ms = np.array(times) * 1e3
    p90 = float(np.percentile(ms, 90))
    n_tracks = float(np.median(sizes))
    ok = p90 <= 10.0 and n_tracks >= 10
    assert report(
        "Cycle latency",
        ok,
        f"p90 {p90:.2f} ms, mean {ms.mean():.2f} ms over {len(ms)} cycles with a median of {n_tracks:.0f} tracks (<= 10 ms)",
    )


# 10 -----------------------------------------------------------------------
def test_determinism(tmp_path):
    d = tmp_path / "sim"
    assert cli_main(["simulate", "--preset", "overtake", "--duration", "30", "--out", str(d)]) == 0
    outs = []
    for k in (1, 2):
        args = ["track", "--map", str(d / "map.csv"), "--ego", str(d / "ego.jsonl"), "--det", str(d / "lidar_cluster.jsonl"),
                "--det", str(d / "radar.jsonl"), "--out", str(tmp_path / f"t{k}.jsonl"),
                "--residuals", str(tmp_path / f"r{k}.jsonl")]
        assert cli_main(args) == 0
        outs.append((tmp_path / f"t{k}.jsonl").read_bytes() + (tmp_path / f"r{k}.jsonl").read_bytes())
    ok = outs[0] == outs[1] and len(outs[0]) > 0
    assert report("Determinism", ok, f"two track runs on identical logs: {len(outs[0])} bytes, identical = {outs[0] == outs[1]}")


if __name__ == "__main__":
    import inspect
    import tempfile

    failed = 0
    for name, fn in list(globals().items()):
        if not name.startswith("test_") or not callable(fn):
            continue
        try:
            if "tmp_path" in inspect.signature(fn).parameters:
                with tempfile.TemporaryDirectory() as tmp:
                    fn(Path(tmp))
            else:
                fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
