"""How residuals settle after a track is created.

Run:  python3 demos/04_transient_behaviour.py

A new track starts from a single detection with a wide covariance.  The
residual spread is binned by the age of the track at update time; lateral
and heading residuals should shrink over the first seconds as the filter
converges.  Per-sensor statistics show the LiDAR/RADAR accuracy gap.
"""
from collections import defaultdict

from fusion_track import RunConfig, generate, preset_scenario, replay
from fusion_track.evaluation import residual_stats, transient_profile


def main():
    sim = generate(preset_scenario("overtake", duration=120.0, seed=0))
    records = []
    replay(RunConfig(), sim.track_map, sim.ego_log, sim.all_frames(), residual_sink=records.append)

    print("residual std by track age")
    print(f"{'age [s]':>10} {'lon':>7} {'lat':>7} {'yaw':>7} {'v':>7} {'n':>6}")
    for lo, hi, st in transient_profile(records, bin_width=0.5, horizon=3.0):
        cells = [f"{st[k].std:7.3f}" if k in st else f"{'-':>7}" for k in ("lon", "lat", "yaw", "v")]
        n = st["lat"].count if "lat" in st else 0
        print(f"{lo:4.1f}-{hi:<4.1f} {' '.join(cells)} {n:6d}")

    by_sensor = defaultdict(list)
    for r in records:
        by_sensor[r.sensor].append(r)
    print("\nper sensor (mean / std)")
    for sensor, rs in sorted(by_sensor.items()):
        st = residual_stats(rs)
        print(f"  {sensor:14s} " + "  ".join(f"{k} {s.mean:+.2f}/{s.std:.2f}" for k, s in st.items()))


if __name__ == "__main__":
    main()
