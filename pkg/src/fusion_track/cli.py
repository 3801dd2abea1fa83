"""Command line entry point: ``fusion-track {simulate,track,evaluate,sweep}``.

Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
malformed or inconsistent input data.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from collections import defaultdict
from pathlib import Path

from . import io
from .config import ConfigError, RunConfig, load_config
from .evaluation import delay_stats, ego_speed_lookup, precision, residual_stats, stats_to_dict, tracking_rmse
from .evaluation import transient_profile
from .geometry import MapError, TrackMap
from .pipeline import replay
from .simulator import ScenarioError, ScenarioSpec, generate, preset_scenario
from .sweep import SWEEP_COLUMNS, SweepSpec, run_sweep

log = logging.getLogger("fusion_track")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


def _read_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {what} {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} {path} is not valid JSON ({exc.msg})") from None


def _scenario_from_file(path) -> ScenarioSpec:
    d = _read_json(path, "scenario spec")
    if not isinstance(d, dict):
        raise UsageError(f"scenario spec {path} must be a JSON object")
    try:
        if "preset" in d:
            extra = set(d) - {"preset", "params"}
            if extra:
                raise UsageError(f"unexpected key(s) {sorted(extra)} next to 'preset'")
            return preset_scenario(d["preset"], **d.get("params", {}))
        return ScenarioSpec.from_dict(d)
    except TypeError as exc:
        raise UsageError(f"scenario spec {path}: {exc}") from None


def cmd_simulate(args) -> int:
    if args.spec is None and args.preset is None:
        raise UsageError("simulate needs --spec or --preset")
    spec = _scenario_from_file(args.spec) if args.spec else preset_scenario(args.preset)
    if args.seed is not None:
        spec.seed = args.seed
    if args.duration is not None:
        spec.duration = args.duration
    sim = generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_truth(out / "truth.jsonl", sim.truth)
    io.write_ego(out / "ego.jsonl", sim.ego_log)
    for sensor, frames in sim.frames.items():
        io.write_frames(out / f"{sensor}.jsonl", frames)
    sim.track_map.to_csv(out / "map.csv")
    io.write_json(out / "scenario.json", spec.to_dict())
    n = sum(len(f) for f in sim.frames.values())
    print(f"wrote {len(sim.truth.times)} truth rows, {n} detection frames from {len(sim.frames)} sensors to {out}")
    return EXIT_OK


def _load_map(args, cfg: RunConfig) -> TrackMap:
    path = args.map or cfg.map_path
    if path is None:
        raise UsageError("no track map: pass --map or set map_path in the config")
    if not Path(path).exists():
        raise UsageError(f"map file {path} does not exist")
    return TrackMap.from_csv(path)


def _data_file(path):
    if not Path(path).is_file():
        raise UsageError(f"input file {path} does not exist")
    return path


def cmd_track(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    track_map = _load_map(args, cfg)
    ego = io.read_ego(_data_file(args.ego))
    frames = [f for p in args.det for f in io.read_frames(_data_file(p))]
    records = []
    outs, tracker = replay(
        cfg,
        track_map,
        ego,
        frames,
        compensate_delay=not args.no_delay_compensation,
        residual_sink=records.append if args.residuals else None,
    )
    io.write_tracks(args.out, outs)
    if args.residuals:
        io.write_residuals(args.residuals, records)
    st = tracker.stats
    print(
        f"{len(outs)} cycles, {st.frames_processed} frames, {st.updates} updates, "
        f"{st.tracks_created} tracks created, {st.frames_dropped_old} frames too old"
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    tracks = io.read_tracks(_data_file(args.tracks))
    records = io.read_residuals(_data_file(args.residuals))
    truth = io.read_truth(_data_file(args.truth)) if args.truth else None
    by_sensor = defaultdict(list)
    for r in records:
        by_sensor[r.sensor].append(r)
    profile = transient_profile(records, args.bin_width, args.horizon)
    metrics = {
        "n_updates": len(records),
        "n_cycles": len(tracks),
        "n_tracks": len({o.uid for out in tracks for o in out.tracks}),
        "residuals": stats_to_dict(residual_stats(records)),
        "residuals_by_sensor": {s: stats_to_dict(residual_stats(rs)) for s, rs in sorted(by_sensor.items())},
        "transient": [{"age_lo_s": lo, "age_hi_s": hi, "stats": stats_to_dict(st)} for lo, hi, st in profile],
        "precision": None,
        "tracking_rmse_m": None,
        "delays": None,
    }
    if truth is None:
        print("no ground truth given: precision and tracking error skipped", file=sys.stderr)
    else:
        p = precision(tracks, truth, args.t_min, args.d_tp)
        metrics["precision"] = {"tp": p.tp, "fp": p.fp, "precision": p.precision, "t_min_s": args.t_min, "d_tp_m": args.d_tp}
        metrics["tracking_rmse_m"] = tracking_rmse(tracks, truth)
    if args.det:
        if not args.ego:
            raise UsageError("delay statistics need --ego together with --det")
        frames = [f for p in args.det for f in io.read_frames(_data_file(p))]
        speed_at = ego_speed_lookup(io.read_ego(_data_file(args.ego)))
        metrics["delays"] = {s: vars(r) for s, r in delay_stats(frames, speed_at).items()}
    io.write_json(args.out, metrics)
    if args.bins_csv:
        io.write_transient_csv(args.bins_csv, profile)
    lat = metrics["residuals"].get("lat")
    summary = f"{len(records)} residuals"
    if lat:
        summary += f", lateral mean {lat['mean']:.3f} m std {lat['std']:.3f} m"
    if metrics["precision"]:
        summary += f", precision {metrics['precision']['precision']:.3f}"
    print(summary)
    return EXIT_OK


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6g}"
    if isinstance(v, (list, dict)):
        return json.dumps(v, separators=(",", ":"))
    return v


def cmd_sweep(args) -> int:
    d = _read_json(args.sweep, "sweep spec")
    if not isinstance(d, dict):
        raise UsageError("sweep spec must be a JSON object")
    base = d.get("base")
    if isinstance(base, str):
        d = {**d, "base": load_config(Path(args.sweep).parent / base).to_dict()}
    spec = SweepSpec.from_dict(d)
    rows = run_sweep(spec, jobs=args.jobs)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, restval="", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in SWEEP_COLUMNS})
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} rows written to {args.out}" + (f", {failed} failed" if failed else ""))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fusion-track", description="Multi-sensor late-fusion object tracker")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic scenario")
    s.add_argument("--spec", help="scenario JSON (full spec or {'preset': name, 'params': {...}})")
    s.add_argument("--preset", help="built-in scenario: overtake, pack or ghost_heavy")
    s.add_argument("--seed", type=int)
    s.add_argument("--duration", type=float, help="override the scenario length in seconds")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("track", help="replay detection logs through the tracker")
    t.add_argument("--config", help="run configuration JSON (defaults if omitted)")
    t.add_argument("--ego", required=True)
    t.add_argument("--det", action="append", required=True, help="detection log; repeat per sensor")
    t.add_argument("--map", help="track map CSV (overrides map_path in the config)")
    t.add_argument("--out", required=True, help="track list JSONL")
    t.add_argument("--residuals", help="also write per-update residuals to this JSONL")
    t.add_argument("--no-delay-compensation", action="store_true", help="fuse every frame into the newest state")
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("evaluate", help="compute metrics from tracker logs")
    e.add_argument("--truth", help="ground truth JSONL; precision is skipped without it")
    e.add_argument("--tracks", required=True)
    e.add_argument("--residuals", required=True)
    e.add_argument("--det", action="append", help="detection logs for delay statistics")
    e.add_argument("--ego", help="ego log for delay statistics")
    e.add_argument("--out", required=True, help="metrics JSON")
    e.add_argument("--bins-csv", help="write the residuals binned by observation age to this CSV")
    e.add_argument("--bin-width", type=float, default=1.0)
    e.add_argument("--horizon", type=float, default=3.0)
    e.add_argument("--t-min", type=float, default=2.0, help="minimum track lifetime for a true positive (s)")
    e.add_argument("--d-tp", type=float, default=2.0, help="maximum mean distance for a true positive (m)")
    e.set_defaults(func=cmd_evaluate)

    w = sub.add_parser("sweep", help="sensitivity analysis over one parameter")
    w.add_argument("--sweep", required=True, help="sweep spec JSON")
    w.add_argument("--out", required=True, help="result table CSV")
    w.add_argument("--jobs", type=int, default=1)
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (io.DataError, MapError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
