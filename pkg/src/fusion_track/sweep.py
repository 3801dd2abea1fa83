"""Simulate, track and evaluate in one call, and parameter sweeps built on it.

A sweep varies one :class:`RunConfig` field over a list of values and runs
the whole chain on a fixed set of scenarios and seeds for every value.  The
resulting table has a baseline row (the unmodified base config) and one row
per value with pooled residual statistics and scenario-level precision.
"""
from __future__ import annotations

import copy
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

from .config import ConfigError, RunConfig, from_dict
from .evaluation import RESIDUAL_FEATURES, precision, residual_stats, tracking_rmse
from .pipeline import replay
from .simulator import ScenarioSpec, generate, preset_scenario

log = logging.getLogger(__name__)


@dataclass
class ScenarioRef:
    """A scenario preset name with keyword overrides, or an explicit scenario dict."""

    preset: str | None = "overtake"
    params: dict = field(default_factory=dict)
    spec: dict | None = None

    def build(self, seed: int) -> ScenarioSpec:
        if self.spec is not None:
            s = ScenarioSpec.from_dict({**self.spec, "seed": seed})
        else:
            s = preset_scenario(self.preset, **{**self.params, "seed": seed})
        return s

    @property
    def label(self) -> str:
        return self.preset if self.spec is None else "custom"


@dataclass
class RunMetrics:
    stats: dict
    tp: int
    fp: int
    rmse: float
    n_updates: int

    @property
    def precision(self) -> float:
        n = self.tp + self.fp
        return self.tp / n if n else math.nan


def run_experiment(cfg: RunConfig, scenario: ScenarioSpec, compensate_delay: bool = True, t_min=2.0, d_tp=2.0):
    """Simulate ``scenario``, replay it through the tracker and score the result.

    Returns ``(RunMetrics, residual_records, track_log, simulation)``.
    """
    sim = generate(scenario)
    records = []
    outs, tracker = replay(
        cfg, sim.track_map, sim.ego_log, sim.all_frames(), compensate_delay=compensate_delay, residual_sink=records.append
    )
    p = precision(outs, sim.truth, t_min, d_tp)
    m = RunMetrics(residual_stats(records), p.tp, p.fp, tracking_rmse(outs, sim.truth), len(records))
    return m, records, outs, sim


@dataclass
class SweepSpec:
    parameter: str
    values: list
    base: RunConfig = field(default_factory=RunConfig)
    scenarios: list = field(default_factory=lambda: [ScenarioRef()])
    seeds: list = field(default_factory=lambda: [0])
    t_min: float = 2.0
    d_tp: float = 2.0

    def __post_init__(self):
        names = {f.name for f in fields(RunConfig)}
        if self.parameter not in names:
            raise ConfigError(f"sweep parameter {self.parameter!r} is not a configuration key")
        if not isinstance(self.values, list) or not self.values:
            raise ConfigError("sweep values must be a non-empty list")
        if not self.seeds:
            raise ConfigError("sweep needs at least one seed")

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        known = {"parameter", "values", "base", "scenarios", "seeds", "t_min", "d_tp"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown sweep key(s): {sorted(unknown)}")
        if "parameter" not in d or "values" not in d:
            raise ConfigError("a sweep needs 'parameter' and 'values'")
        base = d.get("base", {})
        scen = []
        for s in d.get("scenarios", [{"preset": "overtake"}]):
            if isinstance(s, str):
                s = {"preset": s}
            if not isinstance(s, dict) or set(s) - {"preset", "params", "spec"}:
                raise ConfigError(f"bad scenario entry {s!r}")
            scen.append(ScenarioRef(s.get("preset", "overtake"), dict(s.get("params", {})), s.get("spec")))
        return cls(
            parameter=d["parameter"],
            values=list(d["values"]),
            base=base if isinstance(base, RunConfig) else from_dict(base),
            scenarios=scen,
            seeds=list(d.get("seeds", [0])),
            t_min=float(d.get("t_min", 2.0)),
            d_tp=float(d.get("d_tp", 2.0)),
        )


SWEEP_COLUMNS = (
    ["parameter", "value", "status"]
    + [f"{f}_{s}" for f in RESIDUAL_FEATURES for s in ("mean", "std")]
    + ["n_updates", "tp", "fp", "precision", "precision_rel", "rmse", "error"]
)


def _pool(metrics: list[RunMetrics]) -> dict:
    # pooled mean/std from per-run (mean, std, count) without keeping the samples
    row = {}
    for feat in RESIDUAL_FEATURES:
        parts = [m.stats[feat] for m in metrics if feat in m.stats]
        n = sum(p.count for p in parts)
        if n == 0:
            row[f"{feat}_mean"] = row[f"{feat}_std"] = math.nan
            continue
        mean = sum(p.mean * p.count for p in parts) / n
        ss = sum((p.count - 1) * (p.std if p.count > 1 else 0.0) ** 2 + p.count * (p.mean - mean) ** 2 for p in parts)
        row[f"{feat}_mean"] = mean
        row[f"{feat}_std"] = math.sqrt(ss / (n - 1)) if n > 1 else math.nan
    tp, fp = sum(m.tp for m in metrics), sum(m.fp for m in metrics)
    row.update(
        n_updates=sum(m.n_updates for m in metrics),
        tp=tp,
        fp=fp,
        precision=tp / (tp + fp) if tp + fp else math.nan,
        rmse=math.sqrt(sum(m.rmse**2 for m in metrics) / len(metrics)),
    )
    return row


def _run_value(spec: SweepSpec, value, baseline: bool) -> dict:
    row = {"parameter": spec.parameter, "value": "baseline" if baseline else value}
    try:
        cfg = spec.base if baseline else spec.base.replace(**{spec.parameter: copy.deepcopy(value)})
        metrics = [
            run_experiment(cfg, ref.build(seed), t_min=spec.t_min, d_tp=spec.d_tp)[0]
            for ref in spec.scenarios
            for seed in spec.seeds
        ]
        row.update(_pool(metrics), status="ok", error="")
    except Exception as exc:  # one bad value must not sink the sweep
        log.warning("sweep value %r failed: %s", value, exc)
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return row


def run_sweep(spec: SweepSpec, jobs: int = 1) -> list[dict]:
    """Baseline row followed by one row per value, in input order."""
    tasks = [(None, True)] + [(v, False) for v in spec.values]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futs = [ex.submit(_run_value, spec, v, b) for v, b in tasks]
            rows = [f.result() for f in futs]
    else:
        rows = [_run_value(spec, v, b) for v, b in tasks]
    base_p = rows[0].get("precision", math.nan)
    for r in rows:
        p = r.get("precision", math.nan)
        r["precision_rel"] = p / base_p - 1.0 if base_p and not math.isnan(base_p) and not math.isnan(p) else math.nan
    return rows
