"""Run configuration: every tracker parameter with its published default.

The configuration is a JSON object.  Angles are given in degrees in the file
(keys ending in ``_deg``) and converted to radians on access.  Unknown keys
are rejected so that typos cannot silently fall back to defaults.
"""
from __future__ import annotations

import copy
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .estimation import InitPolicy, SensorConfig
from .motion import ModelKind

STATE_STD_KEYS = ("x", "y", "yaw_deg", "v", "yaw_rate_deg")
FEATURE_STD_KEYS = {"x": "x", "y": "y", "yaw": "yaw_deg", "v": "v"}


class ConfigError(ValueError):
    pass


def _default_init_std():
    return {"x": 0.01, "y": 0.01, "yaw_deg": 17.2, "v": 4.0, "yaw_rate_deg": 17.2, "a": 1.0}


def _default_sensors():
    return {
        "lidar_cluster": {
            "features": ["x", "y", "yaw"],
            "std": {"x": 0.3, "y": 0.3, "yaw_deg": 20.0},
            "match_weight": 3,
            "yaw_from_centerline": True,
        },
        "radar": {
            "features": ["x", "y", "yaw", "v"],
            "std": {"x": 3.0, "y": 3.0, "yaw_deg": 20.0, "v": 0.2},
            "match_weight": 1,
            "yaw_from_centerline": True,
        },
    }


SENSOR_KEYS = {"features", "std", "match_weight", "yaw_from_centerline"}


@dataclass
class RunConfig:
    f_node: float = 50.0
    f_ekf: float = 100.0
    model: str = "CTRV"
    history_seconds: float = 3.0
    seed: int = 0
    k_v: float = 0.8
    init_std: dict = field(default_factory=_default_init_std)
    process_std: dict = field(default_factory=_default_init_std)
    sensors: dict = field(default_factory=_default_sensors)
    active_sensors: list | None = None
    d_mrg: float = 5.1
    d_obf_out: float = 0.3
    d_obf_in: float = 0.3
    d_mtc: float = 4.0
    t_mtc: int = 25
    ego_alpha: float = 0.5
    map_path: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("f_node", "f_ekf", "history_seconds", "k_v"):
            if not (isinstance(getattr(self, name), (int, float)) and getattr(self, name) > 0):
                raise ConfigError(f"{name} must be a positive number, got {getattr(self, name)!r}")
        for name in ("d_mrg", "d_obf_out", "d_obf_in", "d_mtc"):
            if not (isinstance(getattr(self, name), (int, float)) and getattr(self, name) >= 0):
                raise ConfigError(f"{name} must be a non-negative number, got {getattr(self, name)!r}")
        if not isinstance(self.t_mtc, int) or isinstance(self.t_mtc, bool) or self.t_mtc < 1:
            raise ConfigError(f"t_mtc must be an integer >= 1, got {self.t_mtc!r}")
        if not isinstance(self.seed, int):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        if not 0.0 < self.ego_alpha <= 1.0:
            raise ConfigError(f"ego_alpha must be in (0, 1], got {self.ego_alpha!r}")
        try:
            ModelKind(self.model)
        except ValueError:
            raise ConfigError(f"model must be one of {[m.value for m in ModelKind]}, got {self.model!r}") from None
        for name in ("init_std", "process_std"):
            stds = getattr(self, name)
            if set(stds) != set(STATE_STD_KEYS) | {"a"}:
                raise ConfigError(f"{name} needs exactly the keys {sorted(set(STATE_STD_KEYS) | {'a'})}")
            if any(not (isinstance(v, (int, float)) and v > 0) for v in stds.values()):
                raise ConfigError(f"{name} values must be positive")
        if not self.sensors:
            raise ConfigError("at least one sensor must be configured")
        for sname, s in self.sensors.items():
            extra = set(s) - SENSOR_KEYS
            if extra:
                raise ConfigError(f"unknown key(s) {sorted(extra)} in sensors.{sname}")
            try:
                self.sensor_config(sname)
            except (KeyError, ValueError, TypeError) as exc:
                raise ConfigError(f"sensors.{sname}: {exc}") from None
        if self.active_sensors is not None:
            unknown = set(self.active_sensors) - set(self.sensors)
            if unknown:
                raise ConfigError(f"active_sensors names unknown sensors {sorted(unknown)}")
        if self.f_ekf < self.f_node:
            warnings.warn(f"f_ekf ({self.f_ekf} Hz) is below f_node ({self.f_node} Hz)", stacklevel=3)

    @property
    def model_kind(self) -> ModelKind:
        return ModelKind(self.model)

    @staticmethod
    def _state_stds(stds: dict) -> tuple[float, ...]:
        return tuple(math.radians(stds[k]) if k.endswith("_deg") else float(stds[k]) for k in STATE_STD_KEYS)

    @property
    def init_policy(self) -> InitPolicy:
        return InitPolicy(k_v=self.k_v, init_std=self._state_stds(self.init_std), acc_std=float(self.init_std["a"]))

    @property
    def process_stds(self) -> tuple[float, ...]:
        return self._state_stds(self.process_std)

    def sensor_config(self, name: str) -> SensorConfig:
        s = self.sensors[name]
        features = tuple(s["features"])
        std = s["std"]
        missing = [f for f in features if FEATURE_STD_KEYS.get(f) not in std]
        if missing:
            raise ConfigError(f"no std given for feature(s) {missing}")
        extra = set(std) - {FEATURE_STD_KEYS.get(f) for f in features}
        if extra:
            raise ConfigError(f"std given for unmeasured feature(s) {sorted(extra)}")
        stds = tuple(
            math.radians(std[FEATURE_STD_KEYS[f]]) if f == "yaw" else float(std[FEATURE_STD_KEYS[f]]) for f in features
        )
        return SensorConfig(
            name=name,
            features=features,
            stds=stds,
            match_weight=int(s.get("match_weight", 1)),
            yaw_from_centerline=bool(s.get("yaw_from_centerline", True)),
        )

    def sensor_configs(self) -> dict[str, SensorConfig]:
        names = self.active_sensors if self.active_sensors is not None else list(self.sensors)
        return {n: self.sensor_config(n) for n in names}

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "RunConfig":
        d = copy.deepcopy(self.to_dict())
        d.update(changes)
        return from_dict(d)


def _merge_defaults(key: str, value, default):
    # nested std/sensor blocks may be given partially; unknown nested keys are errors
    if key in ("init_std", "process_std"):
        if not isinstance(value, dict):
            raise ConfigError(f"{key} must be an object")
        extra = set(value) - set(default)
        if extra:
            raise ConfigError(f"unknown key(s) {sorted(extra)} in {key}")
        return {**default, **value}
    if key == "sensors":
        if not isinstance(value, dict):
            raise ConfigError("sensors must be an object")
        merged = {}
        for name, s in value.items():
            if not isinstance(s, dict):
                raise ConfigError(f"sensors.{name} must be an object")
            extra = set(s) - SENSOR_KEYS
            if extra:
                raise ConfigError(f"unknown key(s) {sorted(extra)} in sensors.{name}")
            base = copy.deepcopy(default.get(name, {}))
            if "features" in s and "std" not in s:
                base.pop("std", None)
            merged[name] = {**base, **s}
        return merged
    return value


def from_dict(d: dict) -> RunConfig:
    known = {f.name: f for f in fields(RunConfig)}
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigError(f"unknown configuration key(s): {sorted(unknown)}")
    defaults = RunConfig()
    kwargs = {}
    for key, value in d.items():
        default = getattr(defaults, key)
        if key in ("f_node", "f_ekf", "history_seconds", "k_v", "d_mrg", "d_obf_out", "d_obf_in", "d_mtc", "ego_alpha"):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{key} must be a number, got {value!r}")
            value = float(value)
        elif key in ("t_mtc", "seed"):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{key} must be an integer, got {value!r}")
        elif key == "model" and not isinstance(value, str):
            raise ConfigError(f"model must be a string, got {value!r}")
        kwargs[key] = _merge_defaults(key, value, default)
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    """Read a JSON config file; an empty file (or ``{}``) gives all defaults."""
    text = Path(path).read_text().strip()
    if not text:
        return RunConfig()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    cfg = from_dict(data)
    if cfg.map_path is not None and not Path(cfg.map_path).is_absolute():
        cfg.map_path = str((Path(path).parent / cfg.map_path).resolve())
    return cfg


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
