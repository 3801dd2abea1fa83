"""Multi-sensor late-fusion object tracking for racing scenarios.

An extended Kalman filter over kinematic motion models, Hungarian data
association with a status-counter track lifecycle, an out-of-track
plausibility filter and perception-delay compensation by backward-forward
integration over an equidistant state history.
"""
from .config import ConfigError, RunConfig, load_config, save_config
from .evaluation import GroundTruth, ResidualRecord, precision, residual_stats, transient_profile
from .geometry import Detection, EgoState, TrackMap
from .motion import ModelKind
from .pipeline import DetectionFrame, TrackedObjectList, Tracker, replay
from .simulator import ScenarioSpec, generate, preset_scenario

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "Detection",
    "DetectionFrame",
    "EgoState",
    "GroundTruth",
    "ModelKind",
    "ResidualRecord",
    "RunConfig",
    "ScenarioSpec",
    "TrackMap",
    "TrackedObjectList",
    "Tracker",
    "generate",
    "load_config",
    "precision",
    "preset_scenario",
    "replay",
    "residual_stats",
    "save_config",
    "transient_profile",
]
