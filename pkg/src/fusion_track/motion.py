"""Kinematic point-mass models for the tracker.

States are plain float arrays laid out as ``[x, y, yaw, v, yaw_rate]`` for
CTRV and CV, with a trailing acceleration ``a`` for CTRA.  All three models
share the single explicit Euler step of the CTRV equations: the position
advances along the *pre-step* heading and speed, then heading, speed and
acceleration terms advance.  CV carries the yaw-rate slot but never lets it
turn the heading.
"""
from __future__ import annotations

import math
from enum import Enum

import numpy as np

from .geometry import wrap_angle

X, Y, YAW, V, YAW_RATE, ACC = range(6)

FEATURE_INDEX = {"x": X, "y": Y, "yaw": YAW, "v": V}


class ModelKind(str, Enum):
    CTRV = "CTRV"
    CV = "CV"
    CTRA = "CTRA"

    @property
    def dim(self) -> int:
        return 6 if self is ModelKind.CTRA else 5


class PropagationError(ValueError):
    pass


def validate_state(s, dt, model):
    """Coerce a state to a float array and check shape, finiteness and the step."""
    model = model if isinstance(model, ModelKind) else ModelKind(model)
    s = np.asarray(s, dtype=float)
    if s.shape != (model.dim,):
        raise PropagationError(f"{model.value} expects a {model.dim}-state, got shape {s.shape}")
    if not (math.isfinite(dt) and dt >= 0.0):
        raise PropagationError(f"time step must be finite and non-negative, got {dt}")
    # the sum is a cheap screen; it can also overflow, so confirm elementwise
    if not math.isfinite(s.sum()) and not np.all(np.isfinite(s)):
        raise PropagationError(f"non-finite state {s}")
    return s, model


def propagate(s, dt: float, model=ModelKind.CTRV) -> np.ndarray:
    """Advance a state by ``dt`` seconds with one Euler step of ``model``."""
    s, model = validate_state(s, dt, model)
    x, y, yaw, v, yaw_rate = s[:5].tolist()
    out = s.copy()
    out[X] = x - v * dt * math.sin(yaw)
    out[Y] = y + v * dt * math.cos(yaw)
    if model is not ModelKind.CV:
        out[YAW] = wrap_angle(yaw + dt * yaw_rate)
    if model is ModelKind.CTRA:
        out[V] = v + dt * s[ACC]
    return out


def jacobian_F(s, dt: float, model=ModelKind.CTRV) -> np.ndarray:
    """Analytic Jacobian of :func:`propagate` with respect to the state."""
    s, model = validate_state(s, dt, model)
    yaw, v = float(s[YAW]), float(s[V])
    sin, cos = math.sin(yaw), math.cos(yaw)
    F = np.eye(model.dim)
    F[X, YAW] = -v * dt * cos
    F[X, V] = -dt * sin
    F[Y, YAW] = -v * dt * sin
    F[Y, V] = dt * cos
    if model is not ModelKind.CV:
        F[YAW, YAW_RATE] = dt
    if model is ModelKind.CTRA:
        F[V, ACC] = dt
    return F


def feature_indices(features) -> list[int]:
    try:
        return [FEATURE_INDEX[f] for f in features]
    except KeyError as exc:
        raise ValueError(f"unknown measurement feature {exc.args[0]!r}; expected one of {sorted(FEATURE_INDEX)}") from None


def selector_matrix(features, dim: int = 5) -> np.ndarray:
    """Observation Jacobian H: one row per feature selecting a state component."""
    idx = feature_indices(features)
    H = np.zeros((len(idx), dim))
    H[np.arange(len(idx)), idx] = 1.0
    return H


def observe(s, features) -> np.ndarray:
    """Measurement prediction h(s) for an ordered feature list."""
    return np.asarray(s, dtype=float)[feature_indices(features)]
