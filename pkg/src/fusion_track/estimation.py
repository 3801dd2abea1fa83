"""Extended Kalman filter steps, noise construction and track initialisation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .geometry import Detection, EgoState, TrackMap, centerline_heading_at, wrap_angle
from .motion import ACC, FEATURE_INDEX, V, X, Y, YAW, YAW_RATE, ModelKind, feature_indices, validate_state

log = logging.getLogger(__name__)

PSD_TOL = 1e-9
_IDENTITY = {5: np.eye(5), 6: np.eye(6)}
MAX_CONDITION = 1e12

# initial state std, in state order (x, y, yaw, v, yaw_rate); the CTRA
# acceleration entry is not part of the published parameter set
DEFAULT_INIT_STD = (0.01, 0.01, math.radians(17.2), 4.0, math.radians(17.2))
DEFAULT_PROCESS_STD = (0.01, 0.01, math.radians(17.2), 4.0, math.radians(17.2))
DEFAULT_ACC_STD = 1.0


class FilterHealthError(RuntimeError):
    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


@dataclass
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray

    def copy(self) -> "Gaussian":
        return Gaussian(self.mean.copy(), self.cov.copy())


@dataclass(frozen=True)
class SensorConfig:
    """Measurement model of one detection pipeline."""

    name: str
    features: tuple[str, ...] = ("x", "y", "yaw")
    stds: tuple[float, ...] = (0.3, 0.3, math.radians(20.0))
    match_weight: int = 1
    yaw_from_centerline: bool = True

    def __post_init__(self):
        feature_indices(self.features)
        if len(self.stds) != len(self.features):
            raise ValueError(f"sensor {self.name}: {len(self.features)} features but {len(self.stds)} stds")
        if any(not s > 0 for s in self.stds):
            raise ValueError(f"sensor {self.name}: measurement stds must be positive")
        if self.match_weight < 1:
            raise ValueError(f"sensor {self.name}: match weight must be >= 1")

    @property
    def R(self) -> np.ndarray:
        return measurement_noise(self.stds)

    def std_of(self, feature: str) -> float:
        return self.stds[self.features.index(feature)]


@dataclass(frozen=True)
class InitPolicy:
    k_v: float = 0.8
    init_std: tuple[float, ...] = DEFAULT_INIT_STD
    acc_std: float = DEFAULT_ACC_STD

    def __post_init__(self):
        if not self.k_v > 0:
            raise ValueError("k_v must be positive")
        if any(not s > 0 for s in self.init_std) or not self.acc_std > 0:
            raise ValueError("initial state stds must be positive")

    def cov(self, model) -> np.ndarray:
        stds = list(self.init_std)
        if ModelKind(model) is ModelKind.CTRA:
            stds.append(self.acc_std)
        return np.diag(np.square(stds))


def process_noise(stds, dt: float, model=ModelKind.CTRV, acc_std: float = DEFAULT_ACC_STD) -> np.ndarray:
    """Per-step process covariance: ``diag(std**2) * dt``.

    ``stds`` are per-state noise intensities (units per sqrt(second)), so the
    accumulated variance over one second does not depend on the filter rate.
    """
    stds = list(stds)
    if ModelKind(model) is ModelKind.CTRA and len(stds) == 5:
        stds.append(acc_std)
    return np.diag(np.square(stds)) * dt


def measurement_noise(stds) -> np.ndarray:
    return np.diag(np.square(np.asarray(stds, dtype=float)))


def _check_psd(P, where):
    w = np.linalg.eigvalsh(P)
    if w[0] < -PSD_TOL:
        raise FilterHealthError(f"covariance lost positive semi-definiteness in {where}", eigenvalue=float(w[0]))


def predict(g: Gaussian, dt: float, model, Q) -> Gaussian:
    """EKF prediction: propagate the mean and map the covariance through F."""
    means, covs = predict_steps(g, dt, model, Q, 1)
    return Gaussian(means[0], covs[0])


def predict_steps(g: Gaussian, dt: float, model, Q, n: int) -> tuple[np.ndarray, np.ndarray]:
    """``n`` consecutive prediction steps, returning stacked means and covariances.

    Each step is ``x = f(x)``, ``P = F P F^T + Q`` followed by re-symmetrising
    ``P``.  Validation happens once up front instead of on every step, which
    is what makes the backward-forward re-integration cheap enough to run
    every cycle.  The arithmetic is shared with :func:`predict_batch_step`,
    so stepping one state alone or inside a batch gives identical bits.
    """
    mean, model = validate_state(g.mean, dt, model)
    dim = model.dim
    means = np.empty((n, dim))
    covs = np.empty((n, dim, dim))
    rows = [mean.tolist()]
    P = g.cov[None]
    F = batch_transition(1, dt, model)
    for k in range(n):
        P = predict_batch_step(rows, P, F, dt, model, Q)
        covs[k] = P[0]
        means[k] = rows[0]
    return means, covs


def batch_transition(n: int, dt: float, model) -> np.ndarray:
    """Stack of ``n`` Jacobians holding the state-independent entries."""
    dim = model.dim
    F = np.broadcast_to(_IDENTITY[dim], (n, dim, dim)).copy()
    if model is not ModelKind.CV:
        F[:, YAW, YAW_RATE] = dt
    if model is ModelKind.CTRA:
        F[:, V, ACC] = dt
    return F


def predict_batch_step(rows: list, P: np.ndarray, F: np.ndarray, dt: float, model, Q) -> np.ndarray:
    """One prediction step for several states at once.

    ``rows`` holds the means as lists of floats and is advanced in place;
    ``P`` is the ``(n, dim, dim)`` covariance stack and ``F`` a scratch stack
    from :func:`batch_transition`.  Returns the new covariance stack.  The
    states are trusted to be finite (they come from validated filters).
    """
    turn = model is not ModelKind.CV
    ctra = model is ModelKind.CTRA
    for i, s in enumerate(rows):
        yaw, v = s[YAW], s[V]
        sin, cos = math.sin(yaw), math.cos(yaw)
        F[i, X, YAW] = -v * dt * cos
        F[i, X, V] = -dt * sin
        F[i, Y, YAW] = -v * dt * sin
        F[i, Y, V] = dt * cos
        s[X] = s[X] - v * dt * sin
        s[Y] = s[Y] + v * dt * cos
        if turn:
            s[YAW] = wrap_angle(yaw + dt * s[YAW_RATE])
        if ctra:
            s[V] = v + dt * s[ACC]
    P = F @ P @ F.swapaxes(1, 2) + Q
    P = 0.5 * (P + P.swapaxes(1, 2))
    if np.any(np.diagonal(P, axis1=1, axis2=2) < -PSD_TOL):
        for Pi in P:
            _check_psd(Pi, "predict")
    return P


def update(g: Gaussian, z, features, R) -> tuple[Gaussian, np.ndarray]:
    """EKF measurement update with a selector observation model.

    Returns the posterior and the pre-update residual ``z - h(prior)``; yaw
    entries of the residual are wrapped before the gain is applied.  If the
    innovation covariance is numerically singular the prior is returned
    unchanged (the caller can test ``posterior is prior``).
    """
    idx = feature_indices(features)
    z = np.asarray(z, dtype=float)
    R = np.asarray(R, dtype=float)
    if z.shape != (len(idx),) or R.shape != (len(idx), len(idx)):
        raise ValueError(f"measurement of shape {z.shape} / R {R.shape} does not match features {features}")
    residual = z - g.mean[idx]
    for k, i in enumerate(idx):
        if i == YAW:
            residual[k] = wrap_angle(residual[k])
    if not idx:
        return g, residual

    P = g.cov
    PHt = P[:, idx]
    S = PHt[idx, :] + R
    w, V = np.linalg.eigh(S)
    if not w[0] > 0 or w[-1] > MAX_CONDITION * w[0]:
        log.warning("innovation covariance ill-conditioned, update skipped")
        return g, residual
    # the eigendecomposition doubles as the inverse: S^-1 = V diag(1/w) V^T
    K = PHt @ ((V / w) @ V.T)
    mean = g.mean + K @ residual
    mean[YAW] = wrap_angle(mean[YAW])
    P_post = P - K @ PHt.T
    P_post = 0.5 * (P_post + P_post.T)
    _check_psd(P_post, "update")
    return Gaussian(mean, P_post), residual


def nis(residual, g: Gaussian, features, R) -> float:
    """Normalised innovation squared of a residual against a prior."""
    idx = feature_indices(features)
    S = g.cov[np.ix_(idx, idx)] + R
    return float(residual @ np.linalg.solve(S, residual))


def pseudo_yaw_measurement(det_pos, track_map: TrackMap, std: float = math.radians(20.0)) -> tuple[float, float]:
    """Centerline heading at a detection, packaged as a yaw measurement."""
    return centerline_heading_at(det_pos, track_map), std


def init_track_state(
    det: Detection,
    ego: EgoState,
    track_map: TrackMap,
    policy: InitPolicy,
    sensor: SensorConfig,
    model=ModelKind.CTRV,
) -> Gaussian:
    """Initial Gaussian for a new track from a global-frame detection.

    Unmeasured heading falls back to the centerline heading and unmeasured
    speed to ``k_v`` times the ego speed; yaw rate (and acceleration) start
    at zero.
    """
    model = ModelKind(model)
    mean = np.zeros(model.dim)
    mean[0], mean[1] = det.x, det.y
    if det.yaw is not None and "yaw" in sensor.features and not sensor.yaw_from_centerline:
        mean[YAW] = wrap_angle(det.yaw)
    else:
        mean[YAW] = centerline_heading_at((det.x, det.y), track_map)
    if det.v is not None and "v" in sensor.features:
        mean[FEATURE_INDEX["v"]] = det.v
    else:
        mean[FEATURE_INDEX["v"]] = policy.k_v * ego.v
    return Gaussian(mean, policy.cov(model))


def measurement_vector(
    det: Detection, sensor: SensorConfig, track_map: TrackMap, centerline_yaw: float | None = None
) -> np.ndarray:
    """Measurement vector of a global-frame detection in the sensor's feature order.

    Heading comes from the centerline (pseudo-yaw) when the sensor is
    configured that way or the detection carries none.  ``centerline_yaw``
    may pass that heading in when it was already looked up.
    """
    z = np.empty(len(sensor.features))
    for k, f in enumerate(sensor.features):
        if f == "yaw":
            if sensor.yaw_from_centerline or det.yaw is None:
                z[k] = centerline_heading_at((det.x, det.y), track_map) if centerline_yaw is None else centerline_yaw
            else:
                z[k] = det.yaw
        elif f == "v":
            if det.v is None:
                raise ValueError(f"sensor {sensor.name} measures speed but the detection has none")
            z[k] = det.v
        else:
            z[k] = getattr(det, f)
    return z
