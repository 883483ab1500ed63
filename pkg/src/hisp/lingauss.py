"""Linear-Gaussian building blocks for the bounding-box tracker.

State layout is ``[cx, cy, vx, vy, w, h]`` and measurements are
``[cx, cy, w, h]``. Every covariance leaving this module is re-symmetrized.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

STATE_DIM = 6
MEAS_DIM = 4


class NumericalError(ArithmeticError):
    """Raised when a filter step produces a non-finite or singular result."""

    def __init__(self, message: str, hypothesis_id=None):
        if hypothesis_id is not None:
            message = f"{message} (hypothesis {hypothesis_id})"
        super().__init__(message)
        self.hypothesis_id = hypothesis_id


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


@dataclass(frozen=True)
class GaussianState:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))

    @property
    def box(self) -> np.ndarray:
        """Center-form box ``[cx, cy, w, h]`` of the mean."""
        return self.mean[[0, 1, 4, 5]]


@dataclass(frozen=True)
class MotionModel:
    F: np.ndarray
    Q: np.ndarray
    survival_prob: float = 0.99
    dt: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.survival_prob <= 1.0:
            raise ValueError(f"survival_prob must be in (0, 1], got {self.survival_prob}")

    @classmethod
    def constant_velocity(cls, dt: float = 1.0, sigma_v: float = 5.0,
                          survival_prob: float = 0.99) -> "MotionModel":
        I2 = np.eye(2)
        Z2 = np.zeros((2, 2))
        F = np.block([[I2, dt * I2, Z2],
                      [Z2, I2, Z2],
                      [Z2, Z2, I2]])
        Q = sigma_v ** 2 * np.block([[dt ** 4 / 4 * I2, dt ** 3 / 2 * I2, Z2],
                                     [dt ** 3 / 2 * I2, dt ** 2 * I2, Z2],
                                     [Z2, Z2, I2]])
        return cls(F=F, Q=Q, survival_prob=survival_prob, dt=dt)


@dataclass(frozen=True)
class SensorModel:
    H: np.ndarray
    R: np.ndarray
    detection_prob: float = 0.9
    clutter_density: float = 10.0 / (1920 * 1080)
    frame_width: float = 1920.0
    frame_height: float = 1080.0

    def __post_init__(self):
        if not 0.0 < self.detection_prob < 1.0:
            raise ValueError(f"detection_prob must be in (0, 1), got {self.detection_prob}")
        if not 0.0 <= self.clutter_density < 1.0:
            raise ValueError(f"clutter_density must be in [0, 1), got {self.clutter_density}")

    @classmethod
    def box_sensor(cls, sigma_r: float = 6.0, detection_prob: float = 0.9,
                   clutter_mean: float = 10.0, frame_width: float = 1920.0,
                   frame_height: float = 1080.0) -> "SensorModel":
        I2 = np.eye(2)
        Z2 = np.zeros((2, 2))
        H = np.block([[I2, Z2, Z2],
                      [Z2, Z2, I2]])
        R = sigma_r ** 2 * np.eye(MEAS_DIM)
        return cls(H=H, R=R, detection_prob=detection_prob,
                   clutter_density=clutter_mean / (frame_width * frame_height),
                   frame_width=frame_width, frame_height=frame_height)

    @cached_property
    def log_det_R(self) -> float:
        return _logdet(_cholesky(self.R, "measurement noise"))

    @property
    def frame_area(self) -> float:
        return self.frame_width * self.frame_height

    def check_against(self, motion: MotionModel) -> None:
        """Missed detections are only survivable when existence outlasts detection."""
        if not self.detection_prob < motion.survival_prob:
            raise ValueError(
                f"detection_prob ({self.detection_prob}) must be below "
                f"survival_prob ({motion.survival_prob})")


def _check_finite(state: GaussianState, what: str, hypothesis_id=None) -> None:
    if not (np.all(np.isfinite(state.mean)) and np.all(np.isfinite(state.cov))):
        raise NumericalError(f"non-finite result in {what}", hypothesis_id)


def _cholesky(S: np.ndarray, what: str, hypothesis_id=None) -> np.ndarray:
    if not np.all(np.isfinite(S)):
        raise NumericalError(f"{what} is not finite", hypothesis_id)
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"{what} is not positive-definite", hypothesis_id) from exc


def _logdet(L: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def _whiten(L: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``L^-1 x`` for a lower Cholesky factor ``L``."""
    return np.linalg.solve(L, x)


def kf_predict(state: GaussianState, model: MotionModel, hypothesis_id=None) -> GaussianState:
    F = model.F
    out = GaussianState(F @ state.mean, symmetrize(F @ state.cov @ F.T + model.Q))
    _check_finite(out, "prediction", hypothesis_id)
    return out


def innovation(state: GaussianState, z: np.ndarray, model: SensorModel):
    """Return ``(nu, S)`` with ``nu = z - H m`` and ``S = H P H^T + R``."""
    H = model.H
    nu = np.asarray(z, dtype=float) - H @ state.mean
    S = symmetrize(H @ state.cov @ H.T + model.R)
    return nu, S


def kf_update(state: GaussianState, z: np.ndarray, model: SensorModel,
              hypothesis_id=None) -> tuple[GaussianState, np.ndarray]:
    """Kalman measurement update in Joseph form.

    Returns the posterior and the innovation covariance used.
    """
    H, R = model.H, model.R
    nu, S = innovation(state, z, model)
    _cholesky(S, "innovation covariance", hypothesis_id)
    # K = P H^T S^-1
    K = np.linalg.solve(S, H @ state.cov).T
    mean = state.mean + K @ nu
    A = np.eye(state.mean.size) - K @ H
    cov = symmetrize(A @ state.cov @ A.T + K @ R @ K.T)
    out = GaussianState(mean, cov)
    _check_finite(out, "update", hypothesis_id)
    return out, S


def association_probability(state: GaussianState, z: np.ndarray, model: SensorModel,
                            appearance_lik: float = 1.0, hypothesis_id=None) -> float:
    """Dimensionless likelihood of ``z`` under ``state``; lies in [0, 1].

    ``appearance_lik * sqrt(|R|/|S|) * exp(-0.5 * nu^T S^-1 nu)``, where the
    spatial term is evaluated at the predicted measurement ``H m``.
    """
    d2, log_ratio = innovation_stats(state, np.asarray(z, dtype=float)[None, :], model, hypothesis_id)
    return float(appearance_lik * np.exp(0.5 * log_ratio - 0.5 * d2[0]))


def innovation_stats(state: GaussianState, Z: np.ndarray, model: SensorModel,
                     hypothesis_id=None) -> tuple[np.ndarray, float]:
    """Squared innovation distances of the rows of ``Z`` and ``log(|R|/|S|)``."""
    nu = np.asarray(Z, dtype=float).reshape(-1, model.H.shape[0]) - model.H @ state.mean
    S = symmetrize(model.H @ state.cov @ model.H.T + model.R)
    L = _cholesky(S, "innovation covariance", hypothesis_id)
    y = _whiten(L, nu.T)
    d2 = np.einsum("ij,ij->j", y, y)
    log_ratio = model.log_det_R - _logdet(L)
    return d2, log_ratio


def mahalanobis_sq_innovation(state: GaussianState, z: np.ndarray, model: SensorModel,
                              hypothesis_id=None) -> float:
    return float(innovation_stats(state, z, model, hypothesis_id)[0][0])


def mahalanobis(a: GaussianState, b: GaussianState) -> float:
    """Distance between two densities under their pooled covariance."""
    pooled = symmetrize(0.5 * (a.cov + b.cov))
    y = _whiten(_cholesky(pooled, "pooled covariance"), a.mean - b.mean)
    return float(np.sqrt(y @ y))


def moment_match(weights, states) -> GaussianState:
    """Collapse a weighted Gaussian mixture to one Gaussian (mean and second moment kept)."""
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if total <= 0:
        raise NumericalError("moment matching over zero total weight")
    w = w / total
    means = np.stack([s.mean for s in states])
    mean = w @ means
    cov = np.zeros((mean.size, mean.size))
    for wi, s in zip(w, states):
        d = s.mean - mean
        cov += wi * (s.cov + np.outer(d, d))
    out = GaussianState(mean, symmetrize(cov))
    _check_finite(out, "moment matching")
    _cholesky(out.cov, "merged covariance")
    return out
