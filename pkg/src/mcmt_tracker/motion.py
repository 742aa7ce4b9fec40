"""
Constant-velocity Kalman filter for boxes in image space.

The 8-dimensional state (cx, cy, a, h, vcx, vcy, va, vh) holds the box
center, aspect ratio a = w / h, height and their velocities. The box
(cx, cy, a, h) is observed directly. Measurement noise is scaled by
(1 - score) so confident detections pull the state harder.
"""
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .config import MotionConfig
from .core import DetBox
from .errors import UsageError

@dataclass(frozen=True, eq=False)
class MotionState:
    mean: np.ndarray
    covariance: np.ndarray
    age: int = 0
    hits: int = 1

    @property
    def position(self) -> np.ndarray:
        return self.mean[:4]

    @property
    def velocity(self) -> np.ndarray:
        return self.mean[4:]

def _symmetrize(matrix: np.ndarray) -> np.ndarray:
    return (matrix + matrix.T) / 2

def kalman_correct(
    mean: np.ndarray,
    covariance: np.ndarray,
    update_mat: np.ndarray,
    noise_cov: np.ndarray,
    measurement: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """
    Kalman correction step in Joseph form, which keeps the posterior
    covariance symmetric positive-definite.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    covariance = np.atleast_2d(np.asarray(covariance, dtype=np.float64))
    update_mat = np.atleast_2d(np.asarray(update_mat, dtype=np.float64))
    noise_cov = np.atleast_2d(np.asarray(noise_cov, dtype=np.float64))
    measurement = np.atleast_1d(np.asarray(measurement, dtype=np.float64))

    projected_cov = np.linalg.multi_dot((update_mat, covariance, update_mat.T)) + noise_cov
    chol_factor, lower = scipy.linalg.cho_factor(projected_cov, lower=True, check_finite=False)
    kalman_gain = scipy.linalg.cho_solve(
        (chol_factor, lower),
        np.dot(covariance, update_mat.T).T,
        check_finite=False,
    ).T

    innovation = measurement - update_mat @ mean
    new_mean = mean + kalman_gain @ innovation

    residual = np.eye(len(mean)) - kalman_gain @ update_mat
    new_covariance = (
        np.linalg.multi_dot((residual, covariance, residual.T))
        + np.linalg.multi_dot((kalman_gain, noise_cov, kalman_gain.T))
    )

    return new_mean, _symmetrize(new_covariance)

def squared_mahalanobis(innovations, covariance, smoothing: float = 0.0) -> np.ndarray:
    """
    Squared Mahalanobis distance of each innovation row under `covariance`
    inflated to S + smoothing * diag(S). Leading axes broadcast, so (T, D, n)
    innovations against (T, n, n) covariances give (T, D) distances.
    """
    innovations = np.asarray(innovations, dtype=np.float64)
    if innovations.ndim == 1:
        innovations = innovations[np.newaxis]
    covariance = np.atleast_2d(np.asarray(covariance, dtype=np.float64))

    diagonal = np.diagonal(covariance, axis1=-2, axis2=-1)
    smoothed = covariance + smoothing * diagonal[..., np.newaxis] * np.eye(covariance.shape[-1])

    cholesky_factor = np.linalg.cholesky(smoothed)
    z = np.linalg.solve(cholesky_factor, np.swapaxes(innovations, -1, -2))
    return np.sum(z * z, axis=-2)

class KalmanBoxFilter:
    ndim = 4

    def __init__(self, config: MotionConfig | None = None):
        self.config = config or MotionConfig()

        self._motion_mat = np.eye(2 * self.ndim)
        for i in range(self.ndim):
            self._motion_mat[i, self.ndim + i] = 1.0
        self._update_mat = np.eye(self.ndim, 2 * self.ndim)

    def _measurement_cov(self, height: float) -> np.ndarray:
        weight = self.config.std_weight_position
        std = [weight * height, weight * height, 1e-1, weight * height]
        return np.diag(np.square(std))

    @staticmethod
    def _measure(box: DetBox) -> np.ndarray:
        measurement = box.rect.to_xyah()
        if not np.all(np.isfinite(measurement)):
            raise UsageError(f"Non-finite measurement from {box}")

        return measurement

    def initiate(self, box: DetBox) -> MotionState:
        measurement = self._measure(box)
        height = measurement[3]
        pos_weight = self.config.std_weight_position
        vel_weight = self.config.std_weight_velocity

        std = [
            2 * pos_weight * height,
            2 * pos_weight * height,
            1e-2,
            2 * pos_weight * height,
            10 * vel_weight * height,
            10 * vel_weight * height,
            1e-5,
            10 * vel_weight * height,
        ]
        mean = np.r_[measurement, np.zeros(self.ndim)]
        return MotionState(mean, np.diag(np.square(std)), age=0, hits=1)

    def predict(self, state: MotionState) -> MotionState:
        height = state.mean[3]
        pos_weight = self.config.std_weight_position
        vel_weight = self.config.std_weight_velocity

        std_pos = [pos_weight * height, pos_weight * height, 1e-2, pos_weight * height]
        std_vel = [vel_weight * height, vel_weight * height, 1e-5, vel_weight * height]
        motion_cov = np.diag(np.square(np.r_[std_pos, std_vel]))

        mean = self._motion_mat @ state.mean
        covariance = (
            np.linalg.multi_dot((self._motion_mat, state.covariance, self._motion_mat.T))
            + motion_cov
        )

        return MotionState(mean, _symmetrize(covariance), state.age + 1, state.hits)

    def project(self, state: MotionState) -> tuple[np.ndarray, np.ndarray]:
        mean = self._update_mat @ state.mean
        covariance = np.linalg.multi_dot(
            (self._update_mat, state.covariance, self._update_mat.T)
        )
        return mean, covariance + self._measurement_cov(state.mean[3])

    def update(self, state: MotionState, box: DetBox) -> MotionState:
        measurement = self._measure(box)

        # NSA: confident detections get proportionally less measurement noise.
        scale = max(1.0 - box.score, self.config.min_noise_scale)
        noise_cov = self._measurement_cov(state.mean[3]) * scale

        mean, covariance = kalman_correct(
            state.mean, state.covariance, self._update_mat, noise_cov, measurement
        )

        hits = state.hits + 1 if state.age <= 1 else 1
        return MotionState(mean, covariance, age=0, hits=hits)

    def gating_matrix(self, states: Sequence[MotionState], boxes: Sequence[DetBox]) -> np.ndarray:
        """
        Squared Mahalanobis distance of every box to every projected state,
        one row per state.
        """
        if not states or not boxes:
            return np.empty((len(states), len(boxes)))

        projected = [self.project(state) for state in states]
        means = np.stack([mean for mean, _ in projected])
        covariances = np.stack([covariance for _, covariance in projected])
        measurements = np.stack([self._measure(box) for box in boxes])

        innovations = measurements[np.newaxis, :, :] - means[:, np.newaxis, :]
        return squared_mahalanobis(innovations, covariances, self.config.smoothing)

    def gating_distances(self, state: MotionState, boxes: Sequence[DetBox]) -> np.ndarray:
        return self.gating_matrix([state], boxes)[0]

    def mahalanobis(self, state: MotionState, box: DetBox) -> float:
        return float(self.gating_distances(state, [box])[0])

    def gate(self, state: MotionState, box: DetBox, threshold: float | None = None) -> bool:
        if threshold is None:
            threshold = self.config.gate_threshold
        if threshold < 0:
            raise UsageError(f"Gating threshold must be non-negative, got {threshold}")

        return self.mahalanobis(state, box) <= threshold

    def freeze(self, state: MotionState, box: DetBox) -> MotionState:
        """
        Pin the state on `box` with zero velocity.
        """
        mean = np.r_[self._measure(box), np.zeros(self.ndim)]
        return MotionState(mean, state.covariance, state.age, state.hits)
