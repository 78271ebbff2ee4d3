"""Fisher-information models for trajectory planning: Gaussian-sensor
conditional FIM, expectation over the target prior by second-order Taylor
correction, prior information, rate-weighted sensor suites, and the
Doppler-shift sensor."""

from __future__ import annotations

import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from infotraj.matrixcore import DimensionError, cholesky_spd, vec


class GeometryError(ValueError):
    """Sensor and target geometrically coincide; the measurement is undefined."""


@dataclass(frozen=True)
class GaussianPrior:
    """Gaussian prior on the target position: mean (m) and SPD covariance (m^2)."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.covariance, dtype=float)
        if mean.ndim != 1:
            raise DimensionError("prior mean must be a vector")
        if cov.shape != (mean.size, mean.size):
            raise DimensionError(
                f"prior covariance shape {cov.shape} does not match mean length {mean.size}"
            )
        cholesky_spd(cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def isotropic(cls, std: float, dim: int = 2, mean=None) -> "GaussianPrior":
        if std <= 0.0:
            raise ValueError("prior standard deviation must be positive")
        mean = np.zeros(dim) if mean is None else np.asarray(mean, dtype=float)
        return cls(mean, std**2 * np.eye(dim))


class Sensor(ABC):
    """A measurement model with Gaussian noise whose covariance does not depend
    on the target parameter.

    Implementations expose the measurement mean and its Jacobian with respect
    to the target parameter, both broadcastable over leading batch axes.
    """

    theta_dim: int
    rate: float  # sampling rate, Hz

    @property
    @abstractmethod
    def noise_cov(self) -> np.ndarray:
        """Measurement noise covariance, shape (q, q), SPD."""

    @abstractmethod
    def mean(self, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Measurement mean, shape (..., q)."""

    @abstractmethod
    def jacobian(self, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """d mean / d theta, shape (..., q, theta_dim)."""


def _doppler_geometry(sensor: "DopplerSensor", x, theta):
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    rel = np.stack(
        [
            x[..., 0] - theta[..., 0],
            x[..., 1] - theta[..., 1],
            np.broadcast_to(sensor.altitude, np.broadcast_shapes(x.shape[:-1], theta.shape[:-1])).astype(float),
        ],
        axis=-1,
    )
    dist = np.linalg.norm(rel, axis=-1)
    if np.any(dist == 0.0):
        raise GeometryError("sensor and target positions coincide in 3-d")
    return x, rel, dist


def doppler_mean(sensor: "DopplerSensor", x, speed: float, theta) -> np.ndarray:
    """Doppler shift (Hz) seen at vehicle state x for a target at theta.

    Closing-rate convention: the shift is frequency_scale times the negative
    range rate, so an approaching target reads positive and the magnitude is
    bounded by frequency_scale * speed.
    """
    x, rel, dist = _doppler_geometry(sensor, x, theta)
    vel_along = speed * (np.cos(x[..., 2]) * rel[..., 0] + np.sin(x[..., 2]) * rel[..., 1])
    return -sensor.frequency_scale * vel_along / dist


def doppler_jacobian(sensor: "DopplerSensor", x, speed: float, theta) -> np.ndarray:
    """Analytic d(doppler_mean)/d(theta), shape (..., 1, 2)."""
    x, rel, dist = _doppler_geometry(sensor, x, theta)
    vx = speed * np.cos(x[..., 2])
    vy = speed * np.sin(x[..., 2])
    v_dot_r = vx * rel[..., 0] + vy * rel[..., 1]
    scale = sensor.frequency_scale
    jx = scale * (vx / dist - v_dot_r * rel[..., 0] / dist**3)
    jy = scale * (vy / dist - v_dot_r * rel[..., 1] / dist**3)
    return np.stack([jx, jy], axis=-1)[..., None, :]


@dataclass(frozen=True)
class DopplerSensor(Sensor):
    """Passive carrier-frequency-shift sensor rigidly mounted on the vehicle.

    The vehicle flies at a fixed altitude above the target plane with a fixed
    speed, so the measurement depends on the planar vehicle state only.
    frequency_scale is the shift per unit closing rate (carrier frequency
    divided by the propagation speed); the default corresponds to roughly a
    1 GHz carrier.
    """

    altitude: float
    noise_std: float
    rate: float
    speed: float
    frequency_scale: float = 3.33

    theta_dim = 2

    def __post_init__(self):
        if self.altitude < 0.0:
            raise ValueError("altitude must be nonnegative")
        if self.frequency_scale <= 0.0:
            raise ValueError("frequency scale must be positive")
        if self.noise_std <= 0.0:
            raise ValueError("noise standard deviation must be positive")
        if self.rate <= 0.0:
            raise ValueError("sampling rate must be positive")
        if self.speed <= 0.0:
            raise ValueError("vehicle speed must be positive")

    @property
    def noise_cov(self) -> np.ndarray:
        return np.array([[self.noise_std**2]])

    def mean(self, x, theta):
        return doppler_mean(self, x, self.speed, theta)[..., None]

    def jacobian(self, x, theta):
        return doppler_jacobian(self, x, self.speed, theta)


def conditional_fim(sensor: Sensor, x, theta) -> np.ndarray:
    """Information matrix J^T Sigma^-1 J of one measurement at fixed theta."""
    jac = sensor.jacobian(x, theta)
    cov = np.asarray(sensor.noise_cov, dtype=float)
    cholesky_spd(cov)
    weighted = np.linalg.solve(cov, jac)
    out = np.swapaxes(jac, -1, -2) @ weighted
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def expected_fim(
    sensor: Sensor,
    x,
    prior: GaussianPrior,
    hessian_step: float = 1e-2,
    indefinite_tol: float = 1e-8,
) -> np.ndarray:
    """Expectation of the conditional information matrix over the target prior.

    Second-order Taylor correction around the prior mean:
        E[Q_ij] ~= Q_ij(mean) + 0.5 * tr(Sigma H_ij(mean)),
    with the elementwise Hessians H_ij formed by nested central differences of
    step hessian_step (meters). Exact when Q is at most quadratic in theta.

    The correction can leave the result slightly indefinite: eigenvalues in
    [-indefinite_tol, 0) are clipped to zero; anything more negative triggers
    a breakdown warning and a fallback to the conditional value at the mean.
    """
    if prior.dim != sensor.theta_dim:
        raise DimensionError(
            f"prior dimension {prior.dim} does not match sensor theta dimension "
            f"{sensor.theta_dim}"
        )
    x = np.asarray(x, dtype=float)
    theta0 = prior.mean
    sigma = prior.covariance
    if not np.any(sigma):
        return conditional_fim(sensor, x, theta0)

    h = hessian_step
    p = prior.dim
    # one batched stencil evaluation: center, +-h e_k, and the four corners
    # per covariance cross term
    stencil = [theta0]
    for k in range(p):
        ek = np.zeros(p)
        ek[k] = h
        stencil.append(theta0 + ek)
        stencil.append(theta0 - ek)
    cross_pairs = [
        (k, l) for k in range(p) for l in range(k + 1, p) if sigma[k, l] != 0.0
    ]
    for k, l in cross_pairs:
        ek = np.zeros(p)
        el = np.zeros(p)
        ek[k] = h
        el[l] = h
        stencil.append(theta0 + ek + el)
        stencil.append(theta0 + ek - el)
        stencil.append(theta0 - ek + el)
        stencil.append(theta0 - ek - el)
    q_all = conditional_fim(sensor, x[..., None, :], np.asarray(stencil))
    center = q_all[..., 0, :, :]
    correction = np.zeros_like(center)
    for k in range(p):
        plus_k = q_all[..., 1 + 2 * k, :, :]
        minus_k = q_all[..., 2 + 2 * k, :, :]
        correction = correction + 0.5 * sigma[k, k] * (plus_k - 2.0 * center + minus_k) / h**2
    base = 1 + 2 * p
    for idx, (k, l) in enumerate(cross_pairs):
        qpp = q_all[..., base + 4 * idx, :, :]
        qpm = q_all[..., base + 4 * idx + 1, :, :]
        qmp = q_all[..., base + 4 * idx + 2, :, :]
        qmm = q_all[..., base + 4 * idx + 3, :, :]
        cross = (qpp - qpm - qmp + qmm) / (4.0 * h**2)
        correction = correction + sigma[k, l] * cross  # k<l counted twice in the trace
    out = center + correction
    out = 0.5 * (out + np.swapaxes(out, -1, -2))

    eigvals, eigvecs = np.linalg.eigh(out)
    broken = eigvals[..., 0] < -indefinite_tol
    if np.any(broken):
        count = int(np.count_nonzero(broken))
        warnings.warn(
            f"Taylor-corrected information matrix indefinite at {count} state(s); "
            "falling back to the conditional value at the prior mean there",
            RuntimeWarning,
            stacklevel=2,
        )
    negative = eigvals[..., 0] < 0.0
    if np.any(negative):
        # repair strictly per element: results must not depend on what else
        # shares the batch (parallel field evaluation chunks arbitrarily)
        clipped = np.clip(eigvals, 0.0, None)
        rebuilt = (eigvecs * clipped[..., None, :]) @ np.swapaxes(eigvecs, -1, -2)
        rebuilt = 0.5 * (rebuilt + np.swapaxes(rebuilt, -1, -2))
        out = np.where(negative[..., None, None], rebuilt, out)
    if np.any(broken):
        out = np.where(broken[..., None, None], center, out)
    return out


def prior_fim(prior: GaussianPrior) -> np.ndarray:
    """Information carried by the prior itself: the inverse covariance."""
    chol = cholesky_spd(prior.covariance)
    inv_chol = np.linalg.inv(chol)
    out = inv_chol.T @ inv_chol
    return 0.5 * (out + out.T)


def suite_fim(sensors, x, prior: GaussianPrior) -> np.ndarray:
    """Rate-weighted information rate of a sensor suite: sum_i F_i E[Q_i(x)]."""
    if not sensors:
        raise ValueError("sensor suite is empty")
    dims = {s.theta_dim for s in sensors}
    if len(dims) != 1:
        raise DimensionError(f"sensors disagree on target dimension: {sorted(dims)}")
    total = None
    for sensor in sensors:
        term = sensor.rate * expected_fim(sensor, x, prior)
        total = term if total is None else total + term
    return total


def suite_info_rate(sensors, prior: GaussianPrior):
    """Information-rate callable x -> vec(sum_i F_i E[Q_i(x)]) for a vehicle model."""

    def rate(x):
        return vec(suite_fim(sensors, x, prior))

    return rate
