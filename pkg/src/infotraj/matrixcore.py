"""Symmetric information matrices, column-major (un)vectorization, and the
log-determinant terminal metric with its gradient and curvature contraction."""

from __future__ import annotations

import math
from abc import ABC, abstractmethod

import numpy as np


class DimensionError(ValueError):
    """A vector or matrix has a shape the operation cannot accept."""


class NotPositiveDefiniteError(ValueError):
    """A matrix required to be (symmetric) positive definite is not."""


def info_matrix(entries) -> np.ndarray:
    """Build a symmetric information matrix from array-like entries.

    Constructors symmetrize: the result is exactly 0.5 * (Z + Z.T).
    """
    z = np.array(entries, dtype=float)
    if z.ndim != 2 or z.shape[0] != z.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {z.shape}")
    return 0.5 * (z + z.T)


def vec(mat) -> np.ndarray:
    """Stack matrix columns into a vector of length p**2 (column-major).

    Accepts batched input of shape (..., p, p) and vectorizes the trailing
    matrix dimensions.
    """
    mat = np.asarray(mat, dtype=float)
    if mat.ndim < 2 or mat.shape[-1] != mat.shape[-2]:
        raise DimensionError(f"expected square matrices, got shape {mat.shape}")
    p = mat.shape[-1]
    return np.ascontiguousarray(np.swapaxes(mat, -1, -2)).reshape(*mat.shape[:-2], p * p)


def unvec(z) -> np.ndarray:
    """Inverse of :func:`vec`: reshape a length-p**2 vector to its p x p matrix."""
    z = np.asarray(z, dtype=float)
    if z.ndim < 1:
        raise DimensionError("expected at least a 1-d vector")
    n = z.shape[-1]
    p = math.isqrt(n)
    if p * p != n:
        raise DimensionError(f"vector length {n} is not a perfect square")
    return np.swapaxes(z.reshape(*z.shape[:-1], p, p), -1, -2)


def require_symmetric(mat: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(mat))))
    if np.max(np.abs(mat - np.swapaxes(mat, -1, -2))) > tol * scale:
        raise NotPositiveDefiniteError("matrix is not symmetric")
    return mat


def cholesky_spd(mat: np.ndarray) -> np.ndarray:
    """Cholesky factor of a symmetric positive definite matrix; hard error otherwise."""
    require_symmetric(np.asarray(mat, dtype=float))
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"Cholesky factorization failed: {exc}") from exc


def logdet_spd(mat) -> float:
    """log det of an SPD matrix via Cholesky: 2 * sum(log diag(L))."""
    chol = cholesky_spd(np.asarray(mat, dtype=float))
    return float(2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1))


def curvature_contraction(rate_matrix, grad) -> np.ndarray:
    """z-derivative of the gain rate <G_z(z'), vec(Q)> for the logdet metric,
    written in terms of the gradient value itself.

    With L = unvec(grad) (= -inverse of the accumulated information matrix)
    the derivative is vec(L Q L); it is symmetric PSD whenever Q is PSD.
    Supports batched inputs: rate_matrix (..., p, p), grad (..., p*p).
    """
    rate_matrix = np.asarray(rate_matrix, dtype=float)
    lmat = unvec(grad)
    if rate_matrix.shape[-2:] != lmat.shape[-2:]:
        raise DimensionError(
            f"rate matrix {rate_matrix.shape[-2:]} does not match gradient "
            f"matrix {lmat.shape[-2:]}"
        )
    return vec(lmat @ rate_matrix @ lmat)


class TerminalMetric(ABC):
    """Terminal cost on the vectorized information state.

    Provides the value G(z), its gradient G_z(z), and the curvature
    contraction used by the grid-free gradient ODE (the z-derivative of the
    gain rate <G_z, vec(Q)> expressed through the gradient value).
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise DimensionError("metric dimension must be >= 1")
        self.dim = dim

    @abstractmethod
    def value(self, z) -> float:
        ...

    @abstractmethod
    def gradient(self, z) -> np.ndarray:
        ...

    @abstractmethod
    def curvature_contraction(self, rate_matrix, grad) -> np.ndarray:
        ...

    def normalized_gain(self, z, z_ref) -> float:
        """Gain relative to a reference information state; zero at z = z_ref."""
        return self.value(z) - self.value(z_ref)

    def flow(self, value, grad, rate_matrix, h: float):
        """Advance the pointwise accumulation (value, gradient) by h at a
        fixed information rate Q.

        Generic fallback: one explicit Euler step of the coupled ODE
        d(value)/ds = <vec(Q), grad>, d(grad)/ds = curvature(Q, grad).
        Metrics with a closed-form flow should override it (exactness, and no
        step-size restriction when the accumulated information is small).
        Supports batched inputs: value (...,), grad (..., p*p), Q (..., p, p).
        """
        ell = vec(np.broadcast_to(rate_matrix, grad.shape[:-1] + rate_matrix.shape[-2:]))
        value_new = value + h * np.einsum("...m,...m->...", ell, grad)
        grad_new = grad + h * self.curvature_contraction(rate_matrix, grad)
        return value_new, grad_new


class LogDetMetric(TerminalMetric):
    """D-optimal terminal metric G(z) = -log det(unvec(z)).

    Minimizing G maximizes the log-determinant of the accumulated information
    matrix, i.e. shrinks the volume of the estimation error ellipsoid.
    """

    def value(self, z) -> float:
        zmat = unvec(z)
        self._check_dim(zmat)
        asym = np.max(np.abs(zmat - zmat.T)) if zmat.size else 0.0
        if asym <= 1e-9 * max(1.0, float(np.max(np.abs(zmat)))):
            return -logdet_spd(0.5 * (zmat + zmat.T))
        # Slightly asymmetric states arise under coordinate-wise perturbation
        # of z (finite-difference probes); fall back to a general determinant.
        sign, logabs = np.linalg.slogdet(zmat)
        if sign <= 0.0:
            raise NotPositiveDefiniteError("determinant is not positive")
        return -float(logabs)

    def gradient(self, z) -> np.ndarray:
        """G_z(z) = -vec(Z^-T), the elementwise derivative on all p**2 coordinates."""
        zmat = unvec(z)
        self._check_dim(zmat)
        try:
            inv = np.linalg.inv(zmat)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError(f"information matrix is singular: {exc}") from exc
        return -vec(inv.T)

    def curvature_contraction(self, rate_matrix, grad) -> np.ndarray:
        return curvature_contraction(rate_matrix, grad)

    def flow(self, value, grad, rate_matrix, h: float):
        """Closed-form flow: the accumulated matrix advances linearly, the
        value picks up the exact logdet increment, and the gradient is the
        exact gradient of the advanced matrix.

        Recovering the accumulated matrix from the gradient (grad encodes its
        negated inverse) keeps the step unconditionally stable and preserves
        the identity between the gradient field and the sensitivity of the
        value to the initial information state exactly.
        """
        lmat = unvec(grad)
        acc = -np.linalg.inv(lmat)  # accumulated information matrix, SPD
        acc_new = acc + h * rate_matrix
        sign_old, logdet_old = np.linalg.slogdet(acc)
        sign_new, logdet_new = np.linalg.slogdet(acc_new)
        if np.any(sign_old <= 0.0) or np.any(sign_new <= 0.0):
            raise NotPositiveDefiniteError(
                "information state lost positive definiteness"
            )
        value_new = value + (logdet_old - logdet_new)  # G(new) - G(old)
        grad_new = -vec(np.linalg.inv(acc_new))
        return value_new, grad_new

    def _check_dim(self, zmat: np.ndarray) -> None:
        if zmat.shape[-1] != self.dim:
            raise DimensionError(
                f"expected a {self.dim}x{self.dim} information state, got {zmat.shape[-1]}"
            )
