"""Faulty-antenna detection by l1-regularized least squares solved with ISTA.

The data term is ``f(z) = sum_t ||y_t - diag(z + 1) x_t||^2`` with model
vectors ``x_t = A(theta, r) diag(beta) s_t``. The update
``z <- S(z - nu * grad, nu * rho)`` uses ``grad = -sum_t conj(x_t) * (y_t -
(z + 1) * x_t)``, which is the conjugate Wirtinger derivative of ``f``; the
iteration is therefore proximal gradient descent on ``f / 2 + rho ||z||_1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, InvalidArgument
from .scene import ArrayGeometry, SnapshotBlock, steering_matrix

__all__ = [
    "IstaConfig",
    "FaultEstimate",
    "shrink",
    "model_vectors",
    "gradient_f",
    "data_misfit",
    "penalized_objective",
    "run_ista",
]


@dataclass(frozen=True)
class IstaConfig:
    step: float = 1e-4
    reg: float = 0.01
    tol: float = 1e-6
    max_iters: int = 5000
    threshold: float = 0.15
    # detection threshold is raised to noise_factor * (std of an intact entry)
    # when the data are noisier than `threshold` allows; 0 disables this
    noise_factor: float = 4.0
    # and to median + outlier_factor * (robust spread) of |z|, so that a
    # smooth mask spread by position error is not read as faults; 0 disables
    outlier_factor: float = 6.0

    def __post_init__(self):
        if self.step <= 0 or self.reg < 0 or self.tol <= 0 or self.max_iters < 1:
            raise InvalidArgument(f"invalid ISTA configuration {self}")


@dataclass
class FaultEstimate:
    mask: np.ndarray
    detected: np.ndarray  # sorted 0-based indices
    threshold: float
    iterations_used: int
    objective: float = float("nan")
    noise_estimate: float = float("nan")

    @property
    def hi_vector(self) -> np.ndarray:
        return self.mask + 1.0


def shrink(z, gamma: float):
    """Entrywise soft threshold ``z/|z| * max(|z| - gamma, 0)``."""
    if gamma < 0:
        raise InvalidArgument("gamma must be non-negative")
    z = np.asarray(z)
    mag = np.abs(z)
    scale = np.maximum(mag - gamma, 0.0) / np.where(mag > 0, mag, 1.0)
    return z * scale


def model_vectors(geometry: ArrayGeometry, thetas, ranges, gains, probes) -> np.ndarray:
    """Columns ``x_t = A(theta, r) diag(beta) s_t`` as an N x T0 matrix."""
    A = steering_matrix(geometry, thetas, ranges)
    gains = np.asarray(gains, dtype=complex)
    return A @ (gains[:, None] * np.asarray(probes))


def _check(block: SnapshotBlock, X: np.ndarray):
    if X.shape != block.received.shape:
        raise InvalidArgument(f"model vectors {X.shape} do not match data {block.received.shape}")


def gradient_f(z, block: SnapshotBlock, X: np.ndarray) -> np.ndarray:
    _check(block, X)
    z = np.asarray(z, dtype=complex)
    if z.shape != (block.n_antennas,):
        raise InvalidArgument("mask length must equal the antenna count")
    resid = block.received - (z + 1.0)[:, None] * X
    return -np.sum(np.conj(X) * resid, axis=1)


def data_misfit(z, block: SnapshotBlock, X: np.ndarray) -> float:
    """``f(z)`` evaluated directly from the snapshots."""
    _check(block, X)
    resid = block.received - (np.asarray(z) + 1.0)[:, None] * X
    return float(np.sum(np.abs(resid) ** 2))


def penalized_objective(z, block: SnapshotBlock, X: np.ndarray, reg: float) -> float:
    """``f(z) / 2 + rho ||z||_1``, the function the ISTA update descends."""
    return 0.5 * data_misfit(z, block, X) + reg * float(np.sum(np.abs(z)))


def run_ista(block: SnapshotBlock, X: np.ndarray, cfg: IstaConfig = IstaConfig(), z0=None,
             noise_variance: float | None = None) -> FaultEstimate:
    """Proximal gradient iterations from ``z0`` (zeros by default).

    ``noise_variance`` feeds the adaptive detection threshold; when omitted
    it is estimated from the per-antenna least-squares residuals, which also
    absorb any model error.
    """
    _check(block, X)
    Y = block.received
    t0 = block.n_snapshots
    # f is separable per antenna: f(z) = sum_n E_n - 2 Re(conj(z_n) b_n) + L_n |z_n|^2
    L = np.sum(np.abs(X) ** 2, axis=1)
    R0 = Y - X
    b = np.sum(np.conj(X) * R0, axis=1)
    E = np.sum(np.abs(R0) ** 2, axis=1)

    def objective(z):
        f = np.sum(E - 2 * np.real(np.conj(z) * b) + L * np.abs(z) ** 2)
        return 0.5 * f + cfg.reg * np.sum(np.abs(z))

    if z0 is None:
        z = np.zeros(Y.shape[0], dtype=complex)
    else:
        z = np.array(z0, dtype=complex)
        if z.shape != (Y.shape[0],):
            raise InvalidArgument("warm start must have one entry per antenna")
    gamma = cfg.step * cfg.reg
    prev = objective(z)
    rising = 0
    it = 0
    for it in range(1, cfg.max_iters + 1):
        z_new = shrink(z - cfg.step * (L * z - b), gamma)
        delta = np.max(np.abs(z_new - z))
        z = z_new
        cur = objective(z)
        rising = rising + 1 if cur > prev else 0
        if rising >= 10:
            raise DivergenceError("ISTA objective increased for 10 consecutive iterations", iterate=z)
        prev = cur
        if delta <= cfg.tol:
            break

    # per-antenna LS residual power, one complex DOF fitted per antenna
    safe_L = np.where(L > 0, L, 1.0)
    resid = np.maximum(E - np.abs(b) ** 2 / safe_L, 0.0)
    if noise_variance is not None:
        sigma2_hat = float(noise_variance)
    else:
        sigma2_hat = float(np.median(resid) / max(t0 - 1, 1)) if t0 > 1 else float("nan")
    tau = cfg.threshold
    if cfg.noise_factor > 0 and np.isfinite(sigma2_hat) and np.any(L > 0):
        tau = max(tau, cfg.noise_factor * np.sqrt(sigma2_hat / np.median(L[L > 0])))
    if cfg.outlier_factor > 0:
        mag = np.abs(z)
        med = np.median(mag)
        tau = max(tau, med + cfg.outlier_factor * 1.4826 * np.median(np.abs(mag - med)))
    detected = np.flatnonzero(np.abs(z) > tau)
    return FaultEstimate(z, detected, float(tau), it, float(prev), sigma2_hat)
