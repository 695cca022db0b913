"""Block-coordinate descent baseline.

Alternates the fault mask (ISTA), the gains (linear LS), and per-target
angle and range line searches on the projection residual
``||P_perp(Phi(theta, r)) y||^2``. The tracked objective is the one the
ISTA update descends, ``f / 2 + rho ||z||_1``; every block step is accepted
only if it does not increase it, so the trace is non-increasing.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .coarse import estimate_gains, far_field_steering
from .errors import DivergenceError, NumericError
from .scene import ArrayGeometry, SnapshotBlock, fresnel_rayleigh, steering_matrix
from .sparse_fault import IstaConfig, model_vectors, penalized_objective, run_ista

__all__ = ["BcdConfig", "BcdState", "projection_residual", "line_search_residuals", "initialize", "bcd_run"]


@dataclass(frozen=True)
class BcdConfig:
    ista: IstaConfig = IstaConfig()
    angle_points: int = 2000
    range_points: int = 400
    tol: float = 1e-6
    max_sweeps: int = 50
    refine: bool = True


@dataclass
class BcdState:
    mask: np.ndarray
    gains: np.ndarray
    thetas: np.ndarray
    ranges: np.ndarray
    iterations: int = 0
    objective_trace: list[float] = field(default_factory=list)

    @property
    def hi_vector(self) -> np.ndarray:
        return self.mask + 1.0


def _normal_terms(block: SnapshotBlock, c_hat):
    """Pieces of ``Phi^H y`` and ``Phi^H Phi`` that do not depend on positions."""
    c = np.asarray(c_hat, dtype=complex)
    S = np.asarray(block.probes)
    P = np.conj(c)[:, None] * (block.received @ S.conj().T)  # N x K
    Q = np.conj(S) @ S.T  # K x K, Q[k, l] = sum_t conj(s_kt) s_lt
    w = np.abs(c) ** 2
    return P, Q, w


def projection_residual(geometry: ArrayGeometry, thetas, ranges, block: SnapshotBlock, c_hat) -> float:
    """``||y||^2 - b^H G^{-1} b`` with ``b = Phi^H y`` and ``G = Phi^H Phi``."""
    A = steering_matrix(geometry, thetas, ranges)
    P, Q, w = _normal_terms(block, c_hat)
    b = np.einsum("nk,nk->k", A.conj(), P)
    G = Q * (A.conj().T @ (w[:, None] * A))
    if not np.isfinite(np.linalg.cond(G)) or np.linalg.cond(G) > 1e12:
        raise NumericError("design matrix is rank deficient")
    x = np.linalg.solve(G, b)
    y2 = float(np.sum(np.abs(block.received) ** 2))
    return max(y2 - float(np.real(np.vdot(b, x))), 0.0)


def line_search_residuals(geometry: ArrayGeometry, block: SnapshotBlock, c_hat, thetas, ranges, k: int,
                          cand_thetas, cand_ranges) -> np.ndarray:
    """Projection residual with target ``k`` moved to each candidate, others held.

    Candidates are paired elementwise (broadcast ``cand_thetas`` against
    ``cand_ranges``). Rank-deficient candidates get ``+inf``.
    """
    thetas = np.asarray(thetas, float)
    ranges = np.asarray(ranges, float)
    ct, cr = np.broadcast_arrays(np.asarray(cand_thetas, float), np.asarray(cand_ranges, float))
    A = steering_matrix(geometry, thetas, ranges)
    P, Q, w = _normal_terms(block, c_hat)
    K = A.shape[1]
    Ag = steering_matrix(geometry, ct, cr)  # N x G
    G_n = len(ct)
    b = np.broadcast_to(np.einsum("nk,nk->k", A.conj(), P), (G_n, K)).copy()
    b[:, k] = Ag.conj().T @ P[:, k]
    base = Q * (A.conj().T @ (w[:, None] * A))
    Gm = np.broadcast_to(base, (G_n, K, K)).copy()
    cross = Ag.conj().T @ (w[:, None] * A)  # G x K, a_g^H D a_l
    Gm[:, k, :] = Q[k][None, :] * cross
    Gm[:, :, k] = np.conj(Gm[:, k, :])
    Gm[:, k, k] = Q[k, k].real * np.real(np.sum(w[:, None] * np.abs(Ag) ** 2, axis=0))
    y2 = float(np.sum(np.abs(block.received) ** 2))
    out = np.full(G_n, np.inf)
    cond = np.linalg.cond(Gm)
    ok = np.isfinite(cond) & (cond < 1e12)
    if np.any(ok):
        x = np.linalg.solve(Gm[ok], b[ok][..., None])[..., 0]
        out[ok] = np.maximum(y2 - np.real(np.sum(np.conj(b[ok]) * x, axis=1)), 0.0)
    return out


def _line_search(geometry, block, c_hat, thetas, ranges, k, grid, axis, refine):
    """Best point of target ``k`` along one axis; returns (value, residual)."""
    if axis == "theta":
        res = line_search_residuals(geometry, block, c_hat, thetas, ranges, k, grid, ranges[k])
    else:
        res = line_search_residuals(geometry, block, c_hat, thetas, ranges, k, thetas[k], grid)
    i = int(np.argmin(res))
    best, val = float(grid[i]), float(res[i])
    if refine and 0 < i < len(grid) - 1 and np.isfinite(val):
        def fun(x):
            if axis == "theta":
                return line_search_residuals(geometry, block, c_hat, thetas, ranges, k, [x], ranges[k])[0]
            return line_search_residuals(geometry, block, c_hat, thetas, ranges, k, thetas[k], [x])[0]
        opt = minimize_scalar(fun, bounds=(grid[i - 1], grid[i + 1]), method="bounded",
                              options={"xatol": 1e-10})
        if opt.fun < val:
            best, val = float(opt.x), float(opt.fun)
    return best, val


def initialize(block: SnapshotBlock, geometry: ArrayGeometry, angle_points: int = 2000):
    """Per-probe far-field beam scan for angles, mid-region range, zero mask.

    Correlating the snapshots with probe ``k`` isolates target ``k`` up to
    cross-correlation leakage, so the angle scan needs no association step.
    """
    K = block.n_targets
    grid = np.linspace(-np.pi / 2, np.pi / 2, angle_points)
    B = far_field_steering(geometry.positions, geometry.wavelength, grid)  # N x G
    corr = block.received @ np.asarray(block.probes).conj().T  # N x K
    power = np.abs(B.conj().T @ corr) ** 2  # G x K
    thetas = grid[np.argmax(power, axis=0)]
    z_fres, z_rayl = fresnel_rayleigh(geometry)
    ranges = np.full(K, np.sqrt(z_fres * z_rayl))
    return thetas, ranges


def bcd_run(block: SnapshotBlock, geometry: ArrayGeometry, cfg: BcdConfig = BcdConfig()) -> BcdState:
    """Alternate mask, gains, angles and ranges until the objective settles.

    Never raises for lack of convergence; the last state is returned.
    """
    n = geometry.n_antennas
    K = block.n_targets
    z_fres, z_rayl = fresnel_rayleigh(geometry)
    angle_grid = np.linspace(-np.pi / 2, np.pi / 2, cfg.angle_points)
    range_grid = np.geomspace(z_fres, z_rayl, cfg.range_points)

    thetas, ranges = initialize(block, geometry, cfg.angle_points)
    z = np.zeros(n, dtype=complex)
    beta = estimate_gains(block, geometry, z + 1, thetas, ranges)

    def objective(z, beta, thetas, ranges):
        X = model_vectors(geometry, thetas, ranges, beta, block.probes)
        return penalized_objective(z, block, X, cfg.ista.reg)

    state = BcdState(z, beta, thetas.copy(), ranges.copy())
    prev = objective(z, beta, thetas, ranges)
    state.objective_trace.append(prev)
    for sweep in range(1, cfg.max_sweeps + 1):
        X = model_vectors(geometry, thetas, ranges, beta, block.probes)
        try:
            z_new = run_ista(block, X, cfg.ista, z0=z).mask
        except DivergenceError:
            z_new = z
        if objective(z_new, beta, thetas, ranges) <= objective(z, beta, thetas, ranges):
            z = z_new
        c_hat = z + 1
        try:
            beta_new = estimate_gains(block, geometry, c_hat, thetas, ranges)
            if objective(z, beta_new, thetas, ranges) <= objective(z, beta, thetas, ranges):
                beta = beta_new
        except NumericError:
            pass
        try:
            cur = projection_residual(geometry, thetas, ranges, block, c_hat)
        except NumericError:
            cur = np.inf
        for k in range(K):
            th, val = _line_search(geometry, block, c_hat, thetas, ranges, k, angle_grid, "theta", cfg.refine)
            if val < cur:
                thetas[k], cur = th, val
        for k in range(K):
            rk, val = _line_search(geometry, block, c_hat, thetas, ranges, k, range_grid, "range", cfg.refine)
            if val < cur:
                ranges[k], cur = rk, val
        # gains that realise the projection residual at the new positions
        try:
            beta_new = estimate_gains(block, geometry, c_hat, thetas, ranges)
            if objective(z, beta_new, thetas, ranges) <= objective(z, beta, thetas, ranges):
                beta = beta_new
        except NumericError:
            pass
        obj = objective(z, beta, thetas, ranges)
        state = BcdState(z.copy(), beta.copy(), thetas.copy(), ranges.copy(), sweep,
                         state.objective_trace + [obj])
        if abs(prev - obj) <= cfg.tol * max(abs(prev), np.finfo(float).tiny):
            break
        prev = obj
    return state
