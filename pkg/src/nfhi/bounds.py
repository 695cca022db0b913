"""Standard and misspecified Cramer-Rao bounds for the near-field model.

Parameters are stacked as ``eta = [Re beta; Im beta; theta; r]`` (length 4K).
The observation is the stacked snapshot vector ``y = [y_1; ...; y_T0]`` with
circular complex Gaussian noise of variance ``sigma2`` per entry, so the
log-likelihood is ``-||y - mu||^2 / sigma2`` up to a constant. All Fisher
and sandwich terms below follow from that density:

    C_ij  = (2/sigma2) Re{ d2mu_ij^H eps - dmu_i^H dmu_j }
    Jt_ij = (4/sigma2^2) Re{dmu_i^H eps} Re{dmu_j^H eps} + (2/sigma2) Re{dmu_i^H dmu_j}
    J     = (2/sigma2) Re{ dmu^H dmu }     (true model, HI known)

with ``eps = mu - mu_assumed(eta_dot)``. The steering vectors are unit
modulus; no 1/sqrt(N) normalisation is applied anywhere.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .errors import ConvergenceError, InvalidArgument
from .scene import ArrayGeometry, steering_matrix

__all__ = [
    "pack",
    "unpack",
    "steering_derivatives",
    "model_mean",
    "mean_jacobian",
    "mean_hessian_terms",
    "PseudoTrueFit",
    "pseudo_true",
    "mcrb_matrices",
    "sandwich",
    "fim",
    "crb",
    "lb",
    "root_metrics",
    "BoundsReport",
    "compute_bounds",
]


def pack(gains, thetas, ranges) -> np.ndarray:
    gains = np.asarray(gains, dtype=complex)
    return np.concatenate([gains.real, gains.imag, np.asarray(thetas, float), np.asarray(ranges, float)])


def unpack(eta):
    eta = np.asarray(eta, dtype=float)
    if eta.ndim != 1 or eta.size % 4:
        raise InvalidArgument("parameter vector length must be a multiple of 4")
    K = eta.size // 4
    return eta[:K] + 1j * eta[K:2 * K], eta[2 * K:3 * K], eta[3 * K:]


def _phase_derivatives(geometry: ArrayGeometry, theta, r):
    """First and second derivatives of the Fresnel phase, each N x K."""
    k = geometry.wavenumber
    l = geometry.positions[:, None]
    th = np.atleast_1d(np.asarray(theta, float))[None, :]
    r = np.atleast_1d(np.asarray(r, float))[None, :]
    s, c = np.sin(th), np.cos(th)
    p_t = k * (l * c + l**2 * s * c / r)
    p_r = k * l**2 * c**2 / (2 * r**2)
    p_tt = k * (-l * s + l**2 * (c**2 - s**2) / r)
    p_tr = -k * l**2 * s * c / r**2
    p_rr = -k * l**2 * c**2 / r**3
    return p_t, p_r, p_tt, p_tr, p_rr


def steering_derivatives(geometry: ArrayGeometry, theta, r) -> dict[str, np.ndarray]:
    """Closed-form first and second partials of the Fresnel steering vector.

    Keys ``"t"``, ``"r"``, ``"tt"``, ``"tr"``, ``"rr"``. Scalar inputs give
    length-N vectors, array inputs N x K matrices.
    """
    scalar = np.ndim(theta) == 0 and np.ndim(r) == 0
    if np.any(np.asarray(r) <= 0):
        raise InvalidArgument("range must be positive")
    a = steering_matrix(geometry, theta, r)
    p_t, p_r, p_tt, p_tr, p_rr = _phase_derivatives(geometry, theta, r)
    out = {
        "t": 1j * p_t * a,
        "r": 1j * p_r * a,
        "tt": (1j * p_tt - p_t**2) * a,
        "tr": (1j * p_tr - p_t * p_r) * a,
        "rr": (1j * p_rr - p_r**2) * a,
    }
    if scalar:
        out = {key: v[:, 0] for key, v in out.items()}
    return out


def _hi(geometry, c):
    if c is None:
        return np.ones(geometry.n_antennas, dtype=complex)
    c = np.asarray(c, dtype=complex)
    if c.shape != (geometry.n_antennas,):
        raise InvalidArgument("HI vector length must equal the antenna count")
    return c


def model_mean(geometry: ArrayGeometry, eta, probes, c=None) -> np.ndarray:
    """Stacked noise-free mean ``[mu_1; ...; mu_T0]``; ``c=None`` is the fault-free model."""
    beta, th, r = unpack(eta)
    probes = np.atleast_2d(np.asarray(probes, dtype=complex))
    A = _hi(geometry, c)[:, None] * steering_matrix(geometry, th, r)
    return (A @ (beta[:, None] * probes)).ravel(order="F")


def mean_jacobian(geometry: ArrayGeometry, eta, probes, c=None) -> np.ndarray:
    """``d mu / d eta`` as an (N T0) x 4K complex matrix."""
    beta, th, r = unpack(eta)
    probes = np.atleast_2d(np.asarray(probes, dtype=complex))
    K = beta.size
    c = _hi(geometry, c)
    A = steering_matrix(geometry, th, r)
    d = steering_derivatives(geometry, th, r)
    cols = []
    blocks = [c[:, None] * A, 1j * c[:, None] * A,
              c[:, None] * d["t"] * beta[None, :], c[:, None] * d["r"] * beta[None, :]]
    for B in blocks:
        for k in range(K):
            cols.append(np.outer(B[:, k], probes[k]).ravel(order="F"))
    return np.stack(cols, axis=1)


def mean_hessian_terms(geometry: ArrayGeometry, eta, probes, eps, c=None) -> np.ndarray:
    """Matrix ``H_ij = (d2 mu / d eta_i d eta_j)^H eps`` (complex, 4K x 4K).

    Only same-target pairs are non-zero and beta enters linearly, so the
    Re/Im-beta diagonal blocks vanish.
    """
    beta, th, r = unpack(eta)
    probes = np.atleast_2d(np.asarray(probes, dtype=complex))
    K = beta.size
    c = _hi(geometry, c)
    n = geometry.n_antennas
    E = np.asarray(eps).reshape(n, -1, order="F")  # N x T0
    d = steering_derivatives(geometry, th, r)
    # w_k = sum_t conj(s_kt) eps_t, so v^H eps summed over t is (c*v)^H w_k
    W = E @ probes.conj().T  # N x K
    H = np.zeros((4 * K, 4 * K), dtype=complex)

    def ip(vec, k):
        return np.vdot(c * vec, W[:, k])

    for k in range(K):
        it, ir = 2 * K + k, 3 * K + k
        for ib, scale in ((k, 1.0), (K + k, 1j)):
            # d/dbeta part of d mu is scale * c * a * s; its angle/range partials
            h_t = ip(scale * d["t"][:, k], k)
            h_r = ip(scale * d["r"][:, k], k)
            H[ib, it] = H[it, ib] = h_t
            H[ib, ir] = H[ir, ib] = h_r
        H[it, it] = ip(beta[k] * d["tt"][:, k], k)
        H[ir, ir] = ip(beta[k] * d["rr"][:, k], k)
        H[it, ir] = H[ir, it] = ip(beta[k] * d["tr"][:, k], k)
    return H


@dataclass
class PseudoTrueFit:
    eta: np.ndarray
    objective: float
    start_objective: float
    restarts: int


def pseudo_true(geometry: ArrayGeometry, mu, eta_start, probes, restarts: int = 5,
                angle_cell: float = 1e-3, range_cell: float = 1.5e-3, seed=0,
                ftol: float = 1e-10) -> PseudoTrueFit:
    """Minimise ``||mu - mu_assumed(eta)||^2`` from ``eta_start`` plus perturbed restarts.

    ``range_cell`` is relative to each range. Restarts are drawn within two
    cells of the start point. Raises ``ConvergenceError`` carrying the best
    iterate if no run reports success.
    """
    mu = np.asarray(mu, dtype=complex)
    eta0 = np.asarray(eta_start, dtype=float)
    K = eta0.size // 4

    def resid(eta):
        e = mu - model_mean(geometry, eta, probes)
        return np.concatenate([e.real, e.imag])

    def jac(eta):
        D = mean_jacobian(geometry, eta, probes)
        return -np.concatenate([D.real, D.imag])

    f0 = float(np.sum(resid(eta0) ** 2))
    best_eta, best_f, ok_any = eta0.copy(), f0, False
    rng = np.random.default_rng(seed)
    starts = [eta0]
    for _ in range(restarts):
        e = eta0.copy()
        e[2 * K:3 * K] += rng.uniform(-2, 2, K) * angle_cell
        e[3 * K:] *= 1 + rng.uniform(-2, 2, K) * range_cell
        starts.append(e)
    for e in starts:
        if f0 == 0.0 and e is eta0:
            ok_any = True
            break
        sol = least_squares(resid, e, jac=jac, method="lm", ftol=ftol, xtol=1e-14, gtol=1e-14,
                            max_nfev=2000)
        f = float(np.sum(sol.fun**2))
        ok_any |= sol.status > 0
        if f < best_f:
            best_eta, best_f = sol.x, f
    if not ok_any:
        raise ConvergenceError("pseudo-true fit did not converge", best=best_eta, objective=best_f)
    return PseudoTrueFit(best_eta, best_f, f0, len(starts) - 1)


def mcrb_matrices(geometry: ArrayGeometry, eta_dot, mu, probes, sigma2: float):
    """Return ``(C, J_tilde)`` at the pseudo-true point."""
    if sigma2 <= 0:
        raise InvalidArgument("sigma2 must be positive")
    eps = np.asarray(mu) - model_mean(geometry, eta_dot, probes)
    D = mean_jacobian(geometry, eta_dot, probes)
    H = mean_hessian_terms(geometry, eta_dot, probes, eps)
    G = np.real(D.conj().T @ D)
    C = (2 / sigma2) * (np.real(H) - G)
    g = np.real(D.conj().T @ eps)
    Jt = (4 / sigma2**2) * np.outer(g, g) + (2 / sigma2) * G
    return 0.5 * (C + C.T), 0.5 * (Jt + Jt.T)


def _inverse(M, what):
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > 1e14:
        warnings.warn(f"{what} is near singular (cond={cond:.3g}); using the pseudo-inverse", stacklevel=3)
        return np.linalg.pinv(M, hermitian=True)
    return np.linalg.inv(M)


def sandwich(C, Jt) -> np.ndarray:
    """``MCRB = C^-1 J_tilde C^-1``."""
    Ci = _inverse(C, "C")
    M = Ci @ Jt @ Ci
    return 0.5 * (M + M.T)


def fim(geometry: ArrayGeometry, eta, probes, sigma2: float, c=None) -> np.ndarray:
    if sigma2 <= 0:
        raise InvalidArgument("sigma2 must be positive")
    D = mean_jacobian(geometry, eta, probes, c)
    J = (2 / sigma2) * np.real(D.conj().T @ D)
    return 0.5 * (J + J.T)


def crb(geometry: ArrayGeometry, eta, probes, sigma2: float, c=None) -> np.ndarray:
    """Inverse FIM of the correctly specified (HI known) model."""
    Ji = _inverse(fim(geometry, eta, probes, sigma2, c), "FIM")
    return 0.5 * (Ji + Ji.T)


def lb(eta_true, eta_dot, mcrb) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(LB, Bias)`` with ``Bias = (eta_dot - eta)(eta_dot - eta)^T``."""
    d = np.asarray(eta_dot, float) - np.asarray(eta_true, float)
    bias = np.outer(d, d)
    return bias + mcrb, bias


def root_metrics(M) -> tuple[float, float]:
    """``(angle, range)`` roots of the summed diagonal over the theta and r blocks."""
    K = M.shape[0] // 4
    diag = np.diag(M)
    return (float(np.sqrt(max(np.sum(diag[2 * K:3 * K]), 0.0))),
            float(np.sqrt(max(np.sum(diag[3 * K:]), 0.0))))


@dataclass
class BoundsReport:
    crb: np.ndarray
    mcrb: np.ndarray
    bias: np.ndarray
    lb: np.ndarray
    eta_true: np.ndarray
    pseudo_true: np.ndarray
    fit_objective: float = 0.0

    def root(self, which: str) -> tuple[float, float]:
        return root_metrics(getattr(self, which))

    def as_row(self) -> dict[str, float]:
        row = {}
        for name in ("crb", "mcrb", "lb", "bias"):
            a, r = self.root(name)
            row[f"r_{name}_angle"] = a
            row[f"r_{name}_range"] = r
        return row


def compute_bounds(geometry: ArrayGeometry, gains, thetas, ranges, probes, c, sigma2: float,
                   restarts: int = 5, seed=0) -> BoundsReport:
    """All bounds for one realisation of probes and HI vector."""
    eta = pack(gains, thetas, ranges)
    mu = model_mean(geometry, eta, probes, c)
    fit = pseudo_true(geometry, mu, eta, probes, restarts=restarts, seed=seed)
    C, Jt = mcrb_matrices(geometry, fit.eta, mu, probes, sigma2)
    m = sandwich(C, Jt)
    low, bias = lb(eta, fit.eta, m)
    return BoundsReport(crb(geometry, eta, probes, sigma2, c), m, bias, low, eta, fit.eta, fit.objective)
