"""Fine localization on the calibrated full array.

Angles come from the anti-diagonal of the calibrated covariance, where the
range-dependent phase cancels, smoothed over overlapping windows and
searched with MUSIC near the coarse angles. Ranges then come from a
near-field MUSIC line search on the full covariance at each fine angle.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .coarse import _music, _refiner, subspace_split
from .errors import InvalidArgument
from .scene import ArrayGeometry, fresnel_rayleigh, steering_matrix

__all__ = [
    "FineConfig",
    "DecoupledSpectra",
    "calibrate_signals",
    "sample_covariance",
    "antidiagonal_vector",
    "smoothed_covariance",
    "virtual_steering",
    "fine_angles",
    "range_spectrum",
    "fine_ranges",
    "fine_localize",
]


@dataclass(frozen=True)
class FineConfig:
    smoothing_M: int | None = None  # default floor(N / 2)
    angle_window: float = 0.05
    angle_step: float = 1e-4
    range_window: float = 0.3
    range_points: int = 400
    refine: bool = True


@dataclass
class DecoupledSpectra:
    smoothing_M: int
    angle_grids: list[np.ndarray]
    angle_spectra: list[np.ndarray]
    range_grids: list[np.ndarray]
    range_spectra: list[np.ndarray]
    fine_estimates: list[tuple[float, float]] = field(default_factory=list)

    @property
    def thetas(self) -> np.ndarray:
        return np.array([e[0] for e in self.fine_estimates])

    @property
    def ranges(self) -> np.ndarray:
        return np.array([e[1] for e in self.fine_estimates])


def calibrate_signals(Y: np.ndarray, c_hat) -> np.ndarray:
    """``conj(c_hat) * y_t`` for every snapshot column."""
    return np.conj(np.asarray(c_hat))[:, None] * Y


def sample_covariance(Y: np.ndarray) -> np.ndarray:
    return Y @ Y.conj().T / Y.shape[1]


def antidiagonal_vector(R: np.ndarray) -> np.ndarray:
    """Entries ``R[n, N+1-n]`` (1-based); N must be even so none is diagonal."""
    n = R.shape[0]
    if n % 2:
        raise InvalidArgument("anti-diagonal decoupling needs an even antenna count")
    return R[np.arange(n), n - 1 - np.arange(n)]


def smoothed_covariance(r: np.ndarray, M: int, K: int = 1) -> np.ndarray:
    """Average outer product of the M overlapping length-(N-M+1) windows of ``r``."""
    n = len(r)
    if not (K <= M <= n - K and M >= 1):
        raise InvalidArgument(f"smoothing count M={M} outside [{K}, {n - K}]")
    L = n - M + 1
    W = np.stack([r[m:m + L] for m in range(M)], axis=1)  # L x M
    return W @ W.conj().T / M


def virtual_steering(length: int, geometry: ArrayGeometry, thetas) -> np.ndarray:
    """Steering of the anti-diagonal virtual array, effective spacing 2d."""
    thetas = np.atleast_1d(thetas)
    n = np.arange(length)[:, None]
    return np.exp(1j * geometry.wavenumber * 2 * n * geometry.spacing * np.sin(thetas)[None, :])


def _window_search(grid, spec, fun, refine):
    v = spec
    if len(v) < 3:
        return None
    interior = np.flatnonzero((v[1:-1] > v[:-2]) & (v[1:-1] >= v[2:])) + 1
    if interior.size == 0:
        return None
    i = interior[np.argmax(v[interior])]
    if refine:
        return _refiner(fun)(grid[i - 1], grid[i + 1])
    return float(grid[i])


def fine_angles(R_r: np.ndarray, coarse_thetas, K: int, geometry: ArrayGeometry,
                window: float = 0.05, step: float = 1e-4, refine: bool = True):
    """Windowed MUSIC on the smoothed virtual-array covariance.

    Returns ``(angles, grids, spectra)``. A window holding no local maximum
    falls back to the coarse angle with a warning.
    """
    _, UN, _ = subspace_split(R_r, K)
    L = R_r.shape[0]
    out, grids, specs = [], [], []
    for th0 in np.atleast_1d(coarse_thetas):
        lo, hi = max(th0 - window, -np.pi / 2), min(th0 + window, np.pi / 2)
        grid = np.arange(lo, hi + step / 2, step)
        spec = _music(UN, virtual_steering(L, geometry, grid))
        fun = lambda th: _music(UN, virtual_steering(L, geometry, [th]))[0]
        th = _window_search(grid, spec, fun, refine)
        if th is None:
            warnings.warn(f"no angle peak within +/-{window} rad of {th0:.4f}; keeping coarse angle", stacklevel=2)
            th = float(th0)
        out.append(th)
        grids.append(grid)
        specs.append(spec)
    return np.array(out), grids, specs


def range_spectrum(noise_basis: np.ndarray, geometry: ArrayGeometry, theta: float, grid) -> np.ndarray:
    return _music(noise_basis, steering_matrix(geometry, theta, np.asarray(grid, float)))


def fine_ranges(R: np.ndarray, thetas, coarse_ranges, K: int, geometry: ArrayGeometry,
                window: float = 0.3, points: int = 400, refine: bool = True):
    """Near-field MUSIC range search at each fine angle, within ``r_hat * (1 +/- window)``."""
    _, UN, _ = subspace_split(R, K)
    z_fres, z_rayl = fresnel_rayleigh(geometry)
    out, grids, specs = [], [], []
    for th, r0 in zip(np.atleast_1d(thetas), np.atleast_1d(coarse_ranges)):
        lo, hi = max(r0 * (1 - window), z_fres), min(r0 * (1 + window), z_rayl)
        if not lo < hi:
            raise InvalidArgument(f"range window around {r0:.3f} m is empty after clipping")
        grid = np.geomspace(lo, hi, points)
        spec = range_spectrum(UN, geometry, th, grid)
        fun = lambda r, th=th: range_spectrum(UN, geometry, th, [r])[0]
        r = _window_search(grid, spec, fun, refine)
        if r is None:
            r = float(grid[np.argmax(spec)])
        out.append(r)
        grids.append(grid)
        specs.append(spec)
    return np.array(out), grids, specs


def fine_localize(Y: np.ndarray, geometry: ArrayGeometry, c_hat, coarse_thetas, coarse_ranges,
                  cfg: FineConfig = FineConfig()) -> DecoupledSpectra:
    """Calibrate, decouple, and run the angle then range searches."""
    K = len(np.atleast_1d(coarse_thetas))
    n = geometry.n_antennas
    M = cfg.smoothing_M if cfg.smoothing_M is not None else n // 2
    if n - M + 1 <= K:
        raise InvalidArgument("sub-vector length must exceed the number of targets")
    R = sample_covariance(calibrate_signals(Y, c_hat))
    R_r = smoothed_covariance(antidiagonal_vector(R), M, K)
    thetas, agrids, aspecs = fine_angles(R_r, coarse_thetas, K, geometry, cfg.angle_window,
                                         cfg.angle_step, cfg.refine)
    ranges, rgrids, rspecs = fine_ranges(R, thetas, coarse_ranges, K, geometry, cfg.range_window,
                                         cfg.range_points, cfg.refine)
    return DecoupledSpectra(M, agrids, aspecs, rgrids, rspecs, list(zip(thetas.tolist(), ranges.tolist())))
