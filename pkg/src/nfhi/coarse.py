"""Coarse localization from fault-free far-field subarrays.

The array is cut at detected faulty antennas and into chunks short enough
that every target lies in each chunk's far field. Per-chunk MUSIC angles are
fused by least-squares triangulation, then gains are fitted by linear LS.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment, minimize_scalar

from .errors import DegenerateGeometry, GridError, InsufficientBaseline, InvalidArgument, NumericError
from .scene import ArrayGeometry, SnapshotBlock, steering_matrix

__all__ = [
    "Subarray",
    "SubarrayPlan",
    "CoarsePosition",
    "CoarseResult",
    "max_subarray_length",
    "partition",
    "subarray_covariance",
    "subspace_split",
    "estimate_num_targets",
    "far_field_steering",
    "angle_spectrum",
    "pick_peaks",
    "triangulate",
    "stacked_design",
    "estimate_gains",
    "assign_probes",
    "coarse_localize",
]


@dataclass(frozen=True)
class Subarray:
    start: int  # 0-based
    length: int
    center: tuple[float, float]

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.start, self.start + self.length)


@dataclass
class SubarrayPlan:
    subarrays: list[Subarray]
    max_len: int


@dataclass(frozen=True)
class CoarsePosition:
    cartesian: tuple[float, float]
    theta: float
    range: float

    @classmethod
    def from_cartesian(cls, xi1: float, xi2: float) -> "CoarsePosition":
        r = float(np.hypot(xi1, xi2))
        return cls((float(xi1), float(xi2)), float(np.arcsin(np.clip(xi2 / r, -1, 1))), r)

    @classmethod
    def from_polar(cls, theta: float, r: float) -> "CoarsePosition":
        return cls((r * np.cos(theta), r * np.sin(theta)), float(theta), float(r))


@dataclass
class CoarseResult:
    positions: list[CoarsePosition]
    gains: np.ndarray
    plan: SubarrayPlan
    bearings: np.ndarray  # Q x K local angles, columns in probe order
    eigenvalues: list[np.ndarray] = field(default_factory=list)

    @property
    def thetas(self) -> np.ndarray:
        return np.array([p.theta for p in self.positions])

    @property
    def ranges(self) -> np.ndarray:
        return np.array([p.range for p in self.positions])

    def noise_floor(self) -> float:
        """Median over subarrays of the mean noise-subspace eigenvalue.

        A phase fault inside a subarray keeps its signal subspace rank K,
        so this estimate is insensitive to faults and position errors.
        """
        K = self.bearings.shape[1]
        vals = [np.mean(e[K:]) for e in self.eigenvalues if len(e) > K]
        return float(np.median(vals)) if vals else float("nan")


def max_subarray_length(n: int) -> int:
    """Largest subarray whose Rayleigh distance stays below the array's Fresnel distance."""
    return int(np.floor(0.6 * n**0.75))


def partition(geometry: ArrayGeometry, detected, K: int, max_len: int | None = None) -> SubarrayPlan:
    """Split the array at faulty antennas, then chop each run greedily.

    Chunks of length ``<= K`` are dropped: MUSIC needs ``N_q > K`` to leave
    a non-empty noise subspace.
    """
    if K < 1:
        raise InvalidArgument("K must be >= 1")
    n = geometry.n_antennas
    n_sub = max_len if max_len is not None else max_subarray_length(n)
    bad = np.zeros(n, dtype=bool)
    bad[np.asarray(list(detected), dtype=int)] = True
    pos = geometry.positions
    subs = []
    i = 0
    while i < n:
        if bad[i]:
            i += 1
            continue
        j = i
        while j < n and not bad[j]:
            j += 1
        for s in range(i, j, n_sub):
            length = min(n_sub, j - s)
            if length > K:
                subs.append(Subarray(s, length, (0.0, float(np.mean(pos[s:s + length])))))
        i = j
    if len(subs) < 2:
        raise InsufficientBaseline(f"only {len(subs)} usable subarray(s); triangulation needs 2")
    return SubarrayPlan(subs, n_sub)


def subarray_covariance(block: SnapshotBlock, sub: Subarray) -> np.ndarray:
    Yq = block.received[sub.start:sub.start + sub.length]
    return Yq @ Yq.conj().T / block.n_snapshots


def subspace_split(R: np.ndarray, K: int):
    """Eigen-split a Hermitian matrix into top-K signal and remaining noise bases."""
    if not 0 <= K < R.shape[0]:
        raise InvalidArgument(f"need 0 <= K < {R.shape[0]}, got {K}")
    try:
        w, V = np.linalg.eigh(R)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed: {exc}") from exc
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    return V[:, :K], V[:, K:], w


def estimate_num_targets(eigenvalues, ratio: float = 0.95) -> int:
    """Smallest K whose leading eigenvalues hold ``ratio`` of the total."""
    ev = np.asarray(eigenvalues, dtype=float)
    total = ev.sum()
    if total <= 0:
        raise InvalidArgument("eigenvalue spectrum is all zero")
    frac = np.cumsum(ev) / total
    return int(np.searchsorted(frac, ratio - 1e-12) + 1)


def far_field_steering(positions, wavelength: float, thetas) -> np.ndarray:
    thetas = np.atleast_1d(thetas)
    return np.exp(1j * (2 * np.pi / wavelength) * np.outer(positions, np.sin(thetas)))


def _music(noise_basis, steer):
    proj = noise_basis.conj().T @ steer
    den = np.sum(np.abs(proj) ** 2, axis=0)
    return 1.0 / np.maximum(den, np.finfo(float).tiny)


def angle_spectrum(noise_basis: np.ndarray, positions, wavelength: float, grid) -> np.ndarray:
    """MUSIC pseudo-spectrum ``1 / (b^H U_N U_N^H b)`` over an angle grid."""
    grid = np.asarray(grid, dtype=float)
    if np.any(np.abs(grid) > np.pi / 2 + 1e-12):
        raise InvalidArgument("angle grid must lie within [-pi/2, pi/2]")
    return _music(noise_basis, far_field_steering(positions, wavelength, grid))


def pick_peaks(grid, values, K: int, refine=None) -> np.ndarray:
    """Angles of the K largest local maxima, ascending.

    ``refine(lo, hi)`` may return an off-grid maximizer inside the
    neighbouring grid cells of each peak.
    """
    v = np.asarray(values)
    interior = np.flatnonzero((v[1:-1] > v[:-2]) & (v[1:-1] >= v[2:])) + 1
    cand = list(interior)
    # edge samples count as peaks when they dominate their only neighbour
    if len(v) > 1 and v[0] > v[1]:
        cand.append(0)
    if len(v) > 1 and v[-1] > v[-2]:
        cand.append(len(v) - 1)
    if len(cand) < K:
        raise GridError(f"grid holds {len(cand)} peak(s), {K} requested")
    cand = np.array(cand)
    best = cand[np.argsort(v[cand])[::-1][:K]]
    out = []
    for i in best:
        x = grid[i]
        if refine is not None and 0 < i < len(grid) - 1:
            x = refine(grid[i - 1], grid[i + 1])
        out.append(x)
    return np.sort(np.array(out, dtype=float))


def _refiner(fun):
    def refine(lo, hi):
        res = minimize_scalar(lambda x: -fun(x), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12})
        return float(res.x)
    return refine


def triangulate(points, directions, weights=None) -> CoarsePosition:
    """Least-squares intersection of bearing lines ``p_q + s e_q``.

    ``weights`` scales each line's squared distance; ``None`` weighs all
    lines equally, the plain closed form.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    directions = np.asarray(directions, dtype=float).reshape(-1, 2)
    if len(points) != len(directions):
        raise InvalidArgument("one direction per point is required")
    if len(points) < 2:
        raise DegenerateGeometry("a single bearing cannot fix a point")
    norms = np.linalg.norm(directions, axis=1)
    if np.any(np.abs(norms - 1) > 1e-9):
        raise InvalidArgument("bearing directions must be unit vectors")
    Qs = np.eye(2)[None] - directions[:, :, None] * directions[:, None, :]
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (len(points),) or np.any(weights < 0) or not np.any(weights > 0):
            raise InvalidArgument("need one non-negative weight per bearing, not all zero")
        Qs = Qs * weights[:, None, None]
    lhs = Qs.sum(axis=0)
    rhs = np.einsum("qij,qj->i", Qs, points)
    if np.linalg.cond(lhs) > 1e12:
        raise DegenerateGeometry("bearings are (nearly) parallel")
    xi = np.linalg.solve(lhs, rhs)
    return CoarsePosition.from_cartesian(xi[0], xi[1])


def stacked_design(geometry: ArrayGeometry, c_hat, thetas, ranges, probes) -> np.ndarray:
    """Stack ``diag(c) A diag(s_t)`` over snapshots into an (N T0) x K matrix."""
    A = np.asarray(c_hat)[:, None] * steering_matrix(geometry, thetas, ranges)
    probes = np.asarray(probes)
    phi = A[None, :, :] * probes.T[:, None, :]  # T0 x N x K
    return phi.reshape(-1, A.shape[1])


def estimate_gains(block: SnapshotBlock, geometry: ArrayGeometry, c_hat, thetas, ranges) -> np.ndarray:
    """Least-squares gains ``Phi^+ y`` for fixed positions and HI vector."""
    phi = stacked_design(geometry, c_hat, thetas, ranges, block.probes)
    y = block.stacked()
    sv = np.linalg.svd(phi, compute_uv=False)
    if sv[-1] <= sv[0] * 1e-10:
        raise NumericError("gain design matrix is rank deficient")
    beta, *_ = np.linalg.lstsq(phi, y, rcond=None)
    return beta


def assign_probes(block: SnapshotBlock, geometry: ArrayGeometry, c_hat, thetas, ranges) -> np.ndarray:
    """Match each probe row to a position.

    Positions come out of the angle search unlabelled while the probes are
    indexed per target. The cross gains ``G = A^+ Y S^+`` (G[j, k]: position
    j carrying probe k) are matched by maximum total magnitude. Returns
    ``perm`` with position ``perm[k]`` assigned to probe ``k``.
    """
    A = np.asarray(c_hat)[:, None] * steering_matrix(geometry, thetas, ranges)
    S = np.asarray(block.probes)
    if A.shape[1] != S.shape[0]:
        raise InvalidArgument(f"{A.shape[1]} positions for {S.shape[0]} probes")
    G = np.linalg.pinv(A) @ block.received @ np.linalg.pinv(S)
    rows, cols = linear_sum_assignment(-np.abs(G))
    perm = np.empty(len(cols), dtype=int)
    perm[cols] = rows
    return perm


def coarse_localize(
    block: SnapshotBlock,
    geometry: ArrayGeometry,
    detected,
    K: int | None,
    grid_step: float = 1e-3,
    eig_ratio: float = 0.95,
    c_hat=None,
    weighting: str = "aperture",
) -> CoarseResult:
    """Partition, per-subarray MUSIC, triangulation and gain fit.

    ``K=None`` estimates the target count on each subarray from its
    eigenvalue spectrum and takes the most common value. With
    ``weighting="aperture"`` each bearing line is weighted by ``N_q^3``,
    the scaling of a ULA's inverse angle variance, so short subarrays left
    between nearby faults cannot dominate; ``"none"`` weighs them equally.
    """
    if weighting not in ("aperture", "none"):
        raise InvalidArgument(f"unknown weighting {weighting!r}")
    pos = geometry.positions
    lam = geometry.wavelength
    plan = partition(geometry, detected, K if K is not None else 1)
    covs = [subarray_covariance(block, s) for s in plan.subarrays]
    eigs = [np.sort(np.linalg.eigvalsh(R))[::-1] for R in covs]
    if K is None:
        counts = [estimate_num_targets(np.maximum(e, 0), eig_ratio) for e in eigs]
        K = int(np.bincount(counts).argmax())
        plan = partition(geometry, detected, K)
        covs = [subarray_covariance(block, s) for s in plan.subarrays]
        eigs = [np.sort(np.linalg.eigvalsh(R))[::-1] for R in covs]
    grid = np.arange(-np.pi / 2, np.pi / 2 + grid_step / 2, grid_step)
    grid = grid[np.abs(grid) <= np.pi / 2]
    bearings = []
    for sub, R in zip(plan.subarrays, covs):
        _, UN, _ = subspace_split(R, K)
        p = pos[sub.indices]
        spec = angle_spectrum(UN, p, lam, grid)
        fun = lambda th, UN=UN, p=p: angle_spectrum(UN, p, lam, [th])[0]
        bearings.append(pick_peaks(grid, spec, K, refine=_refiner(fun)))
    bearings = np.array(bearings)  # Q x K, rank-matched across subarrays
    centers = np.array([s.center for s in plan.subarrays])
    w = np.array([s.length for s in plan.subarrays], float) ** 3 if weighting == "aperture" else None
    positions = []
    for k in range(K):
        th = bearings[:, k]
        dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
        positions.append(triangulate(centers, dirs, w))
    c = np.ones(geometry.n_antennas, complex) if c_hat is None else np.asarray(c_hat)
    if block.n_targets == K:
        perm = assign_probes(block, geometry, c, [p.theta for p in positions], [p.range for p in positions])
        positions = [positions[j] for j in perm]
        bearings = bearings[:, perm]
    thetas = [p.theta for p in positions]
    ranges = [p.range for p in positions]
    if any(r <= 0 or not np.isfinite(r) for r in ranges):
        warnings.warn("triangulation produced a non-finite range", stacklevel=2)
    gains = estimate_gains(block, geometry, c, thetas, ranges)
    return CoarseResult(positions, gains, plan, bearings, eigs)
