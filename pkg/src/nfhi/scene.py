"""Array geometry, targets, hardware-impairment state and snapshot synthesis.

Antennas sit on the y-axis at ``l_n = (2n - N - 1) d / 2`` for ``n = 1..N``.
Formulas use that 1-based index; arrays are stored 0-based, so
``positions[i]`` is ``l_{i+1}``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidArgument

__all__ = [
    "ArrayGeometry",
    "Target",
    "HIProfile",
    "SnapshotBlock",
    "Scene",
    "fresnel_rayleigh",
    "steering_vector",
    "steering_matrix",
    "sample_hi_profile",
    "hi_profile_from_biases",
    "synthesize",
    "snr",
    "noise_variance_for_snr",
]

EXACT = "exact"
FRESNEL = "fresnel"


@dataclass(frozen=True)
class ArrayGeometry:
    n_antennas: int
    wavelength: float
    spacing: float | None = None

    def __post_init__(self):
        if self.n_antennas < 1:
            raise InvalidArgument("n_antennas must be positive")
        if self.wavelength <= 0:
            raise InvalidArgument("wavelength must be positive")
        if self.spacing is None:
            object.__setattr__(self, "spacing", self.wavelength / 2)
        elif self.spacing <= 0:
            raise InvalidArgument("spacing must be positive")

    @property
    def positions(self) -> np.ndarray:
        n = self.n_antennas
        # odd integers first so l_n + l_{N+1-n} == 0 holds exactly
        k = 2 * np.arange(1, n + 1) - n - 1
        return k * (self.spacing / 2)

    @property
    def aperture(self) -> float:
        # D ~ N d, the approximation used for the Fresnel/Rayleigh limits
        return self.n_antennas * self.spacing

    @property
    def wavenumber(self) -> float:
        return 2 * np.pi / self.wavelength


@dataclass(frozen=True)
class Target:
    theta: float
    range: float
    gain: complex = 1.0 + 0.0j
    power: float = 1.0

    @property
    def received_power(self) -> float:
        """|beta|^2 p, the per-antenna received power g_k."""
        return float(abs(self.gain) ** 2 * self.power)


@dataclass(frozen=True)
class HIProfile:
    fault_flags: np.ndarray
    phase_biases: np.ndarray
    fault_probability: float = 0.0

    @property
    def coefficients(self) -> np.ndarray:
        return np.where(self.fault_flags, np.exp(1j * self.phase_biases), 1.0 + 0.0j)

    @property
    def faulty_indices(self) -> np.ndarray:
        return np.flatnonzero(self.fault_flags)

    @property
    def n_faults(self) -> int:
        return int(np.count_nonzero(self.fault_flags))

    @classmethod
    def fault_free(cls, n: int) -> "HIProfile":
        return cls(np.zeros(n, dtype=bool), np.zeros(n), 0.0)


@dataclass
class SnapshotBlock:
    received: np.ndarray  # N x T0
    probes: np.ndarray  # K x T0
    noise_variance: float

    @property
    def n_antennas(self) -> int:
        return self.received.shape[0]

    @property
    def n_snapshots(self) -> int:
        return self.received.shape[1]

    @property
    def n_targets(self) -> int:
        return self.probes.shape[0]

    def stacked(self) -> np.ndarray:
        """Received data stacked snapshot after snapshot (length N*T0)."""
        return self.received.reshape(-1, order="F")


@dataclass
class Scene:
    geometry: ArrayGeometry
    targets: list[Target]
    hi: HIProfile
    noise_variance: float = 0.0
    meta: dict = field(default_factory=dict)

    def validate(self) -> None:
        z_fres, z_rayl = fresnel_rayleigh(self.geometry)
        for k, tgt in enumerate(self.targets):
            if not z_fres < tgt.range < z_rayl:
                warnings.warn(
                    f"target {k} at r={tgt.range:.3f} m is outside the near-field "
                    f"region ({z_fres:.3f}, {z_rayl:.3f}) m",
                    stacklevel=2,
                )


def fresnel_rayleigh(geometry: ArrayGeometry) -> tuple[float, float]:
    """Return ``(Z_Fres, Z_Rayl)`` for the array, using aperture D = N d."""
    if geometry.n_antennas < 2:
        raise InvalidArgument("need at least two antennas")
    D = geometry.aperture
    lam = geometry.wavelength
    return 0.5 * np.sqrt(D**3 / lam), 2 * D**2 / lam


def _phase(positions, k, theta, r, model):
    if model == FRESNEL:
        return k * (positions * np.sin(theta) - positions**2 * np.cos(theta) ** 2 / (2 * r))
    if model == EXACT:
        dist = np.sqrt(r**2 + positions**2 - 2 * positions * r * np.sin(theta))
        return -k * (dist - r)
    raise InvalidArgument(f"unknown steering model {model!r}")


def steering_vector(geometry: ArrayGeometry, theta: float, range: float, model: str = FRESNEL) -> np.ndarray:
    """Unit-modulus near-field steering vector of length N."""
    if not range > 0:
        raise InvalidArgument("range must be positive")
    return np.exp(1j * _phase(geometry.positions, geometry.wavenumber, theta, range, model))


def steering_matrix(geometry: ArrayGeometry, thetas, ranges, model: str = FRESNEL) -> np.ndarray:
    """Stack steering vectors column-wise; ``thetas``/``ranges`` broadcast together."""
    thetas, ranges = np.broadcast_arrays(np.atleast_1d(thetas).astype(float), np.atleast_1d(ranges).astype(float))
    if np.any(ranges <= 0):
        raise InvalidArgument("range must be positive")
    ph = _phase(geometry.positions[:, None], geometry.wavenumber, thetas[None, :], ranges[None, :], model)
    return np.exp(1j * ph)


def sample_hi_profile(geometry: ArrayGeometry, p_fault: float, rng_seed=None) -> HIProfile:
    """Draw independent Bernoulli(p_fault) faults with uniform phase biases.

    Uniform variates and phases are drawn for every antenna regardless of
    ``p_fault``, so one seed yields nested fault sets across probabilities.
    """
    if not 0 <= p_fault < 1:
        raise InvalidArgument("p_fault must lie in [0, 1)")
    rng = np.random.default_rng(rng_seed)
    n = geometry.n_antennas
    u = rng.random(n)
    # (0, 2pi): exclude the endpoint 0 explicitly
    zeta = 2 * np.pi * (1.0 - rng.random(n))
    zeta[zeta >= 2 * np.pi] = np.nextafter(2 * np.pi, 0)
    return HIProfile(u < p_fault, zeta, float(p_fault))


def hi_profile_from_biases(n: int, biases: dict[int, float]) -> HIProfile:
    """Build a profile with faults at the given 0-based indices."""
    flags = np.zeros(n, dtype=bool)
    zeta = np.zeros(n)
    for i, z in biases.items():
        flags[i] = True
        zeta[i] = z
    return HIProfile(flags, zeta, 0.0)


def _probe_signals(rng, powers, t0):
    phases = rng.uniform(0, 2 * np.pi, size=(len(powers), t0))
    return np.sqrt(np.asarray(powers, float))[:, None] * np.exp(1j * phases)


def synthesize(
    geometry: ArrayGeometry,
    targets: Sequence[Target],
    hi: HIProfile,
    t0: int,
    sigma2: float,
    rng_seed=None,
    probes: np.ndarray | None = None,
    model: str = FRESNEL,
) -> SnapshotBlock:
    """Generate ``y_t = diag(c) A diag(beta) s_t + n_t`` for ``t = 1..T0``.

    Probes are unit-modulus random-phase sequences scaled to each target's
    power unless ``probes`` (K x T0) is given. Noise is circular complex
    Gaussian with variance ``sigma2`` per sample; it is drawn at unit scale
    and multiplied by ``sqrt(sigma2)``, so a fixed seed gives the same noise
    shape at every noise level.
    """
    if len(targets) == 0:
        raise InvalidArgument("at least one target is required")
    if t0 < 1:
        raise InvalidArgument("T0 must be >= 1")
    if sigma2 < 0:
        raise InvalidArgument("sigma2 must be non-negative")
    rng = np.random.default_rng(rng_seed)
    n = geometry.n_antennas
    if probes is None:
        probes = _probe_signals(rng, [t.power for t in targets], t0)
    else:
        probes = np.asarray(probes, dtype=complex)
        if probes.shape != (len(targets), t0):
            raise InvalidArgument("probes must be K x T0")
    A = steering_matrix(geometry, [t.theta for t in targets], [t.range for t in targets], model)
    beta = np.array([t.gain for t in targets], dtype=complex)
    clean = hi.coefficients[:, None] * (A @ (beta[:, None] * probes))
    noise = (rng.standard_normal((n, t0)) + 1j * rng.standard_normal((n, t0))) / np.sqrt(2)
    return SnapshotBlock(clean + np.sqrt(sigma2) * noise, probes, float(sigma2))


def snr(block: SnapshotBlock) -> float:
    """Empirical received SNR ``E_t ||y_t||^2 / (N sigma^2)`` in dB."""
    if block.noise_variance <= 0:
        return float("inf")
    power = np.mean(np.sum(np.abs(block.received) ** 2, axis=0))
    if power == 0:
        return float("-inf")
    return float(10 * np.log10(power / (block.n_antennas * block.noise_variance)))


def noise_variance_for_snr(snr_db: float, targets: Sequence[Target]) -> float:
    """Noise variance giving per-antenna signal-to-noise power ``snr_db``.

    The signal part of ``E||y_t||^2 / N`` is ``sum_k |beta_k|^2 p_k`` for
    uncorrelated unit-modulus probes, independent of the HI vector.
    """
    g = sum(t.received_power for t in targets)
    return g / 10 ** (snr_db / 10)
