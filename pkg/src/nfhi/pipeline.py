"""The three-phase HI-aware estimator: detect, calibrate, localize."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .calibration import CalibrationResult, calibrate
from .coarse import CoarseResult, coarse_localize
from .fine import DecoupledSpectra, FineConfig, fine_localize
from .scene import ArrayGeometry, SnapshotBlock
from .sparse_fault import FaultEstimate, IstaConfig, model_vectors, run_ista

__all__ = ["ProposedConfig", "Phase1Result", "LocalizationResult", "run_phase1", "run_proposed"]


@dataclass(frozen=True)
class ProposedConfig:
    ista: IstaConfig = IstaConfig()
    fine: FineConfig = FineConfig()
    coarse_grid_step: float = 1e-3
    max_alternations: int = 10
    estimate_K: bool = False
    eig_ratio: float = 0.95


@dataclass
class Phase1Result:
    coarse: CoarseResult
    faults: FaultEstimate
    sweeps: int
    history: list[tuple[int, ...]] = field(default_factory=list)

    @property
    def detected(self) -> np.ndarray:
        return self.faults.detected


@dataclass
class LocalizationResult:
    """Per-target (angle, range, gain) estimates at the coarse and fine stages."""

    coarse_thetas: np.ndarray
    coarse_ranges: np.ndarray
    gains: np.ndarray
    fine_thetas: np.ndarray | None = None
    fine_ranges: np.ndarray | None = None
    phase1: Phase1Result | None = None
    calibration: CalibrationResult | None = None
    spectra: DecoupledSpectra | None = None

    @property
    def thetas(self) -> np.ndarray:
        return self.coarse_thetas if self.fine_thetas is None else self.fine_thetas

    @property
    def ranges(self) -> np.ndarray:
        return self.coarse_ranges if self.fine_ranges is None else self.fine_ranges


def run_phase1(block: SnapshotBlock, geometry: ArrayGeometry, K: int | None,
               cfg: ProposedConfig = ProposedConfig()) -> Phase1Result:
    """Alternate coarse localization and ISTA fault detection until the detected set settles.

    If the detected set revisits an earlier state (a cycle, typical at low
    SNR where one fault hovers at the threshold), the union of the sets in
    the cycle is kept and the coarse stage is rerun once on it.
    """
    n = geometry.n_antennas
    detected: tuple[int, ...] = ()
    c_hat = np.ones(n, dtype=complex)
    history: list[tuple[int, ...]] = []
    coarse = faults = None
    sweeps = 0

    def locate(det, c):
        return coarse_localize(block, geometry, det, None if cfg.estimate_K else K,
                               grid_step=cfg.coarse_grid_step, eig_ratio=cfg.eig_ratio, c_hat=c)

    for sweeps in range(1, cfg.max_alternations + 1):
        coarse = locate(detected, c_hat)
        X = model_vectors(geometry, coarse.thetas, coarse.ranges, coarse.gains, block.probes)
        faults = run_ista(block, X, cfg.ista, noise_variance=max(coarse.noise_floor(), 0.0))
        new = tuple(int(i) for i in faults.detected)
        history.append(new)
        if new == detected:
            break
        if new in history[:-1]:
            start = history.index(new)
            union = tuple(sorted(set().union(*history[start:])))
            c_hat = np.ones(n, dtype=complex)
            c_hat[list(union)] = faults.hi_vector[list(union)]
            coarse = locate(union, c_hat)
            faults = replace(faults, detected=np.array(union, dtype=int))
            break
        # only detected entries move off 1; sub-threshold mask entries mostly
        # carry position error and would bias the next gain fit
        c_hat = np.ones(n, dtype=complex)
        c_hat[faults.detected] = faults.hi_vector[faults.detected]
        detected = new
    return Phase1Result(coarse, faults, sweeps, history)


def run_proposed(block: SnapshotBlock, geometry: ArrayGeometry, K: int | None,
                 cfg: ProposedConfig = ProposedConfig()) -> LocalizationResult:
    p1 = run_phase1(block, geometry, K, cfg)
    co = p1.coarse
    cal = calibrate(block, geometry, p1.detected, co.thetas, co.ranges, co.gains)
    spectra = fine_localize(block.received, geometry, cal.hi_vector, co.thetas, co.ranges, cfg.fine)
    return LocalizationResult(co.thetas, co.ranges, co.gains, spectra.thetas, spectra.ranges,
                              p1, cal, spectra)
