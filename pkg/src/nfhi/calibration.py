"""Phase-bias calibration of detected faulty antennas.

For antenna ``i`` the fault-free model sample is
``m_{i,t} = sum_k beta_k s_{k,t} a_i(theta_k, r_k)`` built from coarse
estimates. Every target's contribution at that antenna carries the same
``c_i``, so ``angle(y_{i,t} conj(m_{i,t}))`` isolates ``zeta_i`` plus noise.
The per-snapshot differences are unwrapped in time and averaged.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .scene import ArrayGeometry, SnapshotBlock, steering_matrix

__all__ = ["CalibrationResult", "phase_differences", "unwrap", "calibrate"]

TWO_PI = 2 * np.pi


@dataclass
class CalibrationResult:
    bias_estimates: dict[int, float]
    hi_vector: np.ndarray


def _model_row(block, geometry, i, thetas, ranges, gains):
    a_i = steering_matrix(geometry, thetas, ranges)[i]
    return (np.asarray(gains) * a_i) @ block.probes


def phase_differences(block: SnapshotBlock, geometry: ArrayGeometry, i: int, thetas, ranges, gains) -> np.ndarray:
    """Wrapped phase difference between antenna ``i`` and its fault-free model, in [0, 2 pi).

    Samples whose observed magnitude is below ``1e-3 * sigma`` (phase
    undefined) are dropped with a warning.
    """
    m = _model_row(block, geometry, i, thetas, ranges, gains)
    y = block.received[i]
    floor = 1e-3 * np.sqrt(block.noise_variance)
    keep = (np.abs(y) > floor) & (np.abs(m) > 0)
    if not np.all(keep):
        warnings.warn(f"antenna {i}: skipped {np.count_nonzero(~keep)} sample(s) below the magnitude floor",
                      stacklevel=2)
    return np.mod(np.angle(y[keep] * np.conj(m[keep])), TWO_PI)


def unwrap(seq) -> np.ndarray:
    """Add ``2 pi w_t`` to each sample so consecutive samples differ by at most pi."""
    seq = np.asarray(seq, dtype=float)
    if seq.size < 2:
        return seq.copy()
    d = np.diff(seq)
    w = -np.round(d / TWO_PI)
    return np.concatenate([[seq[0]], seq[1:] + TWO_PI * np.cumsum(w)])


def calibrate(block: SnapshotBlock, geometry: ArrayGeometry, detected, thetas, ranges, gains) -> CalibrationResult:
    n = geometry.n_antennas
    c_hat = np.ones(n, dtype=complex)
    biases = {}
    for i in sorted(int(j) for j in detected):
        dphi = phase_differences(block, geometry, i, thetas, ranges, gains)
        if dphi.size == 0:
            continue
        z = float(np.mod(np.mean(unwrap(dphi)), TWO_PI))
        biases[i] = z
        c_hat[i] = np.exp(1j * z)
    return CalibrationResult(biases, c_hat)
