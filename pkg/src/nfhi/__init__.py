"""Near-field XL-array target localization under antenna phase faults.

Subpackages follow the processing chain: ``scene`` (geometry and data),
``sparse_fault`` (fault detection), ``coarse`` (subarray triangulation),
``calibration``, ``fine`` (decoupled MUSIC), ``bcd`` (baseline), ``bounds``
(CRB/MCRB) and ``harness`` (Monte Carlo sweeps).
"""
from .errors import (ConvergenceError, DegenerateGeometry, DivergenceError, GridError, InsufficientBaseline,
                     InvalidArgument, NfhiError, NumericError)
from .pipeline import ProposedConfig, run_phase1, run_proposed
from .scene import (ArrayGeometry, HIProfile, SnapshotBlock, Target, fresnel_rayleigh, noise_variance_for_snr,
                    sample_hi_profile, steering_matrix, steering_vector, synthesize)

__version__ = "0.1.0"
