import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nfhi.errors import InvalidArgument
from nfhi.fine import (FineConfig, antidiagonal_vector, calibrate_signals, fine_angles, fine_localize, fine_ranges,
                       range_spectrum, sample_covariance, smoothed_covariance, virtual_steering)
from nfhi.scene import ArrayGeometry, HIProfile, Target, fresnel_rayleigh, hi_profile_from_biases, steering_vector, synthesize


def _cov(g, targets, t0=200, sigma2=0.0, seed=0):
    b = synthesize(g, targets, HIProfile.fault_free(g.n_antennas), t0, sigma2, seed)
    return sample_covariance(b.received)


def test_antidiagonal_reversal_is_conjugate():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    R = A @ A.conj().T
    r = antidiagonal_vector(R)
    np.testing.assert_allclose(r[::-1], np.conj(r))


def test_antidiagonal_rejects_odd():
    with pytest.raises(InvalidArgument):
        antidiagonal_vector(np.eye(5))


def test_antidiagonal_phase_is_range_free():
    g = ArrayGeometry(32, 0.01)
    k, l = g.wavenumber, g.positions
    for r in (1.0, 3.0, 20.0):
        a = steering_vector(g, 0.4, r)
        R = np.outer(a, a.conj())
        # quadratic terms cancel between antennas n and N+1-n
        np.testing.assert_allclose(antidiagonal_vector(R), np.exp(2j * k * l * np.sin(0.4)), atol=1e-9)


def test_virtual_steering_matches_antidiagonal_up_to_constant():
    g = ArrayGeometry(16, 0.01)
    a = steering_vector(g, -0.3, 4.0)
    r = antidiagonal_vector(np.outer(a, a.conj()))
    v = virtual_steering(16, g, -0.3)[:, 0]
    ratio = r / v
    np.testing.assert_allclose(ratio, ratio[0], atol=1e-9)


def test_smoothed_covariance_rank():
    g = ArrayGeometry(32, 0.01)
    r1 = antidiagonal_vector(_cov(g, [Target(0.2, 5.0)]))
    assert np.linalg.matrix_rank(smoothed_covariance(r1, 1, 1), tol=1e-8) == 1
    tg = [Target(0.2, 5.0), Target(-0.3, 7.0), Target(0.5, 4.0)]
    # orthogonal probes so no cross terms leak into the anti-diagonal
    probes = np.exp(2j * np.pi * np.outer(np.arange(3), np.arange(8)) / 8)
    b = synthesize(g, tg, HIProfile.fault_free(32), 8, 0.0, 0, probes=probes)
    r3 = antidiagonal_vector(sample_covariance(b.received))
    R_r = smoothed_covariance(r3, 16, 3)
    ev = np.sort(np.linalg.eigvalsh(R_r))[::-1]
    assert ev[2] > 1e-6 * ev[0] and ev[3] < 1e-9 * ev[0]


def test_smoothed_covariance_manual_average():
    rng = np.random.default_rng(1)
    r = rng.normal(size=6) + 1j * rng.normal(size=6)
    M = 3
    L = 4
    manual = sum(np.outer(r[m:m + L], r[m:m + L].conj()) for m in range(M)) / M
    np.testing.assert_allclose(smoothed_covariance(r, M), manual)


@settings(max_examples=20)
@given(st.integers(1, 10), st.integers(0, 1000))
def test_smoothed_covariance_hermitian_psd(M, seed):
    rng = np.random.default_rng(seed)
    r = rng.normal(size=12) + 1j * rng.normal(size=12)
    R = smoothed_covariance(r, M)
    np.testing.assert_allclose(R, R.conj().T)
    assert np.min(np.linalg.eigvalsh(R)) > -1e-10


def test_smoothed_covariance_bad_M():
    with pytest.raises(InvalidArgument):
        smoothed_covariance(np.ones(8), 8, 1)
    with pytest.raises(InvalidArgument):
        smoothed_covariance(np.ones(8), 0, 1)


def test_calibrate_signals_inverts_fault():
    hi = hi_profile_from_biases(8, {2: 1.0})
    Y = np.ones((8, 3)) * hi.coefficients[:, None]
    np.testing.assert_allclose(calibrate_signals(Y, hi.coefficients), np.ones((8, 3)))


def test_alias_peak_outside_window_is_ignored():
    g = ArrayGeometry(32, 0.01)
    th = np.pi / 6
    R = _cov(g, [Target(th, 5.0)], sigma2=0.01)
    R_r = smoothed_covariance(antidiagonal_vector(R), 16, 1)
    # virtual spacing is a full wavelength, so sin(theta) and sin(theta) - 1 look alike
    alias = np.arcsin(np.sin(th) - 1)
    est, grids, specs = fine_angles(R_r, [th + 0.02], 1, g)
    assert abs(est[0] - th) < 1e-4
    assert grids[0].min() > alias + 0.1
    wide, _, s = fine_angles(R_r, [alias], 1, g)
    assert abs(wide[0] - alias) < 1e-3  # same height peak exists at the alias


def test_fine_angles_fallback_warns():
    g = ArrayGeometry(32, 0.01)
    R_r = smoothed_covariance(antidiagonal_vector(_cov(g, [Target(0.5, 5.0)], sigma2=0.01)), 16, 1)
    with pytest.warns(UserWarning):
        est, _, _ = fine_angles(R_r, [-0.5], 1, g, window=0.01)
    assert est[0] == -0.5


def test_range_spectrum_flattens_with_distance():
    g = ArrayGeometry(64, 0.01)
    zf, zr = fresnel_rayleigh(g)

    def contrast(r):
        R = _cov(g, [Target(0.2, r)], sigma2=0.01)
        w, v = np.linalg.eigh(R)
        grid = np.geomspace(r * 0.7, r * 1.3, 200)
        s = range_spectrum(v[:, :-1], g, 0.2, grid)
        return s.max() / s.min()

    assert contrast(2 * zf) > 10 * contrast(zr / 2)


def test_fine_ranges_empty_window_raises():
    g = ArrayGeometry(128, 0.01)
    R = _cov(g, [Target(0.2, 5.0)], sigma2=0.01)
    with pytest.raises(InvalidArgument):
        fine_ranges(R, [0.2], [1.0], 1, g)


def test_fine_localize_noiseless_two_targets():
    g = ArrayGeometry(64, 0.01)
    tg = [Target(0.3, 4.0), Target(-0.2, 6.0)]
    hi = hi_profile_from_biases(64, {10: 2.0, 30: 4.0})
    b = synthesize(g, tg, hi, 100, 1e-4, 3)
    out = fine_localize(b.received, g, hi.coefficients, [0.31, -0.21], [4.3, 5.7])
    np.testing.assert_allclose(out.thetas, [0.3, -0.2], atol=1e-4)
    np.testing.assert_allclose(out.ranges, [4.0, 6.0], rtol=1e-2)
    assert out.smoothing_M == 32


def test_fine_localize_rejects_too_short_subvector():
    g = ArrayGeometry(8, 0.01)
    b = synthesize(g, [Target(0.3, 1.0)], HIProfile.fault_free(8), 10, 0.01, 0)
    with pytest.raises(InvalidArgument):
        fine_localize(b.received, g, np.ones(8), [0.3], [1.0], FineConfig(smoothing_M=8))
