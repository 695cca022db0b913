import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nfhi.errors import InvalidArgument
from nfhi.scene import (ArrayGeometry, HIProfile, Scene, Target, fresnel_rayleigh, hi_profile_from_biases,
                        noise_variance_for_snr, sample_hi_profile, snr, steering_matrix, steering_vector,
                        synthesize)


def test_positions_formula_and_default_spacing():
    g = ArrayGeometry(6, 0.02)
    assert g.spacing == pytest.approx(0.01)
    n = np.arange(1, 7)
    np.testing.assert_allclose(g.positions, (2 * n - 7) * 0.01 / 2)


@given(st.integers(1, 600))
def test_positions_antisymmetric(n):
    l = ArrayGeometry(n, 0.01).positions
    assert np.all(l + l[::-1] == 0)


def test_fresnel_rayleigh_examples():
    zf, zr = fresnel_rayleigh(ArrayGeometry(256, 0.01))
    assert zf == pytest.approx(7.2408, abs=1e-4)
    assert zr == pytest.approx(327.68)
    assert fresnel_rayleigh(ArrayGeometry(2, 1.0, 0.5)) == pytest.approx((0.5, 2.0))


def test_fresnel_rayleigh_scaling():
    zf1, zr1 = fresnel_rayleigh(ArrayGeometry(64, 0.01))
    zf2, zr2 = fresnel_rayleigh(ArrayGeometry(128, 0.01))
    assert zr2 / zr1 == pytest.approx(4)
    assert zf2 / zf1 == pytest.approx(2**1.5)


def test_fresnel_rayleigh_rejects_single_antenna():
    with pytest.raises(InvalidArgument):
        fresnel_rayleigh(ArrayGeometry(1, 0.01))


def test_steering_far_field_limit():
    a = steering_vector(ArrayGeometry(64, 0.01), 0.0, 1e12)
    assert np.max(np.abs(np.angle(a))) < 1e-9


def test_steering_broadside_symmetric():
    a = steering_vector(ArrayGeometry(32, 0.01), 0.0, 3.0)
    np.testing.assert_allclose(a, a[::-1])


def _third_order_phase(l, k, theta, r):
    # leading term dropped by the second-order expansion of the distance
    return k * l**3 * np.sin(theta) * np.cos(theta) ** 2 / (2 * r**2)


def test_exact_vs_fresnel_small_aperture():
    g = ArrayGeometry(4, 1.0, 0.5)
    a = steering_vector(g, np.pi / 6, 20.0, "exact")
    b = steering_vector(g, np.pi / 6, 20.0, "fresnel")
    err = np.angle(a * b.conj())
    # the gap is the cubic term, about 1.25e-3 rad at the edge antennas
    np.testing.assert_allclose(np.abs(err), np.abs(_third_order_phase(g.positions, g.wavenumber, np.pi / 6, 20.0)),
                               rtol=0.02)
    assert np.max(np.abs(err)) < 1.3e-3


def test_exact_phase_oracle():
    # direct distance computation from antenna (0, l) to the target
    g = ArrayGeometry(8, 0.01)
    th, r = 0.3, 2.0
    src = np.array([r * np.cos(th), r * np.sin(th)])
    dist = np.hypot(src[0], src[1] - g.positions)
    expected = np.exp(-1j * g.wavenumber * (dist - r))
    np.testing.assert_allclose(steering_vector(g, th, r, "exact"), expected, atol=1e-9)


def test_fresnel_error_bounded_by_cubic_term():
    g = ArrayGeometry(128, 0.01)
    zf, _ = fresnel_rayleigh(g)
    worst = 0.0
    for th in np.linspace(-np.pi / 2, np.pi / 2, 61):
        a = steering_vector(g, th, zf, "exact")
        b = steering_vector(g, th, zf, "fresnel")
        worst = max(worst, np.max(np.abs(np.angle(a * b.conj()))))
    # at the Fresnel distance the cubic term peaks at 2 pi * 2 / (3 sqrt 3) / 4 ~ 0.605 rad
    bound = 2 * np.pi * (2 / (3 * np.sqrt(3))) / 4
    assert worst < bound * 1.05
    worst_2zf = max(np.max(np.abs(np.angle(steering_vector(g, th, 2 * zf, "exact")
                                             * steering_vector(g, th, 2 * zf).conj())))
                    for th in np.linspace(-np.pi / 2, np.pi / 2, 61))
    assert worst_2zf < bound / 4 * 1.05


@settings(max_examples=50)
@given(st.floats(-np.pi / 2, np.pi / 2), st.floats(0.1, 1e4))
def test_steering_unit_modulus(theta, r):
    a = steering_vector(ArrayGeometry(33, 0.01), theta, r)
    assert np.max(np.abs(np.abs(a) - 1)) < 1e-12


def test_steering_rejects_bad_range_and_model():
    g = ArrayGeometry(8, 0.01)
    with pytest.raises(InvalidArgument):
        steering_vector(g, 0.1, 0.0)
    with pytest.raises(InvalidArgument):
        steering_vector(g, 0.1, 1.0, "spherical")


def test_steering_matrix_columns():
    g = ArrayGeometry(16, 0.01)
    A = steering_matrix(g, [0.1, -0.2], [3.0, 5.0])
    np.testing.assert_allclose(A[:, 1], steering_vector(g, -0.2, 5.0))


def test_hi_profile_zero_probability():
    hi = sample_hi_profile(ArrayGeometry(64, 0.01), 0.0, 1)
    assert hi.n_faults == 0
    np.testing.assert_array_equal(hi.coefficients, np.ones(64))


def test_hi_profile_near_one_probability():
    hi = sample_hi_profile(ArrayGeometry(64, 0.01), 1 - 1e-12, 1)
    assert hi.n_faults == 64


def test_hi_profile_mean_fault_count():
    g = ArrayGeometry(256, 0.01)
    counts = [sample_hi_profile(g, 0.02, s).n_faults for s in range(10_000)]
    assert abs(np.mean(counts) - 5.12) < 0.2


def test_hi_profile_coefficients_and_phase_domain():
    hi = sample_hi_profile(ArrayGeometry(512, 0.01), 0.3, 7)
    c = hi.coefficients
    f = hi.fault_flags
    np.testing.assert_allclose(np.abs(c), 1)
    np.testing.assert_allclose(c[f], np.exp(1j * hi.phase_biases[f]))
    assert np.all(c[~f] == 1)
    assert np.all((hi.phase_biases > 0) & (hi.phase_biases < 2 * np.pi))


def test_hi_profile_nested_across_probabilities():
    g = ArrayGeometry(256, 0.01)
    lo = set(sample_hi_profile(g, 0.01, 3).faulty_indices)
    hi = set(sample_hi_profile(g, 0.04, 3).faulty_indices)
    assert lo <= hi


def test_hi_profile_rejects_probability_one():
    with pytest.raises(InvalidArgument):
        sample_hi_profile(ArrayGeometry(8, 0.01), 1.0)


def test_synthesize_noiseless_single_source():
    g = ArrayGeometry(16, 0.01)
    b = synthesize(g, [Target(0.2, 3.0)], HIProfile.fault_free(16), 5, 0.0, 0, probes=np.ones((1, 5)))
    a = steering_vector(g, 0.2, 3.0)
    for t in range(5):
        np.testing.assert_allclose(b.received[:, t], a)


def test_synthesize_pi_fault_negates_row():
    g = ArrayGeometry(16, 0.01)
    tg = [Target(0.2, 3.0)]
    clean = synthesize(g, tg, HIProfile.fault_free(16), 8, 0.0, 5)
    bad = synthesize(g, tg, hi_profile_from_biases(16, {4: np.pi}), 8, 0.0, 5)
    np.testing.assert_allclose(bad.received[4], -clean.received[4], atol=1e-12)
    np.testing.assert_allclose(np.delete(bad.received, 4, 0), np.delete(clean.received, 4, 0))


def test_synthesize_reproducible():
    g = ArrayGeometry(16, 0.01)
    hi = sample_hi_profile(g, 0.1, 1)
    a = synthesize(g, [Target(0.2, 3.0)], hi, 10, 0.1, 9)
    b = synthesize(g, [Target(0.2, 3.0)], hi, 10, 0.1, 9)
    assert np.array_equal(a.received, b.received) and np.array_equal(a.probes, b.probes)


def test_synthesize_rejects_empty_targets():
    with pytest.raises(InvalidArgument):
        synthesize(ArrayGeometry(8, 0.01), [], HIProfile.fault_free(8), 4, 0.0)


def test_probe_power_matches_target_power():
    g = ArrayGeometry(8, 0.01)
    b = synthesize(g, [Target(0.1, 3.0, power=2.5)], HIProfile.fault_free(8), 50, 0.0, 1)
    np.testing.assert_allclose(np.mean(np.abs(b.probes) ** 2), 2.5)


def test_measured_snr_matches_request():
    g = ArrayGeometry(64, 0.01)
    tg = [Target(0.1, 3.0), Target(-0.3, 4.0)]
    for snr_db in (0.0, 10.0, 20.0):
        s2 = noise_variance_for_snr(snr_db, tg)
        b = synthesize(g, tg, sample_hi_profile(g, 0.05, 2), 1000, s2, 3)
        # E||y||^2 / (N sigma^2) = (P + sigma^2) / sigma^2 for uncorrelated probes
        expected = 10 * np.log10((2 + s2) / s2)
        assert abs(snr(b) - expected) < 0.3


def test_snr_analytic_single_source():
    g = ArrayGeometry(32, 0.01)
    b = synthesize(g, [Target(0.1, 3.0)], HIProfile.fault_free(32), 4000, 1.0, 4)
    assert snr(b) == pytest.approx(10 * np.log10((32 * 1 + 32 * 1.0) / 32), abs=0.1)


def test_snr_sentinels():
    g = ArrayGeometry(8, 0.01)
    b = synthesize(g, [Target(0.1, 3.0)], HIProfile.fault_free(8), 4, 0.0, 1)
    assert snr(b) == np.inf
    zero = type(b)(np.zeros_like(b.received), b.probes, 1.0)
    assert snr(zero) == -np.inf


def test_noise_only_snr_near_zero_db():
    g = ArrayGeometry(32, 0.01)
    b = synthesize(g, [Target(0.1, 3.0, gain=0j)], HIProfile.fault_free(32), 5000, 1.0, 4)
    assert abs(snr(b)) < 0.1


def test_scene_warns_outside_near_field():
    g = ArrayGeometry(64, 0.01)
    with pytest.warns(UserWarning):
        Scene(g, [Target(0.0, 1000.0)], HIProfile.fault_free(64)).validate()
