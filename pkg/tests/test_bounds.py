import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dopplersync import bounds
from dopplersync.bounds import FimSpec, WbcrbSpec


def test_fim_small_hand_value():
    np.testing.assert_array_equal(bounds.fim(FimSpec(3, 2.0)), [[3, 3, 5], [3, 5, 9], [5, 9, 17]])


def test_fim_symmetry_and_scaling():
    a = bounds.fim(FimSpec(50, 0.3))
    np.testing.assert_array_equal(a, a.T)
    np.testing.assert_allclose(bounds.fim(FimSpec(50, 0.6)), a / 2, rtol=1e-15)
    np.linalg.cholesky(a)


@settings(max_examples=40)
@given(st.integers(1, 3000))
def test_power_sums_match_direct(L):
    k = np.arange(L, dtype=object)
    assert bounds.power_sums(L) == tuple(float(sum(k**p)) for p in range(5))


@pytest.mark.parametrize("L", [3, 4, 10, 100, 534, 1000])
def test_jcrb_is_inverse(L):
    spec = FimSpec(L, 0.7)
    J = bounds.jcrb(spec)
    ref = np.linalg.inv(bounds.fim(spec))
    assert np.linalg.norm(J - ref) / np.linalg.norm(ref) < 1e-9


def test_jcrb_theta_entry():
    L, s2 = 534, 0.5
    expected = (s2 / 2) * (9 * (L - 1) * L + 6) / (L * (L + 1) * (L + 2))
    assert bounds.jcrb(FimSpec(L, s2))[0, 0] == pytest.approx(expected, rel=1e-15)


def test_jcrb_decreases_with_length():
    d = np.array([np.diag(bounds.jcrb(FimSpec(L, 1.0))) for L in range(10, 1001)])
    assert np.all(np.diff(d, axis=0) < 0)


def test_spec_validation():
    with pytest.raises(ValueError):
        FimSpec(2, 1.0)
    with pytest.raises(ValueError):
        FimSpec(10, 0.0)
    with pytest.raises(ValueError, match="exceed 1/2"):
        WbcrbSpec(534, 1.0, h=0.5)
    with pytest.raises(ValueError):
        bounds.prior_info_coeff(0.4)


def test_constants_at_h1():
    lam1, lam2 = bounds.lambdas(1.0)
    assert lam1 == pytest.approx(1 / 30, rel=1e-12)
    assert lam2 == pytest.approx(1 / 36, rel=1e-12)
    assert bounds.expected_q(1.0) == pytest.approx(1 / 6, rel=1e-12)
    assert bounds.prior_info_coeff(1.0) == pytest.approx(1 / 3, rel=1e-12)


@pytest.mark.parametrize("h", [0.75, 1.0, 1.5, 2.0, 3.3])
def test_constants_match_quadrature(h):
    num = bounds.quadrature_constants(h)
    lam1, lam2 = bounds.lambdas(h)
    assert lam1 == pytest.approx(num["lambda1"], rel=1e-8)
    assert lam2 == pytest.approx(num["lambda2"], rel=1e-8)
    assert bounds.expected_q(h) == pytest.approx(num["expected_q"], rel=1e-8)
    assert bounds.prior_info_coeff(h) == pytest.approx(num["prior_info"], rel=1e-8)
    bounds.validate_constants(h)


def test_low_snr_floor_is_prior_variance():
    rep = bounds.crb_report(-60.0, 534)
    np.testing.assert_allclose(rep.wbcrb_diag, bounds.prior_variances(0.01, 1e-5), rtol=0.01)


def test_wbcrb_below_prior_and_monotone():
    snrs = np.arange(-40.0, 30.0, 2.0)
    pv = bounds.prior_variances(0.01, 1e-5)
    diags = np.array([r.wbcrb_diag for r in bounds.bounds_sweep(snrs, 534)])
    assert np.all(diags <= pv * (1 + 1e-12))
    assert np.all(np.diff(diags, axis=0) <= 0)


def test_high_snr_ratio_limit():
    # Both bounds scale as sigma2 at high SNR; the ratio tends to E[q]^2 times the
    # ratio of the inverse lambda-weighted and unweighted moment matrices.
    lam1, lam2 = bounds.lambdas(1.0)
    eq = bounds.expected_q(1.0)
    M = bounds._moment_matrix(534)
    Mw = bounds._moment_matrix(534, lam1, lam2)
    limit = eq**2 * np.diag(np.linalg.inv(Mw)) / np.diag(np.linalg.inv(M))
    rep = bounds.crb_report(80.0, 534)
    np.testing.assert_allclose(rep.wbcrb_diag / rep.jcrb_diag, limit, rtol=1e-6)
    assert np.all(limit < 1.0)


def test_sweep_shapes():
    assert bounds.bounds_sweep([], 534) == []
    reps = bounds.bounds_sweep([0.0, 5.0, 10.0], 534)
    assert len(reps) == 3
    single = bounds.bounds_sweep([3.0], 100)[0]
    np.testing.assert_array_equal(single.jcrb, bounds.jcrb(FimSpec(100, 10 ** -0.3)))


def test_inv3_matches_numpy_and_warns():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((3, 3))
    np.testing.assert_allclose(bounds.inv3(A), np.linalg.inv(A), rtol=1e-10)
    with pytest.warns(bounds.IllConditionedWarning):
        bounds.inv3(np.diag([1.0, 1.0, 1e-14]))
    with pytest.raises(np.linalg.LinAlgError):
        bounds.inv3(np.zeros((3, 3)))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        bounds.wbcrb(WbcrbSpec(534, 1.0))
