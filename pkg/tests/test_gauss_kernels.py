"""Tests for the Gaussian primitives"""

import math

import numpy as np
import pytest
from scipy import integrate, stats

from errors import IllConditionedKernelError
from gauss_kernels import (ConstantMean, SquaredExponential, UnivariateGaussian, expected_abs,
                           gram, integral_Phi_phi, integral_phi_phi, integral_xPhi_phi,
                           jittered_cholesky, mvn_sample, partial_expectation, std_normal_cdf,
                           std_normal_pdf)


def _quad(fn):
    value, _ = integrate.quad(fn, -np.inf, np.inf, epsabs=1e-12, epsrel=1e-12, limit=200)
    return value


def _check_identities(values):
    phi, Phi = stats.norm.pdf, stats.norm.cdf
    for a in values:
        for b in values:
            assert integral_phi_phi(a, b) == pytest.approx(
                _quad(lambda x: phi(x) * phi(a + b * x)), abs=1e-8)
            assert integral_Phi_phi(a, b) == pytest.approx(
                _quad(lambda x: Phi(a + b * x) * phi(x)), abs=1e-8)
            assert integral_xPhi_phi(a, b) == pytest.approx(
                _quad(lambda x: x * Phi(a + b * x) * phi(x)), abs=1e-8)


def test_integral_identities_match_quadrature():
    _check_identities(np.linspace(-5.0, 5.0, 5))


@pytest.mark.slow
def test_integral_identities_full_grid():
    _check_identities(np.linspace(-5.0, 5.0, 21))


def test_integral_identities_at_origin():
    assert integral_phi_phi(0.0, 0.0) == pytest.approx(1.0 / math.sqrt(2.0 * math.pi))
    assert integral_Phi_phi(0.0, 1.0) == pytest.approx(0.5)
    assert integral_xPhi_phi(0.0, 1.0) == pytest.approx(1.0 / (2.0 * math.sqrt(math.pi)))


def test_integral_rejects_non_finite():
    with pytest.raises(ValueError):
        integral_phi_phi(math.nan, 1.0)
    with pytest.raises(ValueError):
        integral_Phi_phi(0.0, math.inf)


def test_normal_cdf_tails():
    assert std_normal_cdf(0.0) == 0.5
    assert std_normal_cdf(-30.0) > 0.0
    assert std_normal_cdf(-30.0) == pytest.approx(stats.norm.cdf(-30.0), rel=1e-12)
    assert std_normal_pdf(0.0) == pytest.approx(1.0 / math.sqrt(2.0 * math.pi))
    with pytest.raises(ValueError):
        std_normal_pdf(math.inf)


@pytest.mark.parametrize("m,s,a,b", [
    (0.3, 1.7, -1.0, 2.0),
    (-2.0, 0.5, -math.inf, -1.5),
    (1.0, 2.0, 0.5, math.inf),
])
def test_partial_expectation_matches_quadrature(m, s, a, b):
    expected, _ = integrate.quad(lambda x: x * stats.norm.pdf(x, m, s), a, b, epsabs=1e-12)
    got = partial_expectation(UnivariateGaussian(mean=m, stddev=s), a, b)
    assert got == pytest.approx(expected, abs=1e-9)


def test_partial_expectation_whole_line_is_mean():
    assert partial_expectation(UnivariateGaussian(mean=1.25, stddev=3.0)) == pytest.approx(1.25)


def test_partial_expectation_point_mass():
    g = UnivariateGaussian(mean=2.0, stddev=0.0)
    assert partial_expectation(g, 0.0, 3.0) == 2.0
    assert partial_expectation(g, 2.5, 3.0) == 0.0


def test_partial_expectation_bad_limits():
    g = UnivariateGaussian(mean=0.0, stddev=1.0)
    with pytest.raises(ValueError):
        partial_expectation(g, 1.0, -1.0)
    with pytest.raises(ValueError):
        partial_expectation(g, math.nan, 1.0)


def test_expected_abs():
    assert expected_abs(UnivariateGaussian(mean=0.0, stddev=2.0)) == pytest.approx(
        2.0 * math.sqrt(2.0 / math.pi))
    assert expected_abs(UnivariateGaussian(mean=-3.0, stddev=0.0)) == 3.0
    expected, _ = integrate.quad(lambda x: abs(x) * stats.norm.pdf(x, 0.7, 1.3), -np.inf, np.inf)
    assert expected_abs(UnivariateGaussian(mean=0.7, stddev=1.3)) == pytest.approx(expected, abs=1e-9)


def test_kernel_and_mean():
    kernel = SquaredExponential(variance=2.0, lengthscale=0.5)
    k = kernel([0.0, 0.5], [0.0, 0.5])
    assert k[0, 0] == pytest.approx(2.0)
    assert k[0, 1] == pytest.approx(2.0 * math.exp(-0.5))
    assert np.allclose(k, k.T)
    assert np.all(ConstantMean(value=1.5)([1.0, 2.0, 3.0]) == 1.5)


def test_gram_survives_duplicate_points():
    g = gram(SquaredExponential(), ConstantMean(), [1.0, 1.0, 2.0])
    assert g.size == 3
    assert g.jitter >= 1e-10
    rhs = np.array([1.0, 1.0, 0.0])
    assert np.allclose(g.entries @ g.solve(rhs), rhs, atol=1e-8)


def test_gram_zero_variance_kernel():
    g = gram(SquaredExponential(variance=0.0), ConstantMean(), [1.0, 2.0])
    assert np.allclose(g.entries, g.jitter * np.eye(2))


def test_jittered_cholesky_gives_up():
    with pytest.raises(IllConditionedKernelError):
        jittered_cholesky(-np.eye(3))


def test_mvn_sample_moments():
    rng = np.random.default_rng(3)
    cov = np.array([[1.0, 0.6], [0.6, 2.0]])
    draws = mvn_sample([1.0, -1.0], cov, rng, size=40_000)
    assert draws.shape == (40_000, 2)
    assert np.allclose(draws.mean(axis=0), [1.0, -1.0], atol=0.03)
    assert np.allclose(np.cov(draws, rowvar=False), cov, atol=0.05)


def test_mvn_sample_zero_covariance_returns_mean():
    rng = np.random.default_rng(0)
    assert np.array_equal(mvn_sample([0.5, 2.0], np.zeros((2, 2)), rng), [0.5, 2.0])
    assert mvn_sample([0.5, 2.0], np.zeros((2, 2)), rng, size=3).shape == (3, 2)
