"""Tests for GP preference posteriors"""

import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import stats

from choice_model import (ChoiceDataset, ChoiceObservation, DiscernibilityThreshold, Exact,
                          GaussianNoise, PairOutcome, as_act, honest_message)
from errors import InputError, PairwiseRequiredError
from gauss_kernels import ConstantMean, SquaredExponential
from posterior_inference import (EP, MAP, BivariatePosterior, Laplace, Sampling, fit,
                                 fit_scale, log_posterior, log_posterior_grad,
                                 method_from_name, posterior_summary, predict, predict_pair,
                                 probit_log_likelihood, threshold_log_likelihood)

KERNEL = SquaredExponential(variance=1.0, lengthscale=1.0)
MEAN = ConstantMean()
GRID = [as_act(v) for v in np.linspace(1.0, 9.0, 81)]


def _noisy_dataset(n_pairs=15, seed=2):
    pool = [as_act(v) for v in np.linspace(1.0, 9.0, 17)]
    utility = lambda act: math.sin(act[0])
    return honest_message(utility, GaussianNoise(sigma=1.0), pool, n_pairs,
                          np.random.default_rng(seed))


def test_method_from_name():
    assert isinstance(method_from_name("EP", damping=0.5), EP)
    with pytest.raises(InputError):
        method_from_name("variational")
    with pytest.raises(ValidationError):
        Sampling(n_samples=10, burn_in=10)


def test_fit_scale():
    assert fit_scale(GaussianNoise(sigma=1.0)) == pytest.approx(math.sqrt(2.0))
    assert fit_scale(GaussianNoise(sigma=1e-9)) == 1e-3
    assert fit_scale(Exact()) == 1e-3


def test_probit_log_likelihood():
    dataset = ChoiceDataset(observations=(ChoiceObservation.pair(1.0, 2.0, PairOutcome.FIRST),))
    assert probit_log_likelihood([0.5, -0.5], dataset, 2.0) == pytest.approx(
        math.log(stats.norm.cdf(0.5)))
    # deep in the lower tail the log stays finite
    assert math.isfinite(probit_log_likelihood([-40.0, 0.0], dataset, 1.0))
    both = ChoiceDataset(observations=(ChoiceObservation.pair(1.0, 2.0, PairOutcome.BOTH),))
    with pytest.raises(PairwiseRequiredError):
        probit_log_likelihood([0.0, 0.0], both, 1.0)


def test_threshold_log_likelihood():
    dataset = ChoiceDataset(observations=(
        ChoiceObservation.pair(1.0, 2.0, PairOutcome.FIRST),
        ChoiceObservation.pair(2.0, 3.0, PairOutcome.BOTH),
    ))
    assert threshold_log_likelihood([2.0, 0.5, 0.7], dataset, 1.0) == 0.0
    assert threshold_log_likelihood([1.0, 0.5, 0.7], dataset, 1.0) == -math.inf


def test_log_posterior_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    for case in range(50):
        dataset = _noisy_dataset(int(rng.integers(3, 16)), seed=case)
        model = GaussianNoise(sigma=float(rng.uniform(0.5, 2.0)))
        kernel = SquaredExponential(variance=float(rng.uniform(0.5, 2.0)),
                                    lengthscale=float(rng.uniform(0.7, 3.0)))
        n = len(dataset.acts())
        f = rng.normal(size=n)
        grad = log_posterior_grad(f, dataset, kernel, MEAN, model=model)
        h = 1e-6
        numeric = np.empty(n)
        for k in range(n):
            step = np.zeros(n)
            step[k] = h
            numeric[k] = (log_posterior(f + step, dataset, kernel, MEAN, model=model)
                          - log_posterior(f - step, dataset, kernel, MEAN, model=model)) / (2.0 * h)
        scale = max(1.0, np.max(np.abs(grad)))
        assert np.allclose(grad, numeric, rtol=1e-4, atol=1e-4 * scale), f"case {case}"


def test_empty_dataset_gives_prior():
    posterior = fit(ChoiceDataset(), KERNEL, MEAN, method=Laplace())
    assert posterior.n_training == 0
    mu, cov = predict(posterior, KERNEL, MEAN, [1.0, 2.0])
    assert np.allclose(mu, 0.0)
    assert np.allclose(cov, KERNEL([1.0, 2.0], [1.0, 2.0]))


def test_map_has_zero_covariance(risotto_pairs):
    posterior = fit(risotto_pairs, KERNEL, MEAN, method=MAP())
    mu, cov = predict(posterior, KERNEL, MEAN, GRID)
    assert np.all(cov == 0.0)
    bp = predict_pair(posterior, KERNEL, MEAN, 6.5, 3.5)
    assert bp.k_xx == bp.k_oo == bp.k_xo == 0.0


@pytest.mark.parametrize("method", [MAP(), Laplace()])
def test_posterior_mean_respects_risotto_preferences(risotto_pairs, method):
    posterior = fit(risotto_pairs, KERNEL, MEAN, method=method)
    for obs in risotto_pairs:
        winner, loser = obs.choice_set
        mu, _ = predict(posterior, KERNEL, MEAN, [winner, loser])
        assert mu[0] > mu[1]


def test_laplace_shrinks_variance_at_training_points(risotto_pairs):
    posterior = fit(risotto_pairs, KERNEL, MEAN, method=Laplace())
    _, cov = predict(posterior, KERNEL, MEAN, posterior.training_acts)
    prior = KERNEL(posterior.training_acts, posterior.training_acts)
    assert np.all(np.diag(cov) <= np.diag(prior) + 1e-9)
    assert np.all(np.linalg.eigvalsh(cov) > -1e-8)
    assert posterior.diagnostics["iterations"] >= 1


def test_laplace_and_ep_agree_on_ordering():
    dataset = _noisy_dataset(20, seed=8)
    model = GaussianNoise(sigma=1.0)
    lap = fit(dataset, KERNEL, MEAN, method=Laplace(), model=model)
    ep = fit(dataset, KERNEL, MEAN, method=EP(), model=model)
    mu_lap, _ = predict(lap, KERNEL, MEAN, GRID)
    mu_ep, _ = predict(ep, KERNEL, MEAN, GRID)
    tau, _ = stats.kendalltau(mu_lap, mu_ep)
    assert tau > 0.8
    assert ep.diagnostics["sweeps"] >= 1


@pytest.mark.slow
def test_sampling_and_laplace_pair_moments_agree():
    dataset = _noisy_dataset(15, seed=2)
    model = GaussianNoise(sigma=1.0)
    lap = fit(dataset, KERNEL, MEAN, method=Laplace(), model=model)
    mc = fit(dataset, KERNEL, MEAN, method=Sampling(n_samples=5000, burn_in=1000),
             model=model, rng=np.random.default_rng(11))
    for x, o in [(6.5, 3.5), (2.0, 8.0)]:
        a = predict_pair(lap, KERNEL, MEAN, x, o)
        b = predict_pair(mc, KERNEL, MEAN, x, o)
        assert abs(a.mu_x - b.mu_x) <= 0.2
        assert abs(a.mu_o - b.mu_o) <= 0.2
        assert b.diff_variance == pytest.approx(a.diff_variance, rel=0.35)


def test_sampling_satisfies_exact_choices(risotto_pairs):
    rng = np.random.default_rng(0)
    posterior = fit(risotto_pairs, KERNEL, MEAN, method=Sampling(n_samples=600, burn_in=100),
                    rng=rng, model=Exact())
    assert posterior.samples.shape == (500, posterior.n_training)
    index = {tuple(p): k for k, p in enumerate(posterior.training_acts.tolist())}
    for obs in risotto_pairs:
        winner, loser = obs.choice_set
        assert np.all(posterior.samples[:, index[winner]] > posterior.samples[:, index[loser]])


def test_sampling_needs_rng(risotto_pairs):
    with pytest.raises(ValueError):
        fit(risotto_pairs, KERNEL, MEAN, method=Sampling(n_samples=20, burn_in=0))


def test_indiscernible_pairs_need_threshold_model():
    dataset = ChoiceDataset(observations=(ChoiceObservation.pair(1.0, 2.0, PairOutcome.BOTH),))
    with pytest.raises(InputError):
        fit(dataset, KERNEL, MEAN, model=Exact())
    posterior = fit(dataset, KERNEL, MEAN, model=DiscernibilityThreshold(sigma=0.5, epsilon=0.1))
    assert posterior.n_training == 2


def test_predict_pair_requires_distinct_acts(risotto_pairs):
    posterior = fit(risotto_pairs, KERNEL, MEAN)
    with pytest.raises(ValueError):
        predict_pair(posterior, KERNEL, MEAN, 4.0, 4.0)


def test_bivariate_posterior_validation():
    with pytest.raises(ValidationError):
        BivariatePosterior(mu_x=0.0, mu_o=0.0, k_xx=1.0, k_oo=1.0, k_xo=2.0)
    bp = BivariatePosterior.from_moments([1.0, 0.0], np.array([[1.0, 1.0 + 1e-13], [1.0, 1.0]]))
    assert bp.diff_variance == pytest.approx(0.0, abs=1e-12)


def test_posterior_summary_columns(risotto_pairs):
    posterior = fit(risotto_pairs, KERNEL, MEAN)
    frame = posterior_summary(posterior, KERNEL, MEAN, GRID)
    assert list(frame.columns) == ["x", "mean", "variance"]
    assert len(frame) == 81
    assert (frame["variance"] >= 0.0).all()
