"""Tests for the receiver's decision rules"""

import numpy as np
import pytest

from choice_model import DiscernibilityThreshold, Exact, GaussianNoise, VectorDominance
from decision_policy import (DominanceCriterion, ReceiverAction, classify_regime, decide_scalar,
                             decide_threshold, decide_vector)
from payoff_engine import (CostParams, ExpectedPayoffs, VectorExpectedPayoffs, payoffs_noise,
                           payoffs_threshold, payoffs_with_cost)
from posterior_inference import BivariatePosterior


def _vector(def_v, imm_v, don_v):
    return VectorExpectedPayoffs(def_vector=def_v, imm_vector=imm_v, don_vector=don_v,
                                 mc_stderr=tuple(0.0 for _ in def_v))


def test_scalar_defers_when_def_is_best():
    assert decide_scalar(ExpectedPayoffs(def_value=1.0, imm_value=0.5, don_value=0.2)) == ReceiverAction.DEF


def test_scalar_tie_with_def_defers():
    assert decide_scalar(ExpectedPayoffs(def_value=0.5, imm_value=0.5, don_value=0.2)) == ReceiverAction.DEF


def test_scalar_cost_removes_deferral():
    payoffs = ExpectedPayoffs(def_value=1.0, imm_value=0.5, don_value=0.2, beta=0.6)
    assert decide_scalar(payoffs) == ReceiverAction.IMM


def test_scalar_prefers_status_quo_on_imm_don_tie():
    payoffs = ExpectedPayoffs(def_value=0.0, imm_value=0.5, don_value=0.5)
    assert decide_scalar(payoffs) == ReceiverAction.DON


def test_scalar_uses_exact_margin():
    # def_value rounds onto max(imm, don) but the margin is negative
    payoffs = ExpectedPayoffs(def_value=1.0, imm_value=1.0, don_value=0.0, def_excess=-1e-300)
    assert decide_scalar(payoffs) == ReceiverAction.IMM


def test_scalar_rejects_set_valued():
    with pytest.raises(ValueError):
        decide_scalar(ExpectedPayoffs(def_value=(0.1, 0.2), imm_value=0.0, don_value=0.0))


def test_threshold_criteria():
    payoffs = ExpectedPayoffs(def_value=(0.3, 0.9), imm_value=0.5, don_value=0.1)
    assert decide_threshold(payoffs, DominanceCriterion.PESSIMISTIC_A) == ReceiverAction.IMM
    assert decide_threshold(payoffs, DominanceCriterion.OPTIMISTIC_B) == ReceiverAction.DEF
    with pytest.raises(ValueError):
        decide_threshold(ExpectedPayoffs(def_value=0.3, imm_value=0.5, don_value=0.1),
                         DominanceCriterion.PESSIMISTIC_A)


def test_vector_dominance():
    clear = _vector((2.0, 2.0), (1.0, 0.0), (0.0, 1.0))
    assert decide_vector(clear, VectorDominance.PARETO) == ReceiverAction.DEF
    mixed = _vector((2.0, 0.0), (0.0, 2.0), (1.0, 1.0))
    assert decide_vector(mixed, VectorDominance.PARETO) is None
    assert decide_vector(mixed, VectorDominance.E_ADMISSIBLE) is None


def test_vector_one_dimension_follows_scalar_rule():
    v = _vector((0.5,), (0.5,), (0.1,))
    assert decide_vector(v, VectorDominance.PARETO) == ReceiverAction.DEF


def test_regime_table():
    uncertain = BivariatePosterior(mu_x=0.0, mu_o=0.0, k_xx=1.0, k_oo=1.0)
    certain = BivariatePosterior(mu_x=1.0, mu_o=0.0)
    assert classify_regime(uncertain, Exact()).label == "rational/uncertain"
    assert classify_regime(certain, Exact()).label == "rational/no-uncertainty"
    assert classify_regime(uncertain, GaussianNoise(sigma=1.0)).label == "bounded-rational/uncertain"
    regime = classify_regime(certain, DiscernibilityThreshold(sigma=0.5, epsilon=0.1))
    assert not regime.sender_rational
    assert not regime.receiver_uncertain


def _random_posterior(rng, uncertain=True):
    mu = rng.normal(0.0, 1.0, size=2)
    if not uncertain:
        return BivariatePosterior(mu_x=float(mu[0]), mu_o=float(mu[1]))
    root = rng.normal(0.0, 0.8, size=(2, 2))
    return BivariatePosterior.from_moments(mu, root @ root.T + 1e-6 * np.eye(2))


def test_criterion_a_deferral_implies_criterion_b():
    rng = np.random.default_rng(21)
    seen = 0
    for _ in range(300):
        sigma = float(rng.uniform(0.1, 1.5))
        epsilon = float(rng.uniform(0.01, 1.0)) * sigma
        payoffs = payoffs_threshold(_random_posterior(rng), sigma, epsilon)
        if decide_threshold(payoffs, DominanceCriterion.PESSIMISTIC_A) == ReceiverAction.DEF:
            seen += 1
            assert decide_threshold(payoffs, DominanceCriterion.OPTIMISTIC_B) == ReceiverAction.DEF
    assert seen > 0


def test_known_utility_with_cost_never_defers():
    rng = np.random.default_rng(3)
    for _ in range(200):
        bp = _random_posterior(rng, uncertain=False)
        sigma = float(rng.choice([0.0, rng.uniform(0.05, 2.0)]))
        cost = CostParams(gamma=float(rng.uniform(0.01, 1.0)), message_len=int(rng.integers(1, 40)))
        assert decide_scalar(payoffs_with_cost(bp, sigma, cost)) != ReceiverAction.DEF


def test_zero_cost_matches_cost_free_payoffs():
    rng = np.random.default_rng(5)
    for _ in range(50):
        bp = _random_posterior(rng)
        sigma = float(rng.uniform(0.0, 2.0))
        assert payoffs_with_cost(bp, sigma, CostParams(gamma=0.0, message_len=7)) == payoffs_noise(bp, sigma)


def test_large_cost_removes_deferral_to_rational_sender():
    bp = BivariatePosterior(mu_x=0.2, mu_o=0.1, k_xx=1.0, k_oo=1.0, k_xo=0.2)
    free = payoffs_with_cost(bp, 0.0, CostParams())
    assert decide_scalar(free) == ReceiverAction.DEF
    costly = payoffs_with_cost(bp, 0.0, CostParams(gamma=10.0, message_len=5))
    assert costly.def_value - costly.beta < max(costly.imm_value, costly.don_value)
    assert decide_scalar(costly) == ReceiverAction.IMM


@pytest.mark.parametrize("sigma", [0.0, 0.5, 2.0])
def test_deferral_margin_decreases_with_cost(sigma):
    bp = BivariatePosterior(mu_x=0.3, mu_o=-0.2, k_xx=0.8, k_oo=1.1, k_xo=0.1)
    margins = []
    for gamma in np.linspace(0.0, 2.0, 9):
        p = payoffs_with_cost(bp, sigma, CostParams(gamma=float(gamma), message_len=3))
        margins.append(p.def_excess - p.beta)
    assert np.all(np.diff(margins) < 0.0)
