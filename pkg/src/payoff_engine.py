"""
Expected payoffs of the receiver's actions.

IMM pays nu(x), DoN pays nu(o) and DEF pays whatever the sender keeps after
deferral. Under the Gaussian-noise model the DEF expectation has a closed
form built from two copies of E[nu(x) I{nu(x)+n(x) > nu(o)+n(o)}]. With
D = k_xx + k_oo - 2 k_xo + 2 sigma^2 and delta = (mu_x - mu_o) / sqrt(D) it
reads

    DEF = p mu_x + (1 - p) mu_o + e,   p = Phi(delta),
    e = (k_xx + k_oo - 2 k_xo) / sqrt(D) * phi(delta).

A message cost adds beta = gamma E|nu(o)| to the price of deferring. The
threshold model gives a set-valued DEF, and vector-valued utilities are
handled by Monte Carlo.
"""

import logging
import math
import sys
from enum import Enum
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import special

from choice_model import VectorDominance
from errors import IllPosedPayoffError
from gauss_kernels import (UnivariateGaussian, _cdf_interval, expected_abs,
                           mvn_sample, std_normal_cdf, std_normal_pdf)
from posterior_inference import BivariatePosterior

logger = logging.getLogger(__name__)

# smallest negative magnitude, keeps the sign of a margin that underflows
_NEGATIVE_TINY = -sys.float_info.min * sys.float_info.epsilon

MIN_MC_DRAWS = 10_000


class ExpectedPayoffs(BaseModel):
    """
    Expected payoffs of DEF, IMM and DoN.

    ``def_value`` is gross of the message cost; ``beta`` is the extra expected
    cost of deferring and decisions compare ``def_value - beta``. In the
    threshold model ``def_value`` is the pair (x-branch, o-branch).
    ``def_excess`` is def_value - max(imm, don) evaluated without cancellation
    when the closed form provides it.
    """
    model_config = ConfigDict(frozen=True)

    def_value: Union[float, Tuple[float, float]]
    imm_value: float
    don_value: float
    beta: float = Field(default=0.0, ge=0.0)
    p: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    e: Optional[float] = None
    message_cost: float = Field(default=0.0, ge=0.0)
    def_excess: Optional[float] = None

    @property
    def is_set_valued(self) -> bool:
        return isinstance(self.def_value, tuple)

    @property
    def def_low(self) -> float:
        return min(self.def_value) if self.is_set_valued else self.def_value

    @property
    def def_high(self) -> float:
        return max(self.def_value) if self.is_set_valued else self.def_value


class CostParams(BaseModel):
    """Communication cost gamma per message unit (fraction of |nu(o)|) and message length"""
    model_config = ConfigDict(frozen=True)

    gamma: float = Field(default=0.0, ge=0.0)
    message_len: int = Field(default=0, ge=0)


class IncomparablePolicy(str, Enum):
    """Payoff when the sender's noisy utility vectors are incomparable"""
    STATUS_QUO = "status_quo"
    LITERAL_ZERO = "literal_zero"


class VectorExpectedPayoffs(BaseModel):
    model_config = ConfigDict(frozen=True)

    def_vector: Tuple[float, ...]
    imm_vector: Tuple[float, ...]
    don_vector: Tuple[float, ...]
    mc_stderr: Tuple[float, ...]
    incomparable_fraction: float = Field(default=0.0, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _same_dimension(self) -> "VectorExpectedPayoffs":
        dims = {len(self.def_vector), len(self.imm_vector), len(self.don_vector), len(self.mc_stderr)}
        if len(dims) != 1:
            raise ValueError(f"payoff vectors differ in dimension: {sorted(dims)}")
        if not all(math.isfinite(s) for s in self.mc_stderr):
            raise ValueError("Monte Carlo standard errors must be finite")
        return self

    @property
    def dimension(self) -> int:
        return len(self.def_vector)


def _check_sigma(sigma: float) -> None:
    if not (math.isfinite(sigma) and sigma >= 0.0):
        raise ValueError(f"sigma must be finite and non-negative, got {sigma}")


def _noisy_denominator(bp: BivariatePosterior, sigma: float) -> Tuple[float, float]:
    """(k_xx + k_oo - 2 k_xo, the same plus 2 sigma^2)"""
    d_prime = bp.diff_variance
    return d_prime, d_prime + 2.0 * sigma * sigma


def def_building_block(bp: BivariatePosterior, sigma: float) -> float:
    """
    E[nu(x) I{nu(x) + n(x) > nu(o) + n(o)}] under the bivariate posterior.

    Raises:
        IllPosedPayoffError: no posterior uncertainty, no noise and mu_x == mu_o
    """
    _check_sigma(sigma)
    _, denom = _noisy_denominator(bp, sigma)
    if denom <= 0.0:
        if bp.mu_x == bp.mu_o:
            raise IllPosedPayoffError("no uncertainty, no noise and equal means")
        return bp.mu_x if bp.mu_x > bp.mu_o else 0.0
    root = math.sqrt(denom)
    z = (bp.mu_x - bp.mu_o) / root
    return bp.mu_x * std_normal_cdf(z) + (bp.k_xx - bp.k_xo) / root * std_normal_pdf(z)


def payoffs_noise(bp: BivariatePosterior, sigma: float) -> ExpectedPayoffs:
    """
    Closed-form DEF/IMM/DoN payoffs under the Gaussian-noise sender.

    DEF is evaluated in the form max(mu) + sqrt(D) * (D'/D phi(delta)
    - |delta| Phi(-|delta|)) so the comparison with max(imm, don) is exact in
    sign; without noise the bracket is clipped at 0 (Jensen).
    """
    _check_sigma(sigma)
    d_prime, denom = _noisy_denominator(bp, sigma)
    hi = max(bp.mu_x, bp.mu_o)
    if denom <= 0.0:
        if bp.mu_x == bp.mu_o:
            raise IllPosedPayoffError("no uncertainty, no noise and equal means")
        return ExpectedPayoffs(def_value=hi, imm_value=bp.mu_x, don_value=bp.mu_o,
                               p=1.0 if bp.mu_x > bp.mu_o else 0.0, e=0.0, def_excess=0.0)
    root = math.sqrt(denom)
    delta = (bp.mu_x - bp.mu_o) / root
    t = abs(delta)
    pdf = std_normal_pdf(delta)
    # t * Phi(-t) / phi(t) through the scaled complementary error function
    mills = t * math.sqrt(math.pi / 2.0) * float(special.erfcx(t / math.sqrt(2.0)))
    ratio = d_prime / denom - mills
    if denom == d_prime:
        # noise below working precision: E[max] >= max(E) holds exactly
        ratio = max(ratio, 0.0)
    excess = root * pdf * ratio
    # without posterior uncertainty deferring to a noisy sender never strictly helps
    if excess == 0.0 and (ratio < 0.0 or d_prime == 0.0):
        excess = _NEGATIVE_TINY
    return ExpectedPayoffs(def_value=hi + excess, imm_value=bp.mu_x, don_value=bp.mu_o,
                           p=std_normal_cdf(delta), e=d_prime / root * pdf, def_excess=excess)


def beta_cost(bp: BivariatePosterior, cost: CostParams) -> float:
    """Extra expected cost of deferring: gamma * E|nu(o)|"""
    if cost.gamma == 0.0:
        return 0.0
    return cost.gamma * expected_abs(UnivariateGaussian(mean=bp.mu_o, stddev=math.sqrt(bp.k_oo)))


def payoffs_with_cost(bp: BivariatePosterior, sigma: float, cost: CostParams) -> ExpectedPayoffs:
    """
    Noise payoffs with the message cost: beta populated and the common
    gamma * l_m * E|nu(o)| recorded as ``message_cost``.
    """
    base = payoffs_noise(bp, sigma)
    if cost.gamma == 0.0:
        return base
    beta = beta_cost(bp, cost)
    return base.model_copy(update={"beta": beta, "message_cost": beta * cost.message_len})


def payoffs_threshold(bp: BivariatePosterior, sigma: float, epsilon: float) -> ExpectedPayoffs:
    """
    Set-valued DEF under the discernibility-threshold sender.

    With d = nu(x) - nu(o), the sender keeps x when d > sigma, o when
    d < -sigma and keeps both (paying epsilon) when |d| <= sigma. The returned
    pair is (indiscernible payoff counted as nu(x) - eps, as nu(o) - eps).
    """
    if not sigma > 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not 0.0 < epsilon <= sigma:
        raise ValueError(f"epsilon must lie in (0, sigma], got {epsilon}")
    mu_d = bp.mu_x - bp.mu_o
    var_d = bp.diff_variance
    if var_d <= 0.0:
        if mu_d > sigma:
            pair, keep_x = (bp.mu_x, bp.mu_x), 1.0
        elif mu_d < -sigma:
            pair, keep_x = (bp.mu_o, bp.mu_o), 0.0
        else:
            pair, keep_x = (bp.mu_x - epsilon, bp.mu_o - epsilon), 0.0
        return ExpectedPayoffs(def_value=pair, imm_value=bp.mu_x, don_value=bp.mu_o, p=keep_x)

    sd = math.sqrt(var_d)
    upper = (sigma - mu_d) / sd
    lower = (-sigma - mu_d) / sd
    pdf_upper = std_normal_pdf(upper)
    pdf_lower = std_normal_pdf(lower)
    cov_x = bp.k_xx - bp.k_xo
    cov_o = bp.k_oo - bp.k_xo

    x_wins = bp.mu_x * std_normal_cdf(-upper) + cov_x / sd * pdf_upper
    o_wins = bp.mu_o * std_normal_cdf(lower) + cov_o / sd * pdf_lower
    tie_mass = float(_cdf_interval(lower, upper))
    tie_x = bp.mu_x * tie_mass + cov_x / sd * (pdf_lower - pdf_upper)
    tie_o = bp.mu_o * tie_mass + cov_o / sd * (pdf_upper - pdf_lower)

    clear = x_wins + o_wins - epsilon * tie_mass
    return ExpectedPayoffs(def_value=(clear + tie_x, clear + tie_o), imm_value=bp.mu_x,
                           don_value=bp.mu_o, p=std_normal_cdf(-upper))


def payoffs_vector_mc(posteriors: Sequence[BivariatePosterior], sigma: float,
                      dominance: VectorDominance, n_mc: int, rng: np.random.Generator,
                      incomparable: IncomparablePolicy = IncomparablePolicy.STATUS_QUO
                      ) -> VectorExpectedPayoffs:
    """
    Monte Carlo DEF payoff vector for d-dimensional utilities.

    Each coordinate k has an independent bivariate posterior over
    (nu_k(x), nu_k(o)); the sender's noisy vectors are compared with the
    dominance rule and the kept act's true vector is paid.

    Args:
        posteriors: one BivariatePosterior per coordinate
        sigma: noise scale of each coordinate (0 = rational)
        dominance: Pareto or e-admissibility
        n_mc: number of draws (at least 10^4)
        rng: caller-owned stream
        incomparable: payoff when both acts are kept

    Returns:
        VectorExpectedPayoffs with closed-form IMM/DoN means
    """
    if not posteriors:
        raise ValueError("need at least one coordinate posterior")
    if n_mc < MIN_MC_DRAWS:
        raise ValueError(f"n_mc must be at least {MIN_MC_DRAWS}, got {n_mc}")
    _check_sigma(sigma)
    dim = len(posteriors)
    nu_x = np.empty((n_mc, dim))
    nu_o = np.empty((n_mc, dim))
    for k, bp in enumerate(posteriors):
        draws = mvn_sample(bp.mean, bp.cov, rng, size=n_mc)
        nu_x[:, k], nu_o[:, k] = draws[:, 0], draws[:, 1]
    noisy_x = nu_x + sigma * rng.standard_normal((n_mc, dim))
    noisy_o = nu_o + sigma * rng.standard_normal((n_mc, dim))

    if dominance == VectorDominance.PARETO:
        keep_x = ~np.all(noisy_o > noisy_x, axis=1)
        keep_o = ~np.all(noisy_x > noisy_o, axis=1)
    else:
        keep_x = np.any(noisy_x >= noisy_o, axis=1)
        keep_o = np.any(noisy_o >= noisy_x, axis=1)
    both = keep_x & keep_o
    if incomparable == IncomparablePolicy.STATUS_QUO:
        kept_both = nu_o
    else:
        kept_both = np.zeros_like(nu_o)
    payoff = np.where((keep_x & ~keep_o)[:, None], nu_x,
                      np.where((keep_o & ~keep_x)[:, None], nu_o, kept_both))
    stderr = payoff.std(axis=0, ddof=1) / math.sqrt(n_mc)
    logger.debug("[payoff] vector DEF over %d draws, %.3f incomparable", n_mc, both.mean())
    return VectorExpectedPayoffs(
        def_vector=tuple(float(v) for v in payoff.mean(axis=0)),
        imm_vector=tuple(bp.mu_x for bp in posteriors),
        don_vector=tuple(bp.mu_o for bp in posteriors),
        mc_stderr=tuple(float(s) for s in stderr),
        incomparable_fraction=float(both.mean()),
    )
