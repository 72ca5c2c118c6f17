"""
Gaussian-process preference learning from choice data.

Every pairwise observation constrains the latent difference
d = f(first) - f(second) to an interval: a strict choice of the first act
gives (margin, inf), of the second act (-inf, -margin), and an indiscernible
pair [-sigma, sigma]. Gradient-based approximations smooth each constraint
with a probit of scale s, log(Phi((hi - d)/s) - Phi((lo - d)/s)); the
sampling arm uses the exact likelihood.

Four approximations share this likelihood:

- MAP: Newton mode finding, no uncertainty (zero covariance)
- Laplace: Gaussian at the mode with the likelihood curvature
- EP: moment matching of one site per observation on its difference
- Sampling: elliptical slice sampling of the latent vector
"""

import logging
import math
from typing import Annotated, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import linalg, special

from choice_model import (ChoiceDataset, DiscernibilityThreshold, Exact,
                          GaussianNoise, PairOutcome, RationalityModel, as_act)
from errors import (ConvergenceError, InfeasibleStartError, InputError,
                    PairwiseRequiredError)
from gauss_kernels import GramMatrix, Kernel, MeanFunction, as_points, gram

logger = logging.getLogger(__name__)

SURROGATE_SCALE = 1e-3
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
LINE_SEARCH_HALVINGS = 40


# ---------------------------------------------------------------------------
# Inference methods
# ---------------------------------------------------------------------------

class MAP(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["map"] = "map"
    max_iter: int = Field(default=100, ge=1)
    tol: float = Field(default=1e-6, gt=0.0)


class Laplace(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["laplace"] = "laplace"
    max_iter: int = Field(default=100, ge=1)
    tol: float = Field(default=1e-6, gt=0.0)


class EP(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["ep"] = "ep"
    damping: float = Field(default=0.8, gt=0.0, le=1.0)
    tol: float = Field(default=1e-6, gt=0.0)
    max_sweeps: int = Field(default=200, ge=1)


class Sampling(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["sampling"] = "sampling"
    n_samples: int = Field(default=10_000, ge=1)
    burn_in: int = Field(default=1_000, ge=0)

    @model_validator(mode="after")
    def _keep_some(self) -> "Sampling":
        if self.n_samples <= self.burn_in:
            raise ValueError(f"n_samples ({self.n_samples}) must exceed burn_in ({self.burn_in})")
        return self


InferenceMethod = Annotated[Union[MAP, Laplace, EP, Sampling], Field(discriminator="kind")]

METHODS = {"map": MAP, "laplace": Laplace, "ep": EP, "sampling": Sampling}


def method_from_name(name: str, **params) -> InferenceMethod:
    """Build an inference method from its tag ('map', 'laplace', 'ep', 'sampling')"""
    try:
        cls = METHODS[name.strip().lower()]
    except KeyError:
        raise InputError(f"unknown inference method {name!r}; expected one of {sorted(METHODS)}")
    return cls(**params)


def fit_scale(model: RationalityModel) -> float:
    """
    Probit scale of the smoothed likelihood for a sender mechanism.

    Two independent noises of scale sigma give a difference of scale
    sqrt(2) sigma; indicator mechanisms use the surrogate scale.
    """
    if isinstance(model, GaussianNoise):
        return max(math.sqrt(2.0) * model.sigma, SURROGATE_SCALE)
    return SURROGATE_SCALE


# ---------------------------------------------------------------------------
# Likelihood
# ---------------------------------------------------------------------------

def _log_pdf(z: np.ndarray) -> np.ndarray:
    return -0.5 * np.square(z) - LOG_SQRT_2PI


def _log_interval_mass(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """log(Phi(b) - Phi(a)) for a < b, reflected so both tails stay accurate"""
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    log_hi = special.log_ndtr(hi)
    log_lo = special.log_ndtr(lo)
    with np.errstate(divide="ignore"):
        return log_hi + np.log1p(-np.exp(log_lo - log_hi))


def _ratios(a: np.ndarray, b: np.ndarray, log_z: np.ndarray):
    """phi(a)/Z, phi(b)/Z and the a*phi(a)/Z, b*phi(b)/Z terms (0 at infinite limits)"""
    r_a = np.exp(_log_pdf(a) - log_z)
    r_b = np.exp(_log_pdf(b) - log_z)
    with np.errstate(invalid="ignore"):
        ar_a = np.where(np.isfinite(a), a * r_a, 0.0)
        br_b = np.where(np.isfinite(b), b * r_b, 0.0)
    return r_a, r_b, ar_a, br_b


class CensoredProbit(BaseModel):
    """Interval-censored probit factors on latent differences, one per observation"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    first: np.ndarray
    second: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    closed: np.ndarray
    scale: float = Field(gt=0.0)
    n_latent: int

    @classmethod
    def from_dataset(cls, dataset: ChoiceDataset, acts: Sequence, model: RationalityModel,
                     scale: float) -> "CensoredProbit":
        index = {a: i for i, a in enumerate(acts)}
        margin = model.sigma if isinstance(model, DiscernibilityThreshold) else 0.0
        first, second, lower, upper, closed = [], [], [], [], []
        for obs in dataset:
            outcome = obs.pair_outcome()
            z, y = obs.choice_set
            if outcome == PairOutcome.BOTH:
                if not isinstance(model, DiscernibilityThreshold):
                    raise InputError(
                        f"both acts chosen in {obs.to_line()!r} needs the threshold model")
                bounds = (-model.sigma, model.sigma)
            elif outcome == PairOutcome.FIRST:
                bounds = (margin, math.inf)
            else:
                bounds = (-math.inf, -margin)
            first.append(index[z])
            second.append(index[y])
            lower.append(bounds[0])
            upper.append(bounds[1])
            closed.append(outcome == PairOutcome.BOTH)
        return cls(first=np.asarray(first, dtype=int), second=np.asarray(second, dtype=int),
                   lower=np.asarray(lower, dtype=float), upper=np.asarray(upper, dtype=float),
                   closed=np.asarray(closed, dtype=bool), scale=scale, n_latent=len(index))

    @property
    def n_factors(self) -> int:
        return self.first.shape[0]

    def difference_matrix(self) -> np.ndarray:
        """D with (D f)_i = f[first_i] - f[second_i]"""
        rows = np.arange(self.n_factors)
        mat = np.zeros((self.n_factors, self.n_latent))
        mat[rows, self.first] += 1.0
        mat[rows, self.second] -= 1.0
        return mat

    def differences(self, f: np.ndarray) -> np.ndarray:
        return f[self.first] - f[self.second]

    def _limits(self, d: np.ndarray):
        return (self.lower - d) / self.scale, (self.upper - d) / self.scale

    def log_likelihood(self, f: np.ndarray) -> float:
        a, b = self._limits(self.differences(f))
        return float(np.sum(_log_interval_mass(a, b)))

    def derivatives(self, f: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        First derivative of each log factor in its difference and the
        (clipped) negative second derivative.
        """
        a, b = self._limits(self.differences(f))
        r_a, r_b, ar_a, br_b = _ratios(a, b, _log_interval_mass(a, b))
        s = self.scale
        grad = (r_a - r_b) / s
        curvature = ((ar_a - br_b) - np.square(r_a - r_b)) / (s * s)
        return grad, np.maximum(-curvature, 0.0)

    def log_indicator(self, f: np.ndarray) -> float:
        """0 when every difference lies in its interval, -inf otherwise"""
        d = self.differences(f)
        inside = np.where(self.closed,
                          (d >= self.lower) & (d <= self.upper),
                          (d > self.lower) & (d < self.upper))
        return 0.0 if bool(np.all(inside)) else -math.inf

    def tilted_moments(self, i: int, mu_c: float, v_c: float) -> Tuple[float, float]:
        """Mean and variance of N(d; mu_c, v_c) times factor i"""
        t = math.sqrt(v_c + self.scale ** 2)
        alpha = np.asarray([(self.lower[i] - mu_c) / t])
        beta = np.asarray([(self.upper[i] - mu_c) / t])
        r_a, r_b, ar_a, br_b = _ratios(alpha, beta, _log_interval_mass(alpha, beta))
        mu_hat = mu_c + v_c / t * float(r_a[0] - r_b[0])
        v_hat = v_c - v_c ** 2 / t ** 2 * float((br_b[0] - ar_a[0]) + (r_a[0] - r_b[0]) ** 2)
        return mu_hat, v_hat


class _Problem(BaseModel):
    """Prior Gram matrix and likelihood over the acts of one dataset"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    acts: List[Tuple[float, ...]]
    gram: GramMatrix
    likelihood: CensoredProbit
    diff: np.ndarray
    model: RationalityModel

    @classmethod
    def build(cls, dataset: ChoiceDataset, kernel: Kernel, mean: MeanFunction,
              model: RationalityModel, scale: float) -> "_Problem":
        acts = dataset.acts()
        lik = CensoredProbit.from_dataset(dataset, acts, model, scale)
        return cls(acts=acts, gram=gram(kernel, mean, acts), likelihood=lik,
                   diff=lik.difference_matrix(), model=model)

    def exact_log_likelihood(self, f: np.ndarray) -> float:
        if isinstance(self.model, GaussianNoise):
            if self.likelihood.scale == fit_scale(self.model):
                return self.likelihood.log_likelihood(f)
            exact = self.likelihood.model_copy(update={"scale": fit_scale(self.model)})
            return exact.log_likelihood(f)
        return self.likelihood.log_indicator(f)


def _check_latent(f, n: int) -> np.ndarray:
    vec = np.asarray(f, dtype=float).reshape(-1)
    if vec.shape[0] != n:
        raise ValueError(f"latent vector has {vec.shape[0]} entries, dataset has {n} acts")
    return vec


def probit_log_likelihood(f, dataset: ChoiceDataset, sigma_fit: float) -> float:
    """
    sum_i log Phi((f_winner - f_loser) / sigma_fit).

    ``f`` is indexed like ``dataset.acts()``.

    Raises:
        PairwiseRequiredError: an observation is not a pair with a single winner
    """
    if not sigma_fit > 0.0:
        raise ValueError(f"sigma_fit must be positive, got {sigma_fit}")
    for obs in dataset:
        if obs.pair_outcome() == PairOutcome.BOTH:
            raise PairwiseRequiredError(f"{obs.to_line()!r} has no single winner")
    if len(dataset) == 0:
        return 0.0
    acts = dataset.acts()
    lik = CensoredProbit.from_dataset(dataset, acts, Exact(), sigma_fit)
    return lik.log_likelihood(_check_latent(f, len(acts)))


def threshold_log_likelihood(f, dataset: ChoiceDataset, sigma: float) -> float:
    """Log indicator that every observation matches the threshold mechanism under f"""
    if len(dataset) == 0:
        return 0.0
    model = DiscernibilityThreshold(sigma=sigma, epsilon=sigma)
    acts = dataset.acts()
    lik = CensoredProbit.from_dataset(dataset, acts, model, SURROGATE_SCALE)
    return lik.log_indicator(_check_latent(f, len(acts)))


def log_posterior(f, dataset: ChoiceDataset, kernel: Kernel, mean: MeanFunction,
                  model: Optional[RationalityModel] = None,
                  sigma_fit: Optional[float] = None) -> float:
    """Unnormalized log p(f | m): smoothed log likelihood plus the GP log prior"""
    model = model or Exact()
    problem = _Problem.build(dataset, kernel, mean, model,
                             sigma_fit if sigma_fit is not None else fit_scale(model))
    vec = _check_latent(f, len(problem.acts))
    centered = vec - problem.gram.mean
    return problem.likelihood.log_likelihood(vec) - 0.5 * centered @ problem.gram.solve(centered)


def log_posterior_grad(f, dataset: ChoiceDataset, kernel: Kernel, mean: MeanFunction,
                       model: Optional[RationalityModel] = None,
                       sigma_fit: Optional[float] = None) -> np.ndarray:
    model = model or Exact()
    problem = _Problem.build(dataset, kernel, mean, model,
                             sigma_fit if sigma_fit is not None else fit_scale(model))
    vec = _check_latent(f, len(problem.acts))
    grad_d, _ = problem.likelihood.derivatives(vec)
    return problem.diff.T @ grad_d - problem.gram.solve(vec - problem.gram.mean)


# ---------------------------------------------------------------------------
# Posterior objects
# ---------------------------------------------------------------------------

class LatentPosterior(BaseModel):
    """
    Approximate posterior over the latent utility at the training acts.

    Predictive means are m0(z) + k(z, X) @ alpha. For Laplace and EP the
    predictive covariance is k(z, z') - (R k(X, z))^T B^-1 (R k(X, z')) with
    site root R and B = I + R K R^T held as its lower Cholesky factor. The
    sampling arm keeps its retained latent draws.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    method: str
    training_acts: np.ndarray
    posterior_mean: np.ndarray
    posterior_cov: np.ndarray
    alpha: np.ndarray
    likelihood_scale: float
    gram: Optional[GramMatrix] = None
    site_root: Optional[np.ndarray] = None
    b_cholesky: Optional[np.ndarray] = None
    samples: Optional[np.ndarray] = None
    diagnostics: Dict[str, float] = Field(default_factory=dict)

    @property
    def n_training(self) -> int:
        return self.posterior_mean.shape[0]


class BivariatePosterior(BaseModel):
    """Joint posterior of (nu(x), nu(o))"""
    model_config = ConfigDict(frozen=True)

    mu_x: float
    mu_o: float
    k_xx: float = Field(default=0.0, ge=0.0)
    k_oo: float = Field(default=0.0, ge=0.0)
    k_xo: float = 0.0

    @model_validator(mode="after")
    def _check_psd(self) -> "BivariatePosterior":
        if not all(math.isfinite(v) for v in (self.mu_x, self.mu_o, self.k_xx, self.k_oo, self.k_xo)):
            raise ValueError("bivariate posterior entries must be finite")
        if self.k_xx * self.k_oo - self.k_xo ** 2 < -1e-10:
            raise ValueError(
                f"covariance [[{self.k_xx}, {self.k_xo}], [{self.k_xo}, {self.k_oo}]] is not PSD")
        return self

    @classmethod
    def from_moments(cls, mean: Sequence[float], cov: np.ndarray) -> "BivariatePosterior":
        """Build from a 2-vector and 2x2 matrix, clipping round-off outside the PSD cone"""
        k_xx = max(float(cov[0, 0]), 0.0)
        k_oo = max(float(cov[1, 1]), 0.0)
        bound = math.sqrt(k_xx * k_oo)
        k_xo = min(max(0.5 * float(cov[0, 1] + cov[1, 0]), -bound), bound)
        return cls(mu_x=float(mean[0]), mu_o=float(mean[1]), k_xx=k_xx, k_oo=k_oo, k_xo=k_xo)

    @property
    def mean(self) -> np.ndarray:
        return np.array([self.mu_x, self.mu_o])

    @property
    def cov(self) -> np.ndarray:
        return np.array([[self.k_xx, self.k_xo], [self.k_xo, self.k_oo]])

    @property
    def diff_variance(self) -> float:
        """Var(nu(x) - nu(o))"""
        return max(self.k_xx + self.k_oo - 2.0 * self.k_xo, 0.0)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def _factor_b(root: np.ndarray, K: np.ndarray) -> np.ndarray:
    b_mat = np.eye(root.shape[0]) + root @ K @ root.T
    return linalg.cholesky(0.5 * (b_mat + b_mat.T), lower=True)


def _find_mode(problem: _Problem, max_iter: int, tol: float):
    """
    Newton iterations on a = K^-1 (f - m0) with backtracking line search.

    Returns:
        (a, f, site root R, Cholesky factor of B, diagnostics) at the mode
    """
    K = problem.gram.entries
    m0 = problem.gram.mean
    D = problem.diff
    lik = problem.likelihood
    a = np.zeros(K.shape[0])
    f = m0.copy()
    psi = lik.log_likelihood(f)
    grad_norm = math.inf
    for iteration in range(max_iter + 1):
        grad_d, lam = lik.derivatives(f)
        grad_norm = float(np.max(np.abs(D.T @ grad_d - a)))
        root = np.sqrt(lam)[:, None] * D
        chol_b = _factor_b(root, K)
        if grad_norm <= tol:
            logger.debug("[fit] mode after %d Newton iterations (grad %.1e)", iteration, grad_norm)
            return a, f, root, chol_b, {"iterations": iteration, "grad_norm": grad_norm}
        if iteration == max_iter:
            break
        b = D.T @ (lam * (D @ (f - m0))) + D.T @ grad_d
        step = b - root.T @ linalg.cho_solve((chol_b, True), root @ (K @ b)) - a
        t = 1.0
        for _ in range(LINE_SEARCH_HALVINGS):
            a_try = a + t * step
            f_try = K @ a_try + m0
            psi_try = lik.log_likelihood(f_try) - 0.5 * a_try @ K @ a_try
            if psi_try >= psi:
                break
            t *= 0.5
        else:
            # no ascent left along the Newton direction at working precision
            logger.debug("[fit] Newton stalled at iteration %d (grad %.1e)", iteration, grad_norm)
            return a, f, root, chol_b, {"iterations": iteration, "grad_norm": grad_norm,
                                        "stalled": 1.0}
        gain = psi_try - psi
        a, f, psi = a_try, f_try, psi_try
        if gain <= 1e-14 * (1.0 + abs(psi)) and np.max(np.abs(t * step)) <= 1e-12 * (1.0 + np.max(np.abs(a))):
            grad_d, lam = lik.derivatives(f)
            root = np.sqrt(lam)[:, None] * D
            grad_norm = float(np.max(np.abs(D.T @ grad_d - a)))
            logger.debug("[fit] Newton step vanished at iteration %d (grad %.1e)", iteration, grad_norm)
            return a, f, root, _factor_b(root, K), {"iterations": iteration + 1,
                                                    "grad_norm": grad_norm, "stalled": 1.0}
    raise ConvergenceError("Newton mode search did not converge",
                           {"iterations": max_iter, "grad_norm": f"{grad_norm:.3e}"})


def _gaussian_posterior(K: np.ndarray, root: np.ndarray, chol_b: np.ndarray) -> np.ndarray:
    v = linalg.solve_triangular(chol_b, root @ K, lower=True)
    cov = K - v.T @ v
    return 0.5 * (cov + cov.T)


def _ep_refresh(K: np.ndarray, m0: np.ndarray, D: np.ndarray, tau: np.ndarray, nu: np.ndarray):
    root = np.sqrt(tau)[:, None] * D
    chol_b = _factor_b(root, K)
    h = D.T @ nu
    alpha = h - root.T @ linalg.cho_solve((chol_b, True), root @ (m0 + K @ h))
    return root, chol_b, alpha, m0 + K @ alpha, _gaussian_posterior(K, root, chol_b)


def _run_ep(problem: _Problem, method: EP):
    """
    Expectation propagation with one Gaussian site per difference factor.

    Sites are updated one at a time with rank-1 corrections; the posterior is
    recomputed from the site parameters after every sweep.
    """
    K = problem.gram.entries
    m0 = problem.gram.mean
    D = problem.diff
    lik = problem.likelihood
    n_sites = D.shape[0]
    tau = np.zeros(n_sites)
    nu = np.zeros(n_sites)
    mu = m0.copy()
    sigma = K.copy()
    change = math.inf
    for sweep in range(1, method.max_sweeps + 1):
        change = 0.0
        for i in range(n_sites):
            c = D[i]
            s_vec = sigma @ c
            v_d = float(c @ s_vec)
            mu_d = float(c @ mu)
            tau_c = 1.0 / v_d - tau[i]
            if tau_c <= 0.0:
                logger.debug("[ep] site %d skipped: cavity precision %.2e", i, tau_c)
                continue
            nu_c = mu_d / v_d - nu[i]
            v_c = 1.0 / tau_c
            mu_hat, v_hat = lik.tilted_moments(i, nu_c * v_c, v_c)
            if not v_hat > 0.0:
                logger.debug("[ep] site %d skipped: tilted variance %.2e", i, v_hat)
                continue
            tau_new = (1.0 - method.damping) * tau[i] + method.damping * max(1.0 / v_hat - tau_c, 0.0)
            nu_new = (1.0 - method.damping) * nu[i] + method.damping * (mu_hat / v_hat - nu_c)
            d_tau = tau_new - tau[i]
            d_nu = nu_new - nu[i]
            change = max(change, abs(d_tau) / max(1.0, abs(tau_new)),
                         abs(d_nu) / max(1.0, abs(nu_new)))
            denom = 1.0 + d_tau * v_d
            sigma = sigma - (d_tau / denom) * np.outer(s_vec, s_vec)
            mu = mu + ((d_nu - d_tau * mu_d) / denom) * s_vec
            tau[i], nu[i] = tau_new, nu_new
        root, chol_b, alpha, mu, sigma = _ep_refresh(K, m0, D, tau, nu)
        if change < method.tol:
            logger.debug("[ep] converged after %d sweeps (change %.1e)", sweep, change)
            return root, chol_b, alpha, mu, sigma, {"sweeps": sweep, "site_change": change}
    raise ConvergenceError("EP did not converge",
                           {"sweeps": method.max_sweeps, "site_change": f"{change:.3e}"})


def _run_sampler(problem: _Problem, method: Sampling, rng: np.random.Generator,
                 start: np.ndarray) -> np.ndarray:
    """Elliptical slice sampling of f under the GP prior and the exact likelihood"""
    chol = problem.gram.cholesky
    m0 = problem.gram.mean
    n = m0.shape[0]
    g = start - m0
    ll = problem.exact_log_likelihood(start)
    if not math.isfinite(ll):
        raise InfeasibleStartError("the surrogate mode violates the observed choices")
    kept = np.empty((method.n_samples - method.burn_in, n))
    for it in range(method.n_samples):
        ellipse = chol @ rng.standard_normal(n)
        with np.errstate(divide="ignore"):
            log_y = ll + math.log(rng.uniform())
        theta = rng.uniform(0.0, 2.0 * math.pi)
        lo, hi = theta - 2.0 * math.pi, theta
        while True:
            proposal = g * math.cos(theta) + ellipse * math.sin(theta)
            ll_new = problem.exact_log_likelihood(m0 + proposal)
            if ll_new > log_y:
                g, ll = proposal, ll_new
                break
            if theta < 0.0:
                lo = theta
            else:
                hi = theta
            if hi - lo < 1e-12:
                break
            theta = rng.uniform(lo, hi)
        if it >= method.burn_in:
            kept[it - method.burn_in] = m0 + g
    return kept


def _prior_posterior(method: InferenceMethod, scale: float) -> LatentPosterior:
    empty = np.zeros(0)
    return LatentPosterior(method=method.kind, training_acts=np.zeros((0, 0)),
                           posterior_mean=empty, posterior_cov=np.zeros((0, 0)),
                           alpha=empty, likelihood_scale=scale)


def fit(dataset: ChoiceDataset, kernel: Kernel, mean: MeanFunction,
        sigma_fit: Optional[float] = None, method: Optional[InferenceMethod] = None,
        rng: Optional[np.random.Generator] = None,
        model: Optional[RationalityModel] = None) -> LatentPosterior:
    """
    Approximate the posterior over the latent utility at the dataset's acts.

    Args:
        dataset: pairwise choice message
        kernel: prior covariance (common knowledge)
        mean: prior mean (common knowledge)
        sigma_fit: probit scale of the smoothed likelihood; defaults to
            ``fit_scale(model)``
        method: MAP, Laplace (default), EP or Sampling
        rng: required by the Sampling arm
        model: the sender mechanism that produced the data (default Exact)

    Returns:
        LatentPosterior

    Raises:
        ConvergenceError: Newton or EP ran out of iterations
        InfeasibleStartError: the sampler found no feasible start
    """
    method = method if method is not None else Laplace()
    model = model if model is not None else Exact()
    scale = sigma_fit if sigma_fit is not None else fit_scale(model)
    if not scale > 0.0:
        raise ValueError(f"sigma_fit must be positive, got {scale}")
    if len(dataset) == 0:
        return _prior_posterior(method, scale)

    problem = _Problem.build(dataset, kernel, mean, model, scale)
    K = problem.gram.entries
    points = as_points(problem.acts)
    common = dict(method=method.kind, training_acts=points, likelihood_scale=scale,
                  gram=problem.gram)

    if isinstance(method, EP):
        root, chol_b, alpha, mu, cov, info = _run_ep(problem, method)
        return LatentPosterior(posterior_mean=mu, posterior_cov=cov, alpha=alpha,
                               site_root=root, b_cholesky=chol_b, diagnostics=info, **common)

    if isinstance(method, Sampling):
        if rng is None:
            raise ValueError("the sampling arm needs a random generator")
        _, start, _, _, _ = _find_mode(problem, MAP().max_iter, MAP().tol)
        samples = _run_sampler(problem, method, rng, start)
        mu = samples.mean(axis=0)
        cov = np.atleast_2d(np.cov(samples, rowvar=False))
        logger.debug("[fit] sampling kept %d draws", samples.shape[0])
        return LatentPosterior(posterior_mean=mu, posterior_cov=0.5 * (cov + cov.T),
                               alpha=problem.gram.solve(mu - problem.gram.mean),
                               samples=samples, **common)

    a, f, root, chol_b, info = _find_mode(problem, method.max_iter, method.tol)
    if isinstance(method, MAP):
        return LatentPosterior(posterior_mean=f, posterior_cov=np.zeros_like(K), alpha=a,
                               diagnostics=info, **common)
    return LatentPosterior(posterior_mean=f, posterior_cov=_gaussian_posterior(K, root, chol_b),
                           alpha=a, site_root=root, b_cholesky=chol_b, diagnostics=info, **common)


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def predict(posterior: LatentPosterior, kernel: Kernel, mean: MeanFunction,
            points) -> Tuple[np.ndarray, np.ndarray]:
    """
    Predictive mean vector and covariance matrix of the latent utility at ``points``.

    MAP gives exactly zero covariance. The sampling arm averages the GP
    conditionals of its draws (mean of conditional means, their spread plus the
    conditional covariance).
    """
    pts = as_points(points)
    prior_mean = mean(pts)
    zero = np.zeros((pts.shape[0], pts.shape[0]))
    if posterior.n_training == 0:
        return prior_mean, zero if posterior.method == MAP().kind else kernel(pts, pts)

    k_cross = kernel(posterior.training_acts, pts)
    if posterior.samples is not None:
        gain = posterior.gram.solve(k_cross).T
        mu = prior_mean + gain @ (posterior.posterior_mean - posterior.gram.mean)
        cov = kernel(pts, pts) - gain @ k_cross + gain @ posterior.posterior_cov @ gain.T
        return mu, 0.5 * (cov + cov.T)

    mu = prior_mean + k_cross.T @ posterior.alpha
    if posterior.method == MAP().kind:
        return mu, zero
    v = linalg.solve_triangular(posterior.b_cholesky, posterior.site_root @ k_cross, lower=True)
    cov = kernel(pts, pts) - v.T @ v
    return mu, 0.5 * (cov + cov.T)


def predict_pair(posterior: LatentPosterior, kernel: Kernel, mean: MeanFunction,
                 x, o) -> BivariatePosterior:
    """Bivariate posterior of (nu(x), nu(o)) for two distinct acts"""
    act_x, act_o = as_act(x), as_act(o)
    if act_x == act_o:
        raise ValueError(f"x and o must differ, both are {act_x}")
    mu, cov = predict(posterior, kernel, mean, [act_x, act_o])
    return BivariatePosterior.from_moments(mu, cov)


def posterior_summary(posterior: LatentPosterior, kernel: Kernel, mean: MeanFunction,
                      grid) -> pd.DataFrame:
    """Grid coordinates, posterior mean and posterior variance, one row per grid act"""
    pts = as_points(grid)
    mu, cov = predict(posterior, kernel, mean, pts)
    if pts.shape[1] == 1:
        frame = pd.DataFrame({"x": pts[:, 0]})
    else:
        frame = pd.DataFrame({f"x{k + 1}": pts[:, k] for k in range(pts.shape[1])})
    frame["mean"] = mu
    frame["variance"] = np.maximum(np.diag(cov), 0.0)
    return frame
