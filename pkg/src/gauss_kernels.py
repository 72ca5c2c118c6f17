"""
Gaussian primitives shared by every closed-form payoff.

Standard normal pdf/cdf, the three Gaussian integral identities used in the
payoff derivations, truncated-normal partial expectations (inverse Mills
ratio), the folded-normal mean E|x|, squared-exponential Gram matrices with a
jitter ladder, and multivariate normal sampling.

Unbounded truncation limits are IEEE infinities (``math.inf``/``-math.inf``).
"""

import logging
import math
from typing import Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import linalg, special
from scipy.spatial.distance import cdist

from errors import IllConditionedKernelError

logger = logging.getLogger(__name__)

SQRT_2PI = math.sqrt(2.0 * math.pi)

JITTER_START = 1e-10
JITTER_MAX = 1e-6

ArrayLike = Union[float, np.ndarray]


class UnivariateGaussian(BaseModel):
    """x ~ N(mean, stddev^2); stddev = 0 is a point mass"""
    model_config = ConfigDict(frozen=True)

    mean: float
    stddev: float = Field(ge=0.0)


class SquaredExponential(BaseModel):
    """k(z, z') = variance * exp(-|z - z'|^2 / (2 lengthscale^2))"""
    model_config = ConfigDict(frozen=True)

    kind: Literal["squared_exponential"] = "squared_exponential"
    variance: float = Field(default=1.0, ge=0.0)
    lengthscale: float = Field(default=1.0, gt=0.0)

    def __call__(self, points_a, points_b) -> np.ndarray:
        a = as_points(points_a)
        b = as_points(points_b)
        sq = cdist(a, b, metric="sqeuclidean")
        return self.variance * np.exp(-0.5 * sq / self.lengthscale ** 2)


# Only the squared exponential is implemented; other kernels would join a
# discriminated union on ``kind``.
Kernel = SquaredExponential


class ConstantMean(BaseModel):
    """Prior mean function mu_0(z) = value"""
    model_config = ConfigDict(frozen=True)

    value: float = 0.0

    def __call__(self, points) -> np.ndarray:
        return np.full(as_points(points).shape[0], self.value, dtype=float)


MeanFunction = ConstantMean


class GramMatrix(BaseModel):
    """Prior covariance over a finite set of acts, already factorized"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    points: np.ndarray
    entries: np.ndarray
    jitter: float
    cholesky: np.ndarray
    mean: np.ndarray

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """entries^{-1} @ rhs via the stored lower factor"""
        return linalg.cho_solve((self.cholesky, True), rhs)


def as_points(points) -> np.ndarray:
    """Coerce acts (tuples, lists, 1-D or 2-D arrays) to an (n, dim) float array"""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return arr


def _require_finite(z: ArrayLike, name: str = "z") -> None:
    if not np.all(np.isfinite(z)):
        raise ValueError(f"{name} must be finite, got {z!r}")


def _scalar_or_array(value: np.ndarray) -> ArrayLike:
    return float(value) if np.ndim(value) == 0 else value


def _pdf(z: ArrayLike) -> ArrayLike:
    # accepts +-inf (pdf -> 0)
    return np.exp(-0.5 * np.square(z)) / SQRT_2PI


def _cdf_interval(lo: ArrayLike, hi: ArrayLike) -> ArrayLike:
    """Phi(hi) - Phi(lo) without cancellation in the upper tail"""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    upper = lo > 0
    return np.where(upper, special.ndtr(-lo) - special.ndtr(-hi),
                    special.ndtr(hi) - special.ndtr(lo))


def std_normal_pdf(z: ArrayLike) -> ArrayLike:
    """phi(z) = exp(-z^2 / 2) / sqrt(2 pi)"""
    _require_finite(z)
    return _scalar_or_array(_pdf(np.asarray(z, dtype=float)))


def std_normal_cdf(z: ArrayLike) -> ArrayLike:
    """Phi(z), accurate to ~1e-16 in both tails (scipy's ndtr)"""
    _require_finite(z)
    return _scalar_or_array(special.ndtr(np.asarray(z, dtype=float)))


def log_std_normal_cdf(z: ArrayLike) -> ArrayLike:
    """log Phi(z), computed in log space for the lower tail"""
    return _scalar_or_array(special.log_ndtr(np.asarray(z, dtype=float)))


def integral_phi_phi(a: float, b: float) -> float:
    """int phi(x) phi(a + b x) dx = phi(a / sqrt(1+b^2)) / sqrt(1+b^2)"""
    _require_finite([a, b], "a, b")
    r = math.sqrt(1.0 + b * b)
    return float(_pdf(a / r)) / r


def integral_Phi_phi(a: float, b: float) -> float:
    """int Phi(a + b x) phi(x) dx = Phi(a / sqrt(1+b^2))"""
    _require_finite([a, b], "a, b")
    return float(special.ndtr(a / math.sqrt(1.0 + b * b)))


def integral_xPhi_phi(a: float, b: float) -> float:
    """int x Phi(a + b x) phi(x) dx = b / sqrt(1+b^2) * phi(a / sqrt(1+b^2))"""
    _require_finite([a, b], "a, b")
    r = math.sqrt(1.0 + b * b)
    return b / r * float(_pdf(a / r))


def partial_expectation(g: UnivariateGaussian, a: float = -math.inf,
                        b: float = math.inf) -> float:
    """
    E[x * I{a <= x <= b}] for x ~ g.

    Args:
        g: the Gaussian
        a: lower limit, may be -inf
        b: upper limit, may be +inf

    Returns:
        m (Phi(zb) - Phi(za)) - s (phi(zb) - phi(za)) with z = (limit - m) / s
    """
    if math.isnan(a) or math.isnan(b):
        raise ValueError("truncation limits must not be NaN")
    if a > b:
        raise ValueError(f"lower limit {a} exceeds upper limit {b}")
    m, s = g.mean, g.stddev
    if s == 0.0:
        return m if a <= m <= b else 0.0
    za = (a - m) / s
    zb = (b - m) / s
    mass = float(_cdf_interval(za, zb))
    return m * mass - s * (float(_pdf(zb)) - float(_pdf(za)))


def expected_abs(g: UnivariateGaussian) -> float:
    """Folded-normal mean E|x| = m (1 - 2 Phi(-m/s)) + 2 s phi(-m/s)"""
    m, s = g.mean, g.stddev
    if s == 0.0:
        return abs(m)
    z = -m / s
    return m * (1.0 - 2.0 * float(special.ndtr(z))) + 2.0 * s * float(_pdf(z))


def jittered_cholesky(matrix: np.ndarray, start: float = JITTER_START,
                      stop: float = JITTER_MAX) -> Tuple[np.ndarray, float]:
    """
    Lower Cholesky factor of matrix + jitter * I, escalating jitter x10
    from ``start`` up to ``stop``.

    Returns:
        (factor, jitter actually used)
    """
    n = matrix.shape[0]
    eye = np.eye(n)
    jitter = start
    while True:
        try:
            factor = linalg.cholesky(matrix + jitter * eye, lower=True)
            if jitter > start:
                logger.warning("[gram] needed jitter %.0e for a %dx%d matrix", jitter, n, n)
            return factor, jitter
        except linalg.LinAlgError:
            if jitter >= stop * (1.0 - 1e-12):
                raise IllConditionedKernelError(
                    f"Cholesky failed for a {n}x{n} matrix with jitter up to {stop:.0e}"
                )
            jitter *= 10.0


def gram(kernel: Kernel, mean: MeanFunction, points,
         jitter: float = JITTER_START) -> GramMatrix:
    """
    Prior Gram matrix and mean vector over ``points``.

    The stored entries include the jitter that made the factorization succeed.
    """
    pts = as_points(points)
    if pts.shape[0] == 0:
        raise ValueError("gram needs at least one point")
    _require_finite(pts, "points")
    raw = kernel(pts, pts)
    raw = 0.5 * (raw + raw.T)
    factor, used = jittered_cholesky(raw, start=jitter)
    entries = raw + used * np.eye(pts.shape[0])
    return GramMatrix(points=pts, entries=entries, jitter=used,
                      cholesky=factor, mean=mean(pts))


def mvn_sample(mean: Sequence[float], cov: Union[GramMatrix, np.ndarray],
               rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """
    Draw from N(mean, cov).

    Args:
        mean: (d,) mean vector
        cov: a factorized GramMatrix, or a (d, d) covariance array
        rng: caller-owned generator
        size: number of draws; None returns a single (d,) vector

    Returns:
        (d,) or (size, d) array
    """
    mu = np.asarray(mean, dtype=float)
    if isinstance(cov, GramMatrix):
        factor = cov.cholesky
    else:
        cov = np.asarray(cov, dtype=float)
        if not np.any(cov):
            shape = mu.shape if size is None else (size,) + mu.shape
            return np.broadcast_to(mu, shape).copy()
        try:
            factor = linalg.cholesky(cov, lower=True)
        except linalg.LinAlgError:
            factor, _ = jittered_cholesky(cov)
    d = mu.shape[0]
    if size is None:
        return mu + factor @ rng.standard_normal(d)
    return mu + rng.standard_normal((size, d)) @ factor.T
