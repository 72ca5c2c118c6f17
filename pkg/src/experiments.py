"""
Monte Carlo experiments on the off-switch game.

- run_frequency_study: how often each inference method ends in IMM, DEF or
  DoN when one random type and message are shared by all methods
- run_risotto_demo: prior/posterior curves for the butter-taste example
- mc_payoff_oracle: plain Monte Carlo of the payoff integrands
- sweep: DEF frequency across a grid of sigma or gamma values
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from tqdm import tqdm

from choice_model import (Act, ChoiceDataset, ChoiceObservation, Exact, GaussianNoise,
                          PairOutcome, RationalityModel, as_act, exact_choice,
                          honest_message, sample_pairs)
from decision_policy import ReceiverAction
from errors import ChoiceTieError, NumericalError
from game_engine import GameConfig, draw_type, respond, stream
from gauss_kernels import ConstantMean, SquaredExponential, as_points, mvn_sample
from payoff_engine import CostParams, MIN_MC_DRAWS
from posterior_inference import (EP, MAP, InferenceMethod, Laplace, Sampling, fit,
                                 predict)

logger = logging.getLogger(__name__)

ABORTED = "ABORTED"
ACTION_ROWS = (ReceiverAction.IMM.value, ReceiverAction.DEF.value, ReceiverAction.DON.value, ABORTED)
N_SAMPLE_PATHS = 10


class GridSpec(BaseModel):
    """Evenly spaced one-dimensional act grid"""
    model_config = ConfigDict(frozen=True)

    lower: float = 1.0
    upper: float = 9.0
    n_points: int = Field(default=41, ge=2)

    @model_validator(mode="after")
    def _ordered(self) -> "GridSpec":
        if not self.lower < self.upper:
            raise ValueError(f"grid lower {self.lower} must be below upper {self.upper}")
        return self

    def acts(self) -> Tuple[Act, ...]:
        return tuple(as_act(v) for v in np.linspace(self.lower, self.upper, self.n_points))


def _default_methods() -> Tuple[InferenceMethod, ...]:
    return (MAP(), Laplace(), EP(), Sampling())


class StudyConfig(BaseModel):
    """
    Decision-frequency study settings.

    sigma = 0 means an exactly rational sender.
    """
    model_config = ConfigDict(frozen=True)

    n_runs: int = Field(default=200, ge=1)
    n_prefs: int = Field(default=30, ge=1)
    sigma: float = Field(default=1.0, ge=0.0)
    gamma: float = Field(default=0.0, ge=0.0)
    methods: Tuple[InferenceMethod, ...] = Field(default_factory=_default_methods)
    lengthscale_range: Tuple[float, float] = (0.5, 3.0)
    variance_range: Tuple[float, float] = (0.5, 2.0)
    mean_value: float = 0.0
    grid: GridSpec = GridSpec()
    seed: int = 0

    @model_validator(mode="after")
    def _check_ranges(self) -> "StudyConfig":
        for name in ("lengthscale_range", "variance_range"):
            lo, hi = getattr(self, name)
            if not 0.0 < lo <= hi:
                raise ValueError(f"{name} must satisfy 0 < low <= high, got ({lo}, {hi})")
        if not self.methods:
            raise ValueError("at least one inference method is required")
        kinds = [m.kind for m in self.methods]
        if len(set(kinds)) != len(kinds):
            raise ValueError(f"methods repeat: {kinds}")
        return self

    @property
    def model(self) -> RationalityModel:
        return Exact() if self.sigma == 0.0 else GaussianNoise(sigma=self.sigma)

    @property
    def method_names(self) -> Tuple[str, ...]:
        return tuple(m.kind for m in self.methods)


class RunRecord(BaseModel):
    """One method's decision in one run"""
    model_config = ConfigDict(frozen=True)

    run: int
    method: str
    action: str
    def_margin: Optional[float] = None


class FrequencyRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    method: str
    action: str
    count: int
    fraction: float


class FrequencyTable(BaseModel):
    """Counts and fractions per (method, action), ABORTED included"""
    model_config = ConfigDict(frozen=True)

    n_runs: int
    methods: Tuple[str, ...]
    rows: Tuple[FrequencyRow, ...]
    records: Tuple[RunRecord, ...] = ()

    @classmethod
    def from_records(cls, methods: Sequence[str], records: Sequence[RunRecord],
                     n_runs: int) -> "FrequencyTable":
        rows = []
        for method in methods:
            for action in ACTION_ROWS:
                count = sum(1 for r in records if r.method == method and r.action == action)
                rows.append(FrequencyRow(method=method, action=action, count=count,
                                         fraction=count / n_runs))
        return cls(n_runs=n_runs, methods=tuple(methods), rows=tuple(rows), records=tuple(records))

    def count(self, method: str, action: str) -> int:
        return next(r.count for r in self.rows if r.method == method and r.action == action)

    def fraction(self, method: str, action: str) -> float:
        return next(r.fraction for r in self.rows if r.method == method and r.action == action)

    @property
    def aborted(self) -> int:
        return sum(r.count for r in self.rows if r.action == ABORTED)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.model_dump() for r in self.rows],
                            columns=["method", "action", "count", "fraction"])


# ---------------------------------------------------------------------------
# Frequency study
# ---------------------------------------------------------------------------

def _study_run(cfg: StudyConfig, run: int) -> List[RunRecord]:
    rng = stream(cfg.seed, run)
    lengthscale = rng.uniform(*cfg.lengthscale_range)
    variance = rng.uniform(*cfg.variance_range)
    grid = cfg.grid.acts()
    i, j = rng.choice(len(grid), size=2, replace=False)
    base = GameConfig(act_grid=grid, x=grid[int(i)], o=grid[int(j)],
                      kernel=SquaredExponential(variance=variance, lengthscale=lengthscale),
                      mean=ConstantMean(value=cfg.mean_value), model=cfg.model,
                      n_prefs=cfg.n_prefs, cost=CostParams(gamma=cfg.gamma),
                      seed=cfg.seed + run)
    try:
        t = draw_type(base, rng)
        message = honest_message(t.utility, cfg.model, grid, cfg.n_prefs, rng,
                                 noise=t.noise_array())
    except (NumericalError, ChoiceTieError) as exc:
        logger.warning("[study] run %d: no message (%s)", run, exc)
        return [RunRecord(run=run, method=m, action=ABORTED) for m in cfg.method_names]

    records = []
    for k, method in enumerate(cfg.methods):
        config = base.model_copy(update={"method": method})
        try:
            decision = respond(config, message, np.random.default_rng([cfg.seed, run, k]))
        except NumericalError as exc:
            logger.warning("[study] run %d, %s aborted: %s", run, method.kind, exc)
            records.append(RunRecord(run=run, method=method.kind, action=ABORTED))
            continue
        p = decision.payoffs
        margin = None
        if not p.is_set_valued:
            margin = p.def_value - p.beta - max(p.imm_value, p.don_value)
        records.append(RunRecord(run=run, method=method.kind, action=decision.action.value,
                                 def_margin=margin))
    return records


def _study_task(args: Tuple[StudyConfig, int]) -> List[RunRecord]:
    return _study_run(*args)


def run_frequency_study(cfg: StudyConfig, jobs: int = 1, progress: bool = False) -> FrequencyTable:
    """
    Sample hyperparameters, a type and its honest message per run, let every
    method decide on the same message and tally the decisions.

    Run r draws from the stream (seed, r), so the table does not depend on
    ``jobs``; failed inferences are tallied as ABORTED.
    """
    tasks = [(cfg, r) for r in range(cfg.n_runs)]
    logger.info("[study] %d runs, methods %s, sigma %g", cfg.n_runs,
                ",".join(cfg.method_names), cfg.sigma)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_run = list(tqdm(pool.map(_study_task, tasks), total=len(tasks),
                                desc="study", disable=not progress))
    else:
        per_run = [_study_task(task) for task in tqdm(tasks, desc="study", disable=not progress)]
    records = [rec for run in per_run for rec in run]
    table = FrequencyTable.from_records(cfg.method_names, records, cfg.n_runs)
    if table.aborted:
        logger.warning("[study] %d aborted decisions", table.aborted)
    return table


# ---------------------------------------------------------------------------
# Risotto example
# ---------------------------------------------------------------------------

RISOTTO_PREFERENCES: Tuple[Tuple[float, float], ...] = (
    (6.5, 3.5), (7.0, 5.0), (6.5, 5.5), (3.5, 8.5),
    (1.0, 9.0), (7.0, 1.5), (4.5, 7.5), (3.5, 4.0),
)

RISOTTO_GRID = GridSpec(lower=1.0, upper=9.0, n_points=81)
RISOTTO_KERNEL = SquaredExponential(variance=1.0, lengthscale=1.0)


def risotto_utility(act) -> float:
    """Butter-taste utility consistent with every pair in RISOTTO_PREFERENCES"""
    x = as_act(act)[0]
    return (math.exp(-(x - 3.5) ** 2 / 0.32) + 1.2 * math.exp(-(x - 4.6) ** 2 / 0.18)
            + 1.5 * math.exp(-(x - 6.8) ** 2 / 0.5) - 0.05 * x)


def risotto_dataset(n_prefs: int, seed: int = 0) -> ChoiceDataset:
    """
    The listed butter preferences, topped up with exact choices of
    risotto_utility on pairs from the half-unit butter grid.
    """
    if n_prefs < 0:
        raise ValueError(f"n_prefs must be non-negative, got {n_prefs}")
    observations = [ChoiceObservation.pair(w, l, PairOutcome.FIRST)
                    for w, l in RISOTTO_PREFERENCES[:n_prefs]]
    extra = n_prefs - len(observations)
    if extra > 0:
        pool = GridSpec(lower=1.0, upper=9.0, n_points=17).acts()
        for z, y in sample_pairs(pool, extra, stream(seed)):
            winner = exact_choice(risotto_utility, (z, y))[0]
            loser = y if winner == z else z
            observations.append(ChoiceObservation.pair(winner, loser, PairOutcome.FIRST))
    return ChoiceDataset(observations=tuple(observations))


def run_risotto_demo(n_prefs: int = 8, method: Optional[InferenceMethod] = None,
                     kernel: SquaredExponential = RISOTTO_KERNEL,
                     grid: GridSpec = RISOTTO_GRID, seed: int = 0) -> pd.DataFrame:
    """
    Posterior curves over the butter grid: x, mean, half_width (95% band) and
    sample_1..sample_10 paths drawn from the posterior on the grid.

    Zero preferences give the prior.
    """
    method = method if method is not None else Laplace()
    mean = ConstantMean()
    rng = stream(seed, 1)
    dataset = risotto_dataset(n_prefs, seed)
    posterior = fit(dataset, kernel, mean, method=method, rng=rng, model=Exact())
    points = as_points(grid.acts())
    mu, cov = predict(posterior, kernel, mean, points)
    paths = mvn_sample(mu, cov, rng, size=N_SAMPLE_PATHS)
    frame = pd.DataFrame({"x": points[:, 0], "mean": mu,
                          "half_width": 1.96 * np.sqrt(np.maximum(np.diag(cov), 0.0))})
    for k in range(N_SAMPLE_PATHS):
        frame[f"sample_{k + 1}"] = paths[k]
    logger.info("[demo] %s posterior from %d preferences on %d grid points",
                method.kind, len(dataset), len(frame))
    return frame


# ---------------------------------------------------------------------------
# Monte Carlo oracle
# ---------------------------------------------------------------------------

class OracleEstimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_draws: int
    estimates: Dict[str, float]
    stderr: Dict[str, float]

    def within(self, name: str, value: float, n_se: float = 3.0) -> bool:
        return abs(self.estimates[name] - value) <= n_se * self.stderr[name] + 1e-12


def mc_payoff_oracle(bp, sigma: float, mechanism: Literal["noise", "threshold"],
                     n_draws: int, rng: np.random.Generator,
                     epsilon: Optional[float] = None) -> OracleEstimate:
    """
    Plain Monte Carlo over (nu(x), nu(o)) ~ N(bp.mean, bp.cov) and the sender's noises.

    ``noise`` estimates building_block, def, imm and don; ``threshold``
    estimates def_x and def_o (indiscernible payoff counted as nu(x) - eps
    and nu(o) - eps) plus imm and don.
    """
    if n_draws < MIN_MC_DRAWS:
        raise ValueError(f"n_draws must be at least {MIN_MC_DRAWS}, got {n_draws}")
    draws = mvn_sample(bp.mean, bp.cov, rng, size=n_draws)
    nu_x, nu_o = draws[:, 0], draws[:, 1]
    samples: Dict[str, np.ndarray] = {"imm": nu_x, "don": nu_o}
    if mechanism == "noise":
        n_x = sigma * rng.standard_normal(n_draws) if sigma > 0.0 else 0.0
        n_o = sigma * rng.standard_normal(n_draws) if sigma > 0.0 else 0.0
        x_kept = nu_x + n_x > nu_o + n_o
        o_kept = nu_o + n_o > nu_x + n_x
        samples["building_block"] = nu_x * x_kept
        samples["def"] = nu_x * x_kept + nu_o * o_kept
    elif mechanism == "threshold":
        if epsilon is None:
            raise ValueError("the threshold oracle needs epsilon")
        d = nu_x - nu_o
        clear = np.where(d > sigma, nu_x, nu_o)
        tie = np.abs(d) <= sigma
        samples["def_x"] = np.where(tie, nu_x - epsilon, clear)
        samples["def_o"] = np.where(tie, nu_o - epsilon, clear)
    else:
        raise ValueError(f"unknown mechanism {mechanism!r}")
    return OracleEstimate(
        n_draws=n_draws,
        estimates={k: float(np.mean(v)) for k, v in samples.items()},
        stderr={k: float(np.std(v, ddof=1) / math.sqrt(n_draws)) for k, v in samples.items()},
    )


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def sweep(param: Literal["sigma", "gamma"], grid: Sequence[float], base: StudyConfig,
          jobs: int = 1, progress: bool = False) -> pd.DataFrame:
    """
    DEF fraction per method at every grid value of ``param``.

    Returns:
        DataFrame with columns param_value, method, def_fraction, aborted
    """
    if param not in ("sigma", "gamma"):
        raise ValueError(f"param must be 'sigma' or 'gamma', got {param!r}")
    if len(grid) == 0:
        raise ValueError("sweep grid must be non-empty")
    rows = []
    for value in grid:
        cfg = base.model_copy(update={param: float(value)})
        cfg = StudyConfig.model_validate(cfg.model_dump())
        table = run_frequency_study(cfg, jobs=jobs, progress=progress)
        for method in cfg.method_names:
            aborted = table.count(method, ABORTED)
            rows.append({"param_value": float(value), "method": method,
                         "def_fraction": table.fraction(method, ReceiverAction.DEF.value),
                         "aborted": aborted})
    frame = pd.DataFrame(rows, columns=["param_value", "method", "def_fraction", "aborted"])
    for method, block in frame.groupby("method", sort=False):
        fractions = block.sort_values("param_value")["def_fraction"].to_numpy()
        steps = np.diff(fractions)
        trend = ("non-increasing" if np.all(steps <= 0) else
                 "non-decreasing" if np.all(steps >= 0) else "mixed")
        logger.info("[sweep] %s: DEF fraction %s in %s", method, trend, param)
    return frame
