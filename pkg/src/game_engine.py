"""
One play of the off-switch signalling game.

Nature draws the sender's type (a utility function sampled from the
common-knowledge GP prior plus noise), the sender transmits its honest
choice message, the receiver fits a posterior from the message and picks
IMM, DEF or DoN, and on DEF the sender decides whether to switch the robot
off. Plays are reproducible from (config, seed) and recorded as JSON-lines
transcripts.
"""

import hashlib
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Iterable, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from tqdm import tqdm

from choice_model import (Act, ChoiceDataset, ChoiceObservation, DiscernibilityThreshold,
                          GaussianNoise, PairOutcome, RationalityModel, as_act,
                          honest_message, model_sigma)
from decision_policy import (DominanceCriterion, ReceiverAction, Regime, SenderAction,
                             classify_regime, decide_scalar, decide_threshold)
from errors import ChoiceTieError, MessageSpaceTooLargeError, NumericalError
from gauss_kernels import ConstantMean, SquaredExponential, mvn_sample, std_normal_cdf
from payoff_engine import (CostParams, ExpectedPayoffs, beta_cost, payoffs_threshold,
                           payoffs_with_cost)
from posterior_inference import (BivariatePosterior, InferenceMethod, Laplace, fit,
                                 predict_pair)

logger = logging.getLogger(__name__)

MAX_VERIFY_PREFS = 4
VERIFY_TOL = 1e-9


def stream(seed: int, index: int = 0) -> np.random.Generator:
    """Independent generator for run ``index`` of a seeded batch"""
    return np.random.default_rng([seed, index])


class GameConfig(BaseModel):
    """Everything that is common knowledge in one game, plus the seed"""
    model_config = ConfigDict(frozen=True)

    act_grid: Tuple[Act, ...]
    x: Act
    o: Act
    kernel: SquaredExponential = SquaredExponential()
    mean: ConstantMean = ConstantMean()
    model: RationalityModel = Field(default_factory=lambda: GaussianNoise(sigma=1.0))
    n_prefs: int = Field(default=30, ge=1)
    method: InferenceMethod = Field(default_factory=Laplace)
    cost: CostParams = CostParams()
    criterion: DominanceCriterion = DominanceCriterion.PESSIMISTIC_A
    sigma_fit: Optional[float] = Field(default=None, gt=0.0)
    seed: int = 0

    @model_validator(mode="after")
    def _check_acts(self) -> "GameConfig":
        if len(self.act_grid) < 2:
            raise ValueError("the act grid needs at least two acts")
        if self.x == self.o:
            raise ValueError(f"x and o must differ, both are {self.x}")
        grid = np.asarray(self.act_grid, dtype=float)
        lo, hi = grid.min(axis=0), grid.max(axis=0)
        for name, act in (("x", self.x), ("o", self.o)):
            if len(act) != grid.shape[1]:
                raise ValueError(f"{name} has dimension {len(act)}, grid has {grid.shape[1]}")
            if np.any(np.asarray(act) < lo) or np.any(np.asarray(act) > hi):
                raise ValueError(f"{name}={act} lies outside the act grid")
        return self

    def digest(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).hexdigest()


class TypeRealization(BaseModel):
    """The sender's private type: utility values on grid | {x, o} and noises"""
    model_config = ConfigDict(frozen=True)

    acts: Tuple[Act, ...]
    utility_values: Tuple[float, ...]
    message_noise: Optional[Tuple[Tuple[float, float], ...]] = None
    response_noise: Tuple[float, float] = (0.0, 0.0)

    @model_validator(mode="after")
    def _check_dims(self) -> "TypeRealization":
        if len(self.acts) != len(self.utility_values):
            raise ValueError("one utility value per act is required")
        return self

    def utility(self, act) -> float:
        return dict(zip(self.acts, self.utility_values))[as_act(act)]

    def noise_array(self) -> Optional[np.ndarray]:
        return None if self.message_noise is None else np.asarray(self.message_noise)


class TypeSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    nu_x: float
    nu_o: float
    noise_x: float = 0.0
    noise_o: float = 0.0


class GameTranscript(BaseModel):
    """
    One full play. ``sender_action`` is set exactly when the receiver
    deferred; aborted plays (inference failure) take DoN and are flagged.
    """
    model_config = ConfigDict(frozen=True)

    config_hash: str
    seed: int
    method: str
    model: str
    type_summary: TypeSummary
    message: ChoiceDataset
    posterior: Optional[BivariatePosterior] = None
    payoffs: Optional[ExpectedPayoffs] = None
    regime: Optional[str] = None
    receiver_action: ReceiverAction
    sender_action: Optional[SenderAction] = None
    realized_utility: float
    sender_utility: float
    realized_set: Optional[Tuple[float, float]] = None
    communication_cost: float = 0.0
    aborted: bool = False
    abort_reason: Optional[str] = None

    @model_validator(mode="after")
    def _sender_moves_after_def(self) -> "GameTranscript":
        if (self.sender_action is not None) != (self.receiver_action == ReceiverAction.DEF):
            raise ValueError("sender_action must be set exactly when the receiver defers")
        return self

    def to_json_line(self) -> str:
        return self.model_dump_json() + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).hexdigest()


def write_transcripts(path: Union[str, Path], transcripts: Iterable[GameTranscript]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in transcripts:
            fh.write(t.to_json_line())


def read_transcripts(path: Union[str, Path]) -> List[GameTranscript]:
    with open(path, encoding="utf-8") as fh:
        return [GameTranscript.model_validate_json(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# Game steps
# ---------------------------------------------------------------------------

def draw_type(config: GameConfig, rng: np.random.Generator) -> TypeRealization:
    """Nature's move: nu ~ GP prior on grid | {x, o}, then the sender's noises"""
    acts = tuple(dict.fromkeys(config.act_grid + (config.x, config.o)))
    points = np.asarray(acts, dtype=float)
    values = mvn_sample(config.mean(points), config.kernel(points, points), rng)
    message_noise = None
    response_noise = (0.0, 0.0)
    if isinstance(config.model, GaussianNoise):
        sigma = config.model.sigma
        message_noise = tuple((float(a), float(b))
                              for a, b in rng.normal(0.0, sigma, size=(config.n_prefs, 2)))
        n_x, n_o = rng.normal(0.0, sigma, size=2)
        response_noise = (float(n_x), float(n_o))
    return TypeRealization(acts=acts, utility_values=tuple(float(v) for v in values),
                           message_noise=message_noise, response_noise=response_noise)


def sender_response(t: TypeRealization, model: RationalityModel, x, o) -> SenderAction:
    """
    The sender's move after DEF. NotOFF keeps x; OFF keeps the status quo o,
    which is also the move when x and o are indiscernible.
    """
    nu_x, nu_o = t.utility(x), t.utility(o)
    if isinstance(model, GaussianNoise):
        keep_x = nu_x + t.response_noise[0] > nu_o + t.response_noise[1]
    elif isinstance(model, DiscernibilityThreshold):
        keep_x = nu_x > nu_o + model.sigma
    else:
        keep_x = nu_x > nu_o
    return SenderAction.NOT_OFF if keep_x else SenderAction.OFF


class ReceiverDecision(BaseModel):
    model_config = ConfigDict(frozen=True)

    posterior: BivariatePosterior
    payoffs: ExpectedPayoffs
    action: ReceiverAction
    regime: Regime


def expected_payoffs(bp: BivariatePosterior, model: RationalityModel,
                     cost: CostParams) -> ExpectedPayoffs:
    """Payoffs of the three actions for the sender mechanism in force"""
    if isinstance(model, DiscernibilityThreshold):
        payoffs = payoffs_threshold(bp, model.sigma, model.epsilon)
        if cost.gamma > 0.0:
            beta = beta_cost(bp, cost)
            payoffs = payoffs.model_copy(update={"beta": beta,
                                                 "message_cost": beta * cost.message_len})
        return payoffs
    return payoffs_with_cost(bp, model_sigma(model), cost)


def respond(config: GameConfig, message: ChoiceDataset,
            rng: np.random.Generator) -> ReceiverDecision:
    """
    The receiver's phase: posterior from the message (Bayes' rule), bivariate
    posterior at (x, o), expected payoffs and the decision.
    """
    posterior = fit(message, config.kernel, config.mean, sigma_fit=config.sigma_fit,
                    method=config.method, rng=rng, model=config.model)
    bp = predict_pair(posterior, config.kernel, config.mean, config.x, config.o)
    cost = config.cost.model_copy(update={"message_len": len(message)})
    payoffs = expected_payoffs(bp, config.model, cost)
    if payoffs.is_set_valued:
        action = decide_threshold(payoffs, config.criterion)
    else:
        action = decide_scalar(payoffs)
    return ReceiverDecision(posterior=bp, payoffs=payoffs, action=action,
                            regime=classify_regime(bp, config.model))


def _realize(t: TypeRealization, config: GameConfig, action: ReceiverAction):
    """(sender action, realized utility, set bookkeeping) for a receiver action"""
    nu_x, nu_o = t.utility(config.x), t.utility(config.o)
    if action == ReceiverAction.IMM:
        return None, nu_x, None
    if action == ReceiverAction.DON:
        return None, nu_o, None
    move = sender_response(t, config.model, config.x, config.o)
    model = config.model
    if (isinstance(model, DiscernibilityThreshold) and move == SenderAction.OFF
            and abs(nu_x - nu_o) <= model.sigma):
        eps = model.epsilon
        return move, nu_o - eps, (nu_x - eps, nu_o - eps)
    return move, nu_x if move == SenderAction.NOT_OFF else nu_o, None


def play(config: GameConfig, rng: Optional[np.random.Generator] = None) -> GameTranscript:
    """
    Run one game: draw_type, honest_message, respond and, on DEF,
    sender_response. Inference failures end the play as an aborted DoN.
    """
    rng = rng if rng is not None else stream(config.seed)
    t = draw_type(config, rng)
    nu_x, nu_o = t.utility(config.x), t.utility(config.o)
    summary = TypeSummary(nu_x=nu_x, nu_o=nu_o, noise_x=t.response_noise[0],
                          noise_o=t.response_noise[1])
    base = dict(config_hash=config.digest(), seed=config.seed, method=config.method.kind,
                model=config.model.kind, type_summary=summary)
    message = ChoiceDataset()
    try:
        message = honest_message(t.utility, config.model, config.act_grid, config.n_prefs,
                                 rng, noise=t.noise_array())
        decision = respond(config, message, rng)
    except (NumericalError, ChoiceTieError) as exc:
        logger.warning("[play] seed %d aborted: %s", config.seed, exc)
        return GameTranscript(message=message, receiver_action=ReceiverAction.DON,
                              realized_utility=nu_o, sender_utility=nu_o,
                              communication_cost=config.cost.gamma * abs(nu_o) * len(message),
                              aborted=True, abort_reason=f"{type(exc).__name__}: {exc}", **base)

    move, realized, realized_set = _realize(t, config, decision.action)
    units = len(message) + (1 if decision.action == ReceiverAction.DEF else 0)
    logger.debug("[play] seed %d: %s -> %s", config.seed, decision.regime.label,
                 decision.action.value)
    return GameTranscript(message=message, posterior=decision.posterior,
                          payoffs=decision.payoffs, regime=decision.regime.label,
                          receiver_action=decision.action, sender_action=move,
                          realized_utility=realized, sender_utility=realized,
                          realized_set=realized_set,
                          communication_cost=config.cost.gamma * abs(nu_o) * units, **base)


def _play_indexed(args: Tuple[GameConfig, int]) -> GameTranscript:
    config, index = args
    return play(config.model_copy(update={"seed": config.seed + index}),
                stream(config.seed, index))


def play_batch(config: GameConfig, n_plays: int, jobs: int = 1,
               progress: bool = False) -> List[GameTranscript]:
    """
    ``n_plays`` independent plays; play i uses stream (seed, i) and records
    seed + i. Results come back in play order whatever ``jobs`` is.
    """
    tasks = [(config, i) for i in range(n_plays)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = pool.map(_play_indexed, tasks)
            return list(tqdm(results, total=n_plays, desc="plays", disable=not progress))
    return [_play_indexed(task) for task in tqdm(tasks, desc="plays", disable=not progress)]


# ---------------------------------------------------------------------------
# Honest-message verification
# ---------------------------------------------------------------------------

class MessageOutcome(BaseModel):
    """Receiver response to one message and the sender payoff it brings (low, high)"""
    model_config = ConfigDict(frozen=True)

    message: str
    receiver_action: ReceiverAction
    sender_low: float
    sender_high: float
    honest: bool = False
    failed: bool = False


class HonestMessageReport(BaseModel):
    """Sender payoff of every message the receiver could be sent over {x, o}"""
    model_config = ConfigDict(frozen=True)

    nu_x: float
    nu_o: float
    indiscernible: bool
    n_messages: int
    honest_low: float
    honest_high: float
    best_high: float
    tolerance: float
    honest_is_optimal: bool
    beating: Tuple[str, ...]
    outcomes: Tuple[MessageOutcome, ...]


def _sender_value(action: ReceiverAction, nu_x: float, nu_o: float,
                  model: RationalityModel) -> Tuple[float, float]:
    """
    The sender's payoff from a receiver action, given its own type, as a
    (low, high) pair.

    A threshold sender that cannot tell x from o values either outcome as
    the set {nu(x), nu(o)}; after DEF it keeps both and pays epsilon.
    """
    if isinstance(model, DiscernibilityThreshold) and abs(nu_x - nu_o) <= model.sigma:
        lo, hi = min(nu_x, nu_o), max(nu_x, nu_o)
        if action == ReceiverAction.DEF:
            return lo - model.epsilon, hi - model.epsilon
        return lo, hi
    if action == ReceiverAction.IMM:
        return nu_x, nu_x
    if action == ReceiverAction.DON:
        return nu_o, nu_o
    if isinstance(model, GaussianNoise):
        keep_x = std_normal_cdf((nu_x - nu_o) / (math.sqrt(2.0) * model.sigma))
        value = nu_o + (nu_x - nu_o) * keep_x
        return value, value
    best = max(nu_x, nu_o)
    return best, best


def _beats(other: MessageOutcome, honest: MessageOutcome, crit: DominanceCriterion,
           tol: float) -> bool:
    # criterion A: every element of the other payoff exceeds every honest one
    if crit == DominanceCriterion.PESSIMISTIC_A:
        return other.sender_low > honest.sender_high + tol
    return other.sender_high > honest.sender_high + tol


def verify_honest_message(config: GameConfig) -> HonestMessageReport:
    """
    Enumerate every message of ``n_prefs`` observations over the two-act
    universe {x, o} (2^n outcomes, 3^n under the threshold model) and check
    that no message gives the sender a payoff that dominates the honest one
    under the receiver's best response.

    Set-valued payoffs are compared with ``config.criterion``. Messages the
    receiver cannot fit count as DoN.

    Raises:
        MessageSpaceTooLargeError: more than four observations
    """
    if config.n_prefs > MAX_VERIFY_PREFS:
        raise MessageSpaceTooLargeError(
            f"n_prefs={config.n_prefs} exceeds the exhaustive cap of {MAX_VERIFY_PREFS}")
    threshold = isinstance(config.model, DiscernibilityThreshold)
    outcomes = [PairOutcome.FIRST, PairOutcome.SECOND] + ([PairOutcome.BOTH] if threshold else [])

    t = draw_type(config, stream(config.seed))
    nu_x, nu_o = t.utility(config.x), t.utility(config.o)
    honest = honest_message(t.utility, config.model, (config.x, config.o), config.n_prefs,
                            stream(config.seed, 1), noise=t.noise_array())

    results = []
    for combo in itertools.product(outcomes, repeat=config.n_prefs):
        message = ChoiceDataset(observations=tuple(
            ChoiceObservation.pair(config.x, config.o, outcome) for outcome in combo))
        failed = False
        try:
            action = respond(config, message, stream(config.seed, 2)).action
        except (NumericalError, ValidationError) as exc:
            logger.debug("[verify] %r not fitted: %s", message.to_text(), exc)
            action, failed = ReceiverAction.DON, True
        low, high = _sender_value(action, nu_x, nu_o, config.model)
        results.append(MessageOutcome(message=message.to_text(), receiver_action=action,
                                      sender_low=low, sender_high=high,
                                      honest=message == honest, failed=failed))

    honest_outcome = next(r for r in results if r.honest)
    beating = tuple(r.message for r in results
                    if _beats(r, honest_outcome, config.criterion, VERIFY_TOL))
    best_high = max(r.sender_high for r in results)
    logger.info("[verify] %d messages, honest (%.6g, %.6g), best %.6g, %d beat it",
                len(results), honest_outcome.sender_low, honest_outcome.sender_high,
                best_high, len(beating))
    return HonestMessageReport(
        nu_x=nu_x, nu_o=nu_o,
        indiscernible=threshold and abs(nu_x - nu_o) <= config.model.sigma,
        n_messages=len(results), honest_low=honest_outcome.sender_low,
        honest_high=honest_outcome.sender_high, best_high=best_high, tolerance=VERIFY_TOL,
        honest_is_optimal=not beating, beating=beating, outcomes=tuple(results))
