"""
Acts, choice data and the sender's choice mechanisms.

A choice observation is a choice set together with the subset the sender
picked from it; a ChoiceDataset is the message the sender transmits. Three
scalar mechanisms generate choices (exact maximization, random utility with
Gaussian noise, discernibility threshold) and two rules handle vector-valued
utilities (Pareto maximality, e-admissibility).
"""

import itertools
import logging
import math
from enum import Enum
from pathlib import Path
from typing import (Annotated, Callable, Dict, Iterable, List, Literal, Mapping,
                    Optional, Sequence, Tuple, Union)

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from errors import ChoiceTieError, DatasetParseError, PairwiseRequiredError

logger = logging.getLogger(__name__)

Act = Tuple[float, ...]

Values = Union[Mapping[Act, float], Callable[[Act], float]]
VectorValues = Union[Mapping[Act, Sequence[float]], Callable[[Act], Sequence[float]]]
UtilityFunction = Callable[[Act], float]
ChoiceRule = Callable[[Sequence[Act]], Sequence[Act]]

# exhaustive path-independence check enumerates 2^n subsets twice over
MAX_PATH_UNIVERSE = 7


def as_act(value) -> Act:
    """Normalize a scalar or a coordinate sequence to a tuple of finite floats"""
    if isinstance(value, (int, float, np.floating, np.integer)):
        coords = (float(value),)
    else:
        coords = tuple(float(c) for c in np.ravel(np.asarray(value, dtype=float)))
    if not coords:
        raise ValueError("an act needs at least one coordinate")
    if not all(math.isfinite(c) for c in coords):
        raise ValueError(f"act coordinates must be finite, got {coords!r}")
    return coords


def format_act(act: Act) -> str:
    return ",".join(repr(float(c)) for c in act)


class PairOutcome(str, Enum):
    """Which part of a two-act choice set {first, second} was chosen"""
    FIRST = "first"
    SECOND = "second"
    BOTH = "both"


class VectorDominance(str, Enum):
    PARETO = "pareto"
    E_ADMISSIBLE = "e_admissible"


class ChoiceObservation(BaseModel):
    """One (A_i, C(A_i)) record: a choice set and the chosen subset"""
    model_config = ConfigDict(frozen=True)

    choice_set: Tuple[Act, ...]
    chosen: Tuple[Act, ...]

    @model_validator(mode="after")
    def _check_subset(self) -> "ChoiceObservation":
        if not self.choice_set or not self.chosen:
            raise ValueError("choice set and chosen subset must be non-empty")
        dims = {len(a) for a in self.choice_set}
        if len(dims) != 1:
            raise ValueError("acts in a choice set must share one dimension")
        missing = [a for a in self.chosen if a not in self.choice_set]
        if missing:
            raise ValueError(f"chosen acts {missing} are not in the choice set")
        return self

    @classmethod
    def pair(cls, first, second, outcome: PairOutcome) -> "ChoiceObservation":
        z, y = as_act(first), as_act(second)
        chosen = {PairOutcome.FIRST: (z,), PairOutcome.SECOND: (y,),
                  PairOutcome.BOTH: (z, y)}[outcome]
        return cls(choice_set=(z, y), chosen=chosen)

    @property
    def dimension(self) -> int:
        return len(self.choice_set[0])

    @property
    def is_pair(self) -> bool:
        return len(self.choice_set) == 2 and self.choice_set[0] != self.choice_set[1]

    def pair_outcome(self) -> PairOutcome:
        """
        Outcome of a two-act observation relative to its listed order.

        Raises:
            PairwiseRequiredError: the choice set does not hold two distinct acts
        """
        if not self.is_pair:
            raise PairwiseRequiredError(
                f"expected a two-act choice set, got {len(self.choice_set)} acts")
        if len(set(self.chosen)) == 2:
            return PairOutcome.BOTH
        return PairOutcome.FIRST if self.chosen[0] == self.choice_set[0] else PairOutcome.SECOND

    def to_line(self) -> str:
        acts = " ".join(format_act(a) for a in self.choice_set)
        chosen = " ".join(format_act(a) for a in self.chosen)
        return f"set: {acts} | chosen: {chosen}"


class ChoiceDataset(BaseModel):
    """
    The message m: an ordered list of choice observations.

    The message length is the number of observations. Datasets serialize to a
    line-oriented text format, one observation per line::

        set: 6.5 3.5 | chosen: 6.5

    with each act written as comma-separated coordinates.
    """
    model_config = ConfigDict(frozen=True)

    observations: Tuple[ChoiceObservation, ...] = ()

    @model_validator(mode="after")
    def _check_dimension(self) -> "ChoiceDataset":
        dims = {obs.dimension for obs in self.observations}
        if len(dims) > 1:
            raise ValueError(f"observations mix act dimensions {sorted(dims)}")
        return self

    def __len__(self) -> int:
        return len(self.observations)

    def __iter__(self):
        return iter(self.observations)

    @property
    def message_length(self) -> int:
        return len(self.observations)

    @property
    def dimension(self) -> Optional[int]:
        return self.observations[0].dimension if self.observations else None

    @property
    def is_pairwise(self) -> bool:
        return all(obs.is_pair for obs in self.observations)

    def acts(self) -> List[Act]:
        """Distinct acts in order of first appearance"""
        seen: Dict[Act, None] = {}
        for obs in self.observations:
            for act in obs.choice_set:
                seen.setdefault(act, None)
        return list(seen)

    def to_text(self) -> str:
        return "".join(obs.to_line() + "\n" for obs in self.observations)

    @classmethod
    def from_text(cls, text: str) -> "ChoiceDataset":
        """
        Parse the line format. Blank lines and lines starting with '#' are skipped.

        Raises:
            DatasetParseError: with the 1-based number of the offending line
        """
        observations = []
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            observations.append(_parse_line(line, line_no))
        dims = {obs.dimension for obs in observations}
        if len(dims) > 1:
            raise DatasetParseError(len(text.splitlines()),
                                    f"observations mix act dimensions {sorted(dims)}")
        return cls(observations=tuple(observations))

    @classmethod
    def read(cls, path: Union[str, Path]) -> "ChoiceDataset":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def write(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8", newline="\n")


def _parse_acts(field: str, line_no: int) -> Tuple[Act, ...]:
    acts = []
    for token in field.split():
        try:
            acts.append(as_act([float(c) for c in token.split(",")]))
        except ValueError:
            raise DatasetParseError(line_no, f"bad act {token!r}")
    return tuple(acts)


def _parse_line(line: str, line_no: int) -> ChoiceObservation:
    left, sep, right = line.partition("|")
    if not sep:
        raise DatasetParseError(line_no, "missing '|' between set and chosen")
    left, right = left.strip(), right.strip()
    if not left.startswith("set:"):
        raise DatasetParseError(line_no, "expected 'set:'")
    if not right.startswith("chosen:"):
        raise DatasetParseError(line_no, "expected 'chosen:'")
    choice_set = _parse_acts(left[len("set:"):], line_no)
    chosen = _parse_acts(right[len("chosen:"):], line_no)
    if not choice_set or not chosen:
        raise DatasetParseError(line_no, "set and chosen must both list acts")
    if len({len(a) for a in choice_set + chosen}) != 1:
        raise DatasetParseError(line_no, "acts on one line must share a dimension")
    missing = [a for a in chosen if a not in choice_set]
    if missing:
        raise DatasetParseError(line_no, f"chosen act {format_act(missing[0])} not in set")
    return ChoiceObservation(choice_set=choice_set, chosen=chosen)


# ---------------------------------------------------------------------------
# Rationality models
# ---------------------------------------------------------------------------

class Exact(BaseModel):
    """Fully rational sender: exact maximization, ties not allowed"""
    model_config = ConfigDict(frozen=True)

    kind: Literal["exact"] = "exact"


class GaussianNoise(BaseModel):
    """Random utility: the sender compares nu(z) + n(z) with nu(y) + n(y)"""
    model_config = ConfigDict(frozen=True)

    kind: Literal["gaussian_noise"] = "gaussian_noise"
    sigma: float = Field(gt=0.0)


class DiscernibilityThreshold(BaseModel):
    """Acts closer than sigma in utility are indiscernible; keeping both costs epsilon"""
    model_config = ConfigDict(frozen=True)

    kind: Literal["threshold"] = "threshold"
    sigma: float = Field(gt=0.0)
    epsilon: float = Field(gt=0.0)

    @model_validator(mode="after")
    def _epsilon_within_sigma(self) -> "DiscernibilityThreshold":
        if self.epsilon > self.sigma:
            raise ValueError(f"epsilon {self.epsilon} must not exceed sigma {self.sigma}")
        return self


RationalityModel = Annotated[Union[Exact, GaussianNoise, DiscernibilityThreshold],
                             Field(discriminator="kind")]


def model_sigma(model: RationalityModel) -> float:
    """The sender's sigma; 0 for the exact model"""
    return 0.0 if isinstance(model, Exact) else model.sigma


# ---------------------------------------------------------------------------
# Choice mechanisms
# ---------------------------------------------------------------------------

def _value_of(values, act: Act):
    return values(act) if callable(values) else values[act]


def exact_choice(values: Values, choice_set: Sequence[Act]) -> Tuple[Act, ...]:
    """
    Scalar optimization choice: the singleton argmax.

    Raises:
        ChoiceTieError: two acts in the set share a utility value
    """
    if not choice_set:
        raise ValueError("choice set must be non-empty")
    scored = [(float(_value_of(values, a)), a) for a in choice_set]
    if len({v for v, _ in scored}) < len(scored):
        raise ChoiceTieError(f"equal utilities in choice set {list(choice_set)}")
    return (max(scored, key=lambda item: item[0])[1],)


def _noisy_outcome(nu_z: float, nu_y: float, n_z: float, n_y: float) -> PairOutcome:
    return PairOutcome.FIRST if nu_z + n_z > nu_y + n_y else PairOutcome.SECOND


def noisy_pair_choice(nu_z: float, nu_y: float, sigma: float,
                      rng: np.random.Generator) -> PairOutcome:
    """
    Random-utility choice between z (first) and y (second).

    Draws n(z), n(y) ~ N(0, sigma^2) independently, so z is chosen with
    probability Phi((nu_z - nu_y) / (sqrt(2) sigma)).
    """
    if not sigma > 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    n_z, n_y = rng.normal(0.0, sigma, size=2)
    return _noisy_outcome(nu_z, nu_y, n_z, n_y)


def threshold_choice(nu_z: float, nu_y: float, sigma: float) -> PairOutcome:
    if not sigma > 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if nu_z > nu_y + sigma:
        return PairOutcome.FIRST
    if nu_y > nu_z + sigma:
        return PairOutcome.SECOND
    return PairOutcome.BOTH


def _vector_table(values: VectorValues, choice_set: Sequence[Act]) -> np.ndarray:
    if not choice_set:
        raise ValueError("choice set must be non-empty")
    table = np.array([np.atleast_1d(np.asarray(_value_of(values, a), dtype=float))
                      for a in choice_set])
    if table.ndim != 2:
        raise ValueError("utility vectors must share one dimension")
    return table


def pareto_choice(values: VectorValues, choice_set: Sequence[Act]) -> Tuple[Act, ...]:
    """Acts not strictly dominated in every coordinate by another act of the set"""
    table = _vector_table(values, choice_set)
    # dominated[i, j]: act j beats act i in every coordinate
    dominated = np.all(table[None, :, :] > table[:, None, :], axis=2)
    keep = ~dominated.any(axis=1)
    return tuple(a for a, k in zip(choice_set, keep) if k)


def e_admissible_choice(values: VectorValues, choice_set: Sequence[Act]) -> Tuple[Act, ...]:
    """Union over coordinates k of the acts maximizing coordinate k"""
    table = _vector_table(values, choice_set)
    keep = np.any(table == table.max(axis=0, keepdims=True), axis=1)
    return tuple(a for a, k in zip(choice_set, keep) if k)


def vector_choice(values: VectorValues, choice_set: Sequence[Act],
                  dominance: VectorDominance) -> Tuple[Act, ...]:
    if dominance == VectorDominance.PARETO:
        return pareto_choice(values, choice_set)
    return e_admissible_choice(values, choice_set)


def check_path_independence(choice_rule: ChoiceRule, universe: Sequence[Act]) -> bool:
    """
    Exhaustively check C(A | B) == C(C(A) | B) over non-empty subsets A, B.

    Chosen subsets are compared as sets.
    """
    acts = list(dict.fromkeys(universe))
    if len(acts) > MAX_PATH_UNIVERSE:
        raise ValueError(f"universe of {len(acts)} acts exceeds {MAX_PATH_UNIVERSE}")
    subsets = [frozenset(c) for r in range(1, len(acts) + 1)
               for c in itertools.combinations(acts, r)]
    order = {a: i for i, a in enumerate(acts)}

    def choose(subset: Iterable[Act]) -> frozenset:
        return frozenset(choice_rule(sorted(subset, key=order.__getitem__)))

    cache = {s: choose(s) for s in subsets}
    for a in subsets:
        for b in subsets:
            union = a | b
            if cache[union] != choose(cache[a] | b):
                logger.debug("[choice] path independence fails for A=%s B=%s",
                             sorted(a), sorted(b))
                return False
    return True


# ---------------------------------------------------------------------------
# Honest message
# ---------------------------------------------------------------------------

def sample_pairs(acts_pool: Sequence[Act], n_pairs: int,
                 rng: np.random.Generator) -> List[Tuple[Act, Act]]:
    """
    n_pairs unordered pairs drawn uniformly without replacement from the pool.

    When more pairs are requested than the pool holds, further blocks are drawn
    the same way after the previous block is exhausted.
    """
    pool = list(dict.fromkeys(as_act(a) for a in acts_pool))
    if len(pool) < 2:
        raise ValueError("acts pool needs at least two distinct acts")
    if n_pairs < 1:
        raise ValueError(f"n_pairs must be at least 1, got {n_pairs}")
    all_pairs = list(itertools.combinations(range(len(pool)), 2))
    picked: List[Tuple[Act, Act]] = []
    while len(picked) < n_pairs:
        take = min(n_pairs - len(picked), len(all_pairs))
        for k in rng.choice(len(all_pairs), size=take, replace=False):
            i, j = all_pairs[int(k)]
            picked.append((pool[i], pool[j]))
    return picked


def honest_message(utility: UtilityFunction, model: RationalityModel,
                   acts_pool: Sequence[Act], n_pairs: int,
                   rng: np.random.Generator,
                   noise: Optional[np.ndarray] = None) -> ChoiceDataset:
    """
    The message generated by the sender's true utility through its own mechanism.

    Args:
        utility: the sender's utility nu
        model: mechanism generating each pairwise choice
        acts_pool: finite grid the pairs are sampled from
        n_pairs: message length
        rng: caller-owned stream; pairs are drawn first, then any noise
        noise: optional (n_pairs, 2) pre-drawn noises for the GaussianNoise
            model (the type's message noise); drawn from rng when omitted

    Returns:
        ChoiceDataset with n_pairs pairwise observations
    """
    pairs = sample_pairs(acts_pool, n_pairs, rng)
    if isinstance(model, GaussianNoise) and noise is None:
        noise = rng.normal(0.0, model.sigma, size=(n_pairs, 2))
    observations = []
    for k, (z, y) in enumerate(pairs):
        nu_z, nu_y = float(utility(z)), float(utility(y))
        if isinstance(model, Exact):
            winner = exact_choice({z: nu_z, y: nu_y}, (z, y))[0]
            outcome = PairOutcome.FIRST if winner == z else PairOutcome.SECOND
        elif isinstance(model, GaussianNoise):
            outcome = _noisy_outcome(nu_z, nu_y, float(noise[k, 0]), float(noise[k, 1]))
        else:
            outcome = threshold_choice(nu_z, nu_y, model.sigma)
        observations.append(ChoiceObservation.pair(z, y, outcome))
    logger.debug("[message] %d observations under %s", len(observations), model.kind)
    return ChoiceDataset(observations=tuple(observations))
