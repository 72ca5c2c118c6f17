"""
Receiver decision rules and the rationality/uncertainty regime table.
"""

import logging
from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict

from choice_model import RationalityModel, VectorDominance, model_sigma
from payoff_engine import ExpectedPayoffs, VectorExpectedPayoffs
from posterior_inference import BivariatePosterior

logger = logging.getLogger(__name__)

RATIONAL_SIGMA = 1e-9
UNCERTAIN_COV = 1e-12


class ReceiverAction(str, Enum):
    IMM = "IMM"
    DEF = "DEF"
    DON = "DoN"


class SenderAction(str, Enum):
    """The sender's move after DEF: switch the robot off (keep o) or not (keep x)"""
    OFF = "OFF"
    NOT_OFF = "NotOFF"


class DominanceCriterion(str, Enum):
    """How a set-valued DEF is compared: pessimistic (min) or optimistic (max)"""
    PESSIMISTIC_A = "A"
    OPTIMISTIC_B = "B"


class Regime(BaseModel):
    model_config = ConfigDict(frozen=True)

    sender_rational: bool
    receiver_uncertain: bool

    @property
    def label(self) -> str:
        who = "rational" if self.sender_rational else "bounded-rational"
        what = "uncertain" if self.receiver_uncertain else "no-uncertainty"
        return f"{who}/{what}"


def _fallback(imm: float, don: float) -> ReceiverAction:
    # IMM/DoN tie keeps the status quo
    return ReceiverAction.IMM if imm > don else ReceiverAction.DON


def _defers(def_value: float, p: ExpectedPayoffs) -> bool:
    return def_value - p.beta >= max(p.imm_value, p.don_value)


def decide_scalar(p: ExpectedPayoffs) -> ReceiverAction:
    """
    DEF iff def_value - beta >= max(imm, don), otherwise the better of IMM
    and DoN.
    """
    if p.is_set_valued:
        raise ValueError("set-valued DEF payoff: use decide_threshold")
    if p.def_excess is not None:
        defer = p.def_excess - p.beta >= 0.0
    else:
        defer = _defers(p.def_value, p)
    return ReceiverAction.DEF if defer else _fallback(p.imm_value, p.don_value)


def decide_threshold(p: ExpectedPayoffs, crit: DominanceCriterion) -> ReceiverAction:
    """Compare min (criterion A) or max (criterion B) of the DEF pair with max(imm, don)"""
    if not p.is_set_valued:
        raise ValueError("scalar DEF payoff: use decide_scalar")
    candidate = p.def_low if crit == DominanceCriterion.PESSIMISTIC_A else p.def_high
    if _defers(candidate, p):
        return ReceiverAction.DEF
    return _fallback(p.imm_value, p.don_value)


def _dominates(a, b, crit: VectorDominance) -> bool:
    if crit == VectorDominance.PARETO:
        return all(u > w for u, w in zip(a, b))
    # between two vectors, e-admissibility drops b only when a is at least as good everywhere
    return all(u >= w for u, w in zip(a, b)) and any(u > w for u, w in zip(a, b))


def decide_vector(v: VectorExpectedPayoffs, crit: VectorDominance) -> Optional[ReceiverAction]:
    """
    The action whose expected payoff vector dominates both others, or None
    (undecided) when no action does. One-dimensional payoffs follow
    decide_scalar.
    """
    if v.dimension == 1:
        return decide_scalar(ExpectedPayoffs(def_value=v.def_vector[0], imm_value=v.imm_vector[0],
                                             don_value=v.don_vector[0]))
    actions = {ReceiverAction.DEF: v.def_vector, ReceiverAction.IMM: v.imm_vector,
               ReceiverAction.DON: v.don_vector}
    for action, payoff in actions.items():
        others = [other for a, other in actions.items() if a != action]
        if all(_dominates(payoff, other, crit) for other in others):
            return action
    logger.debug("[decide] no action dominates under %s", crit.value)
    return None


def classify_regime(bp: BivariatePosterior, model: RationalityModel) -> Regime:
    uncertain = bp.k_xx > UNCERTAIN_COV or bp.k_oo > UNCERTAIN_COV or abs(bp.k_xo) > UNCERTAIN_COV
    return Regime(sender_rational=model_sigma(model) < RATIONAL_SIGMA, receiver_uncertain=uncertain)
