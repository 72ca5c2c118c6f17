"""
Exception hierarchy for the off-switch simulator.

Input problems (bad files, bad configs, violated preconditions of the
choice model) derive from InputError; failures of the numerics (kernel
factorization, Newton/EP convergence, ill-posed payoffs) derive from
NumericalError. The CLI maps the two families to exit codes 2 and 3.
"""

from typing import Any, Dict, Optional


class OffSwitchError(Exception):
    """Base class for every error raised by this package"""


class InputError(OffSwitchError, ValueError):
    """Malformed input data or configuration"""


class DatasetParseError(InputError):
    """A choice dataset file could not be parsed"""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class ConfigError(InputError):
    """Invalid or unknown configuration key/value"""


class ChoiceTieError(InputError):
    """Exact choice over acts with equal utility (distinctness assumption violated)"""


class PairwiseRequiredError(InputError):
    """An operation needs two-act choice sets"""


class MessageSpaceTooLargeError(InputError):
    """Exhaustive message enumeration requested above the cap"""


class NumericalError(OffSwitchError, ArithmeticError):
    """A numerical routine failed"""


class IllConditionedKernelError(NumericalError):
    """Cholesky factorization failed even after the full jitter ladder"""


class ConvergenceError(NumericalError):
    """An iterative solver ran out of iterations"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = dict(diagnostics or {})
        detail = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        super().__init__(f"{message} ({detail})" if detail else message)


class IllPosedPayoffError(NumericalError):
    """Expected payoff undefined: no uncertainty, no noise and equal means"""


class InfeasibleStartError(NumericalError):
    """No starting point with finite likelihood for the sampler"""
