"""
Exception hierarchy for dpdglm.
Library code raises these; only the CLI turns them into exit codes.
"""

from typing import Any, Optional

import numpy as np


class DpdGlmError(Exception):
    """Base class for all dpdglm errors."""


class DomainError(DpdGlmError, ValueError):
    """Argument outside the support or canonical domain of a function."""


class PreconditionError(DpdGlmError, ValueError):
    """An operation was called on inputs that violate its precondition."""


class InputError(DpdGlmError):
    """Malformed user input (CSV, config file, command-line value)."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NonConvergence(DpdGlmError):
    """An iterative routine stopped without meeting its tolerance.

    `partial` holds whatever the routine had when it gave up (a fit, a partial sum).
    """

    def __init__(self, message: str, partial: Any = None):
        self.partial = partial
        super().__init__(message)


class SeparationError(NonConvergence):
    """The Poisson objective decreases without bound along some direction."""


class RankDeficient(DpdGlmError):
    """Design matrix does not have full column rank."""


class Singular(DpdGlmError, np.linalg.LinAlgError):
    """Matrix too ill-conditioned to solve against."""


class NotPositiveDefinite(Singular):
    """Matrix expected to be symmetric positive definite is not."""


class SimulationFailure(DpdGlmError):
    """Too many replicates of a simulation study failed to fit."""


class ConfigError(DpdGlmError, ValueError):
    """Malformed environment setting."""
