"""Exception and warning types shared across the package."""

from __future__ import annotations


class LiftedMFGError(Exception):
    """Base class for all package errors."""


class NonConvergence(LiftedMFGError):
    """Finite-difference quotients did not stabilise on the epsilon ladder.

    The partially computed estimate is attached as ``estimate`` when available.
    """

    def __init__(self, message: str, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class HorizonExceeded(LiftedMFGError, ValueError):
    """A plateau or finite-difference step would leave [0, T]."""


class Blowup(LiftedMFGError):
    """A Riccati trajectory exceeded the configured magnitude bound."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


class NearSingular(LiftedMFGError):
    """A fundamental solution became numerically singular."""


class FeasibilityViolation(LiftedMFGError):
    """A fixed-point or optimiser denominator left its admissible region."""


class AnticipationError(LiftedMFGError):
    """A lifted functional tried to read a path value at or after the present time."""


class GridMismatch(LiftedMFGError, ValueError):
    """Two objects that must share a time grid do not."""


class ConfigError(LiftedMFGError, ValueError):
    """Malformed configuration; ``line`` carries the 1-based line number if known."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where = f"{source}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")


class PreconditionWarning(UserWarning):
    """Solvability conditions fail but the computation was attempted anyway."""
