"""Exception hierarchy shared by every critsense module."""

from __future__ import annotations


class CritSenseError(Exception):
    """Base class for all errors raised by critsense."""


class SpaceMismatchError(CritSenseError, ValueError):
    pass


class NotHermitianError(CritSenseError, ValueError):
    pass


class InvalidStateError(CritSenseError, ValueError):
    pass


class GapError(CritSenseError, ValueError):
    """Raised when an operation needs a real positive gap Δ."""


class ParameterError(CritSenseError, ValueError):
    pass


class ConfigError(CritSenseError, ValueError):
    pass


class TruncationError(CritSenseError, RuntimeError):
    def __init__(self, message: str, suggested_cutoff: int | None = None):
        super().__init__(message)
        self.suggested_cutoff = suggested_cutoff


class EvolutionError(CritSenseError, RuntimeError):
    pass


class ConvergenceError(CritSenseError, RuntimeError):
    pass


class StepSizeError(CritSenseError, RuntimeError):
    def __init__(self, message: str, suggested_dt: float | None = None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class OutputError(CritSenseError, OSError):
    pass
