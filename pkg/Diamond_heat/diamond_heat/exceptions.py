"""Error types raised by the diamond_heat library."""
from typing import Optional


class DiamondHeatError(Exception):
    """Base class for every error raised by diamond_heat."""


class InvalidArgumentError(DiamondHeatError, ValueError):
    """An argument is outside the domain of the operation."""


class ArithmeticOverflowError(DiamondHeatError, OverflowError):
    """An exact product left the range representable in double precision."""


class PrecisionFailureError(DiamondHeatError):
    """A series could not be truncated within the requested tolerance."""

    def __init__(self, message: str, achieved_bound: Optional[float] = None):
        super().__init__(message)
        self.achieved_bound = achieved_bound


class AssumptionViolationError(DiamondHeatError):
    """The parameter sequences are not admissible at the requested time."""

    def __init__(self, message: str, t: Optional[float] = None):
        super().__init__(message)
        self.t = t


class InsufficientDepthError(DiamondHeatError):
    """The explicit sequences are too short to certify the requested accuracy."""


class OracleFailureError(DiamondHeatError):
    """An independent oracle (eigensolver, shortest path, walk) did not produce a result."""
