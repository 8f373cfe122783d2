"""Heat kernels, semigroups and functional inequalities on generalized diamond fractals."""
from .exceptions import (
    ArithmeticOverflowError,
    AssumptionViolationError,
    DiamondHeatError,
    InsufficientDepthError,
    InvalidArgumentError,
    OracleFailureError,
    PrecisionFailureError,
)
from .params import ParameterSequences

__all__ = [
    "ArithmeticOverflowError",
    "AssumptionViolationError",
    "DiamondHeatError",
    "InsufficientDepthError",
    "InvalidArgumentError",
    "OracleFailureError",
    "ParameterSequences",
    "PrecisionFailureError",
]
