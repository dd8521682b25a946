"""
Error types and status enums shared by the OT assignment modules
"""

from enum import Enum
from typing import Optional


class SolveStatus(str, Enum):
    CONVERGED = "converged"
    NOT_CONVERGED = "not_converged"
    EXACT = "exact"  # LP oracle


class ExitCode(int, Enum):
    OK = 0
    INPUT_ERROR = 1
    NUMERICAL_WARNING = 2


class OTLabelError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(OTLabelError, ValueError):
    """Array shapes are empty, inconsistent or of the wrong rank."""


class SimplexError(OTLabelError, ValueError):
    """Values are outside [0, 1] or rows do not sum to one."""


class InvalidCostError(OTLabelError, ValueError):
    """Cost entries are negative or not finite."""


class ZeroMassError(OTLabelError, ValueError):
    """A transport plan row carries no mass and cannot be normalized."""


class OracleSizeError(OTLabelError, ValueError):
    """Instance is too large for the exact LP oracle."""


class MatchingError(OTLabelError, ValueError):
    """More targets than predictions in a bipartite matching."""


class EvaluationError(OTLabelError, ValueError):
    """Evaluation was requested on an empty set."""


class FormatError(OTLabelError):
    """
    A binary or CSV file could not be parsed.

    Args:
        message: What went wrong
        offset: Byte offset in the file where parsing failed
    """

    def __init__(self, message: str, offset: int = 0):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class ConfigError(OTLabelError, ValueError):
    """
    A run config holds an unknown key or an invalid value.

    Args:
        message: What went wrong
        key: Offending config key, if known
    """

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        super().__init__(message)
