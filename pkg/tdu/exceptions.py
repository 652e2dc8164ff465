"""
Exceptions raised across the TDU lab
"""
from typing import List, Optional


class TduError(Exception):
    """Base class for every error raised by the lab"""


class InvalidArgumentError(TduError, ValueError):
    """An argument has the wrong shape, range or type"""


class ContractViolationError(TduError, RuntimeError):
    """An object was used outside its protocol, e.g. stepping a finished episode"""


class PreconditionError(TduError, RuntimeError):
    """An operation was called before its precondition holds"""


class SingularSystemError(InvalidArgumentError):
    """The Bellman linear system has no unique solution"""


class ConfigError(TduError):
    """
    Configuration could not be loaded or failed validation

    Args:
        message: Summary message
        errors: Individual rule failures, one message per entry
    """

    def __init__(self, message: str, errors: Optional[List[str]] = None):
        super().__init__(message)
        self.errors = list(errors or [])

    def __str__(self) -> str:
        base = super().__str__()
        if not self.errors:
            return base
        return base + ": " + "; ".join(self.errors)
