# src/errors.py
"""
Exception hierarchy for Rosa.

Library code raises these; only src/main.py turns them into exit codes
(see exit_code_for).
"""


class RosaError(Exception):
    """Base class for every error Rosa raises on purpose."""


class ConfigError(RosaError, ValueError):
    """A configuration file or override failed validation."""


class DataError(RosaError, ValueError):
    """Input data is missing, malformed or inconsistent."""


class InvariantError(DataError):
    """A domain value violates one of its type invariants."""


class SessionFormatError(DataError):
    """A session container or binary artifact is malformed."""


class ScheduleError(DataError):
    """The requested event schedule cannot fit the recording."""


class ModelNotFoundError(DataError):
    """A stage needs a trained model that does not exist yet."""


class ModelFormatError(DataError):
    """A model file has the wrong version or inconsistent tensors."""


class NumericError(RosaError, ArithmeticError):
    """A numeric computation produced an unusable result."""


class DivergenceError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, step: int, terms: dict[str, float]):
        self.epoch = epoch
        self.step = step
        self.terms = dict(terms)
        detail = ", ".join(f"{name}={value:.6g}" for name, value in self.terms.items())
        super().__init__(f"non-finite loss at epoch {epoch}, step {step} ({detail})")


EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def exit_code_for(exc: BaseException) -> int:
    """Map an exception raised by a stage to the CLI exit code."""
    if isinstance(exc, ConfigError):
        return EXIT_USAGE
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    return EXIT_DATA
