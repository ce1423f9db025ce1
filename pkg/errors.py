"""Exception hierarchy shared by the library and the command-line launcher.

Library code raises these; only the orchestrator turns them into exit codes.
"""
from typing import Optional


class TomographyError(Exception):
    """Base class for all tomography errors."""

    exit_code = 1


class ValidationError(TomographyError):
    """Invalid input, configuration or file contents."""

    exit_code = 2

    def __init__(self, message: str, key_path: Optional[str] = None):
        if key_path:
            message = f"{key_path}: {message}"
        super().__init__(message)
        self.key_path = key_path


class TruncationError(ValidationError):
    """The Fock truncation loses more than the allowed trace."""


class NumericalError(TomographyError):
    """A computation could not be completed to the requested accuracy."""

    exit_code = 1


class GridTooCoarseError(NumericalError):
    """The field-strength grid does not hold the distribution."""

    def __init__(self, message: str, suggested_f_max: Optional[float] = None):
        if suggested_f_max is not None:
            message = f"{message} (suggested f_max >= {suggested_f_max:.4g})"
        super().__init__(message)
        self.suggested_f_max = suggested_f_max


class CoverageError(NumericalError):
    """A characteristic-function query lies outside the measured control ranges."""


class FilterRequiredError(NumericalError):
    """Efficiency compensation was requested without a regularization filter."""


class AmplificationError(NumericalError):
    """The noise amplification bound exceeds the configured ceiling."""


class ToleranceExceededError(TomographyError):
    """Two density matrices differ by more than the requested tolerance."""

    exit_code = 3
