"""
Exception hierarchy.

Every error raised on purpose by the package derives from DuetDiffError and
carries the process exit code the CLI reports for it.
"""

from typing import Any, Optional

from duetdiff.utils.constants import ExitCode


class DuetDiffError(Exception):
    """Base class for all package errors."""

    exit_code = ExitCode.VALIDATION

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def __str__(self) -> str:
        return self.message


class ConfigurationError(DuetDiffError):
    """Invalid configuration value, unknown setting or bad flag combination."""

    exit_code = ExitCode.USAGE


class InputError(DuetDiffError):
    """Invalid input to an operation."""


class ShapeMismatchError(InputError):
    """Tensor shapes that must agree do not."""


class QuorumError(InputError):
    """Too few detection sets qualify for calibration."""


class DuplicateDetectionError(InputError):
    """The grounding boxes overlap so much they describe the same person."""


class DerivationError(InputError):
    """A derived annotation cannot be computed from the available keypoints."""


class ExtractionError(InputError):
    """No face (or more than one) could be located in an image."""


class RecordValidationError(InputError):
    """A JSONL record does not match the expected schema."""


class NumericFailure(DuetDiffError):
    """A non-finite value appeared during sampling or training."""

    def __init__(self, message: str, step: Optional[int] = None, **details: Any):
        super().__init__(message, **details)
        self.step = step


class ArtifactIOError(DuetDiffError):
    """An artifact could not be read or written."""

    exit_code = ExitCode.IO
