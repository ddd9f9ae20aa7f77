"""Exception hierarchy for the SACCN backend.

Each top-level family maps onto one CLI exit code so the controller can
translate failures without inspecting messages:

* ``UsageError``   -> 1 (bad flags, bad config keys)
* ``DataError``    -> 2 (files, annotations, checkpoints, shapes)
* ``NumericError`` -> 3 (non-finite values, divergence, failed gradcheck)

Example
-------
>>> from backend.errors import ShapeError
>>> isinstance(ShapeError("bad"), ValueError)
True
"""


class SaccnError(Exception):
    """Base class for every error raised by this package."""

    exit_code: int = 1


class UsageError(SaccnError):
    """Invalid command-line usage."""

    exit_code = 1


class ConfigError(UsageError):
    """Unknown or malformed configuration key."""


class DataError(SaccnError):
    """Input data, file or format problem."""

    exit_code = 2


class ShapeError(DataError, ValueError):
    """Tensor extents that do not fit together."""


class AnnotationError(DataError):
    """Malformed or dangling scene annotation."""


class CheckpointError(DataError):
    """Unreadable or incompatible checkpoint file."""


class CheckpointMagicError(CheckpointError):
    """File does not start with the checkpoint magic bytes."""


class NumericError(SaccnError, ArithmeticError):
    """Numeric failure."""

    exit_code = 3


class NonFiniteError(NumericError):
    """A forward op produced NaN or Inf."""


class DivergenceError(NumericError):
    """Training loss became non-finite."""


class GradCheckError(NumericError):
    """Gradient check failed or could not be run."""


class AutogradError(SaccnError, RuntimeError):
    """Misuse of the tape (detached loss, replayed tape, ...)."""
