from typing import Any, Optional, Sequence


class EdgeRegError(Exception):
    """Base class for every error raised by the package."""


class DataError(EdgeRegError, ValueError):
    """Input data cannot be used as given."""


class CodecError(DataError):
    """A file is missing, malformed or truncated."""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} at byte {offset}"
        super().__init__(message)


class ShapeError(DataError):
    """Rasters that must agree in shape do not, or are too small."""


class RangeError(DataError):
    """Values are outside the range an operation accepts."""


class ConfigError(EdgeRegError, ValueError):
    """A configuration value or parameter is out of bounds."""


class UsageError(EdgeRegError):
    """Command-line usage problem."""


class DivergenceError(EdgeRegError, ArithmeticError):
    """The optimization produced a non-finite loss or gradient."""

    def __init__(
        self,
        message: str,
        iteration: Optional[int] = None,
        history: Sequence[Any] = (),
    ):
        self.iteration = iteration
        self.history = tuple(history)
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
