"""Exception and warning types shared across the package."""


class ShagclError(Exception):
    """Base class for all package errors."""


class ShapeError(ShagclError, ValueError):
    pass


class VocabError(ShagclError, ValueError):
    pass


class ConfigError(ShagclError, ValueError):
    pass


class DataError(ShagclError, ValueError):
    pass


class ParseError(ShagclError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericalError(ShagclError, FloatingPointError):
    """Raised when training produces a non-finite loss."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class EmptySampleWarning(UserWarning):
    """A sampled set or ground-truth set was empty and was skipped."""
