"""Exception types shared across the package."""


class KFanError(Exception):
    """Base class for every error raised by kfan."""


class DimensionError(KFanError, ValueError):
    """Array shapes do not agree with the model or with each other."""


class DomainError(KFanError, ValueError):
    """An argument lies outside the domain the operation accepts."""


class NumericError(KFanError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class FormatError(KFanError, ValueError):
    """A binary file is malformed; ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class ConfigError(KFanError, ValueError):
    """A run configuration could not be parsed or validated."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class OracleBudgetError(KFanError, ValueError):
    """Exhaustive enumeration was refused because the model is too large."""
