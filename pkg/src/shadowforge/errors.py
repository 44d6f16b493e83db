"""Exception hierarchy shared across the package."""


class ShadowforgeError(Exception):
    """Base class for all package errors."""


class InvalidArgument(ShadowforgeError, ValueError):
    """An argument violates a documented precondition."""


class NumericalFailure(ShadowforgeError, RuntimeError):
    """An iterative numerical routine failed to converge."""


class DatasetFormatError(ShadowforgeError, ValueError):
    """A dataset or model file is malformed.

    Carries ``line`` (1-based) when the offending line is known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class VersionMismatch(DatasetFormatError):
    """File declares a format version this code does not read."""


class UndefinedMetric(ShadowforgeError, ArithmeticError):
    """A metric is undefined for the given inputs (e.g. zero total variance)."""


class ConfigError(ShadowforgeError, ValueError):
    """A run configuration is missing a key or holds an unusable value."""
