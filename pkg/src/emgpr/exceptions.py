"""Exception types raised across the package."""


class EmgprError(Exception):
    """Base class for all package errors."""


class NumericalError(EmgprError):
    """A covariance matrix could not be factorized, even after jitter."""


class TaskFitError(EmgprError):
    """Fitting failed for one task (or ensemble member)."""

    def __init__(self, index, cause, kind="task"):
        self.index = index
        self.cause = cause
        self.kind = kind
        super().__init__(f"{kind} {index}: {cause}")


class ConfigError(EmgprError, ValueError):
    """Invalid experiment or model configuration; names the offending field."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DataFormatError(EmgprError, ValueError):
    """Malformed input file."""
