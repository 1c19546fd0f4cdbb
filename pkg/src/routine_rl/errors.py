"""Exception types shared across the package."""


class RoutineError(Exception):
    """Base class for all package errors."""


class ConfigError(RoutineError):
    """Invalid configuration, mismatched shapes or parameter names."""


class UsageError(RoutineError):
    """An API was called in a state where it cannot proceed."""


class NumericalError(RoutineError):
    """Non-finite values appeared in parameters after an update."""
