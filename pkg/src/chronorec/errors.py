"""Exception types shared across the package."""


class ChronoRecError(Exception):
    """Base class for all package errors."""


class DimensionError(ChronoRecError, ValueError):
    pass


class EmptyLossError(ChronoRecError, ValueError):
    pass


class StaleTapeError(ChronoRecError, RuntimeError):
    pass


class NumericError(ChronoRecError, FloatingPointError):
    """Raised when a NaN/Inf shows up in values or gradients."""


class ConfigError(ChronoRecError, ValueError):
    pass


class ParseError(ChronoRecError, ValueError):
    def __init__(self, path, line, message):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class EmptyTaskError(ChronoRecError, LookupError):
    """The user has no interactions in the requested period."""


class UnusablePeriodError(ChronoRecError, ValueError):
    pass


class CheckpointFormatError(ChronoRecError, ValueError):
    pass


class IncompatibleCheckpointError(ChronoRecError, ValueError):
    pass
