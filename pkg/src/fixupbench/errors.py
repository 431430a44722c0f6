"""Exception types shared across the package."""


class FixupBenchError(Exception):
    """Base class for every error raised by fixupbench."""


class DimensionError(FixupBenchError, ValueError):
    pass


class PreconditionError(FixupBenchError, ValueError):
    pass


class DomainError(FixupBenchError, ValueError):
    pass


class ConfigError(FixupBenchError, ValueError):
    pass


class StateError(FixupBenchError, RuntimeError):
    pass


class FormatError(FixupBenchError, ValueError):
    pass


class UpdateScaleError(FixupBenchError, RuntimeError):
    """The step size is outside the first-order regime."""

    def __init__(self, message, suggested_eta):
        super().__init__(message)
        self.suggested_eta = suggested_eta
