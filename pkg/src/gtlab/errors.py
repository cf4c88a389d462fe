"""Exception types raised across gtlab."""


class GTLabError(Exception):
    """Base class for all gtlab errors."""


class InvalidSizeError(GTLabError, ValueError):
    pass


class DimensionError(GTLabError, ValueError):
    pass


class NotPrimitiveError(GTLabError, ValueError):
    """The graph is disconnected, so no weight matrix on it can mix."""


class OracleConstructionError(GTLabError, RuntimeError):
    pass


class StateError(GTLabError, RuntimeError):
    pass


class AnalysisError(GTLabError, RuntimeError):
    pass


class SingularSystemError(AnalysisError):
    pass


class InvalidSpectrumError(AnalysisError, ValueError):
    pass


class ModeError(AnalysisError):
    """A check was asked to run outside the regime where it is valid."""


class InvalidHorizonError(AnalysisError, ValueError):
    pass


class WrongRegimeError(AnalysisError, ValueError):
    pass


class ConfigError(GTLabError, ValueError):
    pass


class TuningFailedError(GTLabError, RuntimeError):
    def __init__(self, message, candidates=()):
        super().__init__(message)
        self.candidates = list(candidates)
