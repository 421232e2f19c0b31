"""Exception hierarchy shared by every module."""


class EdaError(Exception):
    """Base class for all package errors."""


class ConfigurationError(EdaError, ValueError):
    """A parameter or configuration value is outside its valid domain."""


class DataError(EdaError, ValueError):
    """Input samples are malformed (non-finite, too short, non-monotone...)."""


class SpecError(EdaError, ValueError):
    """A synthetic scenario would produce an invalid signal."""


class NumericError(EdaError, ArithmeticError):
    """A computation produced non-finite values."""


class TrainingDiverged(EdaError, RuntimeError):
    """Training loss blew up; carries the loss curve so far."""

    def __init__(self, message, curve):
        super().__init__(message)
        self.curve = list(curve)


class CheckpointError(EdaError, ValueError):
    """A model checkpoint is unreadable or does not match its architecture."""


class ReportError(EdaError, ValueError):
    """Aggregation was asked to summarise nothing."""


class GraphError(EdaError, RuntimeError):
    """The autodiff graph is malformed (cycle or missing node)."""
