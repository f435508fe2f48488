class DiffGPError(Exception):
    """Base class for every error raised by this package."""


class NumericError(DiffGPError):
    """A numerical failure: factorization, non-finite values or gradients."""


class FactorizationFailure(NumericError):
    """Raised when the jitter ladder is exhausted and a matrix still is not PD."""

    def __init__(self, message: str, max_jitter: float = float("nan")):
        super().__init__(message)
        self.max_jitter = max_jitter


class SingularDiagonal(NumericError):
    """Raised when a triangular factor has a (numerically) zero diagonal entry."""


class NonFiniteValue(NumericError):
    """Raised when a forward computation produces NaN or Inf."""


class NonFiniteGradient(NumericError):
    """Raised when a backward pass produces NaN or Inf for a parameter."""


class NonFiniteState(NumericError):
    """Raised when an SDE state leaves the finite, bounded region."""

    def __init__(self, message: str, step: int = -1, time: float = float("nan")):
        super().__init__(message)
        self.step = step
        self.time = time


class UnsupportedPrimitive(DiffGPError):
    """Raised when an operation has no differentiable implementation."""


class DataError(DiffGPError):
    """Base class for dataset ingestion problems."""


class ParseError(DataError):
    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class EmptyDataset(DataError):
    pass


class ConfigError(DiffGPError):
    """Invalid run configuration (bad value, unknown key, missing path)."""

    def __init__(self, message: str, path: str = None):
        super().__init__(message)
        self.path = path


class TrainingAborted(DiffGPError):
    """
    Raised by the training loop when a numeric failure stops optimization.

    Attributes:
        trace: The training trace recorded up to the failure.
        model: The last model whose parameters were all finite.
        cause: The underlying numeric error.
    """

    def __init__(self, message: str, trace, model, cause: Exception):
        super().__init__(message)
        self.trace = trace
        self.model = model
        self.cause = cause
