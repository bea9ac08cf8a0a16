"""Exception types raised across the toolkit."""


class VitallocError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(VitallocError, ValueError):
    """An argument violates an operation's preconditions (non-finite reading,
    dimension mismatch, ...)."""


class DegenerateRangeError(VitallocError, ValueError):
    """A vital sign's data_min equals data_max, so min-max normalization is
    undefined."""


class ParseError(VitallocError, ValueError):
    """A trajectory file row could not be parsed."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class SchemaError(VitallocError, ValueError):
    """A file header or config key does not match the expected schema."""


class InsufficientDataError(VitallocError, ValueError):
    """Too few samples for the requested fit."""


class DegenerateFitError(VitallocError, RuntimeError):
    """EM could not maintain positive-definite covariances."""


class DegenerateModelError(VitallocError, RuntimeError):
    """A patient model's current-block covariance is not invertible even
    after regularization."""


class InfeasibleInstanceError(VitallocError, ValueError):
    """The arrival schedule forces more simultaneously-mandatory devices
    than the budget allows."""


class ContractViolationError(VitallocError, RuntimeError):
    """An action vector handed to the environment breaks the allocation
    constraints; indicates a bug in the calling policy, not bad data."""


class NumericFailureError(VitallocError, RuntimeError):
    """A forward pass or loss evaluated to a non-finite value."""
