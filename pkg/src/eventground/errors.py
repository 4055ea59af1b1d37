"""Exception types raised across the package."""


class EventGroundError(Exception):
    """Base class for all package errors."""


class InvalidArgument(EventGroundError, ValueError):
    pass


class InvalidWindow(InvalidArgument):
    pass


class InvalidExpression(InvalidArgument):
    pass


class InvalidTarget(InvalidArgument):
    pass


class InvalidConfiguration(EventGroundError, ValueError):
    pass


class NumericalFailure(EventGroundError, ArithmeticError):
    pass


class NoSignal(EventGroundError):
    pass


class UndefinedMetric(EventGroundError, ValueError):
    pass


class GenerationFailure(EventGroundError, RuntimeError):
    pass


class DatasetError(EventGroundError):
    pass


class MissingFile(DatasetError, FileNotFoundError):
    pass


class VersionMismatch(DatasetError):
    pass


class InvariantViolation(DatasetError, ValueError):
    def __init__(self, message, sample_index=None):
        if sample_index is not None:
            message = f"sample {sample_index}: {message}"
        super().__init__(message)
        self.sample_index = sample_index
