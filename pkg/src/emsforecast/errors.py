"""Exception hierarchy shared across the package."""


class EmsForecastError(Exception):
    """Base class for all package errors."""


class ShapeError(EmsForecastError, ValueError):
    """Array shapes or ranks are incompatible with the requested operation."""


class SpecError(EmsForecastError, ValueError):
    """A model description or configuration is inconsistent."""


class PartitionError(EmsForecastError, ValueError):
    """A hyperparameter partition does not assign every dimension exactly once."""

    def __init__(self, message, missing=(), duplicated=(), unknown=()):
        super().__init__(message)
        self.missing = list(missing)
        self.duplicated = list(duplicated)
        self.unknown = list(unknown)


class NumericError(EmsForecastError, ArithmeticError):
    """A numerical routine failed (e.g. a kernel matrix stayed non-PD)."""


class TrainingDiverged(NumericError):
    """Loss became NaN or infinite during training."""

    def __init__(self, epoch, message=None):
        super().__init__(message or f"training diverged at epoch {epoch}")
        self.epoch = epoch


class InsufficientHistory(EmsForecastError, ValueError):
    """Not enough past periods exist to build the requested quantity."""


class DegenerateRange(EmsForecastError, ValueError):
    """A normalisation range collapsed to zero width."""


class ComparisonError(EmsForecastError, ValueError):
    """Reports cannot be compared (e.g. they were scored on different splits)."""
