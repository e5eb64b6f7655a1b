class TricohortError(Exception):
    """Base class for every pipeline failure that maps to a process exit code."""

    exit_code = 1
    title = "Error"


class ConfigError(TricohortError):
    exit_code = 2
    title = "Configuration Error"


class DataError(TricohortError):
    exit_code = 3
    title = "Data Error"


class IngestionError(DataError, ValueError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)
        self.row = row
        self.column = column


class EmptySchemaError(DataError, ValueError):
    pass


class AssignmentError(DataError, ValueError):
    def __init__(self, message: str, offending_ids=()):
        self.offending_ids = list(offending_ids)
        if self.offending_ids:
            message = f"{message}: {self.offending_ids}"
        super().__init__(message)


class SplitError(DataError, ValueError):
    pass


class SamplingError(DataError, ValueError):
    pass


class LabelingError(DataError, ValueError):
    pass


class StageDependencyError(DataError):
    def __init__(self, missing_path):
        super().__init__(f"Required upstream artifact is missing: {missing_path}")
        self.missing_path = missing_path


class FitError(DataError, ValueError):
    pass


class DegenerateVarianceError(DataError, ValueError):
    pass


class NumericFailure(TricohortError):
    exit_code = 4
    title = "Numeric Failure"


class DimensionError(NumericFailure, ValueError):
    pass


class NumericError(NumericFailure, ValueError):
    pass


class StateError(NumericFailure, RuntimeError):
    pass


class NonFiniteLossError(NumericFailure, FloatingPointError):
    def __init__(self, epoch: int, batch: int, terms: dict):
        detail = ", ".join(f"{name}={value!r}" for name, value in terms.items())
        super().__init__(f"Non-finite loss at epoch {epoch}, batch {batch}: {detail}")
        self.epoch = epoch
        self.batch = batch
        self.terms = dict(terms)
