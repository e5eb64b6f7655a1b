from .errors import (
    TricohortError,
    ConfigError,
    DataError,
    IngestionError,
    EmptySchemaError,
    AssignmentError,
    SplitError,
    SamplingError,
    LabelingError,
    StageDependencyError,
    FitError,
    DegenerateVarianceError,
    NumericFailure,
    DimensionError,
    NumericError,
    StateError,
    NonFiniteLossError,
)
from .seeding import derive_seed, make_rng, stage_rng

__all__ = [
    "TricohortError",
    "ConfigError",
    "DataError",
    "IngestionError",
    "EmptySchemaError",
    "AssignmentError",
    "SplitError",
    "SamplingError",
    "LabelingError",
    "StageDependencyError",
    "FitError",
    "DegenerateVarianceError",
    "NumericFailure",
    "DimensionError",
    "NumericError",
    "StateError",
    "NonFiniteLossError",
    "derive_seed",
    "make_rng",
    "stage_rng",
]
