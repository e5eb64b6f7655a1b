from .config_schemas import (
    TrainConfig,
    ClassDefinition,
    GeneratorSpec,
    GeneratorSettings,
    PrepConfig,
    StatsConfig,
    GbtParams,
    DownstreamConfig,
    PathsConfig,
    RunSection,
    RunConfig,
)
from .result_schemas import (
    TTestResult,
    FamilySummary,
    ClassifierEval,
    FoldScore,
    PredictionTask,
    TrainLogEntry,
    StageRecord,
    RunManifest,
)

__all__ = [
    "TrainConfig",
    "ClassDefinition",
    "GeneratorSpec",
    "GeneratorSettings",
    "PrepConfig",
    "StatsConfig",
    "GbtParams",
    "DownstreamConfig",
    "PathsConfig",
    "RunSection",
    "RunConfig",
    "TTestResult",
    "FamilySummary",
    "ClassifierEval",
    "FoldScore",
    "PredictionTask",
    "TrainLogEntry",
    "StageRecord",
    "RunManifest",
]
