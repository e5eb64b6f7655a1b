from .cohort import CohortTable, FeatureSpec, AgeGroups, TripletSet, LifestyleStrata, SplitIndices, QuantileTransform
from .network import DenseLayer, MlpParams, AdamState, LrSchedule, EmbeddingModel
from .downstream import PcaTransform, RegressionTree, GbtModel
from .synthetic import GroundTruth

__all__ = [
    "CohortTable",
    "FeatureSpec",
    "AgeGroups",
    "TripletSet",
    "LifestyleStrata",
    "SplitIndices",
    "QuantileTransform",
    "DenseLayer",
    "MlpParams",
    "AdamState",
    "LrSchedule",
    "EmbeddingModel",
    "PcaTransform",
    "RegressionTree",
    "GbtModel",
    "GroundTruth",
]
