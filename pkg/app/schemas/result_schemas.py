from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator


class TTestResult(BaseModel):
    feature: str
    sex: str = ""
    age_group: str = ""
    axis: str = ""
    t: float
    df: int = Field(gt=0)
    p: float = Field(ge=0.0, le=1.0)
    mean_a: float
    mean_b: float
    n_a: int
    n_b: int
    p_adjusted: Optional[float] = None
    significant: bool = False


class FamilySummary(BaseModel):
    """Counts for one Benjamini-Hochberg family (one sex, one lifestyle axis)."""
    sex: str
    axis: str
    markers_tested: int
    tests: int
    rejections: int
    significant_in_any_group: int
    significant_in_half_of_groups: int


class ClassifierEval(BaseModel):
    representation: str
    classifier: str
    task: Literal["binary", "multiclass"]
    weighted_f1: float = Field(ge=0.0, le=1.0)
    per_class_f1: dict[str, Optional[float]] = Field(default_factory=dict)
    confusion: list[list[int]] = Field(default_factory=list)
    seed: int = 0

    def row(self) -> dict:
        return {
            "representation": self.representation,
            "classifier": self.classifier,
            "task": self.task,
            "weighted_f1": self.weighted_f1,
            "seed": self.seed,
        }


class FoldScore(BaseModel):
    marker: str
    variant: str
    fold: int
    r2: float


class PredictionTask(BaseModel):
    marker: str
    variant: str
    n_participants: int
    folds: list[int] = Field(default_factory=list)  # held-out fold per participant
    fold_r2: list[float] = Field(default_factory=list)
    r2_mean: float = 0.0
    r2_sd: float = 0.0
    age_group_r2: dict[str, float] = Field(default_factory=dict)

    def fold_scores(self) -> list[FoldScore]:
        return [
            FoldScore(marker=self.marker, variant=self.variant, fold=i, r2=r2)
            for i, r2 in enumerate(self.fold_r2)
        ]


class TrainLogEntry(BaseModel):
    epoch: int
    train_loss: float
    val_loss: Optional[float] = None
    lr: float
    seconds: float


class StageRecord(BaseModel):
    seconds: float
    outputs: list[str] = Field(default_factory=list)


class RunManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: dict = Field(default_factory=dict)
    formats: dict[str, str] = Field(default_factory=dict)
    stages: dict[str, StageRecord] = Field(default_factory=dict)
    digests: dict[str, str] = Field(default_factory=dict)

    @field_validator("digests")
    @classmethod
    def digests_are_hex(cls, value: dict[str, str]) -> dict[str, str]:
        for name, digest in value.items():
            if len(digest) != 64:
                raise ValueError(f"Digest of '{name}' is not a SHA-256 hex string")
        return value
