import math
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..services.metric_loss import LossKind


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TrainConfig(_Block):
    loss: LossKind = LossKind.PROPOSED
    eps0: float = Field(1.0, gt=0.0)
    dim: int = Field(32, ge=1)
    hidden: tuple[int, ...] = (512, 256)
    dropout: float = Field(0.1, ge=0.0, lt=1.0)
    lr: float = Field(0.001, gt=0.0)
    decay: float = Field(0.95, gt=0.0, le=1.0)
    decay_interval: int = Field(50, ge=1)
    decay_start: int = Field(500, ge=0)
    epochs: int = Field(800, ge=0)
    batch_size: int = Field(256, ge=1)
    per_sex: bool = True
    seed: int = 0

    @field_validator("hidden", mode="before")
    @classmethod
    def parse_hidden(cls, value):
        if isinstance(value, str):
            return tuple(int(part) for part in value.split(",") if part.strip())
        return value

    @field_validator("hidden")
    @classmethod
    def hidden_positive(cls, value):
        if any(width < 1 for width in value):
            raise ValueError("hidden layer widths must be positive")
        return value

    @model_validator(mode="after")
    def schedule_order(self):
        if self.epochs < self.decay_start:
            raise ValueError(
                f"epochs ({self.epochs}) must not precede decay_start ({self.decay_start})"
            )
        return self


class ClassDefinition(_Block):
    name: str
    prevalence: float = Field(ge=0.0, le=1.0)
    mean: list[float] = Field(default_factory=list)
    covariance_scale: float = Field(1.0, ge=0.0)
    drift: list[float] = Field(default_factory=list)
    parents: list[str] = Field(default_factory=list)


class GeneratorSpec(_Block):
    """Full generative description of a synthetic cohort."""

    participants: int = Field(ge=1)
    biomarker_names: list[str]
    lifestyle_names: list[str]
    marker_loc: list[float]
    marker_scale: list[float]
    classes: list[ClassDefinition]
    shared_loadings: list[list[float]] = Field(default_factory=list)
    noise_sd: float = Field(1.0, ge=0.0)
    sex_offset: list[float] = Field(default_factory=list)
    age_slope: list[float] = Field(default_factory=list)
    lifestyle_effects: dict[str, dict[str, float]] = Field(default_factory=dict)
    followup_effects: dict[str, dict[str, float]] = Field(default_factory=dict)
    alpha: float = 0.8
    beta: float = 0.5
    gamma: float = 0.3
    followup_noise: float = Field(0.4, ge=0.0)
    followup_fraction: float = Field(0.12, ge=0.0, le=1.0)
    elapsed_range: tuple[float, float] = (2.0, 5.0)
    missingness: float = Field(0.05, ge=0.0, le=0.5)
    markers_of_interest: list[str] = Field(default_factory=list)
    reference_width: float = Field(2.5, gt=0.0)
    age_span: tuple[int, int] = (36, 75)
    seed: int = 0

    @model_validator(mode="after")
    def check_consistency(self):
        m = len(self.biomarker_names)
        if m == 0:
            raise ValueError("at least one biomarker is required")
        if len(self.marker_loc) != m or len(self.marker_scale) != m:
            raise ValueError("marker_loc and marker_scale must have one entry per biomarker")
        total = sum(c.prevalence for c in self.classes)
        if not math.isclose(total, 1.0, abs_tol=1e-6):
            raise ValueError(f"class prevalences must sum to 1, got {total}")
        by_name = {c.name: c for c in self.classes}
        # parents first, so comorbidity classes can sum their offsets
        ordered = sorted(self.classes, key=lambda c: bool(c.parents))
        for c in ordered:
            unknown = [p for p in c.parents if p not in by_name]
            if unknown:
                raise ValueError(f"class '{c.name}' has unknown parents {unknown}")
            if any(by_name[p].parents for p in c.parents):
                raise ValueError(f"class '{c.name}' may only combine classes without parents")
            if not c.mean and c.parents:
                # comorbidity classes combine the mean offsets of their parents
                c.mean = [
                    sum(by_name[p].mean[j] for p in c.parents) for j in range(m)
                ]
            if not c.mean:
                c.mean = [0.0] * m
            if not c.drift:
                c.drift = [0.0] * m
            if len(c.mean) != m or len(c.drift) != m:
                raise ValueError(f"class '{c.name}' mean/drift length must equal {m}")
        for name in ("sex_offset", "age_slope"):
            values = getattr(self, name)
            if not values:
                setattr(self, name, [0.0] * m)
            elif len(values) != m:
                raise ValueError(f"{name} must have one entry per biomarker")
        if self.shared_loadings and any(len(row) != len(self.shared_loadings[0]) for row in self.shared_loadings):
            raise ValueError("shared_loadings rows must share one rank")
        if self.shared_loadings and len(self.shared_loadings) != m:
            raise ValueError("shared_loadings needs one row per biomarker")
        for block_name in ("lifestyle_effects", "followup_effects"):
            for lifestyle, effects in getattr(self, block_name).items():
                if lifestyle not in self.lifestyle_names:
                    raise ValueError(f"{block_name} names unknown lifestyle feature '{lifestyle}'")
                for marker, size in effects.items():
                    if marker not in self.biomarker_names:
                        raise ValueError(f"{block_name} names unknown biomarker '{marker}'")
                    if not math.isfinite(size):
                        raise ValueError(f"{block_name} effect {lifestyle}->{marker} is not finite")
        low, high = self.elapsed_range
        if low > high:
            raise ValueError("elapsed_range low exceeds high")
        return self


class GeneratorSettings(_Block):
    """Flat [generator] config block from which the full spec is built."""

    participants: int = Field(5000, ge=1)
    biomarkers: int = Field(30, ge=1)
    lifestyle: int = Field(4, ge=3, le=4)
    missingness: float = Field(0.05, ge=0.0, le=0.5)
    separation: float = Field(1.5, ge=0.0)
    covariance_scale: float = Field(1.0, ge=0.0)
    shared_rank: int = Field(2, ge=0)
    shared_strength: float = Field(0.5, ge=0.0)
    healthy_prevalence: float = Field(0.35, gt=0.0, lt=1.0)
    sex_effect: float = 0.3
    age_effect: float = 0.1
    activity_effect: float = 0.5
    activity_markers: int = Field(6, ge=0)
    sleep_effect: float = 0.4
    sleep_markers: int = Field(4, ge=0)
    markers_of_interest: int = Field(4, ge=1)
    followup_fraction: float = Field(0.12, ge=0.0, le=1.0)
    followup_alpha: float = 0.8
    followup_beta: float = 0.5
    followup_gamma: float = 0.3
    followup_noise: float = Field(0.4, ge=0.0)
    elapsed_min: float = 2.0
    elapsed_max: float = 5.0


class PrepConfig(_Block):
    completeness: float = Field(0.75, gt=0.0, le=1.0)
    train_fraction: float = Field(0.70, ge=0.0, le=1.0)
    val_fraction: float = Field(0.10, ge=0.0, le=1.0)
    test_fraction: float = Field(0.20, ge=0.0, le=1.0)
    triplets: int = Field(100_000, ge=0)
    followup_min_years: float = 2.0
    followup_max_years: float = 5.0

    @model_validator(mode="after")
    def fractions_sum(self):
        total = self.train_fraction + self.val_fraction + self.test_fraction
        if not math.isclose(total, 1.0, abs_tol=1e-9):
            raise ValueError(f"split fractions must sum to 1, got {total}")
        if self.followup_min_years > self.followup_max_years:
            raise ValueError("followup_min_years exceeds followup_max_years")
        return self

    @property
    def fractions(self) -> tuple[float, float, float]:
        return self.train_fraction, self.val_fraction, self.test_fraction


class StatsConfig(_Block):
    q: float = Field(0.05, gt=0.0, lt=1.0)
    healthy_only: bool = True
    markers: Optional[list[str]] = None

    @field_validator("markers", mode="before")
    @classmethod
    def parse_markers(cls, value):
        if isinstance(value, str):
            return [part.strip() for part in value.split(",") if part.strip()] or None
        return value


class GbtParams(_Block):
    rounds: int = Field(200, ge=1)
    depth: int = Field(3, ge=1)
    learning_rate: float = Field(0.1, gt=0.0, le=1.0)


class DownstreamConfig(_Block):
    knn_k: int = Field(5, ge=1)
    folds: int = Field(5, ge=2)
    gbt_rounds: int = Field(200, ge=1)
    gbt_depth: int = Field(3, ge=1)
    gbt_lr: float = Field(0.1, gt=0.0, le=1.0)
    healthy_only: bool = True
    use_elapsed: bool = True
    min_participants: int = Field(50, ge=1)
    repeats: int = Field(1, ge=1)
    markers: Optional[list[str]] = None

    @field_validator("markers", mode="before")
    @classmethod
    def parse_markers(cls, value):
        if isinstance(value, str):
            return [part.strip() for part in value.split(",") if part.strip()] or None
        return value

    @property
    def gbt(self) -> GbtParams:
        return GbtParams(rounds=self.gbt_rounds, depth=self.gbt_depth, learning_rate=self.gbt_lr)


class PathsConfig(_Block):
    cohort: str = "data/cohort.csv"
    followup: str = "data/followup.csv"
    features: str = "data/features.csv"
    reference_ranges: str = "data/reference_ranges.csv"
    out_dir: str = "runs/default"


class RunSection(_Block):
    seed: int = 7


class RunConfig(_Block):
    run: RunSection = Field(default_factory=RunSection)
    paths: PathsConfig = Field(default_factory=PathsConfig)
    generator: GeneratorSettings = Field(default_factory=GeneratorSettings)
    prep: PrepConfig = Field(default_factory=PrepConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    stats: StatsConfig = Field(default_factory=StatsConfig)
    downstream: DownstreamConfig = Field(default_factory=DownstreamConfig)

    @property
    def seed(self) -> int:
        return self.run.seed
