from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
import pandas as pd

FIXED_COLUMNS = ["id", "sex", "age", "visit_index", "elapsed_years", "condition_code"]
SEXES = ("F", "M")

FeatureKind = Literal["biomarker", "lifestyle", "demographic"]

RAW_HEALTHY = "none"
APPARENTLY_HEALTHY = "apparently_healthy"
BONA_FIDE_HEALTHY = "bona_fide_healthy"
HEALTHY_LABELS = (APPARENTLY_HEALTHY, BONA_FIDE_HEALTHY)

DEFAULT_CONDITIONS = (
    APPARENTLY_HEALTHY,
    BONA_FIDE_HEALTHY,
    "diabetes",
    "diabetes_cardiovascular",
    "diabetes_other_serious",
    "diabetes_cardiovascular_other_serious",
    "multiple_non_metabolic",
    "cardiovascular",
    "cardiovascular_other_serious",
    "respiratory",
    "cancer",
    "other_serious",
)

ACTIVE = "active"
LESS_ACTIVE = "less-active"
MEDIAN_SLEEP = "median-sleep"
LESS_SLEEP = "less-sleep"


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: FeatureKind = "biomarker"
    completeness: float = 1.0
    marker_of_interest: bool = False

    def __post_init__(self):
        if not 0.0 <= self.completeness <= 1.0:
            raise ValueError(f"Completeness of '{self.name}' must lie in [0, 1]")
        if self.kind not in ("biomarker", "lifestyle", "demographic"):
            raise ValueError(f"Unknown feature kind '{self.kind}' for '{self.name}'")


def check_unique_names(features: list[FeatureSpec]):
    names = [f.name for f in features]
    duplicates = sorted({name for name in names if names.count(name) > 1})
    if duplicates:
        raise ValueError(f"Feature names must be unique, duplicated: {duplicates}")


@dataclass
class CohortTable:
    """One row per participant-visit: fixed columns followed by feature columns."""

    frame: pd.DataFrame
    features: list[FeatureSpec]

    def __post_init__(self):
        check_unique_names(self.features)

    @property
    def n_rows(self) -> int:
        return len(self.frame)

    @property
    def ids(self) -> np.ndarray:
        return self.frame["id"].to_numpy()

    @property
    def sex(self) -> np.ndarray:
        return self.frame["sex"].to_numpy()

    @property
    def ages(self) -> np.ndarray:
        return self.frame["age"].to_numpy(dtype=np.float64)

    @property
    def conditions(self) -> np.ndarray:
        return self.frame["condition_code"].to_numpy()

    @property
    def feature_names(self) -> list[str]:
        return [f.name for f in self.features]

    def names_of_kind(self, kind: str) -> list[str]:
        return [f.name for f in self.features if f.kind == kind]

    @property
    def biomarker_names(self) -> list[str]:
        return self.names_of_kind("biomarker")

    @property
    def lifestyle_names(self) -> list[str]:
        return self.names_of_kind("lifestyle")

    def feature_matrix(self, names: Optional[list[str]] = None) -> np.ndarray:
        names = self.feature_names if names is None else names
        return self.frame[names].to_numpy(dtype=np.float64)

    def null_count(self) -> int:
        return int(self.frame[self.feature_names].isna().sum().sum())

    def subset(self, rows) -> "CohortTable":
        """Rows by boolean mask or positional index, in the given order."""
        rows = np.asarray(rows)
        if rows.dtype == bool:
            frame = self.frame.loc[rows]
        else:
            frame = self.frame.iloc[rows]
        return CohortTable(frame.reset_index(drop=True), list(self.features))

    def select_ids(self, ids) -> "CohortTable":
        position = pd.Series(np.arange(self.n_rows), index=self.frame["id"].to_numpy())
        return self.subset(position.loc[list(ids)].to_numpy())

    def with_frame(self, frame: pd.DataFrame, features: Optional[list[FeatureSpec]] = None) -> "CohortTable":
        return CohortTable(frame.reset_index(drop=True), list(self.features if features is None else features))

    def by_sex(self, sex: str) -> "CohortTable":
        return self.subset(self.frame["sex"].to_numpy() == sex)

    def __repr__(self):
        return f"<CohortTable(rows={self.n_rows}, features={len(self.features)})>"


@dataclass(frozen=True)
class AgeGroups:
    ranges: tuple[tuple[int, int], ...] = (
        (36, 45), (46, 50), (51, 55), (56, 60), (61, 65), (66, 75),
    )

    def __post_init__(self):
        previous_high = None
        for low, high in self.ranges:
            if low > high:
                raise ValueError(f"Age group [{low}, {high}] is empty")
            if previous_high is not None and low <= previous_high:
                raise ValueError(f"Age group [{low}, {high}] overlaps its predecessor")
            previous_high = high

    @property
    def labels(self) -> list[str]:
        return [f"{low}-{high}" for low, high in self.ranges]

    @property
    def span(self) -> tuple[int, int]:
        return self.ranges[0][0], self.ranges[-1][1]


@dataclass
class TripletSet:
    triplets: np.ndarray  # (k, 3) row positions into the source table: anchor, positive, negative
    split: str = "train"
    seed: int = 0

    def __len__(self):
        return int(self.triplets.shape[0])

    def __repr__(self):
        return f"<TripletSet(size={len(self)}, split='{self.split}', seed={self.seed})>"


@dataclass
class LifestyleStrata:
    frame: pd.DataFrame  # id, activity, sleep

    @property
    def activity(self) -> np.ndarray:
        return self.frame["activity"].to_numpy()

    @property
    def sleep(self) -> np.ndarray:
        return self.frame["sleep"].to_numpy()


@dataclass
class SplitIndices:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def assignment(self) -> pd.DataFrame:
        parts = [
            pd.DataFrame({"id": ids, "split": name})
            for name, ids in (("train", self.train), ("val", self.val), ("test", self.test))
        ]
        return pd.concat(parts, ignore_index=True)


@dataclass
class QuantileTransform:
    """Sorted training values per feature; features listed in `skipped` pass through unchanged."""

    quantiles: dict[str, np.ndarray] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)
    sex: str = ""

    def __repr__(self):
        return f"<QuantileTransform(sex='{self.sex}', features={len(self.quantiles)})>"
