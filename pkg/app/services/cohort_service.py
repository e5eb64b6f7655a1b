import logging
from dataclasses import replace

import numpy as np
import pandas as pd
from scipy.special import ndtri
from scipy.stats import rankdata

from ..models.cohort import (
    ACTIVE,
    APPARENTLY_HEALTHY,
    BONA_FIDE_HEALTHY,
    DEFAULT_CONDITIONS,
    HEALTHY_LABELS,
    LESS_ACTIVE,
    LESS_SLEEP,
    MEDIAN_SLEEP,
    RAW_HEALTHY,
    SEXES,
    AgeGroups,
    CohortTable,
    LifestyleStrata,
    QuantileTransform,
    SplitIndices,
    TripletSet,
)
from ..utils.errors import (
    AssignmentError,
    DataError,
    EmptySchemaError,
    LabelingError,
    SamplingError,
    SplitError,
)

logger = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (0.70, 0.10, 0.20)
MODERATE_COLUMN = "moderate_activity_min"
VIGOROUS_COLUMN = "vigorous_activity_min"
SLEEP_COLUMN = "sleep_hours"
MODERATE_THRESHOLD = 150.0
VIGOROUS_THRESHOLD = 75.0
# rejection sampling is abandoned for enumeration above this fill ratio
_DENSE_FILL = 0.5
_MAX_ENUMERATION = 5_000_000


def filter_completeness(table: CohortTable, threshold: float = 0.75) -> CohortTable:
    """Drops features below the completeness threshold, then every row that still has a null."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"Completeness threshold must lie in (0, 1], got {threshold}")
    n_rows = table.n_rows
    kept = []
    for spec in table.features:
        present = int(table.frame[spec.name].notna().sum())
        completeness = present / n_rows if n_rows else 1.0
        if completeness >= threshold:
            kept.append(replace(spec, completeness=completeness))
        else:
            logger.info(f"Dropping feature '{spec.name}' at {completeness:.1%} completeness")
    if not kept:
        raise EmptySchemaError(f"No feature reaches {threshold:.0%} completeness")

    names = [spec.name for spec in kept]
    dropped = [c for c in table.feature_names if c not in names]
    frame = table.frame.drop(columns=dropped)
    complete_rows = frame[names].notna().all(axis=1).to_numpy()
    logger.info(f"Removed {int((~complete_rows).sum())} of {n_rows} rows with missing values")
    return CohortTable(frame.loc[complete_rows].reset_index(drop=True), kept)


def _scores_for_sorted(sorted_values: np.ndarray) -> np.ndarray:
    """Inverse-normal scores of tie-averaged mid-ranks for an already sorted sample."""
    ranks = rankdata(sorted_values, method="average")
    return ndtri((ranks - 0.5) / len(sorted_values))


def fit_quantile_transform(table: CohortTable, features: list[str] | None = None, sex: str = "") -> QuantileTransform:
    features = table.feature_names if features is None else features
    transform = QuantileTransform(sex=sex)
    for name in features:
        values = table.frame[name].dropna().to_numpy(dtype=np.float64)
        if np.unique(values).size < 2:
            logger.warning(f"Feature '{name}' is constant within sex '{sex}'; skipping normalization")
            transform.skipped.append(name)
            continue
        transform.quantiles[name] = np.sort(values)
    return transform


def apply_quantile_transform(table: CohortTable, transform: QuantileTransform) -> CohortTable:
    """
    Maps values through the stored training quantiles by linear interpolation,
    clamped at the extremes. Training values map exactly onto their own scores.
    """
    frame = table.frame.copy()
    for name, sorted_values in transform.quantiles.items():
        if name not in frame.columns:
            continue
        scores = _scores_for_sorted(sorted_values)
        knots, first = np.unique(sorted_values, return_index=True)
        column = frame[name].to_numpy(dtype=np.float64)
        mapped = np.interp(column, knots, scores[first])
        frame[name] = np.where(np.isnan(column), np.nan, mapped)
    return table.with_frame(frame)


def quantile_normalize(
    table: CohortTable, features: list[str] | None = None
) -> tuple[CohortTable, dict[str, QuantileTransform]]:
    """Rank inverse-normal transform fitted separately within each sex present in the table."""
    transforms = {}
    parts = []
    order = []
    for sex in SEXES:
        mask = table.frame["sex"].to_numpy() == sex
        if not mask.any():
            continue
        part = table.subset(mask)
        transform = fit_quantile_transform(part, features, sex=sex)
        transforms[sex] = transform
        parts.append(apply_quantile_transform(part, transform).frame)
        order.append(np.flatnonzero(mask))
    if not parts:
        return table, transforms
    frame = pd.concat(parts, ignore_index=True)
    frame.index = np.concatenate(order)
    return table.with_frame(frame.sort_index()), transforms


def assign_age_groups(table: CohortTable, groups: AgeGroups = AgeGroups()) -> CohortTable:
    ages = table.ages
    labels = np.full(len(ages), None, dtype=object)
    for (low, high), label in zip(groups.ranges, groups.labels):
        labels[(ages >= low) & (ages <= high)] = label
    unassigned = pd.isna(labels)
    if unassigned.any():
        raise AssignmentError(
            f"Ages outside the configured groups {groups.labels}",
            offending_ids=table.ids[unassigned].tolist(),
        )
    frame = table.frame.copy()
    frame["age_group"] = labels
    return table.with_frame(frame)


def stratify_lifestyle(
    table: CohortTable,
    groups: AgeGroups = AgeGroups(),
    moderate_column: str = MODERATE_COLUMN,
    vigorous_column: str = VIGOROUS_COLUMN,
    sleep_column: str = SLEEP_COLUMN,
) -> LifestyleStrata:
    """
    Active when weekly moderate minutes >= 150 or vigorous minutes >= 75.
    Median sleep when sleep hours reach the sex x age-group median.
    """
    missing = [c for c in (moderate_column, vigorous_column, sleep_column) if c not in table.frame.columns]
    if missing:
        raise DataError(f"Lifestyle stratification needs columns {missing}")
    if "age_group" not in table.frame.columns:
        table = assign_age_groups(table, groups)
    frame = table.frame
    active = (frame[moderate_column] >= MODERATE_THRESHOLD) | (frame[vigorous_column] >= VIGOROUS_THRESHOLD)
    medians = frame.groupby(["sex", "age_group"])[sleep_column].transform("median")
    median_sleep = frame[sleep_column] >= medians
    return LifestyleStrata(pd.DataFrame({
        "id": frame["id"].to_numpy(),
        "activity": np.where(active.to_numpy(), ACTIVE, LESS_ACTIVE),
        "sleep": np.where(median_sleep.to_numpy(), MEDIAN_SLEEP, LESS_SLEEP),
    }))


def _round_half_up(value: float) -> int:
    return int(np.floor(value + 0.5))


def split_cohort(
    table: CohortTable,
    rng: np.random.Generator,
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS,
    holdout_ids=(),
) -> SplitIndices:
    """
    Random train/val/test partition within each sex. Holdout participants
    (those with a follow-up visit) always land in the test split.
    """
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise SplitError(f"Split fractions must be three non-negative values summing to 1, got {fractions}")
    ids = table.ids
    holdout = set(np.asarray(list(holdout_ids)).tolist())
    unknown = holdout - set(ids.tolist())
    if unknown:
        raise SplitError(f"Holdout ids not present in the table: {sorted(unknown)[:10]}")

    train, val, test = [], [], []
    for sex in SEXES:
        sex_ids = ids[table.sex == sex]
        if sex_ids.size == 0:
            continue
        is_held = np.isin(sex_ids, list(holdout))
        held = sex_ids[is_held]
        pool = sex_ids[~is_held]
        n = sex_ids.size
        n_train = _round_half_up(fractions[0] * n)
        n_val = min(_round_half_up(fractions[1] * n), n - n_train)
        n_test = max(n - n_train - n_val, 0)
        if held.size > n_test:
            raise SplitError(
                f"{held.size} follow-up participants of sex '{sex}' exceed the test capacity of {n_test}"
            )
        shuffled = rng.permutation(pool)
        train.append(shuffled[:n_train])
        val.append(shuffled[n_train:n_train + n_val])
        test.append(np.concatenate([shuffled[n_train + n_val:], held]))

    def _join(parts):
        return np.concatenate(parts) if parts else np.zeros(0, dtype=ids.dtype)

    return SplitIndices(train=_join(train), val=_join(val), test=_join(test))


def triplet_capacity(labels: np.ndarray) -> int:
    """Number of distinct ordered (anchor, positive, negative) triples the labels admit."""
    _, counts = np.unique(labels, return_counts=True)
    total = len(labels)
    return int(sum(int(m) * (int(m) - 1) * (total - int(m)) for m in counts if m >= 2))


def _enumerate_triplets(members: dict, classes: list) -> np.ndarray:
    rows = []
    everyone = np.concatenate([members[c] for c in classes])
    for c in classes:
        own = members[c]
        if own.size < 2:
            continue
        others = everyone[~np.isin(everyone, own)]
        for a in own:
            for p in own:
                if a == p:
                    continue
                rows.append(np.column_stack([np.full(others.size, a), np.full(others.size, p), others]))
    return np.concatenate(rows) if rows else np.zeros((0, 3), dtype=np.int64)


def sample_triplet_indices(labels, count: int, rng: np.random.Generator) -> np.ndarray:
    """
    Unique (anchor, positive, negative) row positions: anchor class drawn uniformly among
    classes with two or more members, then members, then a uniformly drawn other class.
    """
    labels = np.asarray(labels)
    classes = sorted(np.unique(labels).tolist())
    members = {c: np.flatnonzero(labels == c) for c in classes}
    eligible = [c for c in classes if members[c].size >= 2]
    if len(classes) < 2 or not eligible:
        raise SamplingError("Triplets need at least two classes and one class with two members")
    if count < 0:
        raise SamplingError(f"Triplet count must be non-negative, got {count}")
    capacity = triplet_capacity(labels)
    if count > capacity:
        raise SamplingError(f"Requested {count} unique triplets but only {capacity} exist")
    if count == 0:
        return np.zeros((0, 3), dtype=np.int64)

    if count > _DENSE_FILL * capacity and capacity <= _MAX_ENUMERATION:
        everything = _enumerate_triplets(members, classes)
        chosen = rng.choice(everything.shape[0], size=count, replace=False)
        return everything[chosen].astype(np.int64)

    seen = set()
    out = []
    while len(out) < count:
        batch = max(count - len(out), 1024)
        anchor_class = rng.integers(len(eligible), size=batch)
        first = rng.random(batch)
        second = rng.random(batch)
        negative_class = rng.integers(len(classes) - 1, size=batch)
        third = rng.random(batch)
        for i in range(batch):
            c = eligible[anchor_class[i]]
            own = members[c]
            a_pos = int(first[i] * own.size)
            p_pos = int(second[i] * (own.size - 1))
            if p_pos >= a_pos:
                p_pos += 1
            k = int(negative_class[i])
            own_index = classes.index(c)
            if k >= own_index:
                k += 1
            pool = members[classes[k]]
            n_pos = int(third[i] * pool.size)
            triple = (int(own[a_pos]), int(own[p_pos]), int(pool[n_pos]))
            if triple not in seen:
                seen.add(triple)
                out.append(triple)
                if len(out) == count:
                    break
    return np.asarray(out, dtype=np.int64)


def sample_triplets(
    table: CohortTable,
    rng: np.random.Generator,
    count: int = 100_000,
    seed: int = 0,
    split: str = "train",
) -> TripletSet:
    return TripletSet(sample_triplet_indices(table.conditions, count, rng), split=split, seed=seed)


def label_conditions(
    table: CohortTable,
    reference_ranges: dict[str, tuple[float, float]],
    vocabulary: tuple[str, ...] = DEFAULT_CONDITIONS,
) -> CohortTable:
    """
    Undiagnosed participants become bona fide healthy when every biomarker with a
    reference range lies inside it, apparently healthy otherwise.
    """
    codes = table.conditions.astype(str)
    allowed = set(vocabulary) | {RAW_HEALTHY}
    unknown = sorted(set(codes.tolist()) - allowed)
    if unknown:
        raise LabelingError(f"Unknown condition codes: {unknown}")

    checked = [name for name in table.biomarker_names if name in reference_ranges]
    in_range = np.ones(table.n_rows, dtype=bool)
    for name in checked:
        low, high = reference_ranges[name]
        values = table.frame[name].to_numpy(dtype=np.float64)
        in_range &= (values >= low) & (values <= high)

    undiagnosed = np.isin(codes, [RAW_HEALTHY, APPARENTLY_HEALTHY])
    labels = codes.astype(object)
    labels[undiagnosed & in_range] = BONA_FIDE_HEALTHY
    labels[undiagnosed & ~in_range] = APPARENTLY_HEALTHY
    frame = table.frame.copy()
    frame["condition_code"] = labels
    return table.with_frame(frame)


def class_ids(labels, vocabulary: tuple[str, ...] = DEFAULT_CONDITIONS) -> np.ndarray:
    lookup = {name: i for i, name in enumerate(vocabulary)}
    try:
        return np.array([lookup[str(label)] for label in labels], dtype=np.int64)
    except KeyError as exc:
        raise LabelingError(f"Label {exc} is not in the condition vocabulary")


def healthy_flags(labels) -> np.ndarray:
    return np.isin(np.asarray(labels).astype(str), HEALTHY_LABELS)


class CohortService:

    @staticmethod
    def preprocess(
        table: CohortTable,
        reference_ranges: dict[str, tuple[float, float]],
        threshold: float = 0.75,
        groups: AgeGroups = AgeGroups(),
        vocabulary: tuple[str, ...] = DEFAULT_CONDITIONS,
    ) -> tuple[CohortTable, LifestyleStrata]:
        """Completeness filter, labeling, age binning and lifestyle strata on raw values."""
        filtered = filter_completeness(table, threshold)
        labeled = label_conditions(filtered, reference_ranges, vocabulary)
        grouped = assign_age_groups(labeled, groups)
        strata = stratify_lifestyle(grouped, groups)
        return grouped, strata

    @staticmethod
    def model_inputs(table: CohortTable) -> list[str]:
        """Network inputs: biomarkers, lifestyle features and age."""
        return table.biomarker_names + table.lifestyle_names + ["age"]

    @staticmethod
    def normalize_split(
        table: CohortTable, splits: SplitIndices, sex: str
    ) -> tuple[CohortTable, QuantileTransform]:
        """Fits the rank transform on the training rows of one sex and maps every row of that sex."""
        part = table.by_sex(sex)
        inputs = CohortService.model_inputs(part)
        train_rows = part.subset(np.isin(part.ids, splits.train))
        transform = fit_quantile_transform(train_rows, inputs, sex=sex)
        return apply_quantile_transform(part, transform), transform
