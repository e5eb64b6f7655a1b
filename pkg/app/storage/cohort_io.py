import logging
from pathlib import Path

import numpy as np
import pandas as pd

from ..models.cohort import FIXED_COLUMNS, SEXES, CohortTable, FeatureSpec, check_unique_names
from ..utils.errors import IngestionError

logger = logging.getLogger(__name__)

FOLLOWUP_WINDOW = (2.0, 5.0)


def _read_raw(path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"Input file not found: {path}")
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise IngestionError(f"Input file has no header row: {path}")
    except pd.errors.ParserError as exc:
        raise IngestionError(f"Malformed CSV in {path}: {exc}")


def _parse_numeric(raw: pd.DataFrame, column: str, integer: bool = False, nullable: bool = True) -> pd.Series:
    text = raw[column].str.strip()
    values = pd.to_numeric(text.where(text != "", None), errors="coerce")
    bad = values.isna() & (text != "")
    if bad.any():
        position = int(np.flatnonzero(bad.to_numpy())[0])
        raise IngestionError(
            f"Cannot parse '{raw[column].iloc[position]}' as a number", row=position + 2, column=column
        )
    if not nullable and values.isna().any():
        position = int(np.flatnonzero(values.isna().to_numpy())[0])
        raise IngestionError("Required value is empty", row=position + 2, column=column)
    if np.isinf(values.to_numpy(dtype=np.float64)).any():
        position = int(np.flatnonzero(np.isinf(values.to_numpy(dtype=np.float64)))[0])
        raise IngestionError("Infinite values are not allowed", row=position + 2, column=column)
    if integer:
        as_float = values.to_numpy(dtype=np.float64)
        fractional = ~np.isnan(as_float) & (as_float != np.round(as_float))
        if fractional.any():
            position = int(np.flatnonzero(fractional)[0])
            raise IngestionError(
                f"Expected an integer, got '{raw[column].iloc[position]}'", row=position + 2, column=column
            )
        return values.astype("int64") if not nullable else values.astype("Int64")
    return values.astype("float64")


def load_cohort(path, schema: list[FeatureSpec]) -> CohortTable:
    """
    Reads a cohort CSV whose header must be the fixed columns plus exactly the schema's features.
    Empty cells stay as nulls.
    """
    check_unique_names(schema)
    raw = _read_raw(path)
    expected = FIXED_COLUMNS + [f.name for f in schema]
    header = list(raw.columns)
    missing = [c for c in expected if c not in header]
    extra = [c for c in header if c not in expected]
    if missing:
        raise IngestionError(f"Missing columns in {path}: {missing}")
    if extra:
        raise IngestionError(f"Unexpected columns in {path}: {extra}")

    frame = pd.DataFrame({
        "id": _parse_numeric(raw, "id", integer=True, nullable=False),
        "sex": raw["sex"].str.strip(),
        "age": _parse_numeric(raw, "age", nullable=False),
        "visit_index": _parse_numeric(raw, "visit_index", integer=True, nullable=False),
        "elapsed_years": _parse_numeric(raw, "elapsed_years"),
        "condition_code": raw["condition_code"].str.strip(),
    })
    bad_sex = ~frame["sex"].isin(SEXES)
    if bad_sex.any():
        position = int(np.flatnonzero(bad_sex.to_numpy())[0])
        raise IngestionError(
            f"Sex must be one of {SEXES}, got '{frame['sex'].iloc[position]}'", row=position + 2, column="sex"
        )
    duplicated = frame.duplicated(subset=["id", "visit_index"]).to_numpy()
    if duplicated.any():
        position = int(np.flatnonzero(duplicated)[0])
        raise IngestionError("Duplicate participant visit", row=position + 2, column="id")
    for spec in schema:
        frame[spec.name] = _parse_numeric(raw, spec.name)

    logger.info(f"Loaded {len(frame)} rows with {len(schema)} features from {path}")
    return CohortTable(frame, list(schema))


def write_cohort(table: CohortTable, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = table.frame[FIXED_COLUMNS + table.feature_names]
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    return path


def load_followup(path, schema: list[FeatureSpec], window: tuple[float, float] = FOLLOWUP_WINDOW) -> CohortTable:
    """Prospective visit rows, restricted to follow-ups inside the elapsed-years window."""
    table = load_cohort(path, schema)
    elapsed = table.frame["elapsed_years"].to_numpy(dtype=np.float64)
    keep = ~np.isnan(elapsed) & (elapsed >= window[0]) & (elapsed <= window[1])
    dropped = int((~keep).sum())
    if dropped:
        logger.info(f"Dropped {dropped} follow-up rows outside the [{window[0]}, {window[1]}] year window")
    return table.subset(keep)


def load_feature_schema(path) -> list[FeatureSpec]:
    raw = _read_raw(path)
    for column in ("name", "kind", "marker_of_interest"):
        if column not in raw.columns:
            raise IngestionError(f"Feature schema {path} lacks column '{column}'")
    features = []
    for position, row in raw.iterrows():
        flag = row["marker_of_interest"].strip().lower()
        if flag not in ("0", "1", "true", "false"):
            raise IngestionError(f"Invalid flag '{flag}'", row=position + 2, column="marker_of_interest")
        try:
            features.append(FeatureSpec(
                name=row["name"].strip(),
                kind=row["kind"].strip(),
                marker_of_interest=flag in ("1", "true"),
            ))
        except ValueError as exc:
            raise IngestionError(str(exc), row=position + 2, column="kind")
    try:
        check_unique_names(features)
    except ValueError as exc:
        raise IngestionError(str(exc))
    return features


def write_feature_schema(features: list[FeatureSpec], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({
        "name": [f.name for f in features],
        "kind": [f.kind for f in features],
        "marker_of_interest": [int(f.marker_of_interest) for f in features],
    })
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def load_reference_ranges(path) -> dict[str, tuple[float, float]]:
    raw = _read_raw(path)
    for column in ("feature", "low", "high"):
        if column not in raw.columns:
            raise IngestionError(f"Reference-range table {path} lacks column '{column}'")
    low = _parse_numeric(raw, "low", nullable=False)
    high = _parse_numeric(raw, "high", nullable=False)
    ranges = {}
    for position, name in enumerate(raw["feature"].str.strip()):
        if low.iloc[position] > high.iloc[position]:
            raise IngestionError("Reference range has low > high", row=position + 2, column="low")
        ranges[name] = (float(low.iloc[position]), float(high.iloc[position]))
    return ranges


def write_reference_ranges(ranges: dict[str, tuple[float, float]], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        [(name, low, high) for name, (low, high) in ranges.items()],
        columns=["feature", "low", "high"],
    )
    frame.to_csv(path, index=False, lineterminator="\n")
    return path
