import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import betainc

from ..models.cohort import (
    ACTIVE,
    LESS_ACTIVE,
    LESS_SLEEP,
    MEDIAN_SLEEP,
    SEXES,
    CohortTable,
    LifestyleStrata,
)
from ..schemas.result_schemas import FamilySummary, TTestResult
from ..utils.errors import DegenerateVarianceError

logger = logging.getLogger(__name__)

AXES = {
    "activity": (ACTIVE, LESS_ACTIVE),
    "sleep": (MEDIAN_SLEEP, LESS_SLEEP),
}
DEFAULT_PERCENTILES = (5, 25, 50, 75, 95)


@dataclass
class BhOutcome:
    order: np.ndarray  # positions of the input p-values in ascending (stable) order
    sorted_p: np.ndarray
    q: float
    rejected: np.ndarray  # per input position
    adjusted: np.ndarray  # per input position

    @property
    def n_rejected(self) -> int:
        return int(self.rejected.sum())


def t_two_sided_p(t: float, df: float) -> float:
    """Two-sided tail probability of Student's t via the regularized incomplete beta."""
    if not np.isfinite(t):
        return 0.0
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def students_t(sample_a, sample_b, feature: str = "", group: tuple = ()) -> TTestResult:
    """Pooled-variance two-sample t-test."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    n1, n2 = a.size, b.size
    if n1 < 2 or n2 < 2:
        raise ValueError(f"Each sample needs at least two values, got {n1} and {n2}")
    mean_a, mean_b = float(a.mean()), float(b.mean())
    df = n1 + n2 - 2
    pooled = (np.sum((a - mean_a) ** 2) + np.sum((b - mean_b) ** 2)) / df
    if pooled == 0.0:
        if mean_a == mean_b:
            t, p = 0.0, 1.0
        else:
            raise DegenerateVarianceError(
                f"Zero pooled variance with unequal means for '{feature or 'sample'}'"
            )
    else:
        t = float((mean_a - mean_b) / np.sqrt(pooled * (1.0 / n1 + 1.0 / n2)))
        p = min(1.0, max(0.0, t_two_sided_p(t, df)))
    sex, age_group, axis = (tuple(group) + ("", "", ""))[:3]
    return TTestResult(
        feature=feature,
        sex=sex,
        age_group=age_group,
        axis=axis,
        t=t,
        df=df,
        p=p,
        mean_a=mean_a,
        mean_b=mean_b,
        n_a=n1,
        n_b=n2,
    )


def benjamini_hochberg(p_values, q: float = 0.05) -> BhOutcome:
    """
    Step-up procedure: reject the k smallest p-values where k is the largest i with
    p_(i) <= i*q/m. Adjusted values are running minima of m*p_(j)/j from the top.
    """
    p = np.asarray(p_values, dtype=np.float64)
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise ValueError("p-values must lie in [0, 1]")
    if not 0.0 < q < 1.0:
        raise ValueError(f"FDR level must lie in (0, 1), got {q}")
    m = p.size
    order = np.argsort(p, kind="stable")
    sorted_p = p[order]
    rejected = np.zeros(m, dtype=bool)
    adjusted = np.ones(m, dtype=np.float64)
    if m == 0:
        return BhOutcome(order, sorted_p, q, rejected, adjusted)

    ranks = np.arange(1, m + 1)
    passing = np.flatnonzero(sorted_p <= ranks * q / m)
    if passing.size:
        rejected[order[: passing[-1] + 1]] = True
    scaled = np.minimum(1.0, m * sorted_p / ranks)
    adjusted[order] = np.minimum.accumulate(scaled[::-1])[::-1]
    return BhOutcome(order, sorted_p, q, rejected, adjusted)


@dataclass
class SignificanceReport:
    results: list[TTestResult]
    outcomes: dict[tuple[str, str], BhOutcome]
    summaries: list[FamilySummary]
    skipped: list[dict] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        columns = [
            "marker", "sex", "age_group", "axis", "n_a", "n_b", "mean_a", "mean_b",
            "t", "df", "p", "p_adjusted", "significant",
        ]
        rows = [
            {
                "marker": r.feature, "sex": r.sex, "age_group": r.age_group, "axis": r.axis,
                "n_a": r.n_a, "n_b": r.n_b, "mean_a": r.mean_a, "mean_b": r.mean_b,
                "t": r.t, "df": r.df, "p": r.p, "p_adjusted": r.p_adjusted,
                "significant": r.significant,
            }
            for r in self.results
        ]
        return pd.DataFrame(rows, columns=columns)


def _cell_test(values, strata_values, labels, marker, key):
    first = values[strata_values == labels[0]]
    second = values[strata_values == labels[1]]
    if first.size < 2 or second.size < 2:
        return None, {"marker": marker, "sex": key[0], "age_group": key[1], "axis": key[2],
                      "reason": f"stratum sizes {first.size}/{second.size}"}
    try:
        return students_t(first, second, feature=marker, group=key), None
    except DegenerateVarianceError as exc:
        return None, {"marker": marker, "sex": key[0], "age_group": key[1], "axis": key[2],
                      "reason": str(exc)}


def lifestyle_significance_report(
    table: CohortTable,
    strata: LifestyleStrata,
    markers: list[str] | None = None,
    q: float = 0.05,
    axes: tuple[str, ...] = ("activity", "sleep"),
    threads: int = 1,
) -> SignificanceReport:
    """
    One t-test per (marker, sex, age group) per lifestyle axis. Each (sex, axis) pair
    forms one Benjamini-Hochberg family spanning all markers and age groups.
    """
    markers = table.biomarker_names if markers is None else markers
    if "age_group" not in table.frame.columns:
        raise ValueError("Table needs an 'age_group' column; run assign_age_groups first")
    aligned = strata.frame.set_index("id").loc[table.ids]
    age_groups = sorted(table.frame["age_group"].unique().tolist())

    cells = []
    for axis in axes:
        labels = AXES[axis]
        axis_values = aligned[axis].to_numpy()
        for marker in markers:
            values = table.frame[marker].to_numpy(dtype=np.float64)
            for sex in SEXES:
                for age_group in age_groups:
                    mask = (table.sex == sex) & (table.frame["age_group"].to_numpy() == age_group)
                    if not mask.any():
                        continue
                    key = (sex, age_group, axis)
                    cells.append((values[mask], axis_values[mask], labels, marker, key))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(lambda cell: _cell_test(*cell), cells))
    else:
        outputs = [_cell_test(*cell) for cell in cells]

    results, skipped = [], []
    for result, skip in outputs:
        if result is not None:
            results.append(result)
        else:
            skipped.append(skip)
    for skip in skipped:
        logger.warning(f"Skipped t-test cell {skip}")

    outcomes = {}
    summaries = []
    for axis in axes:
        for sex in SEXES:
            family = [r for r in results if r.axis == axis and r.sex == sex]
            if not family:
                continue
            outcome = benjamini_hochberg([r.p for r in family], q)
            outcomes[(sex, axis)] = outcome
            for r, flag, adjusted in zip(family, outcome.rejected, outcome.adjusted):
                r.significant = bool(flag)
                r.p_adjusted = float(adjusted)
            summaries.append(_summarize(family, sex, axis))

    results.sort(key=lambda r: (r.axis, r.feature, r.sex, r.age_group))
    return SignificanceReport(results, outcomes, summaries, skipped)


def _summarize(family: list[TTestResult], sex: str, axis: str) -> FamilySummary:
    by_marker: dict[str, list[bool]] = {}
    for r in family:
        by_marker.setdefault(r.feature, []).append(r.significant)
    in_any = sum(1 for flags in by_marker.values() if any(flags))
    in_half = sum(1 for flags in by_marker.values() if sum(flags) >= len(flags) / 2.0)
    return FamilySummary(
        sex=sex,
        axis=axis,
        markers_tested=len(by_marker),
        tests=len(family),
        rejections=sum(r.significant for r in family),
        significant_in_any_group=in_any,
        significant_in_half_of_groups=in_half,
    )


def percentile_bands(
    table: CohortTable,
    markers: list[str] | None = None,
    percentiles: tuple[float, ...] = DEFAULT_PERCENTILES,
) -> pd.DataFrame:
    """Per sex x age group x marker percentiles of the raw marker values."""
    markers = table.biomarker_names if markers is None else markers
    rows = []
    grouped = table.frame.groupby(["sex", "age_group"], sort=True)
    for (sex, age_group), part in grouped:
        for marker in markers:
            values = part[marker].dropna().to_numpy(dtype=np.float64)
            if values.size == 0:
                continue
            row = {"marker": marker, "sex": sex, "age_group": age_group, "n": values.size}
            for pct, value in zip(percentiles, np.percentile(values, percentiles)):
                row[f"p{pct:g}"] = float(value)
            rows.append(row)
    return pd.DataFrame(rows)


class StatsService:

    @staticmethod
    def summary_frame(report: SignificanceReport) -> pd.DataFrame:
        return pd.DataFrame([s.model_dump() for s in report.summaries])
