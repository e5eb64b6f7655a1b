"""Seeded synthetic cohorts with known classes, planted lifestyle effects and a follow-up visit."""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from ..models.cohort import FIXED_COLUMNS, RAW_HEALTHY, CohortTable, FeatureSpec
from ..models.synthetic import GroundTruth
from ..schemas.config_schemas import ClassDefinition, GeneratorSettings, GeneratorSpec
from ..utils.errors import ConfigError, DataError
from ..utils.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)

# name -> (sampler, analytic mean, analytic sd)
LIFESTYLE_DISTRIBUTIONS = {
    "moderate_activity_min": (lambda rng, n: rng.gamma(2.0, 80.0, n), 160.0, 80.0 * np.sqrt(2.0)),
    "vigorous_activity_min": (lambda rng, n: rng.gamma(1.2, 50.0, n), 60.0, 50.0 * np.sqrt(1.2)),
    "sleep_hours": (lambda rng, n: rng.normal(7.0, 1.0, n), 7.0, 1.0),
    "sedentary_hours": (lambda rng, n: rng.normal(8.0, 2.0, n), 8.0, 2.0),
}
LIFESTYLE_NAMES = tuple(LIFESTYLE_DISTRIBUTIONS)

BASE_CONDITIONS = (
    "diabetes",
    "cardiovascular",
    "other_serious",
    "respiratory",
    "cancer",
    "multiple_non_metabolic",
)
COMORBID_CONDITIONS = {
    "diabetes_cardiovascular": ("diabetes", "cardiovascular"),
    "diabetes_other_serious": ("diabetes", "other_serious"),
    "diabetes_cardiovascular_other_serious": ("diabetes", "cardiovascular", "other_serious"),
    "cardiovascular_other_serious": ("cardiovascular", "other_serious"),
}
MARKERS_PER_CONDITION = 5
DRIFT_FRACTION = 0.5
DECIMALS = 6


@dataclass
class SyntheticCohort:
    spec: GeneratorSpec
    table: CohortTable
    followup: CohortTable
    truth: GroundTruth
    reference_ranges: dict[str, tuple[float, float]]

    @property
    def schema(self) -> list[FeatureSpec]:
        return self.table.features


def biomarker_name(j: int) -> str:
    return f"marker_{j + 1:02d}"


def build_generator_spec(settings: GeneratorSettings, seed: int) -> GeneratorSpec:
    """Expands the flat config block into a full generator description, deterministically in `seed`."""
    rng = make_rng(derive_seed(seed, "generator-spec"))
    m = settings.biomarkers
    biomarkers = [biomarker_name(j) for j in range(m)]
    lifestyle = list(LIFESTYLE_NAMES[: settings.lifestyle])

    condition_share = (1.0 - settings.healthy_prevalence) / (len(BASE_CONDITIONS) + len(COMORBID_CONDITIONS))
    classes = [ClassDefinition(name=RAW_HEALTHY, prevalence=settings.healthy_prevalence,
                               covariance_scale=settings.covariance_scale)]
    for name in BASE_CONDITIONS:
        mean = np.zeros(m)
        chosen = rng.choice(m, size=min(MARKERS_PER_CONDITION, m), replace=False)
        mean[chosen] = settings.separation * rng.choice([-1.0, 1.0], size=chosen.size)
        classes.append(ClassDefinition(
            name=name,
            prevalence=condition_share,
            mean=mean.tolist(),
            covariance_scale=settings.covariance_scale,
            drift=(DRIFT_FRACTION * mean).tolist(),
        ))
    for name, parents in COMORBID_CONDITIONS.items():
        drift = DRIFT_FRACTION * np.sum([c.mean for c in classes if c.name in parents], axis=0)
        classes.append(ClassDefinition(
            name=name,
            prevalence=condition_share,
            covariance_scale=settings.covariance_scale,
            drift=drift.tolist(),
            parents=list(parents),
        ))

    loadings = []
    if settings.shared_rank > 0:
        loadings = rng.normal(0.0, settings.shared_strength, size=(m, settings.shared_rank)).tolist()

    n_interest = min(settings.markers_of_interest, m)
    activity_markers = biomarkers[: min(settings.activity_markers, m)]
    sleep_end = min(settings.activity_markers + settings.sleep_markers, m)
    sleep_markers = biomarkers[len(activity_markers):sleep_end]
    lifestyle_effects = {}
    if activity_markers:
        lifestyle_effects["moderate_activity_min"] = {b: -settings.activity_effect for b in activity_markers}
    if sleep_markers:
        lifestyle_effects["sleep_hours"] = {b: -settings.sleep_effect for b in sleep_markers}

    # unit-norm follow-up lifestyle weights on every marker of interest
    weight = 1.0 / np.sqrt(2.0)
    followup_effects = {
        "moderate_activity_min": {b: weight for b in biomarkers[:n_interest]},
        "sleep_hours": {b: weight for b in biomarkers[:n_interest]},
    }

    return GeneratorSpec(
        participants=settings.participants,
        biomarker_names=biomarkers,
        lifestyle_names=lifestyle,
        marker_loc=np.round(rng.uniform(2.0, 10.0, m), 3).tolist(),
        marker_scale=np.round(rng.uniform(0.5, 2.0, m), 3).tolist(),
        classes=classes,
        shared_loadings=loadings,
        sex_offset=(settings.sex_effect * rng.choice([-1.0, 1.0], size=m)).tolist(),
        age_slope=(settings.age_effect * rng.choice([-1.0, 1.0], size=m)).tolist(),
        lifestyle_effects=lifestyle_effects,
        followup_effects=followup_effects,
        alpha=settings.followup_alpha,
        beta=settings.followup_beta,
        gamma=settings.followup_gamma,
        followup_noise=settings.followup_noise,
        followup_fraction=settings.followup_fraction,
        elapsed_range=(settings.elapsed_min, settings.elapsed_max),
        missingness=settings.missingness,
        markers_of_interest=biomarkers[:n_interest],
        seed=derive_seed(seed, "gen"),
    )


def _effect_matrix(spec: GeneratorSpec, effects: dict[str, dict[str, float]]) -> np.ndarray:
    """(l, m) matrix of per-standard-deviation lifestyle effects on latent biomarkers."""
    matrix = np.zeros((len(spec.lifestyle_names), len(spec.biomarker_names)))
    for lifestyle, markers in effects.items():
        v = spec.lifestyle_names.index(lifestyle)
        for marker, size in markers.items():
            matrix[v, spec.biomarker_names.index(marker)] = size
    return matrix


def _class_arrays(spec: GeneratorSpec):
    prevalence = np.array([c.prevalence for c in spec.classes])
    means = np.array([c.mean for c in spec.classes], dtype=np.float64)
    scales = np.array([c.covariance_scale for c in spec.classes], dtype=np.float64)
    drifts = np.array([c.drift for c in spec.classes], dtype=np.float64)
    return prevalence / prevalence.sum(), means, scales, drifts


def _age_center(spec: GeneratorSpec) -> float:
    return (spec.age_span[0] + spec.age_span[1]) / 2.0


def _age_variance(spec: GeneratorSpec) -> float:
    """Variance of (age - center) / 10 for integer ages uniform on the span."""
    count = spec.age_span[1] - spec.age_span[0] + 1
    return (count * count - 1) / 12.0 / 100.0


def generate_cohort(spec: GeneratorSpec) -> tuple[CohortTable, GroundTruth]:
    """
    Draws the visit-1 cohort: class by prevalence, latent biomarkers from the class Gaussian plus a
    shared low-rank component, sex and age terms and the lifestyle effect map, then natural units.
    """
    unknown = [name for name in spec.lifestyle_names if name not in LIFESTYLE_DISTRIBUTIONS]
    if unknown:
        raise ConfigError(f"No generator distribution for lifestyle features {unknown}")
    rng = make_rng(spec.seed)
    n = spec.participants
    m = len(spec.biomarker_names)
    prevalence, means, scales, _ = _class_arrays(spec)

    class_index = rng.choice(len(spec.classes), size=n, p=prevalence)
    male = rng.random(n) < 0.5
    ages = rng.integers(spec.age_span[0], spec.age_span[1] + 1, size=n)

    raw_lifestyle = np.zeros((n, len(spec.lifestyle_names)))
    standardized = np.zeros_like(raw_lifestyle)
    for v, name in enumerate(spec.lifestyle_names):
        sampler, mean, sd = LIFESTYLE_DISTRIBUTIONS[name]
        raw_lifestyle[:, v] = sampler(rng, n)
        standardized[:, v] = (raw_lifestyle[:, v] - mean) / sd

    noise = rng.standard_normal((n, m)) * spec.noise_sd
    if spec.shared_loadings:
        loadings = np.asarray(spec.shared_loadings)
        noise = noise + rng.standard_normal((n, loadings.shape[1])) @ loadings.T

    latent = (
        means[class_index]
        + scales[class_index, None] * noise
        + np.outer(male, spec.sex_offset)
        + np.outer((ages - _age_center(spec)) / 10.0, spec.age_slope)
        + standardized @ _effect_matrix(spec, spec.lifestyle_effects)
    )
    values = np.asarray(spec.marker_loc) + np.asarray(spec.marker_scale) * latent
    cells = np.round(np.hstack([values, raw_lifestyle]), DECIMALS)

    # one blanked measurement in a `missingness` share of participants
    has_gap = rng.random(n) < spec.missingness
    gap_column = rng.integers(cells.shape[1], size=n)
    cells[np.flatnonzero(has_gap), gap_column[has_gap]] = np.nan

    codes = np.array([spec.classes[k].name for k in class_index], dtype=object)
    frame = pd.DataFrame({
        "id": np.arange(1, n + 1, dtype=np.int64),
        "sex": np.where(male, "M", "F"),
        "age": ages.astype(np.float64),
        "visit_index": np.ones(n, dtype=np.int64),
        "elapsed_years": np.zeros(n),
        "condition_code": codes,
    })
    names = spec.biomarker_names + spec.lifestyle_names
    for k, name in enumerate(names):
        frame[name] = cells[:, k]

    features = [
        FeatureSpec(name, "biomarker", marker_of_interest=name in spec.markers_of_interest)
        for name in spec.biomarker_names
    ] + [FeatureSpec(name, "lifestyle") for name in spec.lifestyle_names]

    lifestyle = dict(zip(spec.lifestyle_names, raw_lifestyle.T))
    active = np.zeros(n, dtype=bool)
    if "moderate_activity_min" in lifestyle:
        active |= lifestyle["moderate_activity_min"] >= 150.0
    if "vigorous_activity_min" in lifestyle:
        active |= lifestyle["vigorous_activity_min"] >= 75.0

    truth = GroundTruth(
        ids=frame["id"].to_numpy(),
        true_class=codes,
        class_index=class_index,
        latent=latent,
        lifestyle=standardized,
        active=active,
    )
    logger.info(f"Generated {n} participants, {int(has_gap.sum())} with a missing measurement")
    return CohortTable(frame, features), truth


def generate_followup(spec: GeneratorSpec, table: CohortTable, truth: GroundTruth) -> CohortTable:
    """
    Follow-up latent value: alpha * current + beta * (lifestyle follow-up effect) + gamma * class drift
    + noise, for a `followup_fraction` share of participants. Fills the noiseless values on `truth`.
    """
    if table.n_rows != len(truth) or not np.array_equal(table.ids, truth.ids):
        raise DataError("Visit-1 table and ground truth are not aligned row for row")
    rng = make_rng(derive_seed(spec.seed, "followup"))
    n = len(truth)
    m = len(spec.biomarker_names)
    _, _, _, drifts = _class_arrays(spec)

    expected = (
        spec.alpha * truth.latent
        + spec.beta * truth.lifestyle @ _effect_matrix(spec, spec.followup_effects)
        + spec.gamma * drifts[truth.class_index]
    )
    loc = np.asarray(spec.marker_loc)
    scale = np.asarray(spec.marker_scale)
    truth.future = loc + scale * expected

    count = int(np.floor(spec.followup_fraction * n + 0.5))
    chosen = np.sort(rng.choice(n, size=count, replace=False))
    low, high = spec.elapsed_range
    elapsed = np.round(rng.uniform(low, high, size=count), 3)
    observed = loc + scale * (expected[chosen] + spec.followup_noise * rng.standard_normal((count, m)))

    visit = table.frame.iloc[chosen].reset_index(drop=True)
    frame = pd.DataFrame({
        "id": visit["id"].to_numpy(),
        "sex": visit["sex"].to_numpy(),
        "age": np.round(visit["age"].to_numpy(dtype=np.float64) + elapsed, 3),
        "visit_index": np.full(count, 2, dtype=np.int64),
        "elapsed_years": elapsed,
        "condition_code": visit["condition_code"].to_numpy(),
    })
    for j, name in enumerate(spec.biomarker_names):
        frame[name] = np.round(observed[:, j], DECIMALS)
    # lifestyle is carried over unmasked, so follow-up rows are complete
    for v, name in enumerate(spec.lifestyle_names):
        _, mean, sd = LIFESTYLE_DISTRIBUTIONS[name]
        frame[name] = np.round(mean + sd * truth.lifestyle[chosen, v], DECIMALS)
    logger.info(f"Generated {count} follow-up visits")
    return CohortTable(frame[FIXED_COLUMNS + table.feature_names], list(table.features))


def reference_ranges(spec: GeneratorSpec) -> dict[str, tuple[float, float]]:
    return {
        name: (round(loc - spec.reference_width * scale, DECIMALS), round(loc + spec.reference_width * scale, DECIMALS))
        for name, loc, scale in zip(spec.biomarker_names, spec.marker_loc, spec.marker_scale)
    }


def _moments(spec: GeneratorSpec, marker: str):
    j = spec.biomarker_names.index(marker)
    prevalence, means, scales, drifts = _class_arrays(spec)
    mu, d = means[:, j], drifts[:, j]
    mu_bar, d_bar = prevalence @ mu, prevalence @ d

    loading_power = float(np.sum(np.square(spec.shared_loadings[j]))) if spec.shared_loadings else 0.0
    var_u = (
        prevalence @ (mu - mu_bar) ** 2
        + (prevalence @ scales**2) * (spec.noise_sd**2 + loading_power)
        + 0.25 * spec.sex_offset[j] ** 2
        + spec.age_slope[j] ** 2 * _age_variance(spec)
    )
    cov_ud = prevalence @ ((mu - mu_bar) * (d - d_bar))
    var_d = prevalence @ (d - d_bar) ** 2
    e = _effect_matrix(spec, spec.lifestyle_effects)[:, j]
    w = _effect_matrix(spec, spec.followup_effects)[:, j]
    return var_u, cov_ud, var_d, e, w


def population_r2_gain(spec: GeneratorSpec, marker: str, beta: float | None = None) -> float:
    """
    Exact population R^2 gain of regressing the follow-up value on (current value, lifestyle)
    over the current value alone, from the generator's second moments.
    """
    beta = spec.beta if beta is None else beta
    alpha, gamma = spec.alpha, spec.gamma
    var_u, cov_ud, var_d, e, w = _moments(spec, marker)
    direct = alpha * e + beta * w
    var_y = (
        alpha**2 * var_u + gamma**2 * var_d + 2 * alpha * gamma * cov_ud
        + direct @ direct + spec.followup_noise**2
    )
    if var_y <= 0 or var_u <= 0:
        return 0.0
    full = ((alpha * var_u + gamma * cov_ud) ** 2 / var_u + direct @ direct) / var_y
    cov_yz = alpha * var_u + gamma * cov_ud + direct @ e
    marker_only = cov_yz**2 / (var_y * (var_u + e @ e))
    return float(full - marker_only)


def calibrate_followup_beta(spec: GeneratorSpec, marker: str, target_gain: float, upper: float = 1.0) -> float:
    """Smallest non-negative beta whose population R^2 gain reaches `target_gain`."""
    if not 0.0 <= target_gain < 1.0:
        raise ConfigError(f"Target R^2 gain must lie in [0, 1), got {target_gain}")

    def excess(beta):
        return population_r2_gain(spec, marker, beta) - target_gain

    if excess(0.0) >= 0.0:
        return 0.0
    while excess(upper) < 0.0:
        upper *= 2.0
        if upper > 1e6:
            raise ConfigError(f"No beta reaches an R^2 gain of {target_gain} for '{marker}'")
    return float(brentq(excess, 0.0, upper, xtol=1e-12))


class SynthService:

    @staticmethod
    def generate(spec: GeneratorSpec) -> SyntheticCohort:
        table, truth = generate_cohort(spec)
        followup = generate_followup(spec, table, truth)
        return SyntheticCohort(spec, table, followup, truth, reference_ranges(spec))
