import numpy as np
import pandas as pd
import pytest
from scipy.special import ndtri

from app.models.cohort import (
    ACTIVE,
    APPARENTLY_HEALTHY,
    BONA_FIDE_HEALTHY,
    LESS_ACTIVE,
    LESS_SLEEP,
    MEDIAN_SLEEP,
    AgeGroups,
    CohortTable,
    FeatureSpec,
)
from app.services.cohort_service import (
    CohortService,
    apply_quantile_transform,
    assign_age_groups,
    class_ids,
    filter_completeness,
    fit_quantile_transform,
    healthy_flags,
    label_conditions,
    quantile_normalize,
    sample_triplet_indices,
    split_cohort,
    stratify_lifestyle,
    triplet_capacity,
)
from app.utils.errors import (
    AssignmentError,
    EmptySchemaError,
    LabelingError,
    SamplingError,
    SplitError,
)
from app.utils.seeding import make_rng

FEATURES = [
    FeatureSpec("glucose"),
    FeatureSpec("ldl"),
    FeatureSpec("moderate_activity_min", kind="lifestyle"),
    FeatureSpec("vigorous_activity_min", kind="lifestyle"),
    FeatureSpec("sleep_hours", kind="lifestyle"),
]


def make_table(n_per_sex=50, seed=0, conditions=None) -> CohortTable:
    rng = make_rng(seed)
    n = 2 * n_per_sex
    frame = pd.DataFrame({
        "id": np.arange(1, n + 1),
        "sex": ["F"] * n_per_sex + ["M"] * n_per_sex,
        "age": rng.integers(36, 76, size=n).astype(float),
        "visit_index": 1,
        "elapsed_years": 0.0,
        "condition_code": conditions if conditions is not None else ["none"] * n,
        "glucose": rng.normal(5.0, 0.5, size=n),
        "ldl": rng.normal(3.0, 0.7, size=n),
        "moderate_activity_min": rng.uniform(0, 300, size=n),
        "vigorous_activity_min": rng.uniform(0, 150, size=n),
        "sleep_hours": rng.uniform(5, 9, size=n),
    })
    return CohortTable(frame, list(FEATURES))


@pytest.fixture
def table():
    return make_table()


class TestCompleteness:
    def test_drops_sparse_feature_then_incomplete_rows(self, table):
        frame = table.frame.copy()
        frame.loc[:40, "ldl"] = np.nan  # 41 of 100 missing
        frame.loc[0, "glucose"] = np.nan
        filtered = filter_completeness(table.with_frame(frame), 0.75)
        assert "ldl" not in filtered.feature_names
        assert "ldl" not in filtered.frame.columns
        assert filtered.n_rows == 99
        assert filtered.null_count() == 0

    def test_records_completeness(self, table):
        frame = table.frame.copy()
        frame.loc[:9, "ldl"] = np.nan
        filtered = filter_completeness(table.with_frame(frame), 0.75)
        spec = {f.name: f for f in filtered.features}["ldl"]
        assert spec.completeness == pytest.approx(0.9)

    def test_no_surviving_feature(self, table):
        frame = table.frame.copy()
        frame[table.feature_names] = np.nan
        with pytest.raises(EmptySchemaError):
            filter_completeness(table.with_frame(frame), 0.75)

    def test_threshold_range(self, table):
        with pytest.raises(ValueError):
            filter_completeness(table, 0.0)


class TestQuantileNormalization:
    def test_training_values_become_standard_normal(self):
        big = make_table(n_per_sex=1000, seed=1)
        normalized, transforms = quantile_normalize(big, ["glucose", "ldl"])
        assert set(transforms) == {"F", "M"}
        for sex in ("F", "M"):
            values = normalized.by_sex(sex).frame["glucose"].to_numpy()
            assert abs(values.mean()) < 1e-9
            assert values.var() == pytest.approx(1.0, abs=0.02)

    def test_row_order_is_preserved(self, table):
        normalized, _ = quantile_normalize(table, ["glucose"])
        np.testing.assert_array_equal(normalized.ids, table.ids)
        order_before = np.argsort(table.by_sex("F").frame["glucose"].to_numpy())
        order_after = np.argsort(normalized.by_sex("F").frame["glucose"].to_numpy())
        np.testing.assert_array_equal(order_before, order_after)

    def test_constant_feature_is_skipped(self, table):
        frame = table.frame.copy()
        frame["ldl"] = 2.0
        transform = fit_quantile_transform(table.with_frame(frame), ["glucose", "ldl"], sex="F")
        assert transform.skipped == ["ldl"]
        mapped = apply_quantile_transform(table.with_frame(frame), transform)
        assert (mapped.frame["ldl"] == 2.0).all()

    def test_out_of_range_values_clamp(self, table):
        transform = fit_quantile_transform(table, ["glucose"])
        n = table.n_rows
        extremes = table.with_frame(table.frame.assign(glucose=[1e6] + [-1e6] * (n - 1)))
        mapped = apply_quantile_transform(extremes, transform).frame["glucose"].to_numpy()
        assert mapped[0] == pytest.approx(ndtri((n - 0.5) / n))
        assert mapped[1] == pytest.approx(ndtri(0.5 / n))

    def test_missing_values_stay_missing(self, table):
        transform = fit_quantile_transform(table, ["glucose"])
        frame = table.frame.copy()
        frame.loc[3, "glucose"] = np.nan
        mapped = apply_quantile_transform(table.with_frame(frame), transform)
        assert np.isnan(mapped.frame.loc[3, "glucose"])

    def test_three_values_map_to_rank_scores(self):
        table = make_table(n_per_sex=3)
        frame = table.frame.copy()
        frame.loc[frame["sex"] == "F", "glucose"] = [5.0, 4.0, 6.0]
        normalized, _ = quantile_normalize(table.with_frame(frame), ["glucose"])
        values = normalized.by_sex("F").frame["glucose"].to_numpy()
        np.testing.assert_allclose(values, [0.0, -0.9674, 0.9674], atol=1e-4)
        np.testing.assert_allclose(values, ndtri((np.array([2, 1, 3]) - 0.5) / 3), atol=1e-12)

    def test_normalize_split_fits_on_training_rows(self, table):
        ids = table.by_sex("F").ids
        splits = split_cohort(table, make_rng(0))
        normalized, transform = CohortService.normalize_split(table, splits, "F")
        assert normalized.n_rows == ids.size
        train_count = int(np.isin(ids, splits.train).sum())
        assert transform.quantiles["glucose"].size == train_count
        assert set(transform.quantiles) == {
            "glucose", "ldl", "moderate_activity_min", "vigorous_activity_min", "sleep_hours", "age",
        }


class TestAgeGroups:
    def test_boundaries_are_inclusive(self, table):
        frame = table.frame.copy()
        frame.loc[:3, "age"] = [36, 45, 46, 75]
        grouped = assign_age_groups(table.with_frame(frame))
        assert grouped.frame["age_group"].tolist()[:4] == ["36-45", "36-45", "46-50", "66-75"]

    def test_unassigned_ages_are_reported(self, table):
        frame = table.frame.copy()
        frame.loc[[4, 7], "age"] = [30, 80]
        with pytest.raises(AssignmentError) as info:
            assign_age_groups(table.with_frame(frame))
        assert info.value.offending_ids == [5, 8]

    def test_overlapping_groups_rejected(self):
        with pytest.raises(ValueError):
            AgeGroups(ranges=((36, 50), (50, 60)))


class TestLifestyleStrata:
    def test_activity_thresholds(self, table):
        frame = table.frame.copy()
        frame.loc[:3, "moderate_activity_min"] = [150, 149, 0, 149]
        frame.loc[:3, "vigorous_activity_min"] = [0, 74, 75, 74.9]
        strata = stratify_lifestyle(table.with_frame(frame))
        assert strata.activity[:4].tolist() == [ACTIVE, LESS_ACTIVE, ACTIVE, LESS_ACTIVE]

    def test_sleep_median_within_sex_and_age_group(self):
        frame = pd.DataFrame({
            "id": [1, 2, 3, 4, 5, 6],
            "sex": ["F", "F", "F", "M", "M", "F"],
            "age": [40, 40, 40, 40, 40, 70],
            "visit_index": 1,
            "elapsed_years": 0.0,
            "condition_code": "none",
            "glucose": 1.0,
            "ldl": 1.0,
            "moderate_activity_min": 0.0,
            "vigorous_activity_min": 0.0,
            "sleep_hours": [6.0, 7.0, 8.0, 5.0, 9.0, 4.0],
        })
        strata = stratify_lifestyle(CohortTable(frame, list(FEATURES)))
        assert strata.sleep.tolist() == [
            LESS_SLEEP, MEDIAN_SLEEP, MEDIAN_SLEEP, LESS_SLEEP, MEDIAN_SLEEP, MEDIAN_SLEEP,
        ]


class TestSplit:
    def test_sizes_per_sex(self, table):
        splits = split_cohort(table, make_rng(3))
        assert (len(splits.train), len(splits.val), len(splits.test)) == (70, 10, 20)
        female = set(table.by_sex("F").ids.tolist())
        assert len(female & set(splits.train.tolist())) == 35

    def test_disjoint_and_covering(self, table):
        splits = split_cohort(table, make_rng(3))
        train, val, test = (set(s.tolist()) for s in (splits.train, splits.val, splits.test))
        assert not (train & val or train & test or val & test)
        assert train | val | test == set(table.ids.tolist())

    def test_half_up_rounding(self):
        small = make_table(n_per_sex=5)
        splits = split_cohort(small, make_rng(0))
        # 0.7 * 5 = 3.5 -> 4, 0.1 * 5 = 0.5 -> 1
        assert (len(splits.train), len(splits.val), len(splits.test)) == (8, 2, 0)

    def test_zero_test_fraction_leaves_no_negative_capacity(self):
        small = make_table(n_per_sex=5)
        # 0.5 * 5 rounds up to 3 for both train and val; val gives way
        splits = split_cohort(small, make_rng(0), fractions=(0.5, 0.5, 0.0))
        assert (len(splits.train), len(splits.val), len(splits.test)) == (6, 4, 0)
        with pytest.raises(SplitError, match="capacity of 0"):
            split_cohort(small, make_rng(0), fractions=(0.5, 0.5, 0.0), holdout_ids=[1])

    def test_holdouts_land_in_test(self, table):
        splits = split_cohort(table, make_rng(3), holdout_ids=[1, 2, 60])
        assert {1, 2, 60} <= set(splits.test.tolist())
        assert len(splits.test) == 20

    def test_same_seed_same_split(self, table):
        first = split_cohort(table, make_rng(11))
        second = split_cohort(table, make_rng(11))
        np.testing.assert_array_equal(first.train, second.train)

    def test_too_many_holdouts(self, table):
        with pytest.raises(SplitError):
            split_cohort(table, make_rng(0), holdout_ids=range(1, 12))

    def test_bad_fractions(self, table):
        with pytest.raises(SplitError):
            split_cohort(table, make_rng(0), fractions=(0.5, 0.2, 0.2))

    def test_assignment_frame(self, table):
        assignment = split_cohort(table, make_rng(3)).assignment()
        assert list(assignment.columns) == ["id", "split"]
        assert assignment["split"].value_counts().to_dict() == {"train": 70, "test": 20, "val": 10}


class TestTriplets:
    def test_capacity(self):
        assert triplet_capacity(np.array([0, 0, 1, 1])) == 8
        assert triplet_capacity(np.array([0, 0, 0, 1])) == 6

    def test_constraints_and_uniqueness(self):
        labels = make_rng(2).integers(0, 4, size=60)
        triplets = sample_triplet_indices(labels, 500, make_rng(4))
        assert triplets.shape == (500, 3)
        a, p, n = triplets.T
        assert (labels[a] == labels[p]).all()
        assert (a != p).all()
        assert (labels[n] != labels[a]).all()
        assert len({tuple(row) for row in triplets.tolist()}) == 500

    def test_dense_request_enumerates_everything(self):
        labels = np.array([0, 0, 1, 1])
        triplets = sample_triplet_indices(labels, 8, make_rng(0))
        assert sorted(map(tuple, triplets.tolist())) == [
            (0, 1, 2), (0, 1, 3), (1, 0, 2), (1, 0, 3),
            (2, 3, 0), (2, 3, 1), (3, 2, 0), (3, 2, 1),
        ]

    def test_deterministic_for_a_seed(self):
        labels = make_rng(2).integers(0, 3, size=40)
        np.testing.assert_array_equal(
            sample_triplet_indices(labels, 100, make_rng(9)),
            sample_triplet_indices(labels, 100, make_rng(9)),
        )

    def test_more_than_capacity(self):
        with pytest.raises(SamplingError):
            sample_triplet_indices(np.array([0, 0, 1, 1]), 9, make_rng(0))

    @pytest.mark.parametrize("labels", [[0, 0, 0], [0, 1, 2]])
    def test_unusable_labels(self, labels):
        with pytest.raises(SamplingError):
            sample_triplet_indices(np.array(labels), 1, make_rng(0))


class TestLabeling:
    def test_undiagnosed_split_by_reference_ranges(self):
        table = make_table(n_per_sex=2, conditions=["none", "none", "diabetes", APPARENTLY_HEALTHY])
        frame = table.frame.copy()
        frame["glucose"] = [5.0, 9.0, 9.0, 5.0]
        labeled = label_conditions(table.with_frame(frame), {"glucose": (3.9, 5.5)})
        assert labeled.conditions.tolist() == [
            BONA_FIDE_HEALTHY, APPARENTLY_HEALTHY, "diabetes", BONA_FIDE_HEALTHY,
        ]

    def test_unknown_code(self):
        table = make_table(n_per_sex=1, conditions=["none", "gout"])
        with pytest.raises(LabelingError):
            label_conditions(table, {})

    def test_class_ids_and_healthy_flags(self):
        labels = [APPARENTLY_HEALTHY, BONA_FIDE_HEALTHY, "cancer"]
        assert class_ids(labels).tolist() == [0, 1, 10]
        assert healthy_flags(labels).tolist() == [True, True, False]
        with pytest.raises(LabelingError):
            class_ids(["none"])


class TestPreprocess:
    def test_adds_labels_groups_and_strata(self, table):
        labeled, strata = CohortService.preprocess(table, {"glucose": (0.0, 100.0)})
        assert "age_group" in labeled.frame.columns
        assert (labeled.conditions == BONA_FIDE_HEALTHY).all()
        assert len(strata.frame) == labeled.n_rows
        assert CohortService.model_inputs(labeled)[-1] == "age"
