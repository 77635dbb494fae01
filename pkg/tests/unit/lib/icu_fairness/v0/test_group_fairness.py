# Copyright 2024 ICU Fairness Monitor contributors
# See LICENSE file for licensing details.

import unittest
from collections import Counter

import numpy as np
import pytest
from pydantic import ValidationError

from icu_fairness.v0.core_metrics import PredictionRecord, selection_rate
from icu_fairness.v0.errors import (
    ConfigurationError,
    MissingFeatureError,
    UndefinedAggregateError,
)
from icu_fairness.v0.group_fairness import (
    GroupMetric,
    GroupMetricMap,
    SensitiveFeatureSpec,
    aggregate_over_groups,
    demographic_parity,
    equalized_odds,
    metric_by_group,
    partition_by_feature,
)

RACE_LEVELS = [
    "African American",
    "Asian",
    "Caucasian",
    "Hispanic",
    "Native American",
    "Other/Unknown",
]
RACE_AUROC = [0.927861192, 0.923153043, 0.921579487, 0.928151561, 0.933864299, 0.932336779]
RACE_TPR = [0.87477465, 0.867370008, 0.850323261, 0.849474912, 0.868558626, 0.880004669]
RACE_FPR = [0.175014258, 0.17440808, 0.164947374, 0.145828241, 0.161726224, 0.164183726]
RACE_SELECTION = [0.213157424, 0.215610718, 0.202881338, 0.182794674, 0.200121704, 0.205774239]
GCS3_LEVELS = ["highGCS3", "lowGCS3", "medGCS3"]

# Inputs carry 9 digits; aggregates rebuilt from them match the published ones to this delta.
PUBLISHED_DELTA = 5e-9


def _map(name, levels, values):
    return GroupMetricMap(metric_name=name, per_level=dict(zip(levels, values)))


def _record(stay_id, score, outcome, **features):
    return PredictionRecord(stay_id=stay_id, score=score, outcome=outcome, features=features)


def _random_records(rng, n):
    levels = ["Female", "Non-Female"]
    return [
        _record(
            str(index),
            float(rng.random()),
            int(rng.integers(0, 2)),
            catSex=levels[int(rng.integers(0, 2))],
        )
        for index in range(n)
    ]


class TestSensitiveFeatureSpec(unittest.TestCase):
    def test_given_records_when_spec_built_from_records_then_levels_follow_first_appearance(
        self,
    ):
        records = [
            _record("1", 0.1, 0, race="Caucasian"),
            _record("2", 0.2, 1, race="Asian"),
            _record("3", 0.3, 0, race="Caucasian"),
            _record("4", 0.4, 1, race="Hispanic"),
        ]

        spec = SensitiveFeatureSpec.from_records("race", records)

        self.assertEqual(spec.levels, ["Caucasian", "Asian", "Hispanic"])

    def test_given_duplicate_levels_when_spec_created_then_validation_error_is_raised(self):
        with pytest.raises(ValidationError):
            SensitiveFeatureSpec(name="catSex", levels=["Female", "Female"])

    def test_given_record_without_feature_when_spec_built_from_records_then_missing_feature_error_is_raised(  # noqa: E501
        self,
    ):
        records = [_record("1", 0.1, 0, catSex="Female"), _record("2", 0.2, 1)]

        with pytest.raises(MissingFeatureError) as e:
            SensitiveFeatureSpec.from_records("catSex", records)

        self.assertEqual(e.value.stay_id, "2")
        self.assertEqual(e.value.feature, "catSex")


class TestPartitionByFeature(unittest.TestCase):
    def test_given_two_levels_when_partition_then_each_group_holds_its_records(self):
        records = [
            _record("1", 0.1, 0, catSex="Female"),
            _record("2", 0.2, 1, catSex="Female"),
            _record("3", 0.3, 0, catSex="Non-Female"),
            _record("4", 0.4, 1, catSex="Non-Female"),
        ]
        spec = SensitiveFeatureSpec(name="catSex", levels=["Female", "Non-Female"])

        groups = partition_by_feature(records, spec)

        self.assertEqual([r.stay_id for r in groups["Female"]], ["1", "2"])
        self.assertEqual([r.stay_id for r in groups["Non-Female"]], ["3", "4"])

    def test_given_single_level_when_partition_then_one_group_holds_every_record(self):
        records = [_record(str(i), 0.1, i % 2, catSex="Female") for i in range(5)]
        spec = SensitiveFeatureSpec.from_records("catSex", records)

        groups = partition_by_feature(records, spec)

        self.assertEqual(list(groups), ["Female"])
        self.assertEqual(len(groups["Female"]), 5)

    def test_given_random_records_when_partition_then_union_of_groups_equals_input(self):
        records = _random_records(np.random.default_rng(11), 300)
        spec = SensitiveFeatureSpec.from_records("catSex", records)

        groups = partition_by_feature(records, spec)

        union = [record.stay_id for group in groups.values() for record in group]
        self.assertEqual(Counter(union), Counter(record.stay_id for record in records))

    def test_given_record_without_feature_when_partition_then_missing_feature_error_is_raised(
        self,
    ):
        spec = SensitiveFeatureSpec(name="race", levels=["Asian"])

        with pytest.raises(MissingFeatureError):
            partition_by_feature([_record("9", 0.1, 0, catSex="Female")], spec)

    def test_given_reversed_records_when_partition_then_group_membership_is_unchanged(self):
        records = _random_records(np.random.default_rng(5), 100)
        spec = SensitiveFeatureSpec(name="catSex", levels=["Female", "Non-Female"])

        forward = partition_by_feature(records, spec)
        backward = partition_by_feature(list(reversed(records)), spec)

        for level in spec.levels:
            self.assertEqual(
                {r.stay_id for r in forward[level]}, {r.stay_id for r in backward[level]}
            )


class TestMetricByGroup(unittest.TestCase):
    def test_given_separated_and_tied_strata_when_auroc_by_group_then_values_are_one_and_half(
        self,
    ):
        records = [
            _record("1", 0.9, 1, catSex="Female"),
            _record("2", 0.1, 0, catSex="Female"),
            _record("3", 0.5, 1, catSex="Non-Female"),
            _record("4", 0.5, 0, catSex="Non-Female"),
        ]
        spec = SensitiveFeatureSpec.from_records("catSex", records)

        group_metric = metric_by_group(records, spec, GroupMetric.AUROC)

        self.assertEqual(group_metric.per_level, {"Female": 1.0, "Non-Female": 0.5})
        self.assertEqual(group_metric.group_sizes, {"Female": 2, "Non-Female": 2})

    def test_given_single_class_group_when_auroc_by_group_then_group_is_undefined(self):
        records = [
            _record("1", 0.9, 1, catSex="Female"),
            _record("2", 0.1, 0, catSex="Female"),
            _record("3", 0.5, 0, catSex="Non-Female"),
        ]
        spec = SensitiveFeatureSpec.from_records("catSex", records)

        group_metric = metric_by_group(records, spec, GroupMetric.AUROC)

        self.assertIsNone(group_metric.per_level["Non-Female"])

    def test_given_level_absent_from_records_when_metric_by_group_then_it_is_undefined_and_empty(
        self,
    ):
        records = [
            _record("1", 0.9, 1, catSex="Non-Female"),
            _record("2", 0.1, 0, catSex="Non-Female"),
        ]
        spec = SensitiveFeatureSpec(name="catSex", levels=["Female", "Non-Female"])

        with self.assertLogs("icu_fairness.v0.group_fairness", level="WARNING"):
            group_metric = metric_by_group(records, spec, GroupMetric.SELECTION_RATE, 0.5)

        self.assertEqual(list(group_metric.per_level), ["Female", "Non-Female"])
        self.assertEqual(group_metric.per_level, {"Female": None, "Non-Female": 0.5})
        self.assertEqual(group_metric.group_sizes, {"Female": 0, "Non-Female": 2})

    def test_given_record_with_unlisted_level_when_metric_by_group_then_configuration_error_is_raised(  # noqa: E501
        self,
    ):
        records = [_record("1", 0.9, 1, catSex="Female"), _record("2", 0.1, 0, catSex="Other")]
        spec = SensitiveFeatureSpec(name="catSex", levels=["Female"])

        with pytest.raises(ConfigurationError) as e:
            metric_by_group(records, spec, GroupMetric.AUROC)

        self.assertIn("Stay 2 has level `Other`", str(e.value))

    def test_given_identical_groups_when_metric_by_group_then_values_are_equal(self):
        records = []
        for level in ("A", "B", "C"):
            records += [
                _record(f"{level}{i}", score, outcome, group=level)
                for i, (score, outcome) in enumerate([(0.9, 1), (0.3, 0), (0.04, 1), (0.6, 0)])
            ]
        spec = SensitiveFeatureSpec.from_records("group", records)

        for metric in GroupMetric:
            values = metric_by_group(records, spec, metric, threshold=0.05).defined_values()
            self.assertEqual(len(set(values)), 1, metric)

    def test_given_random_records_when_selection_rate_by_group_then_filtered_recomputation_agrees(  # noqa: E501
        self,
    ):
        records = _random_records(np.random.default_rng(21), 200)
        spec = SensitiveFeatureSpec.from_records("catSex", records)

        group_metric = metric_by_group(records, spec, GroupMetric.SELECTION_RATE, threshold=0.3)

        for level in spec.levels:
            subset = [r for r in records if r.features["catSex"] == level]
            self.assertEqual(group_metric.per_level[level], selection_rate(subset, 0.3))

    def test_given_thresholded_metric_without_threshold_when_metric_by_group_then_configuration_error_is_raised(  # noqa: E501
        self,
    ):
        records = [_record("1", 0.9, 1, catSex="Female")]
        spec = SensitiveFeatureSpec.from_records("catSex", records)

        with pytest.raises(ConfigurationError):
            metric_by_group(records, spec, GroupMetric.TPR)

    def test_given_mean_prediction_without_threshold_when_metric_by_group_then_means_are_returned(  # noqa: E501
        self,
    ):
        records = [
            _record("1", 0.2, 1, catSex="Female"),
            _record("2", 0.4, 0, catSex="Female"),
            _record("3", 0.8, 0, catSex="Non-Female"),
        ]
        spec = SensitiveFeatureSpec.from_records("catSex", records)

        group_metric = metric_by_group(records, spec, GroupMetric.MEAN_PREDICTION)

        self.assertAlmostEqual(group_metric.per_level["Female"], 0.3, delta=1e-12)
        self.assertAlmostEqual(group_metric.per_level["Non-Female"], 0.8, delta=1e-12)


class TestAggregateOverGroups(unittest.TestCase):
    def test_given_cat_sex_auroc_when_aggregate_over_groups_then_published_spread_is_reproduced(  # noqa: E501
        self,
    ):
        gm = _map("auroc", ["Female", "Non-Female"], [0.921873233, 0.924500959])

        aggregate = aggregate_over_groups(gm)

        self.assertEqual(aggregate.min, 0.921873233)
        self.assertEqual(aggregate.max, 0.924500959)
        self.assertAlmostEqual(aggregate.difference, 0.002627727, delta=PUBLISHED_DELTA)
        self.assertAlmostEqual(aggregate.ratio, 0.997157681694, delta=1e-12)

    def test_given_race_auroc_when_aggregate_over_groups_then_published_spread_is_reproduced(
        self,
    ):
        aggregate = aggregate_over_groups(_map("auroc", RACE_LEVELS, RACE_AUROC))

        self.assertAlmostEqual(aggregate.difference, 0.012284812, delta=PUBLISHED_DELTA)
        self.assertAlmostEqual(aggregate.ratio, 0.986845185, delta=PUBLISHED_DELTA)

    def test_given_one_group_when_aggregate_over_groups_then_difference_is_zero_and_ratio_one(
        self,
    ):
        aggregate = aggregate_over_groups(_map("auroc", ["only"], [0.7]))

        self.assertEqual(aggregate.difference, 0.0)
        self.assertEqual(aggregate.ratio, 1.0)

    def test_given_all_zero_values_when_aggregate_over_groups_then_ratio_is_one(self):
        aggregate = aggregate_over_groups(_map("selection_rate", ["a", "b"], [0.0, 0.0]))

        self.assertEqual(aggregate.ratio, 1.0)

    def test_given_undefined_group_when_aggregate_over_groups_then_group_is_excluded(self):
        aggregate = aggregate_over_groups(_map("auroc", ["a", "b", "c"], [0.6, None, 0.8]))

        self.assertEqual((aggregate.min, aggregate.max), (0.6, 0.8))

    def test_given_all_groups_undefined_when_aggregate_over_groups_then_undefined_aggregate_error_is_raised(  # noqa: E501
        self,
    ):
        with pytest.raises(UndefinedAggregateError):
            aggregate_over_groups(_map("auroc", ["a", "b"], [None, None]))

    def test_given_random_maps_when_aggregate_over_groups_then_bounds_hold(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            values = rng.random(int(rng.integers(1, 10))).tolist()
            levels = [str(i) for i in range(len(values))]
            aggregate = aggregate_over_groups(_map("m", levels, values))

            self.assertTrue(all(aggregate.min <= value <= aggregate.max for value in values))
            self.assertGreaterEqual(aggregate.difference, 0.0)
            self.assertTrue(0.0 <= aggregate.ratio <= 1.0)


class TestDemographicParity(unittest.TestCase):
    def test_given_cat_sex_selection_rates_when_demographic_parity_then_published_values_are_reproduced(  # noqa: E501
        self,
    ):
        parity = demographic_parity(
            _map("selection_rate", ["Female", "Non-Female"], [0.205856063, 0.201642404])
        )

        self.assertAlmostEqual(parity.difference, 0.004213659, delta=1e-12)
        self.assertAlmostEqual(parity.ratio, 0.979531041, delta=PUBLISHED_DELTA)

    def test_given_race_selection_rates_when_demographic_parity_then_published_values_are_reproduced(  # noqa: E501
        self,
    ):
        parity = demographic_parity(_map("selection_rate", RACE_LEVELS, RACE_SELECTION))

        self.assertAlmostEqual(parity.difference, 0.032816044, delta=1e-12)
        self.assertAlmostEqual(parity.ratio, 0.847799569, delta=PUBLISHED_DELTA)

    def test_given_identical_rates_when_demographic_parity_then_difference_zero_and_ratio_one(
        self,
    ):
        parity = demographic_parity(_map("selection_rate", ["a", "b", "c"], [0.2, 0.2, 0.2]))

        self.assertEqual((parity.difference, parity.ratio), (0.0, 1.0))

    def test_given_zero_and_positive_rates_when_demographic_parity_then_ratio_is_zero(self):
        parity = demographic_parity(_map("selection_rate", ["a", "b"], [0.0, 0.4]))

        self.assertEqual(parity.ratio, 0.0)


class TestEqualizedOdds(unittest.TestCase):
    def test_given_legacy_model_gcs3_rates_when_equalized_odds_then_published_ratio_is_reproduced(  # noqa: E501
        self,
    ):
        odds = equalized_odds(
            _map("tpr", GCS3_LEVELS, [0.915137615, 0.687195122, 0.864222598]),
            _map("fpr", GCS3_LEVELS, [0.356012798, 0.154148223, 0.27706954]),
        )

        self.assertAlmostEqual(odds.ratio, 0.432985061, delta=1e-6)
        self.assertAlmostEqual(odds.ratio, 0.432985060835, delta=1e-12)

    def test_given_robust_model_gcs3_rates_when_equalized_odds_then_published_ratio_is_reproduced(  # noqa: E501
        self,
    ):
        odds = equalized_odds(
            _map("tpr", GCS3_LEVELS, [0.890235911, 0.722560976, 0.854690475]),
            _map("fpr", GCS3_LEVELS, [0.178050553, 0.09830028, 0.166885698]),
        )

        self.assertAlmostEqual(odds.ratio, 0.552091966, delta=1e-6)
        self.assertAlmostEqual(odds.ratio, 0.552091966825, delta=1e-12)

    def test_given_cat_sex_rates_when_equalized_odds_then_published_values_are_reproduced(self):
        odds = equalized_odds(
            _map("tpr", ["Female", "Non-Female"], [0.852859451, 0.857426954]),
            _map("fpr", ["Female", "Non-Female"], [0.167604207, 0.163588509]),
        )

        self.assertAlmostEqual(odds.difference, 0.004567504, delta=PUBLISHED_DELTA)
        self.assertAlmostEqual(odds.ratio, 0.976040592, delta=PUBLISHED_DELTA)

    def test_given_race_rates_when_equalized_odds_then_tpr_spread_dominates(self):
        odds = equalized_odds(
            _map("tpr", RACE_LEVELS, RACE_TPR), _map("fpr", RACE_LEVELS, RACE_FPR)
        )

        self.assertAlmostEqual(odds.difference, 0.030529757, delta=1e-12)
        self.assertAlmostEqual(odds.ratio, 0.83323635, delta=1e-6)

    def test_given_identical_rates_when_equalized_odds_then_difference_zero_and_ratio_one(self):
        odds = equalized_odds(
            _map("tpr", ["a", "b"], [0.8, 0.8]), _map("fpr", ["a", "b"], [0.1, 0.1])
        )

        self.assertEqual((odds.difference, odds.ratio), (0.0, 1.0))

    def test_given_undefined_tpr_group_when_equalized_odds_then_group_is_excluded(self):
        odds = equalized_odds(
            _map("tpr", ["a", "b", "c"], [0.8, None, 0.4]),
            _map("fpr", ["a", "b", "c"], [0.1, 0.1, 0.1]),
        )

        self.assertAlmostEqual(odds.difference, 0.4, delta=1e-12)
        self.assertAlmostEqual(odds.ratio, 0.5, delta=1e-12)

    def test_given_mismatched_levels_when_equalized_odds_then_configuration_error_is_raised(self):
        with pytest.raises(ConfigurationError):
            equalized_odds(_map("tpr", ["a", "b"], [0.8, 0.7]), _map("fpr", ["a"], [0.1]))
