# Copyright 2024 ICU Fairness Monitor contributors
# See LICENSE file for licensing details.

"""Per-group metrics and cross-group disparity aggregates.

Records are partitioned by one sensitive feature at a time. Levels keep the order in which
they first appear in the input, so reports built from the same file are always laid out the
same way.

Per-group values are evaluated with Fairlearn's `MetricFrame`. Undefined per-group values (e.g.
the auROC of a group that has a single outcome class) are kept in the `GroupMetricMap` as
`None` and excluded from every aggregate.
"""

import logging
import math
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from fairlearn.metrics import MetricFrame
from pydantic import BaseModel, ConfigDict, Field, field_validator

from icu_fairness.v0.core_metrics import (
    PredictionRecord,
    auroc,
    classification_rates,
    confusion_counts,
    mean_prediction,
    selection_rate,
)
from icu_fairness.v0.errors import (
    ConfigurationError,
    MissingFeatureError,
    UndefinedAggregateError,
    UndefinedMetricError,
)

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version before publishing a change to this library
LIBPATCH = 2

logger = logging.getLogger(__name__)


class GroupMetric(str, Enum):
    """Metrics that can be evaluated per group."""

    AUROC = "auroc"
    TPR = "tpr"
    FPR = "fpr"
    SELECTION_RATE = "selection_rate"
    MEAN_PREDICTION = "mean_prediction"

    @property
    def needs_threshold(self) -> bool:
        """Whether the metric is computed on thresholded predictions."""
        return self in (GroupMetric.TPR, GroupMetric.FPR, GroupMetric.SELECTION_RATE)


class SensitiveFeatureSpec(BaseModel):
    """A sensitive feature and its ordered levels."""

    model_config = ConfigDict(frozen=True)

    name: str = Field(min_length=1, examples=["catSex", "race", "dxGroup", "GCS3"])
    levels: List[str] = Field(min_length=1, examples=[["Female", "Non-Female"]])

    @field_validator("levels")
    @classmethod
    def _levels_are_distinct(cls, levels: List[str]) -> List[str]:
        if any(not level for level in levels):
            raise ValueError("levels must be non-empty strings")
        if len(set(levels)) != len(levels):
            raise ValueError("levels must be unique")
        return levels

    @classmethod
    def from_records(
        cls, name: str, records: Sequence[PredictionRecord]
    ) -> "SensitiveFeatureSpec":
        """Builds a spec whose levels are listed in first-appearance order.

        Args:
            name (str): Sensitive feature name.
            records (Sequence[PredictionRecord]): Records carrying the feature.

        Returns:
            SensitiveFeatureSpec: Feature spec.

        Raises:
            MissingFeatureError: if a record has no value for the feature.
        """
        levels: Dict[str, None] = {}
        for record in records:
            if name not in record.features:
                raise MissingFeatureError(record.stay_id, name)
            levels.setdefault(record.features[name], None)
        return cls(name=name, levels=list(levels))


class GroupMetricMap(BaseModel):
    """Values of one metric per level; `None` means undefined for that group."""

    model_config = ConfigDict(frozen=True)

    metric_name: str
    per_level: Dict[str, Optional[float]]
    group_sizes: Dict[str, int] = Field(default_factory=dict)

    def defined_values(self) -> List[float]:
        """Returns the per-level values that are defined, in level order."""
        return [value for value in self.per_level.values() if value is not None]


class GroupAggregate(BaseModel):
    """Spread of a metric across groups."""

    model_config = ConfigDict(frozen=True)

    min: float
    max: float
    difference: float = Field(ge=0.0)
    ratio: float = Field(ge=0.0, le=1.0)


class Disparity(BaseModel):
    """Difference and ratio of a parity criterion."""

    model_config = ConfigDict(frozen=True)

    difference: float = Field(ge=0.0)
    ratio: float = Field(ge=0.0, le=1.0)


def _ratio(minimum: float, maximum: float) -> float:
    # min is 0 too when max is 0, since values are non-negative rates
    if maximum == 0:
        return 1.0
    return minimum / maximum


def _feature_levels(
    records: Sequence[PredictionRecord], spec: SensitiveFeatureSpec
) -> pd.Series:
    """Returns the level of every record, checked against the levels the spec lists.

    Raises:
        MissingFeatureError: if a record has no value for the feature.
        ConfigurationError: if a record carries a level the spec does not list.
    """
    levels = []
    for record in records:
        try:
            levels.append(record.features[spec.name])
        except KeyError:
            raise MissingFeatureError(record.stay_id, spec.name)
    series = pd.Series(levels, dtype=object, name=spec.name)
    unlisted = series[~series.isin(spec.levels)]
    if not unlisted.empty:
        raise ConfigurationError(
            f"Stay {records[unlisted.index[0]].stay_id} has level `{unlisted.iloc[0]}` "
            f"not listed for `{spec.name}`"
        )
    return series


def partition_by_feature(
    records: Sequence[PredictionRecord], spec: SensitiveFeatureSpec
) -> Dict[str, List[PredictionRecord]]:
    """Splits records into one group per level of the feature.

    Args:
        records (Sequence[PredictionRecord]): Records to split.
        spec (SensitiveFeatureSpec): Feature to split on.

    Returns:
        Dict[str, List[PredictionRecord]]: Records by level, in the spec's level order. Levels
            listed in the spec but absent from the records map to an empty list.

    Raises:
        MissingFeatureError: if a record has no value for the feature.
        ConfigurationError: if a record carries a level the spec does not list.
    """
    levels = _feature_levels(records, spec)
    positions = levels.groupby(levels, sort=False).groups if len(levels) else {}
    return {
        level: [records[position] for position in positions.get(level, [])]
        for level in spec.levels
    }


def _group_records(y_true: np.ndarray, y_pred: np.ndarray) -> List[PredictionRecord]:
    # Values come from records that were already validated
    return [
        PredictionRecord.model_construct(stay_id="", score=float(score), outcome=int(outcome))
        for outcome, score in zip(y_true, y_pred)
    ]


def _group_metric(
    metric: GroupMetric, threshold: Optional[float]
) -> Callable[[np.ndarray, np.ndarray], float]:
    """Wraps a record metric for `MetricFrame`; an undefined value becomes NaN."""

    def _compute(y_true: np.ndarray, y_pred: np.ndarray) -> float:
        records = _group_records(y_true, y_pred)
        if metric is GroupMetric.AUROC:
            try:
                return auroc(records)
            except UndefinedMetricError:
                return math.nan
        if metric is GroupMetric.MEAN_PREDICTION:
            return mean_prediction(records)
        assert threshold is not None
        if metric is GroupMetric.SELECTION_RATE:
            return selection_rate(records, threshold)
        rates = classification_rates(confusion_counts(records, threshold))
        value = rates.tpr if metric is GroupMetric.TPR else rates.fpr
        return math.nan if value is None else value

    return _compute


def metric_by_group(
    records: Sequence[PredictionRecord],
    spec: SensitiveFeatureSpec,
    metric: GroupMetric,
    threshold: Optional[float] = None,
) -> GroupMetricMap:
    """Evaluates a metric independently on every group of a feature.

    Args:
        records (Sequence[PredictionRecord]): Records to evaluate.
        spec (SensitiveFeatureSpec): Feature to group by.
        metric (GroupMetric): Metric to evaluate.
        threshold (float, optional): Decision threshold; required for thresholded metrics.

    Returns:
        GroupMetricMap: One value per level of the spec.
    """
    metric = GroupMetric(metric)
    if metric.needs_threshold and threshold is None:
        raise ConfigurationError(f"Metric `{metric.value}` requires a threshold")
    levels = _feature_levels(records, spec)
    per_level: Dict[str, Optional[float]] = dict.fromkeys(spec.levels)
    if records:
        frame = MetricFrame(
            metrics=_group_metric(metric, threshold),
            y_true=np.fromiter((r.outcome for r in records), dtype=int, count=len(records)),
            y_pred=np.fromiter((r.score for r in records), dtype=float, count=len(records)),
            sensitive_features=levels,
        )
        by_group = frame.by_group.reindex(spec.levels)
        per_level = {
            level: None if pd.isna(value) else float(value) for level, value in by_group.items()
        }
    undefined = [level for level, value in per_level.items() if value is None]
    if undefined:
        logger.warning(
            "%s undefined for %s levels %s", metric.value, spec.name, ", ".join(undefined)
        )
    sizes = levels.value_counts().reindex(spec.levels, fill_value=0)
    return GroupMetricMap(
        metric_name=metric.value,
        per_level=per_level,
        group_sizes={str(level): int(size) for level, size in sizes.items()},
    )


def aggregate_over_groups(gm: GroupMetricMap) -> GroupAggregate:
    """Returns min, max, difference and ratio over the defined per-level values.

    Raises:
        UndefinedAggregateError: if no group has a defined value.
    """
    values = gm.defined_values()
    if not values:
        raise UndefinedAggregateError(f"`{gm.metric_name}` is undefined for every group")
    minimum, maximum = min(values), max(values)
    return GroupAggregate(
        min=minimum,
        max=maximum,
        difference=maximum - minimum,
        ratio=_ratio(minimum, maximum),
    )


def demographic_parity(selection_rates: GroupMetricMap) -> Disparity:
    """Returns the spread of selection rates across groups as a difference and a ratio."""
    aggregate = aggregate_over_groups(selection_rates)
    return Disparity(difference=aggregate.difference, ratio=aggregate.ratio)


def equalized_odds(tprs: GroupMetricMap, fprs: GroupMetricMap) -> Disparity:
    """Combines the TPR and FPR spreads into an equalized odds difference and ratio.

    The difference is the larger of the two spreads and the ratio is the smaller of the two
    min/max ratios.

    Args:
        tprs (GroupMetricMap): True positive rate per group.
        fprs (GroupMetricMap): False positive rate per group.

    Returns:
        Disparity: Equalized odds difference and ratio.

    Raises:
        ConfigurationError: if the two maps do not cover the same levels.
        UndefinedAggregateError: if either map has no defined value.
    """
    if set(tprs.per_level) != set(fprs.per_level):
        raise ConfigurationError("TPR and FPR maps must cover the same levels")
    tpr_aggregate = aggregate_over_groups(tprs)
    fpr_aggregate = aggregate_over_groups(fprs)
    return Disparity(
        difference=max(tpr_aggregate.difference, fpr_aggregate.difference),
        ratio=min(tpr_aggregate.ratio, fpr_aggregate.ratio),
    )
