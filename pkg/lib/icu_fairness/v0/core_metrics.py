# Copyright 2024 ICU Fairness Monitor contributors
# See LICENSE file for licensing details.

"""Threshold-based classification metrics for binary mortality-risk predictions.

This library turns a flat list of scored ICU stays into the accuracy metrics used by the
fairness schema: confusion counts, classification rates, selection rate, mean prediction
and auROC.

Example:
```python

from icu_fairness.v0.core_metrics import PredictionRecord, auroc, confusion_counts

records = [
    PredictionRecord(stay_id="1", score=0.9, outcome=1, features={"catSex": "Female"}),
    PredictionRecord(stay_id="2", score=0.01, outcome=0, features={"catSex": "Non-Female"}),
]
counts = confusion_counts(records, threshold=0.05)
area = auroc(records)
```

Rates whose denominator is zero are returned as `None` and rendered as `"undefined"` by the
schema report.
"""

import logging
from typing import Dict, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.stats import rankdata

from icu_fairness.v0.errors import EmptyInputError, InputDomainError, UndefinedMetricError

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version before publishing a change to this library
LIBPATCH = 1

logger = logging.getLogger(__name__)

UNDEFINED = "undefined"


class PredictionRecord(BaseModel):
    """One scored ICU stay."""

    model_config = ConfigDict(frozen=True)

    stay_id: str = Field(description="Opaque stay identifier.", examples=["icu001-s0001"])
    score: float = Field(ge=0.0, le=1.0, description="Predicted mortality risk.")
    outcome: int = Field(ge=0, le=1, description="1 if the patient died, 0 otherwise.")
    features: Dict[str, str] = Field(
        default_factory=dict,
        description="Sensitive feature name to level.",
        examples=[{"catSex": "Female", "race": "Asian"}],
    )

    @field_validator("features")
    @classmethod
    def _levels_are_not_empty(cls, features: Dict[str, str]) -> Dict[str, str]:
        for name, level in features.items():
            if not level:
                raise ValueError(f"sensitive feature `{name}` has an empty level")
        return features


class ConfusionCounts(BaseModel):
    """TP/FP/TN/FN tallies of a thresholded record set."""

    model_config = ConfigDict(frozen=True)

    tp: int = Field(ge=0)
    fp: int = Field(ge=0)
    tn: int = Field(ge=0)
    fn: int = Field(ge=0)
    threshold: float = Field(ge=0.0, le=1.0)

    @property
    def total(self) -> int:
        """Returns the number of records the counts were taken from."""
        return self.tp + self.fp + self.tn + self.fn


class RateSet(BaseModel):
    """Classification rates; `None` marks a rate whose denominator is zero."""

    model_config = ConfigDict(frozen=True)

    tpr: Optional[float] = None
    fpr: Optional[float] = None
    tnr: Optional[float] = None
    fnr: Optional[float] = None

    @model_validator(mode="after")
    def _complements_are_consistent(self) -> "RateSet":
        if (self.tpr is None) != (self.fnr is None):
            raise ValueError("tpr and fnr must be both defined or both undefined")
        if (self.fpr is None) != (self.tnr is None):
            raise ValueError("fpr and tnr must be both defined or both undefined")
        return self


def _check_unit_interval(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise InputDomainError(f"{name} must be in [0, 1], got {value}")


def _check_not_empty(records: Sequence[PredictionRecord]) -> None:
    if not records:
        raise EmptyInputError("At least one prediction record is required")


def _scores(records: Sequence[PredictionRecord]) -> np.ndarray:
    return np.fromiter((record.score for record in records), dtype=float, count=len(records))


def _outcomes(records: Sequence[PredictionRecord]) -> np.ndarray:
    return np.fromiter((record.outcome for record in records), dtype=int, count=len(records))


def apply_threshold(score: float, threshold: float) -> int:
    """Converts a mortality risk into a binary prediction.

    Args:
        score (float): Mortality risk in [0, 1].
        threshold (float): Decision threshold in [0, 1]; the boundary is inclusive.

    Returns:
        int: 1 if `score >= threshold`, 0 otherwise.
    """
    _check_unit_interval("score", score)
    _check_unit_interval("threshold", threshold)
    return 1 if score >= threshold else 0


def confusion_counts(records: Sequence[PredictionRecord], threshold: float) -> ConfusionCounts:
    """Tallies predicted classes against outcomes.

    Args:
        records (Sequence[PredictionRecord]): Non-empty list of records.
        threshold (float): Decision threshold in [0, 1].

    Returns:
        ConfusionCounts: Confusion matrix cells at the threshold.
    """
    _check_not_empty(records)
    _check_unit_interval("threshold", threshold)
    predicted = _scores(records) >= threshold
    actual = _outcomes(records) == 1
    return ConfusionCounts(
        tp=int(np.count_nonzero(predicted & actual)),
        fp=int(np.count_nonzero(predicted & ~actual)),
        tn=int(np.count_nonzero(~predicted & ~actual)),
        fn=int(np.count_nonzero(~predicted & actual)),
        threshold=threshold,
    )


def classification_rates(counts: ConfusionCounts) -> RateSet:
    """Returns TPR, FPR, TNR and FNR; a rate is `None` when its denominator is zero."""
    tpr = fnr = fpr = tnr = None
    if counts.tp + counts.fn:
        tpr = counts.tp / (counts.tp + counts.fn)
        fnr = 1.0 - tpr
    if counts.fp + counts.tn:
        fpr = counts.fp / (counts.fp + counts.tn)
        tnr = 1.0 - fpr
    return RateSet(tpr=tpr, fpr=fpr, tnr=tnr, fnr=fnr)


def selection_rate(records: Sequence[PredictionRecord], threshold: float) -> float:
    """Returns the fraction of records predicted positive at the threshold."""
    counts = confusion_counts(records, threshold)
    return (counts.tp + counts.fp) / counts.total


def mean_prediction(records: Sequence[PredictionRecord]) -> float:
    """Returns the arithmetic mean of the raw scores."""
    _check_not_empty(records)
    return float(np.mean(_scores(records)))


def auroc(records: Sequence[PredictionRecord]) -> float:
    """Computes the area under the ROC curve with the Mann-Whitney midrank statistic.

    Ties between a positive and a negative score count one half.

    Args:
        records (Sequence[PredictionRecord]): Records with both outcomes present.

    Returns:
        float: auROC in [0, 1].

    Raises:
        UndefinedMetricError: if only one outcome class is present.
    """
    _check_not_empty(records)
    outcomes = _outcomes(records)
    n_positive = int(np.count_nonzero(outcomes == 1))
    n_negative = len(records) - n_positive
    if not n_positive or not n_negative:
        raise UndefinedMetricError(
            f"auROC needs both outcomes, got {n_positive} positive and {n_negative} negative"
        )
    ranks = rankdata(_scores(records), method="average")
    positive_rank_sum = float(np.sum(ranks[outcomes == 1]))
    u_statistic = positive_rank_sum - n_positive * (n_positive + 1) / 2.0
    return u_statistic / (n_positive * n_negative)
