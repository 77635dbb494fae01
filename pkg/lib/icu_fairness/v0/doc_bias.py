# Copyright 2024 ICU Fairness Monitor contributors
# See LICENSE file for licensing details.

"""Documentation-bias feature derived from how often ICUs record a GCS of 3.

ICUs document sedated patients differently: some record the Glasgow Coma Scale as "unable to
score", some as the minimum (3), some as the maximum (15). This library measures, per ICU, the
share of stays recorded with a total of 3, buckets ICUs by the 5th and 95th nearest-rank
percentiles of that share and attaches the bucket to every stay as the `GCS3` sensitive
feature.

Example:
```python

from icu_fairness.v0.doc_bias import attach_feature, bucket_icus, icu_gcs3_rates

profiles = bucket_icus(icu_gcs3_rates(stays))
records = attach_feature(records, stays, profiles)
```
"""

import logging
import math
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from icu_fairness.v0.core_metrics import PredictionRecord
from icu_fairness.v0.errors import (
    DuplicateIdentifierError,
    EmptyInputError,
    GcsValidationError,
    InputDomainError,
    InputFileError,
    JoinError,
)
from icu_fairness.v0.formatting import format_value

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version before publishing a change to this library
LIBPATCH = 2

logger = logging.getLogger(__name__)

GCS3_FEATURE = "GCS3"
GCS_MIN = 3
GCS_MAX = 15
LOW_PERCENTILE = 5
HIGH_PERCENTILE = 95
COMPONENT_COLUMNS = {"eye": "gcs_eye", "verbal": "gcs_verbal", "motor": "gcs_motor"}
PROFILE_COLUMNS = [
    "icu_id",
    "n_stays",
    "n_gcs3",
    "gcs3_rate",
    "null_rate",
    "gcs15_rate",
    "bucket",
]


class Gcs3Bucket(str, Enum):
    """How often an ICU records GCS=3, relative to the other ICUs."""

    LOW = "lowGCS3"
    MED = "medGCS3"
    HIGH = "highGCS3"


class GcsScore(BaseModel):
    """A recorded Glasgow Coma Scale.

    A score that is not scoreable ("Unable to score due to medications") carries no total and
    no components.
    """

    model_config = ConfigDict(frozen=True)

    scoreable: bool = True
    total: Optional[int] = Field(default=None, ge=GCS_MIN, le=GCS_MAX)
    eye: Optional[int] = Field(default=None, ge=1, le=4)
    verbal: Optional[int] = Field(default=None, ge=1, le=5)
    motor: Optional[int] = Field(default=None, ge=1, le=6)

    @model_validator(mode="after")
    def _total_matches_components(self) -> "GcsScore":
        components = [self.eye, self.verbal, self.motor]
        if not self.scoreable:
            if self.total is not None or any(c is not None for c in components):
                raise ValueError("a score that is unable to be scored carries no values")
            return self
        if self.total is None:
            raise ValueError("a scoreable GCS needs a total")
        given = [c for c in components if c is not None]
        if given and len(given) != len(components):
            raise ValueError("eye, verbal and motor must be given together")
        if given and sum(given) != self.total:
            raise ValueError(
                f"total {self.total} does not equal eye + verbal + motor {sum(given)}"
            )
        return self

    @classmethod
    def unable_to_score(cls) -> "GcsScore":
        """Returns the null marker."""
        return cls(scoreable=False)


class StayGcsRecord(BaseModel):
    """GCS documented for one ICU stay."""

    model_config = ConfigDict(frozen=True)

    stay_id: str = Field(min_length=1)
    icu_id: str = Field(min_length=1)
    gcs: GcsScore

    @property
    def recorded_total(self) -> Optional[int]:
        """Recorded GCS total, or None when documented as unable to score."""
        return self.gcs.total if self.gcs.scoreable else None


class IcuGcs3Profile(BaseModel):
    """GCS recording habits of one ICU."""

    model_config = ConfigDict(frozen=True)

    icu_id: str
    n_stays: int = Field(gt=0)
    n_gcs3: int = Field(ge=0)
    gcs3_rate: float = Field(ge=0.0, le=1.0)
    null_rate: float = Field(ge=0.0, le=1.0)
    gcs15_rate: float = Field(ge=0.0, le=1.0)
    bucket: Optional[Gcs3Bucket] = None


def stay_record(
    stay_id: str,
    icu_id: str,
    total: Optional[int],
    eye: Optional[int] = None,
    verbal: Optional[int] = None,
    motor: Optional[int] = None,
) -> StayGcsRecord:
    """Builds a validated stay record; a `None` total is the unable-to-score marker.

    Raises:
        GcsValidationError: if the total or a component is out of range or inconsistent.
    """
    try:
        if total is None and eye is None and verbal is None and motor is None:
            gcs = GcsScore.unable_to_score()
        else:
            gcs = GcsScore(total=total, eye=eye, verbal=verbal, motor=motor)
        return StayGcsRecord(stay_id=stay_id, icu_id=icu_id, gcs=gcs)
    except ValidationError as e:
        reason = "; ".join(
            f"{'.'.join(str(part) for part in error['loc']) or 'gcs'}: {error['msg']}"
            for error in e.errors()
        )
        raise GcsValidationError(stay_id, reason)


def icu_gcs3_rates(stays: Sequence[StayGcsRecord]) -> List[IcuGcs3Profile]:
    """Computes per-ICU GCS recording rates.

    Stays documented as unable to score count in the denominator but never as a 3.

    Args:
        stays (Sequence[StayGcsRecord]): Stays of every ICU.

    Returns:
        List[IcuGcs3Profile]: One unbucketed profile per ICU, in first-appearance order.
    """
    if not stays:
        raise EmptyInputError("At least one stay is required to compute GCS=3 rates")
    frame = pd.DataFrame(
        {
            "icu_id": [stay.icu_id for stay in stays],
            "gcs3": [stay.recorded_total == GCS_MIN for stay in stays],
            "null": [stay.recorded_total is None for stay in stays],
            "gcs15": [stay.recorded_total == GCS_MAX for stay in stays],
        }
    )
    counts = frame.groupby("icu_id", sort=False).agg(
        n_stays=("gcs3", "size"),
        n_gcs3=("gcs3", "sum"),
        n_null=("null", "sum"),
        n_gcs15=("gcs15", "sum"),
    )
    profiles = [
        IcuGcs3Profile(
            icu_id=str(icu_id),
            n_stays=int(row.n_stays),
            n_gcs3=int(row.n_gcs3),
            gcs3_rate=int(row.n_gcs3) / int(row.n_stays),
            null_rate=int(row.n_null) / int(row.n_stays),
            gcs15_rate=int(row.n_gcs15) / int(row.n_stays),
        )
        for icu_id, row in counts.iterrows()
    ]
    logger.info("Computed GCS=3 rates for %d ICUs over %d stays", len(profiles), len(stays))
    return profiles


def nearest_rank_percentile(values: Sequence[float], p: float) -> float:
    """Returns the nearest-rank percentile of an ascending list.

    Args:
        values (Sequence[float]): Values sorted ascending.
        p (float): Percentile in (0, 100].

    Returns:
        float: Element at 1-based rank `ceil(p / 100 * n)`.
    """
    if not len(values):
        raise EmptyInputError("Cannot take a percentile of an empty list")
    if not 0 < p <= 100:
        raise InputDomainError(f"Percentile must be in (0, 100], got {p}")
    if np.any(np.diff(np.asarray(values, dtype=float)) < 0):
        raise InputDomainError("Percentile values must be sorted ascending")
    rank = max(math.ceil(p * len(values) / 100), 1)
    return values[rank - 1]


def bucket_icus(profiles: Sequence[IcuGcs3Profile]) -> List[IcuGcs3Profile]:
    """Buckets ICUs by their GCS=3 rate.

    With P5 and P95 the nearest-rank percentiles of the rates, an ICU is `highGCS3` when its
    rate is at least P95 and above P5, `lowGCS3` when it is at most P5 and below P95, and
    `medGCS3` otherwise. All-equal rates therefore put every ICU in `medGCS3`.

    Args:
        profiles (Sequence[IcuGcs3Profile]): Profiles from `icu_gcs3_rates`.

    Returns:
        List[IcuGcs3Profile]: Copies of the profiles with `bucket` set, in input order.
    """
    if not profiles:
        raise EmptyInputError("At least one ICU profile is required for bucketing")
    rates = sorted(profile.gcs3_rate for profile in profiles)
    low_cut = nearest_rank_percentile(rates, LOW_PERCENTILE)
    high_cut = nearest_rank_percentile(rates, HIGH_PERCENTILE)
    if low_cut == high_cut and len(profiles) > 1:
        logger.warning("GCS=3 rates are equal across ICUs, every ICU is %s", Gcs3Bucket.MED.value)

    def _bucket(rate: float) -> Gcs3Bucket:
        if rate >= high_cut and rate > low_cut:
            return Gcs3Bucket.HIGH
        if rate <= low_cut and rate < high_cut:
            return Gcs3Bucket.LOW
        return Gcs3Bucket.MED

    bucketed = [
        profile.model_copy(update={"bucket": _bucket(profile.gcs3_rate)}) for profile in profiles
    ]
    logger.info(
        "Bucketed %d ICUs (P5=%s, P95=%s): %d high, %d low",
        len(bucketed),
        low_cut,
        high_cut,
        sum(profile.bucket is Gcs3Bucket.HIGH for profile in bucketed),
        sum(profile.bucket is Gcs3Bucket.LOW for profile in bucketed),
    )
    return bucketed


def stay_buckets(
    stays: Sequence[StayGcsRecord], profiles: Sequence[IcuGcs3Profile]
) -> Dict[str, str]:
    """Maps every stay to the bucket of its ICU.

    Raises:
        DuplicateIdentifierError: if a stay appears more than once.
        JoinError: if an ICU has no bucketed profile.
    """
    icu_buckets = {
        profile.icu_id: profile.bucket.value for profile in profiles if profile.bucket is not None
    }
    index: Dict[str, str] = {}
    for stay in stays:
        if stay.stay_id in index:
            raise DuplicateIdentifierError(stay.stay_id, "Stay")
        try:
            index[stay.stay_id] = icu_buckets[stay.icu_id]
        except KeyError:
            raise JoinError(stay.icu_id, "bucketed ICU profile")
    return index


def attach_feature(
    records: Sequence[PredictionRecord],
    stays: Sequence[StayGcsRecord],
    profiles: Sequence[IcuGcs3Profile],
) -> List[PredictionRecord]:
    """Adds the `GCS3` sensitive feature to every prediction record.

    Raises:
        JoinError: if a record's stay or a stay's ICU cannot be matched.
    """
    index = stay_buckets(stays, profiles)
    attached = []
    for record in records:
        try:
            bucket = index[record.stay_id]
        except KeyError:
            raise JoinError(record.stay_id, "GCS stay record")
        attached.append(
            record.model_copy(update={"features": {**record.features, GCS3_FEATURE: bucket}})
        )
    return attached


def _optional_int(value: str, path: str, line: int, field: str) -> Optional[int]:
    if value == "":
        return None
    try:
        return int(value)
    except ValueError:
        raise InputFileError(path, f"`{value}` is not an integer", line=line, field=field)


def stays_from_frame(
    frame: pd.DataFrame, path: str, gcs_column: str = "gcs_total"
) -> List[StayGcsRecord]:
    """Parses a stay table read with `dtype=str` into validated stay records.

    The table needs `stay_id`, `icu_id` and the GCS total column; when `gcs_eye`, `gcs_verbal`
    and `gcs_motor` are present the components are validated against the total too. An empty
    total is the unable-to-score marker.

    Raises:
        InputFileError: naming the file, line and field of the first invalid value.
    """
    for column in ("stay_id", "icu_id", gcs_column):
        if column not in frame.columns:
            raise InputFileError(path, "missing column", line=1, field=column)
    with_components = all(column in frame.columns for column in COMPONENT_COLUMNS.values())
    stays = []
    for position, row in enumerate(frame.to_dict("records")):
        line = position + 2
        components = {
            name: _optional_int(row[column], path, line, column) if with_components else None
            for name, column in COMPONENT_COLUMNS.items()
        }
        try:
            stays.append(
                stay_record(
                    stay_id=row["stay_id"],
                    icu_id=row["icu_id"],
                    total=_optional_int(row[gcs_column], path, line, gcs_column),
                    **components,
                )
            )
        except GcsValidationError as e:
            raise InputFileError(path, str(e), line=line, field=gcs_column)
    if not stays:
        raise InputFileError(path, "no stays")
    return stays


def serialize_profiles(profiles: Sequence[IcuGcs3Profile]) -> bytes:
    """Writes bucketed profiles as CSV."""
    frame = pd.DataFrame(
        [
            {
                "icu_id": profile.icu_id,
                "n_stays": profile.n_stays,
                "n_gcs3": profile.n_gcs3,
                "gcs3_rate": format_value(profile.gcs3_rate),
                "null_rate": format_value(profile.null_rate),
                "gcs15_rate": format_value(profile.gcs15_rate),
                "bucket": profile.bucket.value if profile.bucket else "",
            }
            for profile in profiles
        ],
        columns=PROFILE_COLUMNS,
    )
    return frame.to_csv(index=False, lineterminator="\n").encode()
