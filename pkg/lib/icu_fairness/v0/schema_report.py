# Copyright 2024 ICU Fairness Monitor contributors
# See LICENSE file for licensing details.

"""Library for building and serializing the fairness schema report.

The report is dynamically sized. It always starts with an overall block of seven accuracy
metrics, followed by one block per sensitive feature:

- eight cross-group aggregates (auROC spread, demographic parity and equalized odds);
- four rows per feature level (auROC, TPR, FPR and selection rate of that group).

A report over features with `L_1 ... L_k` levels therefore holds `7 + sum(8 + 4 * L_i)` rows.

Example:
```python

from icu_fairness.v0.group_fairness import SensitiveFeatureSpec
from icu_fairness.v0.schema_report import build_schema, serialize_schema

specs = [SensitiveFeatureSpec.from_records("catSex", records)]
report = build_schema(records, specs, threshold=0.05)
csv_bytes = serialize_schema(report, "csv")
```

Serialized values carry 9 significant digits; undefined values are written as `undefined`.
"""

import json
import logging
from datetime import datetime
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd
from cryptography.hazmat.primitives import hashes
from jsonschema import exceptions, validate  # type: ignore[import]
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from icu_fairness.v0.core_metrics import (
    UNDEFINED,
    PredictionRecord,
    auroc,
    classification_rates,
    confusion_counts,
    mean_prediction,
    selection_rate,
)
from icu_fairness.v0.errors import (
    ConfigurationError,
    EmptyInputError,
    InputFileError,
    UndefinedAggregateError,
    UndefinedMetricError,
)
from icu_fairness.v0.formatting import format_threshold, format_value
from icu_fairness.v0.group_fairness import (
    GroupMetric,
    SensitiveFeatureSpec,
    aggregate_over_groups,
    demographic_parity,
    equalized_odds,
    metric_by_group,
)

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version before publishing a change to this library
LIBPATCH = 3

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["metric", "value", "sensitive_feature", "feature_level", "threshold", "group_size"]

AREA_UNDER_ROC = "area under ROC"
SELECTION_RATE = "selection rate"
MEAN_PREDICTION = "mean prediction"
FALSE_NEGATIVE_RATE = "false negative rate"
FALSE_POSITIVE_RATE = "false positive rate"
TRUE_NEGATIVE_RATE = "true negative rate"
TRUE_POSITIVE_RATE = "true positive rate"
MIN_AUROC = "min auROC over groups"
MAX_AUROC = "max auROC over groups"
DIFFERENCE_AUROC = "difference in auROC"
RATIO_AUROC = "ratio in auROC"
DEMOGRAPHIC_PARITY_RATIO = "demographic parity ratio"
DEMOGRAPHIC_PARITY_DIFFERENCE = "demographic parity difference"
EQUALIZED_ODDS_DIFFERENCE = "equalized odds difference"
EQUALIZED_ODDS_RATIO = "equalized odds ratio"
AUROC_BY_GROUP = "auROC by group"
TPR_BY_GROUP = "true positive rate by group"
FPR_BY_GROUP = "false positive rate by group"
SELECTION_RATE_BY_GROUP = "selection rate by group"

THRESHOLD_DEPENDENT_METRICS = frozenset(
    {
        SELECTION_RATE,
        FALSE_NEGATIVE_RATE,
        FALSE_POSITIVE_RATE,
        TRUE_NEGATIVE_RATE,
        TRUE_POSITIVE_RATE,
        DEMOGRAPHIC_PARITY_RATIO,
        DEMOGRAPHIC_PARITY_DIFFERENCE,
        EQUALIZED_ODDS_DIFFERENCE,
        EQUALIZED_ODDS_RATIO,
        TPR_BY_GROUP,
        FPR_BY_GROUP,
        SELECTION_RATE_BY_GROUP,
    }
)

OVERALL_ROWS = 7
AGGREGATE_ROWS_PER_FEATURE = 8
ROWS_PER_LEVEL = 4

_VALUE_SCHEMA = {"oneOf": [{"type": "number"}, {"type": "string", "enum": [UNDEFINED]}]}

SCHEMA_REPORT_JSON_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "title": "Fairness schema report",
    "properties": {
        "rows": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "metric": {"type": "string"},
                    "value": _VALUE_SCHEMA,
                    "sensitive_feature": {"type": "string"},
                    "feature_level": {"type": "string"},
                    "threshold": {"type": "number", "minimum": 0, "maximum": 1},
                    "group_size": {"type": "integer", "minimum": 0},
                },
                "required": ["metric", "value"],
                "additionalProperties": False,
            },
        },
        "input_digest": {"type": "string"},
        "generated_at": {"type": "string"},
    },
    "required": ["rows"],
    "additionalProperties": False,
}

COMPARISON_JSON_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "title": "Fairness schema comparison",
    "properties": {
        "labels": {"type": "array", "items": {"type": "string"}, "minItems": 2},
        "rows": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "metric": {"type": "string"},
                    "values": {"type": "object", "additionalProperties": _VALUE_SCHEMA},
                    "sensitive_feature": {"type": "string"},
                    "feature_level": {"type": "string"},
                    "threshold": {"type": "number"},
                },
                "required": ["metric", "values"],
            },
        },
    },
    "required": ["labels", "rows"],
}


class MetricRow(BaseModel):
    """One row of the schema report; `value=None` means undefined."""

    model_config = ConfigDict(frozen=True)

    metric: str = Field(min_length=1)
    value: Optional[float] = None
    sensitive_feature: Optional[str] = None
    feature_level: Optional[str] = None
    threshold: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    group_size: Optional[int] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def _level_needs_feature(self) -> "MetricRow":
        if self.feature_level is not None and self.sensitive_feature is None:
            raise ValueError("feature_level requires sensitive_feature")
        return self

    @property
    def key(self) -> Tuple[str, Optional[str], Optional[str], Optional[float]]:
        """Identity of the row across reports built from the same records."""
        return self.metric, self.sensitive_feature, self.feature_level, self.threshold


class SchemaReport(BaseModel):
    """Ordered schema rows plus provenance."""

    rows: List[MetricRow]
    input_digest: Optional[str] = None
    generated_at: Optional[datetime] = None


class ComparisonRow(BaseModel):
    """One schema row key with a value per compared report."""

    metric: str
    values: Dict[str, Optional[float]]
    sensitive_feature: Optional[str] = None
    feature_level: Optional[str] = None
    threshold: Optional[float] = None


class ComparisonReport(BaseModel):
    """Reports laid out side by side, one value column per label."""

    labels: List[str] = Field(min_length=2)
    rows: List[ComparisonRow]


def expected_row_count(level_counts: Sequence[int]) -> int:
    """Returns the number of rows a report over features with these level counts holds."""
    return OVERALL_ROWS + sum(
        AGGREGATE_ROWS_PER_FEATURE + ROWS_PER_LEVEL * levels for levels in level_counts
    )


def content_digest(data: bytes) -> str:
    """Returns the hex SHA-256 digest of the given bytes."""
    digest = hashes.Hash(hashes.SHA256())
    digest.update(data)
    return digest.finalize().hex()


def _row(metric: str, value: Optional[float], threshold: float, **kwargs) -> MetricRow:
    return MetricRow(
        metric=metric,
        value=value,
        threshold=threshold if metric in THRESHOLD_DEPENDENT_METRICS else None,
        **kwargs,
    )


def _overall_rows(records: Sequence[PredictionRecord], threshold: float) -> List[MetricRow]:
    try:
        area: Optional[float] = auroc(records)
    except UndefinedMetricError as e:
        logger.warning("Overall auROC is undefined: %s", e)
        area = None
    rates = classification_rates(confusion_counts(records, threshold))
    return [
        _row(AREA_UNDER_ROC, area, threshold),
        _row(SELECTION_RATE, selection_rate(records, threshold), threshold),
        _row(MEAN_PREDICTION, mean_prediction(records), threshold),
        _row(FALSE_NEGATIVE_RATE, rates.fnr, threshold),
        _row(FALSE_POSITIVE_RATE, rates.fpr, threshold),
        _row(TRUE_NEGATIVE_RATE, rates.tnr, threshold),
        _row(TRUE_POSITIVE_RATE, rates.tpr, threshold),
    ]


def _undefined_if_no_groups(
    name: str, feature: str, compute: Callable[[], BaseModel], fields: Sequence[str]
) -> Dict[str, Optional[float]]:
    try:
        return compute().model_dump()
    except UndefinedAggregateError:
        logger.warning("%s is undefined for every level of %s", name, feature)
        return dict.fromkeys(fields)


def _feature_rows(
    records: Sequence[PredictionRecord], spec: SensitiveFeatureSpec, threshold: float
) -> List[MetricRow]:
    aurocs = metric_by_group(records, spec, GroupMetric.AUROC)
    tprs = metric_by_group(records, spec, GroupMetric.TPR, threshold)
    fprs = metric_by_group(records, spec, GroupMetric.FPR, threshold)
    selection_rates = metric_by_group(records, spec, GroupMetric.SELECTION_RATE, threshold)

    spread = _undefined_if_no_groups(
        "auROC",
        spec.name,
        lambda: aggregate_over_groups(aurocs),
        ("min", "max", "difference", "ratio"),
    )
    parity = _undefined_if_no_groups(
        "demographic parity",
        spec.name,
        lambda: demographic_parity(selection_rates),
        ("difference", "ratio"),
    )
    odds = _undefined_if_no_groups(
        "equalized odds",
        spec.name,
        lambda: equalized_odds(tprs, fprs),
        ("difference", "ratio"),
    )

    rows = [
        _row(metric, value, threshold, sensitive_feature=spec.name)
        for metric, value in (
            (MIN_AUROC, spread["min"]),
            (MAX_AUROC, spread["max"]),
            (DIFFERENCE_AUROC, spread["difference"]),
            (RATIO_AUROC, spread["ratio"]),
            (DEMOGRAPHIC_PARITY_RATIO, parity["ratio"]),
            (DEMOGRAPHIC_PARITY_DIFFERENCE, parity["difference"]),
            (EQUALIZED_ODDS_DIFFERENCE, odds["difference"]),
            (EQUALIZED_ODDS_RATIO, odds["ratio"]),
        )
    ]
    for metric, group_metric in (
        (AUROC_BY_GROUP, aurocs),
        (TPR_BY_GROUP, tprs),
        (FPR_BY_GROUP, fprs),
        (SELECTION_RATE_BY_GROUP, selection_rates),
    ):
        rows.extend(
            _row(
                metric,
                group_metric.per_level[level],
                threshold,
                sensitive_feature=spec.name,
                feature_level=level,
                group_size=group_metric.group_sizes[level],
            )
            for level in spec.levels
        )
    return rows


def build_schema(
    records: Sequence[PredictionRecord],
    specs: Sequence[SensitiveFeatureSpec],
    threshold: float,
    input_digest: Optional[str] = None,
    generated_at: Optional[datetime] = None,
) -> SchemaReport:
    """Builds the fairness schema report.

    Args:
        records (Sequence[PredictionRecord]): Scored stays; must not be empty.
        specs (Sequence[SensitiveFeatureSpec]): Sensitive features, in report order.
        threshold (float): Decision threshold for the thresholded metrics.
        input_digest (str, optional): Content hash of the input file.
        generated_at (datetime, optional): Report timestamp; omitted for reproducible runs.

    Returns:
        SchemaReport: Report with `7 + sum(8 + 4 * levels)` rows.
    """
    if not records:
        raise EmptyInputError("Cannot build a schema report from zero records")
    rows = _overall_rows(records, threshold)
    for spec in specs:
        rows.extend(_feature_rows(records, spec, threshold))
    logger.info(
        "Built schema report with %d rows over %d sensitive features", len(rows), len(specs)
    )
    return SchemaReport(rows=rows, input_digest=input_digest, generated_at=generated_at)


def _csv_bytes(frame: pd.DataFrame) -> bytes:
    return frame.to_csv(index=False, lineterminator="\n").encode()


def _row_document(row: MetricRow) -> dict:
    document = row.model_dump(exclude_none=True)
    document["value"] = UNDEFINED if row.value is None else row.value
    return document


def _validated_json(document: dict, schema: dict) -> bytes:
    try:
        validate(instance=document, schema=schema)
    except exceptions.ValidationError as e:
        raise ConfigurationError(f"Report does not match its JSON schema: {e.message}")
    return (json.dumps(document, indent=2) + "\n").encode()


def serialize_schema(report: SchemaReport, output_format: str = "csv") -> bytes:
    """Serializes a schema report.

    Args:
        report (SchemaReport): Report to serialize.
        output_format (str): `csv` or `json`.

    Returns:
        bytes: Serialized report.
    """
    if output_format == "csv":
        frame = pd.DataFrame(
            [
                {
                    "metric": row.metric,
                    "value": format_value(row.value),
                    "sensitive_feature": row.sensitive_feature or "",
                    "feature_level": row.feature_level or "",
                    "threshold": format_threshold(row.threshold),
                    "group_size": "" if row.group_size is None else str(row.group_size),
                }
                for row in report.rows
            ],
            columns=CSV_COLUMNS,
        )
        return _csv_bytes(frame)
    if output_format == "json":
        document: dict = {"rows": [_row_document(row) for row in report.rows]}
        if report.input_digest is not None:
            document["input_digest"] = report.input_digest
        if report.generated_at is not None:
            document["generated_at"] = report.generated_at.isoformat()
        return _validated_json(document, SCHEMA_REPORT_JSON_SCHEMA)
    raise ConfigurationError(f"Unsupported report format `{output_format}`")


def parse_schema_json(data: Union[bytes, str], path: str = "<report>") -> SchemaReport:
    """Loads a JSON schema report written by `serialize_schema`.

    Raises:
        InputFileError: if the document is not a valid schema report.
    """
    try:
        document = json.loads(data)
        validate(instance=document, schema=SCHEMA_REPORT_JSON_SCHEMA)
        rows = [
            MetricRow(**{**row, "value": None if row["value"] == UNDEFINED else row["value"]})
            for row in document["rows"]
        ]
        return SchemaReport(
            rows=rows,
            input_digest=document.get("input_digest"),
            generated_at=document.get("generated_at"),
        )
    except (json.JSONDecodeError, exceptions.ValidationError, ValidationError) as e:
        raise InputFileError(path, f"not a schema report: {e}")


def compare_schemas(reports: Dict[str, SchemaReport]) -> ComparisonReport:
    """Lays reports built from the same records and features side by side.

    Args:
        reports (Dict[str, SchemaReport]): Reports by label, in column order.

    Returns:
        ComparisonReport: One row per schema row, in the first report's order.

    Raises:
        ConfigurationError: if fewer than two reports are given or their rows differ.
    """
    if len(reports) < 2:
        raise ConfigurationError("At least two reports are required for a comparison")
    labels = list(reports)
    reference = reports[labels[0]]
    reference_keys = [row.key for row in reference.rows]
    for label in labels[1:]:
        if [row.key for row in reports[label].rows] != reference_keys:
            raise ConfigurationError(
                f"Report `{label}` does not have the same rows as `{labels[0]}`"
            )
    rows = [
        ComparisonRow(
            metric=row.metric,
            values={label: reports[label].rows[index].value for label in labels},
            sensitive_feature=row.sensitive_feature,
            feature_level=row.feature_level,
            threshold=row.threshold,
        )
        for index, row in enumerate(reference.rows)
    ]
    return ComparisonReport(labels=labels, rows=rows)


def serialize_comparison(report: ComparisonReport, output_format: str = "csv") -> bytes:
    """Serializes a comparison report as CSV (one value column per label) or JSON."""
    if output_format == "csv":
        columns = ["metric", *report.labels, "sensitive_feature", "feature_level", "threshold"]
        frame = pd.DataFrame(
            [
                {
                    "metric": row.metric,
                    **{label: format_value(row.values[label]) for label in report.labels},
                    "sensitive_feature": row.sensitive_feature or "",
                    "feature_level": row.feature_level or "",
                    "threshold": format_threshold(row.threshold),
                }
                for row in report.rows
            ],
            columns=columns,
        )
        return _csv_bytes(frame)
    if output_format == "json":
        document = {
            "labels": report.labels,
            "rows": [
                {
                    **row.model_dump(exclude_none=True, exclude={"values"}),
                    "values": {
                        label: UNDEFINED if value is None else value
                        for label, value in row.values.items()
                    },
                }
                for row in report.rows
            ],
        }
        return _validated_json(document, COMPARISON_JSON_SCHEMA)
    raise ConfigurationError(f"Unsupported report format `{output_format}`")

