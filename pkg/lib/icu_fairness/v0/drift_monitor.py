# Copyright 2024 ICU Fairness Monitor contributors
# See LICENSE file for licensing details.

"""Input drift between a baseline and a current batch, measured as the population stability
index (PSI).

Numeric features are binned on the baseline's quantiles, with the outermost bins open to
infinity. Non-numeric features get one bin per level. Bin proportions are floored at `EPSILON`
before `PSI = sum((p - q) * ln(p / q))` is taken.
"""

import json
import logging
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from jsonschema import exceptions, validate  # type: ignore[import]
from pydantic import BaseModel, ConfigDict, Field

from icu_fairness.v0.errors import ConfigurationError, EmptyInputError, InputDomainError

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version before publishing a change to this library
LIBPATCH = 2

logger = logging.getLogger(__name__)

EPSILON = 1e-4
DEFAULT_BINS = 10
DEFAULT_THRESHOLD = 0.2

DRIFT_REPORT_JSON_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "title": "Input drift report",
    "properties": {
        "n_bins": {"type": "integer", "minimum": 2},
        "threshold": {"type": "number", "minimum": 0},
        "per_feature": {
            "type": "object",
            "additionalProperties": {"type": "number", "minimum": 0},
        },
        "features": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "feature": {"type": "string"},
                    "kind": {"enum": ["numeric", "categorical"]},
                    "psi": {"type": "number", "minimum": 0},
                    "bin_edges": {"type": "array", "items": {"type": "number"}},
                    "levels": {"type": "array", "items": {"type": "string"}},
                    "flagged": {"type": "boolean"},
                },
                "required": ["feature", "kind", "psi", "flagged"],
            },
        },
        "flagged": {"type": "array", "items": {"type": "string"}},
    },
    "required": ["n_bins", "threshold", "per_feature", "features", "flagged"],
}


class FeatureKind(str, Enum):
    """How a feature is binned."""

    NUMERIC = "numeric"
    CATEGORICAL = "categorical"


class FeatureDrift(BaseModel):
    """PSI of one feature and the bins it was measured on."""

    model_config = ConfigDict(frozen=True)

    feature: str
    kind: FeatureKind
    psi: float = Field(ge=0.0)
    bin_edges: Optional[List[float]] = Field(
        default=None, description="Interior bin edges of a numeric feature."
    )
    levels: Optional[List[str]] = Field(
        default=None, description="Bins of a categorical feature."
    )
    flagged: bool = False


class DriftReport(BaseModel):
    """Drift of every compared feature."""

    n_bins: int = Field(ge=2)
    threshold: float = Field(ge=0.0)
    features: List[FeatureDrift]

    @property
    def per_feature(self) -> Dict[str, float]:
        """PSI by feature, in input order."""
        return {drift.feature: drift.psi for drift in self.features}

    @property
    def flagged(self) -> List[str]:
        """Features whose PSI is above the threshold, in input order."""
        return [drift.feature for drift in self.features if drift.flagged]


def _check_inputs(baseline: Sequence, current: Sequence) -> None:
    if not len(baseline) or not len(current):
        raise EmptyInputError("PSI needs a non-empty baseline and a non-empty current batch")


def _population_stability(expected: np.ndarray, actual: np.ndarray) -> float:
    empty = int(np.count_nonzero(expected == 0) + np.count_nonzero(actual == 0))
    if empty:
        logger.warning("%d empty drift bins floored at %s", empty, EPSILON)
    p = np.maximum(expected, EPSILON)
    q = np.maximum(actual, EPSILON)
    return float(np.sum((p - q) * np.log(p / q)))


def quantile_edges(baseline: Sequence[float], n_bins: int = DEFAULT_BINS) -> np.ndarray:
    """Returns the distinct interior edges splitting the baseline into `n_bins` quantile bins.

    Edge `k` is the `k / n_bins` quantile with linear interpolation between the two nearest
    order statistics, so it can fall between samples.
    """
    if n_bins < 2:
        raise InputDomainError(f"PSI needs at least 2 bins, got {n_bins}")
    if not len(baseline):
        raise EmptyInputError("Cannot compute quantile edges of an empty baseline")
    quantiles = np.arange(1, n_bins) / n_bins
    return np.unique(np.quantile(np.asarray(baseline, dtype=float), quantiles, method="linear"))


def bin_proportions(values: Sequence[float], edges: np.ndarray) -> np.ndarray:
    """Returns the share of values in each bin; bin `i` is `[edges[i-1], edges[i])`."""
    indices = np.searchsorted(edges, np.asarray(values, dtype=float), side="right")
    counts = np.bincount(indices, minlength=len(edges) + 1)
    return counts / len(values)


def psi_drift(
    baseline: Sequence[float], current: Sequence[float], n_bins: int = DEFAULT_BINS
) -> float:
    """Computes the PSI of a numeric feature on the baseline's quantile bins.

    Args:
        baseline (Sequence[float]): Reference values; they define the bins.
        current (Sequence[float]): Values to compare.
        n_bins (int): Number of quantile bins, at least 2.

    Returns:
        float: Non-negative PSI; 0 when both batches fill the bins identically.
    """
    _check_inputs(baseline, current)
    edges = quantile_edges(baseline, n_bins)
    return _population_stability(bin_proportions(baseline, edges), bin_proportions(current, edges))


def categorical_levels(baseline: Sequence[str], current: Sequence[str]) -> List[str]:
    """Returns the baseline's levels in first-appearance order, then levels new in current."""
    return list(dict.fromkeys([*baseline, *current]))


def categorical_psi(baseline: Sequence[str], current: Sequence[str]) -> float:
    """Computes the PSI of a categorical feature with one bin per level."""
    _check_inputs(baseline, current)
    levels = categorical_levels(baseline, current)
    expected = pd.Series(list(baseline)).value_counts(normalize=True)
    actual = pd.Series(list(current)).value_counts(normalize=True)
    return _population_stability(
        expected.reindex(levels, fill_value=0.0).to_numpy(),
        actual.reindex(levels, fill_value=0.0).to_numpy(),
    )


def _as_numeric(values: Sequence) -> Optional[np.ndarray]:
    present = [value for value in values if value != ""]
    if not present:
        return None
    numeric = pd.to_numeric(pd.Series(present), errors="coerce")
    if numeric.isna().any():
        return None
    return numeric.to_numpy(dtype=float)


def feature_drift(
    name: str,
    baseline: Sequence,
    current: Sequence,
    n_bins: int = DEFAULT_BINS,
    threshold: float = DEFAULT_THRESHOLD,
) -> FeatureDrift:
    """Measures the drift of one feature, choosing numeric or categorical bins.

    A feature is numeric when every non-empty value of both batches parses as a number; empty
    values are then left out.
    """
    _check_inputs(baseline, current)
    numeric_baseline = _as_numeric(baseline)
    numeric_current = _as_numeric(current)
    if numeric_baseline is not None and numeric_current is not None:
        edges = quantile_edges(numeric_baseline, n_bins)
        psi = _population_stability(
            bin_proportions(numeric_baseline, edges), bin_proportions(numeric_current, edges)
        )
        drift = FeatureDrift(
            feature=name,
            kind=FeatureKind.NUMERIC,
            psi=psi,
            bin_edges=edges.tolist(),
            flagged=psi > threshold,
        )
    else:
        levels = categorical_levels([str(v) for v in baseline], [str(v) for v in current])
        psi = categorical_psi([str(v) for v in baseline], [str(v) for v in current])
        drift = FeatureDrift(
            feature=name,
            kind=FeatureKind.CATEGORICAL,
            psi=psi,
            levels=levels,
            flagged=psi > threshold,
        )
    logger.debug("PSI of %s (%s): %s", name, drift.kind.value, drift.psi)
    return drift


def drift_report(
    baseline: Dict[str, Sequence],
    current: Dict[str, Sequence],
    n_bins: int = DEFAULT_BINS,
    threshold: float = DEFAULT_THRESHOLD,
) -> DriftReport:
    """Measures the drift of every baseline feature.

    Args:
        baseline (Dict[str, Sequence]): Values by feature, in report order.
        current (Dict[str, Sequence]): Values by feature; must cover every baseline feature.
        n_bins (int): Quantile bins for numeric features.
        threshold (float): A feature is flagged when its PSI is above this value.

    Returns:
        DriftReport: Drift per feature.
    """
    if not baseline:
        raise EmptyInputError("No features to compare")
    missing = [name for name in baseline if name not in current]
    if missing:
        raise ConfigurationError(f"Current batch lacks features {missing}")
    report = DriftReport(
        n_bins=n_bins,
        threshold=threshold,
        features=[
            feature_drift(name, baseline[name], current[name], n_bins, threshold)
            for name in baseline
        ],
    )
    if report.flagged:
        logger.warning(
            "Drift above %s in %d of %d features: %s",
            threshold,
            len(report.flagged),
            len(report.features),
            ", ".join(report.flagged),
        )
    return report


def serialize_drift(report: DriftReport) -> bytes:
    """Writes the drift report as a JSON document checked against its JSON schema."""
    document = {
        "n_bins": report.n_bins,
        "threshold": report.threshold,
        "per_feature": report.per_feature,
        "features": [
            drift.model_dump(mode="json", exclude_none=True) for drift in report.features
        ],
        "flagged": report.flagged,
    }
    try:
        validate(instance=document, schema=DRIFT_REPORT_JSON_SCHEMA)
    except exceptions.ValidationError as e:
        raise ConfigurationError(f"Drift report does not match its JSON schema: {e.message}")
    return (json.dumps(document, indent=2) + "\n").encode()
