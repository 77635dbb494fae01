# Copyright 2024 ICU Fairness Monitor contributors
# See LICENSE file for licensing details.

"""Text rendering of metric values and thresholds shared by every CSV the monitor writes."""

from typing import Optional

from icu_fairness.v0.core_metrics import UNDEFINED

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version before publishing a change to this library
LIBPATCH = 1

VALUE_FORMAT = "#.9g"


def format_value(value: Optional[float]) -> str:
    """Renders a metric value with 9 significant digits, or `undefined`."""
    if value is None:
        return UNDEFINED
    return format(value, VALUE_FORMAT)


def format_threshold(threshold: Optional[float]) -> str:
    """Renders a threshold as the shortest text that reads back as the same float.

    Args:
        threshold (float, optional): Decision threshold, or None for rows that do not use one.

    Returns:
        str: e.g. `0.05` or `0.12345678`; an empty field for None.
    """
    return "" if threshold is None else repr(float(threshold))
