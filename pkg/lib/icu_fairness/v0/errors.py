# Copyright 2024 ICU Fairness Monitor contributors
# See LICENSE file for licensing details.

"""Exceptions raised by the `icu_fairness` libraries.

Every exception derives from `FairnessMonitorError`; input errors also derive from the closest
builtin, so callers can catch either the library-specific or the generic type. The CLI maps
`FairnessMonitorError` to exit status 1.
"""

from typing import Optional

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version before publishing a change to this library
LIBPATCH = 2


class FairnessMonitorError(Exception):
    """Base class for every user-facing error of the fairness monitor."""


class InputDomainError(FairnessMonitorError, ValueError):
    """An argument is outside its mathematical domain (e.g. a score outside [0, 1])."""


class EmptyInputError(FairnessMonitorError, ValueError):
    """An operation that needs at least one element received none."""


class UndefinedMetricError(FairnessMonitorError, ValueError):
    """A metric is undefined for the given input (e.g. auROC on a single class)."""


class UndefinedAggregateError(FairnessMonitorError, ValueError):
    """Every per-group value of a metric is undefined, so no aggregate exists."""


class ConfigurationError(FairnessMonitorError, ValueError):
    """Inconsistent parameters were supplied to an operation."""


class MissingFeatureError(FairnessMonitorError, LookupError):
    """A record does not carry a value for a requested sensitive feature."""

    def __init__(self, stay_id: str, feature: str):
        super().__init__(f"Stay {stay_id} has no value for sensitive feature `{feature}`")
        self.stay_id = stay_id
        self.feature = feature


class GcsValidationError(FairnessMonitorError, ValueError):
    """A Glasgow Coma Scale value is outside its valid range."""

    def __init__(self, stay_id: str, reason: str):
        super().__init__(f"Invalid GCS for stay {stay_id}: {reason}")
        self.stay_id = stay_id
        self.reason = reason


class JoinError(FairnessMonitorError, LookupError):
    """An identifier could not be matched while joining two inputs."""

    def __init__(self, identifier: str, kind: str):
        super().__init__(f"No {kind} found for `{identifier}`")
        self.identifier = identifier
        self.kind = kind


class InputFileError(FairnessMonitorError, ValueError):
    """A row of an input file could not be parsed."""

    def __init__(
        self, path: str, message: str, line: Optional[int] = None, field: Optional[str] = None
    ):
        location = path if line is None else f"{path}, line {line}"
        if field:
            location = f"{location}, field `{field}`"
        super().__init__(f"{location}: {message}")
        self.path = path
        self.line = line
        self.field = field


class ReportWriteError(FairnessMonitorError):
    """An output file could not be written."""

    def __init__(self, path: str, reason: str):
        super().__init__(f"Could not write {path}: {reason}")
        self.path = path
        self.reason = reason


class DuplicateIdentifierError(FairnessMonitorError, ValueError):
    """An identifier that must be unique appears more than once in one input."""

    def __init__(self, identifier: str, kind: str):
        super().__init__(f"{kind} `{identifier}` appears more than once")
        self.identifier = identifier
        self.kind = kind
