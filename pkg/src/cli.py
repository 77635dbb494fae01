#!/usr/bin/env python3
# Copyright 2024 ICU Fairness Monitor contributors
# See LICENSE file for licensing details.

"""Command-line entry point of the ICU fairness monitor."""

import argparse
import logging
import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence

import pandas as pd
import yaml
from jinja2 import Environment, FileSystemLoader
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from icu_fairness.v0.cohort_sim import CohortConfig, serialize_cohort, simulate_cohort
from icu_fairness.v0.core_metrics import PredictionRecord
from icu_fairness.v0.doc_bias import (
    GCS3_FEATURE,
    Gcs3Bucket,
    bucket_icus,
    icu_gcs3_rates,
    serialize_profiles,
    stay_buckets,
    stays_from_frame,
)
from icu_fairness.v0.drift_monitor import drift_report, serialize_drift
from icu_fairness.v0.errors import (
    ConfigurationError,
    FairnessMonitorError,
    InputFileError,
    JoinError,
    ReportWriteError,
)
from icu_fairness.v0.group_fairness import SensitiveFeatureSpec
from icu_fairness.v0.schema_report import (
    SchemaReport,
    build_schema,
    compare_schemas,
    content_digest,
    serialize_comparison,
    serialize_schema,
)

logger = logging.getLogger(__name__)

CONFIG_FILE_PATH = Path(__file__).resolve().parent.parent / "config.yaml"
TEMPLATE_DIR_PATH = Path(__file__).resolve().parent / "templates"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
STAY_ID_COLUMN = "stay_id"

EXIT_SUCCESS = 0
EXIT_DATA_ERROR = 1
EXIT_USAGE_ERROR = 2


class RunConfig(BaseModel):
    """Merged configuration of one invocation."""

    model_config = ConfigDict(extra="forbid")

    threshold: float = Field(ge=0.0, le=1.0)
    psi_threshold: float = Field(ge=0.0)
    psi_bins: int = Field(ge=2)
    format: Literal["csv", "json"]
    seed: int = Field(ge=0, lt=2**64)
    n_icus: int = Field(gt=0)
    stays_per_icu: int = Field(gt=0)
    sedation_rate: float = Field(ge=0.0, le=1.0)
    score_column: str = Field(min_length=1)
    outcome_column: str = Field(min_length=1)
    gcs_column: str = Field(min_length=1)


def _option_name(key: str) -> str:
    return key.replace("_", "-")


def _field_name(option: str) -> str:
    return option.replace("-", "_")


def load_options(path: Path) -> Dict[str, Any]:
    """Reads the `options` of a config file.

    An option is either a bare value or a mapping with a `default` entry, as in `config.yaml`.

    Args:
        path (Path): YAML file with an `options` mapping.

    Returns:
        dict: Option values keyed by field name (`psi-bins` becomes `psi_bins`).
    """
    with open(path) as config_file:
        content = yaml.safe_load(config_file) or {}
    options = (content.get("options") or {}) if isinstance(content, dict) else None
    if not isinstance(options, dict):
        raise ConfigurationError(f"{path} has no `options` mapping")
    return {
        _field_name(name): value.get("default") if isinstance(value, dict) else value
        for name, value in options.items()
    }


def _split(value: Optional[str]) -> List[str]:
    if not value:
        return []
    return [item.strip() for item in value.split(",") if item.strip()]


def _column_of(location: tuple, score_column: str, outcome_column: str) -> str:
    return {"score": score_column, "outcome": outcome_column}.get(
        str(location[0]), str(location[0])
    )


class FairnessMonitorCLI:
    """Parses arguments, merges configuration and dispatches to the subcommand handlers."""

    def __init__(self) -> None:
        self._parser = self._build_parser()
        self._handlers = {
            "report": self._on_report,
            "derive-gcs3": self._on_derive_gcs3,
            "simulate": self._on_simulate,
            "drift": self._on_drift,
            "compare": self._on_compare,
        }

    def run(self, argv: Optional[Sequence[str]] = None) -> int:
        """Runs one invocation.

        Args:
            argv (Sequence[str], optional): Arguments without the program name.

        Returns:
            int: 0 on success, 1 on data errors, 2 on usage or configuration errors.
        """
        try:
            args = self._parser.parse_args(argv)
        except SystemExit as e:
            return EXIT_SUCCESS if e.code in (0, None) else EXIT_USAGE_ERROR
        self._configure_logging(args.log_level)
        try:
            config = self._merged_config(args)
        except (OSError, UnicodeDecodeError, yaml.YAMLError, ConfigurationError) as e:
            logger.error("Could not read configuration: %s", e)
            return EXIT_USAGE_ERROR
        if invalid_configs := self._get_invalid_configs(config):
            logger.error("The following configurations are not valid: %s", invalid_configs)
            return EXIT_USAGE_ERROR
        run_config = RunConfig(**config)
        try:
            self._handlers[args.subcommand](args, run_config)
        except FairnessMonitorError as e:
            logger.error("%s", e)
            return EXIT_DATA_ERROR
        return EXIT_SUCCESS

    @staticmethod
    def _configure_logging(level: str) -> None:
        logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)

    @staticmethod
    def _build_parser() -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(
            prog="icu-fairness", description="Fairness auditing of ICU mortality predictions."
        )
        common = argparse.ArgumentParser(add_help=False)
        common.add_argument("--config", help="YAML file overriding config.yaml options.")
        common.add_argument(
            "--log-level",
            default="INFO",
            choices=["DEBUG", "INFO", "WARNING", "ERROR"],
            help="Verbosity of the log written to stderr.",
        )
        subparsers = parser.add_subparsers(dest="subcommand", required=True)

        report = subparsers.add_parser(
            "report", parents=[common], help="Build the fairness schema report."
        )
        report.add_argument("--input", required=True, help="Predictions CSV.")
        report.add_argument("--features", help="Comma-separated sensitive feature columns.")
        report.add_argument("--threshold", type=float)
        report.add_argument("--format", choices=["csv", "json"])
        report.add_argument("--score-column")
        report.add_argument("--outcome-column")
        report.add_argument("--reproducible", action="store_true", help="Omit the timestamp.")
        report.add_argument("--out", required=True)

        derive = subparsers.add_parser(
            "derive-gcs3", parents=[common], help="Attach the GCS3 feature to predictions."
        )
        derive.add_argument("--stays", required=True, help="Stays CSV with recorded GCS.")
        derive.add_argument("--preds", required=True, help="Predictions CSV.")
        derive.add_argument("--gcs-column")
        derive.add_argument("--profiles-out", help="Also write the bucketed ICU profiles.")
        derive.add_argument("--out", required=True)

        simulate = subparsers.add_parser(
            "simulate", parents=[common], help="Write a simulated cohort."
        )
        simulate.add_argument("--seed", type=int)
        simulate.add_argument("--n-icus", type=int)
        simulate.add_argument("--stays-per-icu", type=int)
        simulate.add_argument("--sedation-rate", type=float)
        simulate.add_argument("--out", required=True)

        drift = subparsers.add_parser(
            "drift", parents=[common], help="Compare two batches of input features."
        )
        drift.add_argument("--baseline", required=True)
        drift.add_argument("--current", required=True)
        drift.add_argument("--features", help="Comma-separated columns; default all shared.")
        drift.add_argument("--psi-bins", type=int)
        drift.add_argument("--psi-threshold", type=float)
        drift.add_argument("--out", required=True)

        compare = subparsers.add_parser(
            "compare", parents=[common], help="Compare the schema reports of several scorers."
        )
        compare.add_argument("--input", required=True, help="Predictions CSV.")
        compare.add_argument("--score-columns", required=True, help="Comma-separated columns.")
        compare.add_argument("--labels", help="Comma-separated labels, one per score column.")
        compare.add_argument("--features", help="Comma-separated sensitive feature columns.")
        compare.add_argument("--threshold", type=float)
        compare.add_argument("--format", choices=["csv", "json"])
        compare.add_argument("--outcome-column")
        compare.add_argument("--out", required=True)
        return parser

    @staticmethod
    def _merged_config(args: argparse.Namespace) -> Dict[str, Any]:
        """Merges config.yaml defaults, the `--config` file and command-line flags.

        Args:
            args (Namespace): Parsed arguments.

        Returns:
            dict: Configuration values keyed by field name, flags taking precedence.
        """
        config = load_options(CONFIG_FILE_PATH)
        if args.config:
            config.update(load_options(Path(args.config)))
        for name in RunConfig.model_fields:
            if (value := getattr(args, name, None)) is not None:
                config[name] = value
        return config

    @staticmethod
    def _get_invalid_configs(config: Dict[str, Any]) -> List[str]:
        """Returns the names of the invalid configuration options.

        Returns:
            list: Option names as written in config.yaml.
        """
        try:
            RunConfig(**config)
        except ValidationError as e:
            return sorted({_option_name(str(error["loc"][0])) for error in e.errors()})
        return []

    def _on_report(self, args: argparse.Namespace, config: RunConfig) -> None:
        """Builds the schema report of one score column."""
        features = _split(args.features)
        records = self._read_predictions(
            args.input, config.score_column, config.outcome_column, features
        )
        report = self._build_report(args.input, records, features, config, args.reproducible)
        self._write(args.out, serialize_schema(report, config.format))
        self._print_summary(
            "report.txt.j2",
            row_count=len(report.rows),
            record_count=len(records),
            threshold=config.threshold,
            features=[(spec.name, len(spec.levels)) for spec in self._specs(records, features)],
            output_path=args.out,
            output_format=config.format,
        )

    def _on_derive_gcs3(self, args: argparse.Namespace, config: RunConfig) -> None:
        """Buckets ICUs by GCS=3 rate and appends the bucket to the predictions as `GCS3`."""
        stays = stays_from_frame(self._read_csv(args.stays), args.stays, config.gcs_column)
        profiles = bucket_icus(icu_gcs3_rates(stays))
        buckets = stay_buckets(stays, profiles)
        predictions = self._read_csv(args.preds)
        if STAY_ID_COLUMN not in predictions.columns:
            raise InputFileError(args.preds, "missing column", line=1, field=STAY_ID_COLUMN)
        if GCS3_FEATURE in predictions.columns:
            logger.warning("Replacing the existing %s column of %s", GCS3_FEATURE, args.preds)
        unmatched = predictions.loc[~predictions[STAY_ID_COLUMN].isin(buckets), STAY_ID_COLUMN]
        if not unmatched.empty:
            raise JoinError(unmatched.iloc[0], "GCS stay record")
        predictions[GCS3_FEATURE] = predictions[STAY_ID_COLUMN].map(buckets)
        self._write(args.out, predictions.to_csv(index=False, lineterminator="\n").encode())
        if args.profiles_out:
            self._write(args.profiles_out, serialize_profiles(profiles))
        self._print_summary(
            "derive_gcs3.txt.j2",
            icu_count=len(profiles),
            stay_count=len(stays),
            bucket_counts=[
                (bucket.value, sum(profile.bucket is bucket for profile in profiles))
                for bucket in (Gcs3Bucket.HIGH, Gcs3Bucket.MED, Gcs3Bucket.LOW)
            ],
            output_path=args.out,
            profiles_path=args.profiles_out,
        )

    def _on_simulate(self, args: argparse.Namespace, config: RunConfig) -> None:
        """Writes a simulated cohort with both scorers."""
        cohort_config = CohortConfig(
            seed=config.seed,
            n_icus=config.n_icus,
            stays_per_icu=config.stays_per_icu,
            sedation_rate=config.sedation_rate,
        )
        stays = simulate_cohort(cohort_config)
        self._write(args.out, serialize_cohort(stays, cohort_config))
        self._print_summary(
            "simulate.txt.j2",
            stay_count=len(stays),
            icu_count=cohort_config.n_icus,
            seed=cohort_config.seed,
            output_path=args.out,
        )

    def _on_drift(self, args: argparse.Namespace, config: RunConfig) -> None:
        """Measures the PSI of every compared column."""
        baseline = self._read_csv(args.baseline)
        current = self._read_csv(args.current)
        features = _split(args.features) or [
            column
            for column in baseline.columns
            if column in current.columns and column != STAY_ID_COLUMN
        ]
        if not features:
            raise InputFileError(args.current, f"no column in common with {args.baseline}")
        for path, frame in ((args.baseline, baseline), (args.current, current)):
            for feature in features:
                if feature not in frame.columns:
                    raise InputFileError(path, "missing column", line=1, field=feature)
        report = drift_report(
            {feature: baseline[feature].tolist() for feature in features},
            {feature: current[feature].tolist() for feature in features},
            n_bins=config.psi_bins,
            threshold=config.psi_threshold,
        )
        self._write(args.out, serialize_drift(report))
        self._print_summary(
            "drift.txt.j2",
            features=list(report.per_feature.items()),
            n_bins=report.n_bins,
            threshold=report.threshold,
            flagged=report.flagged,
            output_path=args.out,
        )

    def _on_compare(self, args: argparse.Namespace, config: RunConfig) -> None:
        """Lays the schema reports of several score columns side by side."""
        score_columns = _split(args.score_columns)
        labels = _split(args.labels) or score_columns
        if len(score_columns) < 2 or len(labels) != len(score_columns):
            raise ConfigurationError(
                "--score-columns needs two or more columns and --labels one label per column"
            )
        features = _split(args.features)
        reports = {}
        for label, score_column in zip(labels, score_columns):
            records = self._read_predictions(
                args.input, score_column, config.outcome_column, features
            )
            reports[label] = self._build_report(args.input, records, features, config, True)
        comparison = compare_schemas(reports)
        self._write(args.out, serialize_comparison(comparison, config.format))
        self._print_summary(
            "compare.txt.j2",
            labels=comparison.labels,
            row_count=len(comparison.rows),
            threshold=config.threshold,
            output_path=args.out,
            output_format=config.format,
        )

    def _build_report(
        self,
        path: str,
        records: List[PredictionRecord],
        features: List[str],
        config: RunConfig,
        reproducible: bool,
    ) -> SchemaReport:
        return build_schema(
            records,
            self._specs(records, features),
            config.threshold,
            input_digest=content_digest(Path(path).read_bytes()),
            generated_at=None if reproducible else datetime.now(timezone.utc),
        )

    @staticmethod
    def _specs(
        records: List[PredictionRecord], features: List[str]
    ) -> List[SensitiveFeatureSpec]:
        return [SensitiveFeatureSpec.from_records(feature, records) for feature in features]

    @staticmethod
    def _read_csv(path: str) -> pd.DataFrame:
        """Reads a CSV file as strings; empty fields stay empty strings.

        Raises:
            InputFileError: if the file cannot be read or parsed.
        """
        try:
            return pd.read_csv(path, dtype=str, keep_default_na=False)
        except pd.errors.EmptyDataError:
            raise InputFileError(path, "file is empty")
        except pd.errors.ParserError as e:
            raise InputFileError(path, f"not a valid CSV file: {e}")
        except UnicodeDecodeError as e:
            raise InputFileError(path, f"not UTF-8 text at byte {e.start}: {e.reason}")
        except OSError as e:
            raise InputFileError(path, f"cannot be read: {e.strerror or e}")

    def _read_predictions(
        self, path: str, score_column: str, outcome_column: str, features: List[str]
    ) -> List[PredictionRecord]:
        """Parses a predictions file into validated records.

        Args:
            path (str): Predictions CSV.
            score_column (str): Column holding the score.
            outcome_column (str): Column holding the outcome.
            features (List[str]): Sensitive feature columns.

        Returns:
            List[PredictionRecord]: One record per row.

        Raises:
            InputFileError: naming the file, line and field of the first invalid value.
        """
        frame = self._read_csv(path)
        for column in [STAY_ID_COLUMN, score_column, outcome_column, *features]:
            if column not in frame.columns:
                raise InputFileError(path, "missing column", line=1, field=column)
        if frame.empty:
            raise InputFileError(path, "no prediction rows")
        records = []
        for position, row in enumerate(frame.to_dict("records")):
            for feature in features:
                if not row[feature]:
                    raise InputFileError(
                        path, "empty sensitive feature level", line=position + 2, field=feature
                    )
            try:
                records.append(
                    PredictionRecord(
                        stay_id=row[STAY_ID_COLUMN],
                        score=row[score_column],
                        outcome=row[outcome_column],
                        features={feature: row[feature] for feature in features},
                    )
                )
            except ValidationError as e:
                error = e.errors()[0]
                raise InputFileError(
                    path,
                    error["msg"],
                    line=position + 2,
                    field=_column_of(error["loc"], score_column, outcome_column),
                )
        logger.info("Read %d predictions from %s", len(records), path)
        return records

    @staticmethod
    def _write(path: str, content: bytes) -> None:
        """Writes a file atomically through a temporary file in the same directory.

        Raises:
            ReportWriteError: if the file cannot be written.
        """
        target = Path(path)
        temporary_path = None
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            with tempfile.NamedTemporaryFile(
                dir=target.parent, prefix=f".{target.name}.", delete=False
            ) as temporary_file:
                temporary_path = temporary_file.name
                temporary_file.write(content)
            os.replace(temporary_path, target)
        except OSError as e:
            if temporary_path and os.path.exists(temporary_path):
                os.remove(temporary_path)
            raise ReportWriteError(path, e.strerror or str(e))
        logger.info("Wrote %s", path)

    @staticmethod
    def _render_summary(template_name: str, **context: Any) -> str:
        """Renders a console summary.

        Args:
            template_name (str): Template under `src/templates`.
            context: Values of the template.

        Returns:
            str: Rendered summary.
        """
        jinja2_environment = Environment(loader=FileSystemLoader(TEMPLATE_DIR_PATH))
        template = jinja2_environment.get_template(template_name)
        return template.render(**context)

    def _print_summary(self, template_name: str, **context: Any) -> None:
        print(self._render_summary(template_name, **context).rstrip("\n"))


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Runs the command line and returns its exit status."""
    return FairnessMonitorCLI().run(argv)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
