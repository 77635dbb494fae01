# Copyright 2024 ICU Fairness Monitor contributors
# See LICENSE file for licensing details.

import json
import tempfile
import unittest
from io import StringIO
from pathlib import Path
from unittest.mock import patch

import pandas as pd

from cli import CONFIG_FILE_PATH, load_options, main
from icu_fairness.v0.schema_report import content_digest

EXPECTED_REPORT_DIR = Path(__file__).parent / "expected_report"
PREDICTIONS_PATH = str(EXPECTED_REPORT_DIR / "predictions.csv")


class TestCLI(unittest.TestCase):
    def setUp(self):
        temporary_directory = tempfile.TemporaryDirectory()
        self.addCleanup(temporary_directory.cleanup)
        self.tmp = Path(temporary_directory.name)
        stdout_patcher = patch("sys.stdout", new_callable=StringIO)
        self.stdout = stdout_patcher.start()
        self.addCleanup(stdout_patcher.stop)

    @staticmethod
    def _read_file(path: Path) -> str:
        """Reads a file and returns as a string.

        Args:
            path (Path): path to the file.

        Returns:
            str: content of the file.
        """
        with open(path, "r") as f:
            content = f.read()
        return content

    def _write_file(self, name: str, content: str) -> str:
        path = self.tmp / name
        path.write_text(content)
        return str(path)

    def _out(self, name: str = "out.csv") -> str:
        return str(self.tmp / name)

    def test_given_predictions_when_report_then_output_matches_expected_report(self):
        out = self._out()

        exit_code = main(
            [
                "report",
                "--input",
                PREDICTIONS_PATH,
                "--features",
                "catSex,race",
                "--reproducible",
                "--out",
                out,
            ]
        )

        self.assertEqual(exit_code, 0)
        self.assertEqual(
            self._read_file(Path(out)), self._read_file(EXPECTED_REPORT_DIR / "report.csv")
        )
        self.assertIn(
            "Schema report: 43 rows over 8 stays at threshold 0.05", self.stdout.getvalue()
        )

    def test_given_one_feature_when_report_then_twenty_three_rows_are_written(self):
        out = self._out()

        exit_code = main(
            ["report", "--input", PREDICTIONS_PATH, "--features", "catSex", "--out", out]
        )

        self.assertEqual(exit_code, 0)
        self.assertEqual(len(pd.read_csv(out)), 23)

    def test_given_no_features_when_report_then_only_overall_block_is_written(self):
        out = self._out()

        self.assertEqual(main(["report", "--input", PREDICTIONS_PATH, "--out", out]), 0)

        self.assertEqual(len(self._read_file(Path(out)).splitlines()), 8)
        self.assertIn("none, overall block only", self.stdout.getvalue())

    def test_given_json_format_when_report_then_document_carries_digest_and_timestamp(self):
        out = self._out("report.json")

        exit_code = main(
            ["report", "--input", PREDICTIONS_PATH, "--format", "json", "--out", out]
        )

        document = json.loads(self._read_file(Path(out)))
        self.assertEqual(exit_code, 0)
        self.assertEqual(
            document["input_digest"], content_digest(Path(PREDICTIONS_PATH).read_bytes())
        )
        self.assertIn("generated_at", document)
        self.assertEqual(len(document["rows"]), 7)

    def test_given_missing_feature_column_when_report_then_exit_code_is_one_and_column_is_named(
        self,
    ):
        with self.assertLogs("cli", level="ERROR") as logs:
            exit_code = main(
                [
                    "report",
                    "--input",
                    PREDICTIONS_PATH,
                    "--features",
                    "catSex,missingCol",
                    "--out",
                    self._out(),
                ]
            )

        self.assertEqual(exit_code, 1)
        self.assertIn(
            f"{PREDICTIONS_PATH}, line 1, field `missingCol`: missing column", logs.output[0]
        )
        self.assertFalse(Path(self._out()).exists())

    def test_given_score_out_of_range_when_report_then_error_names_line_and_field(self):
        predictions = self._write_file(
            "predictions.csv", "stay_id,score,outcome\na,0.1,0\nb,1.7,1\n"
        )

        with self.assertLogs("cli", level="ERROR") as logs:
            exit_code = main(["report", "--input", predictions, "--out", self._out()])

        self.assertEqual(exit_code, 1)
        self.assertIn("line 3, field `score`", logs.output[0])

    def test_given_empty_feature_level_when_report_then_error_names_line_and_feature_column(self):
        predictions = self._write_file(
            "predictions.csv", "stay_id,score,outcome,catSex\na,0.1,0,Female\nb,0.7,1,\n"
        )

        with self.assertLogs("cli", level="ERROR") as logs:
            exit_code = main(
                ["report", "--input", predictions, "--features", "catSex", "--out", self._out()]
            )

        self.assertEqual(exit_code, 1)
        self.assertIn("line 3, field `catSex`: empty sensitive feature level", logs.output[0])

    def test_given_input_that_is_not_utf8_when_report_then_exit_code_is_one_and_file_is_named(
        self,
    ):
        path = self.tmp / "predictions.csv"
        path.write_bytes(b"stay_id,score,outcome\na,0.1,0\n\xff\xfe,0.2,1\n")

        with self.assertLogs("cli", level="ERROR") as logs:
            exit_code = main(["report", "--input", str(path), "--out", self._out()])

        self.assertEqual(exit_code, 1)
        self.assertIn(f"{path}: not UTF-8 text", logs.output[0])
        self.assertFalse(Path(self._out()).exists())

    def test_given_missing_input_file_when_report_then_exit_code_is_one(self):
        exit_code = main(["report", "--input", str(self.tmp / "nope.csv"), "--out", self._out()])

        self.assertEqual(exit_code, 1)

    def test_given_threshold_above_one_when_report_then_exit_code_is_two(self):
        with self.assertLogs("cli", level="ERROR") as logs:
            exit_code = main(
                ["report", "--input", PREDICTIONS_PATH, "--threshold", "1.5", "--out", self._out()]
            )

        self.assertEqual(exit_code, 2)
        self.assertIn("The following configurations are not valid: ['threshold']", logs.output[0])

    def test_given_config_file_when_report_then_its_options_override_defaults(self):
        config = self._write_file("override.yaml", "options:\n  threshold: 0.5\n")
        out = self._out()

        exit_code = main(["report", "--input", PREDICTIONS_PATH, "--config", config, "--out", out])

        frame = pd.read_csv(out, dtype=str, keep_default_na=False)
        self.assertEqual(exit_code, 0)
        self.assertEqual(frame.loc[frame["metric"] == "selection rate", "threshold"].item(), "0.5")

    def test_given_unknown_option_in_config_file_when_report_then_exit_code_is_two(self):
        config = self._write_file("override.yaml", "options:\n  psi-window: 3\n")

        exit_code = main(
            ["report", "--input", PREDICTIONS_PATH, "--config", config, "--out", self._out()]
        )

        self.assertEqual(exit_code, 2)

    def test_given_config_file_without_options_mapping_when_report_then_exit_code_is_two(self):
        config = self._write_file("override.yaml", "- threshold\n")

        with self.assertLogs("cli", level="ERROR") as logs:
            exit_code = main(
                ["report", "--input", PREDICTIONS_PATH, "--config", config, "--out", self._out()]
            )

        self.assertEqual(exit_code, 2)
        self.assertIn("has no `options` mapping", logs.output[0])

    def test_given_seed_beyond_64_bits_when_simulate_then_exit_code_is_two(self):
        with self.assertLogs("cli", level="ERROR") as logs:
            exit_code = main(
                ["simulate", "--seed", str(2**64), "--n-icus", "2", "--out", self._out()]
            )

        self.assertEqual(exit_code, 2)
        self.assertIn("The following configurations are not valid: ['seed']", logs.output[0])
        self.assertFalse(Path(self._out()).exists())

    def test_given_unknown_subcommand_when_run_then_exit_code_is_two(self):
        with patch("sys.stderr", new_callable=StringIO):
            self.assertEqual(main(["audit"]), 2)

    def test_given_output_path_is_a_directory_when_report_then_exit_code_is_one(self):
        exit_code = main(["report", "--input", PREDICTIONS_PATH, "--out", str(self.tmp)])

        self.assertEqual(exit_code, 1)

    def test_given_same_seed_when_simulate_twice_then_outputs_are_identical(self):
        arguments = ["simulate", "--seed", "3", "--n-icus", "4", "--stays-per-icu", "25"]

        self.assertEqual(main([*arguments, "--out", self._out("a.csv")]), 0)
        self.assertEqual(main([*arguments, "--out", self._out("b.csv")]), 0)

        first = self._read_file(Path(self._out("a.csv")))
        self.assertEqual(first, self._read_file(Path(self._out("b.csv"))))
        self.assertEqual(len(first.splitlines()), 101)

    def test_given_stays_and_predictions_when_derive_gcs3_then_bucket_column_is_appended(self):
        stays = self._write_file(
            "stays.csv",
            "stay_id,icu_id,gcs_total\n"
            "icu001-s0001,icu001,3\nicu001-s0002,icu001,3\n"
            "icu001-s0003,icu001,\nicu001-s0004,icu001,15\n"
            "icu002-s0001,icu002,15\nicu002-s0002,icu002,14\n"
            "icu002-s0003,icu002,13\nicu002-s0004,icu002,12\n",
        )
        out = self._out()
        profiles_out = self._out("profiles.csv")

        exit_code = main(
            [
                "derive-gcs3",
                "--stays",
                stays,
                "--preds",
                PREDICTIONS_PATH,
                "--out",
                out,
                "--profiles-out",
                profiles_out,
            ]
        )

        frame = pd.read_csv(out, dtype=str)
        self.assertEqual(exit_code, 0)
        self.assertEqual(frame["GCS3"].tolist(), ["highGCS3"] * 4 + ["lowGCS3"] * 4)
        self.assertEqual(len(pd.read_csv(profiles_out)), 2)
        self.assertIn("2 ICUs bucketed from 8 stays", self.stdout.getvalue())

    def test_given_prediction_without_stay_when_derive_gcs3_then_exit_code_is_one(self):
        stays = self._write_file("stays.csv", "stay_id,icu_id,gcs_total\nicu001-s0001,icu001,3\n")

        with self.assertLogs("cli", level="ERROR") as logs:
            exit_code = main(
                [
                    "derive-gcs3",
                    "--stays",
                    stays,
                    "--preds",
                    PREDICTIONS_PATH,
                    "--out",
                    self._out(),
                ]
            )

        self.assertEqual(exit_code, 1)
        self.assertIn("No GCS stay record found for `icu001-s0002`", logs.output[0])

    def test_given_shifted_batch_when_drift_then_shifted_column_is_flagged(self):
        sexes = ["Female", "Non-Female"] * 50
        baseline = self._write_file(
            "baseline.csv",
            "stay_id,severity,sex\n"
            + "".join(f"s{i},{i / 100},{sex}\n" for i, sex in enumerate(sexes)),
        )
        current = self._write_file(
            "current.csv",
            "stay_id,severity,sex\n"
            + "".join(f"s{i},{i / 100 + 5},{sex}\n" for i, sex in enumerate(sexes)),
        )
        out = self._out("drift.json")

        exit_code = main(["drift", "--baseline", baseline, "--current", current, "--out", out])

        document = json.loads(self._read_file(Path(out)))
        self.assertEqual(exit_code, 0)
        self.assertEqual(list(document["per_feature"]), ["severity", "sex"])
        self.assertEqual(document["flagged"], ["severity"])
        self.assertIn("Flagged: severity", self.stdout.getvalue())

    def test_given_two_score_columns_when_compare_then_one_value_column_per_label_is_written(self):
        frame = pd.read_csv(PREDICTIONS_PATH, dtype=str)
        frame["score_half"] = (frame["score"].astype(float) / 2).map(repr)
        predictions = self._write_file("two_scores.csv", frame.to_csv(index=False))
        out = self._out()

        exit_code = main(
            [
                "compare",
                "--input",
                predictions,
                "--score-columns",
                "score,score_half",
                "--labels",
                "legacy,robust",
                "--features",
                "catSex",
                "--out",
                out,
            ]
        )

        lines = self._read_file(Path(out)).splitlines()
        self.assertEqual(exit_code, 0)
        self.assertEqual(
            lines[0], "metric,legacy,robust,sensitive_feature,feature_level,threshold"
        )
        self.assertEqual(lines[2], "selection rate,0.625000000,0.500000000,,,0.05")
        self.assertEqual(len(lines), 24)

    def test_given_labels_not_matching_columns_when_compare_then_exit_code_is_one(self):
        exit_code = main(
            [
                "compare",
                "--input",
                PREDICTIONS_PATH,
                "--score-columns",
                "score,score",
                "--labels",
                "only",
                "--out",
                self._out(),
            ]
        )

        self.assertEqual(exit_code, 1)


class TestLoadOptions(unittest.TestCase):
    def test_given_config_yaml_when_load_options_then_defaults_are_keyed_by_field_name(self):
        options = load_options(CONFIG_FILE_PATH)

        self.assertEqual(options["threshold"], 0.05)
        self.assertEqual(options["psi_bins"], 10)
        self.assertEqual(options["gcs_column"], "gcs_total")
