"""
Tests for the command-line entrypoint.
"""

import io
import json
import tempfile
import unittest
from contextlib import redirect_stdout
from pathlib import Path
from unittest.mock import patch

from beliefsignal.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


class TestCli(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def _main(self, *argv):
        out = io.StringIO()
        with redirect_stdout(out):
            code = main(list(argv))
        return code, out.getvalue()

    def _small_config(self, **overrides):
        document = {
            "intersection": str(CONFIGS / "cross4_2phase.json"),
            "controllers": ["fixed-time", "queue-proxy"],
            "scenarios": [
                {"name": "calm", "class": "S1", "horizon_s": 30, "trials": 2},
                {"name": "foggy", "class": "S3", "horizon_s": 30, "trials": 2},
            ],
            "seed": 5,
            **overrides,
        }
        path = self.dir / "experiment.json"
        path.write_text(json.dumps(document))
        return str(path)

    def test_validate_shipped_config(self):
        config = str(CONFIGS / "experiment.json")
        code, out = self._main("validate", "--config", config)
        self.assertEqual(code, 0)
        self.assertIn(f"{config} is valid.", out)

    def test_validate_reports_violations(self):
        config = self._small_config(settings={"csmpc": {"tau_max": 30.0}})
        code, out = self._main("validate", "--config", config)
        self.assertEqual(code, 1)
        self.assertIn("[INVALID] tau_max", out)

    def test_missing_config(self):
        code, out = self._main("validate", "--config", str(self.dir / "missing.json"))
        self.assertEqual(code, 1)
        self.assertIn("Configuration Error:", out)

    def test_run_then_report(self):
        config = self._small_config()
        results = str(self.dir / "results")
        code, out = self._main(
            "run", "--config", config, "--out", results, "--scenario", "foggy", "--trials", "1"
        )
        self.assertEqual(code, 0)
        self.assertIn("Running 2 episodes into", out)
        self.assertIn("Done: 2/2 ok.", out)
        with open(Path(results) / "summary.json") as f:
            summary = json.load(f)
        self.assertEqual({c["scenario"] for c in summary["cells"]}, {"foggy"})

        code, out = self._main("report", "--out", results)
        self.assertEqual(code, 0)
        self.assertIn("Report written to", out)
        self.assertTrue((Path(results) / "report.txt").exists())

    # Overrides reach run_experiment without running anything
    @patch("beliefsignal.cli.run_experiment")
    def test_run_overrides(self, run_experiment):
        run_experiment.return_value = {"cells": [{}] * 3, "failures": []}
        code, out = self._main(
            "run",
            "--config",
            self._small_config(),
            "--controller",
            "csmpc:no-hold",
            "--seed",
            "99",
            "--trials",
            "3",
            "--scenario",
            "calm",
        )
        self.assertEqual(code, 0)
        experiment = run_experiment.call_args.args[0]
        self.assertEqual(experiment.seed, 99)
        self.assertEqual([e.label for e in experiment.controllers], ["csmpc[no-hold]"])
        self.assertEqual([(s.label, s.trials) for s in experiment.scenarios], [("calm", 3)])
        self.assertIn("Done: 3/3 ok.", out)

    @patch("beliefsignal.cli.run_experiment")
    def test_failed_cells_exit_nonzero(self, run_experiment):
        failure = {"controller": "csmpc", "scenario": "calm", "trial": 0, "error": "boom"}
        run_experiment.return_value = {"cells": [failure, {}], "failures": [failure]}
        code, out = self._main("run", "--config", self._small_config())
        self.assertEqual(code, 1)
        self.assertIn("[FAILED] csmpc calm trial 0", out)
        self.assertIn("Done: 1/2 ok.", out)

    def test_bad_overrides(self):
        config = self._small_config()
        code, out = self._main("run", "--config", config, "--scenario", "rainy")
        self.assertEqual((code, "Configuration Error" in out), (1, True))
        code, out = self._main("run", "--config", config, "--trials", "0")
        self.assertEqual((code, "Configuration Error" in out), (1, True))
        code, out = self._main("run", "--config", config, "--controller", "warp-drive")
        self.assertEqual((code, "Configuration Error" in out), (1, True))

    def test_report_without_run(self):
        code, out = self._main("report", "--out", str(self.dir / "nothing"))
        self.assertEqual(code, 1)
        self.assertIn("Report Error:", out)


if __name__ == "__main__":
    unittest.main()
