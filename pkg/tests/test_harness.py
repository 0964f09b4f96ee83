"""
Tests for closed-loop episodes, the episode auditor and experiment sweeps.
"""

import json
import tempfile
import unittest
from pathlib import Path

import pandas as pd

from beliefsignal.config import ExperimentConfig, ScenarioSpec
from beliefsignal.controllers import ControllerEntry
from beliefsignal.harness import (
    SUMMARY_FILE,
    TABLE_METRICS,
    _cell_name,
    aggregate,
    audit_episode,
    cell_seed,
    report,
    run_episode,
    run_experiment,
)
from beliefsignal.intersection import standard_cross
from beliefsignal.microsim import DemandProfile
from beliefsignal.sensor import ScenarioClass


LIGHT = DemandProfile(approach_rates=(3.0, 2.0, 3.0, 2.0))
HEAVY = DemandProfile(approach_rates=(14.0, 10.0, 14.0, 10.0), drift_amplitude=0.2)


def frozen_clock():
    return 0.0


class TestRunEpisode(unittest.TestCase):
    def setUp(self):
        self.intersection = standard_cross(4)

    def episode(self, kind="fixed-time", horizon_s=60.0, seed=1, **fields):
        scenario = ScenarioSpec(horizon_s=horizon_s, trials=1, **fields)
        return run_episode(
            scenario, ControllerEntry.parse(kind), seed, self.intersection, clock=frozen_clock
        )

    def test_one_row_per_step(self):
        result = self.episode(horizon_s=10.0)
        self.assertEqual(len(result.log), 10)
        self.assertEqual(result.log["time"].tolist(), [float(t) for t in range(10)])
        self.assertEqual(result.controller, "fixed-time")
        self.assertEqual(result.scenario, "S1")

    def test_same_seed_same_log(self):
        a = self.episode("queue-proxy", seed=7, scenario_class=ScenarioClass.S2)
        b = self.episode("queue-proxy", seed=7, scenario_class=ScenarioClass.S2)
        pd.testing.assert_frame_equal(a.log, b.log)
        self.assertEqual(a.emissions, b.emissions)

    def test_seed_changes_the_episode(self):
        a = self.episode("queue-proxy", seed=7)
        b = self.episode("queue-proxy", seed=8)
        self.assertFalse(a.log.equals(b.log))

    def test_zero_demand_emits_nothing(self):
        result = self.episode(demand=DemandProfile(approach_rates=(0.0, 0.0, 0.0, 0.0)))
        self.assertEqual(result.emissions.total_proxy, 0.0)
        self.assertEqual(result.stats["queue_proxy"], 0.0)

    def test_every_controller_passes_the_audit(self):
        for kind in ("fixed-time", "occupancy", "queue-proxy", "csmpc"):
            with self.subTest(controller=kind):
                result = self.episode(kind, horizon_s=90.0, seed=3)
                self.assertEqual(result.audit, [])
                self.assertEqual(result.stats["conflicts"], 0)

    def test_fixed_time_switches(self):
        result = self.episode("fixed-time", horizon_s=120.0)
        self.assertGreater(result.stats["switches"], 0)
        self.assertLessEqual(result.stats["max_service_age"], 120.0)

    def test_trace_only_for_traced_controllers(self):
        scenario = ScenarioSpec(horizon_s=5.0, trials=1)
        csmpc = run_episode(
            scenario, ControllerEntry.parse("csmpc"), 2, self.intersection, trace=True
        )
        self.assertEqual(len(csmpc.traces), 5)
        fixed = run_episode(
            scenario, ControllerEntry.parse("fixed-time"), 2, self.intersection, trace=True
        )
        self.assertEqual(fixed.traces, [])


class TestPairedComparisons(unittest.TestCase):
    """Controllers compared on the same seeded episodes."""

    def setUp(self):
        self.intersection = standard_cross(4)

    def total(self, kind, scenario, seeds, stat):
        return sum(
            run_episode(
                scenario, ControllerEntry.parse(kind), seed, self.intersection, clock=frozen_clock
            ).stats[stat]
            for seed in seeds
        )

    def test_min_green_hold_limits_switching(self):
        scenario = ScenarioSpec(horizon_s=300.0, demand=LIGHT)
        seeds = [cell_seed(5, "S1", trial) for trial in range(3)]
        held = self.total("csmpc", scenario, seeds, "switches")
        free = self.total("csmpc:no-hold", scenario, seeds, "switches")
        self.assertGreater(free, held)

    def test_sustained_occlusion_hides_more_than_clear_view(self):
        seeds = [cell_seed(5, "S1", trial) for trial in range(2)]
        clear = self.total(
            "queue-proxy", ScenarioSpec(horizon_s=300.0, demand=LIGHT), seeds, "occlusion_proxy"
        )
        occluded = self.total(
            "queue-proxy",
            ScenarioSpec(horizon_s=300.0, scenario_class=ScenarioClass.S3, demand=LIGHT),
            seeds,
            "occlusion_proxy",
        )
        self.assertGreater(occluded, clear)

    def test_near_capacity_demand_emits_more(self):
        seeds = [cell_seed(5, "S1", trial) for trial in range(2)]
        light = self.total(
            "queue-proxy", ScenarioSpec(horizon_s=300.0, demand=LIGHT), seeds, "total_proxy"
        )
        heavy = self.total(
            "queue-proxy",
            ScenarioSpec(horizon_s=300.0, scenario_class=ScenarioClass.S4, demand=HEAVY),
            seeds,
            "total_proxy",
        )
        self.assertGreater(heavy, light)

    def test_csmpc_beats_queue_proxy_near_capacity(self):
        scenario = ScenarioSpec(horizon_s=600.0, scenario_class=ScenarioClass.S4, demand=HEAVY)
        seeds = [cell_seed(5, "S4", 0)]
        csmpc = self.total("csmpc", scenario, seeds, "total_proxy")
        baseline = self.total("queue-proxy", scenario, seeds, "total_proxy")
        self.assertLess(csmpc, baseline)


class TestAuditEpisode(unittest.TestCase):
    def test_detects_broken_queue_balance(self):
        intersection = standard_cross(4)
        scenario = ScenarioSpec(horizon_s=30.0, trials=1)
        result = run_episode(scenario, ControllerEntry.parse("queue-proxy"), 4, intersection)
        log = result.log.copy()
        log.loc[5, "q_next_0"] = log.loc[5, "q_next_0"] + 3
        problems = audit_episode(log, intersection, True, result.emissions, 1.0)
        self.assertTrue(any("queue balance" in p for p in problems))

    def test_detects_emission_mismatch(self):
        intersection = standard_cross(4)
        scenario = ScenarioSpec(horizon_s=30.0, trials=1)
        result = run_episode(scenario, ControllerEntry.parse("queue-proxy"), 4, intersection)
        log = result.log.copy()
        log["stopped_proxy"] = log["stopped_proxy"] + 1.0
        problems = audit_episode(log, intersection, True, result.emissions, 1.0)
        self.assertIn("idle emission does not match the stopped-proxy integral", problems)


class TestSeedsAndNames(unittest.TestCase):
    def test_cell_seed_is_stable(self):
        self.assertEqual(cell_seed(2024, "S1", 0), cell_seed(2024, "S1", 0))
        self.assertNotEqual(cell_seed(2024, "S1", 0), cell_seed(2024, "S1", 1))
        self.assertNotEqual(cell_seed(2024, "S1", 0), cell_seed(2024, "S2", 0))
        self.assertNotEqual(cell_seed(2024, "S1", 0), cell_seed(2025, "S1", 0))
        self.assertLess(cell_seed(0, "b", 0), 2**64)

    def test_cell_name(self):
        self.assertEqual(
            _cell_name("csmpc[no-ema,no-hold]", "S3", 4), "csmpc-no-ema+no-hold__S3__t04"
        )


class TestAggregate(unittest.TestCase):
    def _cell(self, controller, trial, value):
        stats = {metric: value for metric in TABLE_METRICS}
        return {"controller": controller, "scenario": "S1", "trial": trial, "stats": stats}

    def test_change_versus_baseline(self):
        cells = [
            self._cell("queue-proxy", 0, 90.0),
            self._cell("queue-proxy", 1, 110.0),
            self._cell("csmpc", 0, 70.0),
            self._cell("csmpc", 1, 90.0),
        ]
        result = aggregate(cells, "queue-proxy")
        total = result["S1"]["csmpc"]["total_proxy"]
        self.assertEqual(total["mean"], 80.0)
        self.assertEqual(total["n"], 2)
        self.assertAlmostEqual(total["change_pct"], 20.0)
        self.assertEqual(result["S1"]["queue-proxy"]["total_proxy"]["change_pct"], 0.0)

    def test_single_trial_and_failures(self):
        failed = {"controller": "csmpc", "scenario": "S1", "trial": 1, "error": "boom"}
        result = aggregate([self._cell("csmpc", 0, 5.0), failed], None)
        block = result["S1"]["csmpc"]["queue_proxy"]
        self.assertEqual((block["mean"], block["lower"], block["upper"]), (5.0, 5.0, 5.0))
        self.assertIsNone(block["change_pct"])
        self.assertEqual(aggregate([failed], None), {})


class TestRunExperiment(unittest.TestCase):
    def test_sweep_and_report(self):
        config = ExperimentConfig(
            controllers=("queue-proxy", "fixed-time"),
            scenarios=(ScenarioSpec(name="S1", horizon_s=40.0, trials=2),),
            seed=11,
        )
        with tempfile.TemporaryDirectory() as tmp:
            summary = run_experiment(config, standard_cross(4), out_dir=tmp)
            self.assertEqual(len(summary["cells"]), 4)
            self.assertEqual(summary["failures"], [])
            self.assertEqual(summary["baseline"], "queue-proxy")
            seeds = {(c["controller"], c["trial"]): c["seed"] for c in summary["cells"]}
            for trial in (0, 1):
                self.assertEqual(seeds[("queue-proxy", trial)], seeds[("fixed-time", trial)])
            self.assertNotEqual(seeds[("queue-proxy", 0)], seeds[("queue-proxy", 1)])
            self.assertTrue(all(cell["audit"] == [] for cell in summary["cells"]))
            for cell in summary["cells"]:
                self.assertTrue((Path(tmp) / cell["log"]).exists())
            with open(Path(tmp) / SUMMARY_FILE) as f:
                self.assertEqual(json.load(f)["seed"], 11)

            path = report(tmp)
            text = path.read_text()
            self.assertIn("Scenario S1 (baseline: queue-proxy)", text)
            self.assertIn("Total emission", text)
            series = Path(tmp) / "series"
            for suffix in ("pdet", "occlusion", "cumulative_emission", "risk_boxplot"):
                self.assertTrue((series / f"S1_{suffix}.csv").exists())
            cumulative = pd.read_csv(series / "S1_cumulative_emission.csv")
            self.assertEqual(list(cumulative.columns), ["time", "fixed-time", "queue-proxy"])
            self.assertEqual(len(cumulative), 40)


if __name__ == "__main__":
    unittest.main()
