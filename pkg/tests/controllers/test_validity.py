import unittest

import numpy as np

from beliefsignal.belief import init_belief
from beliefsignal.controllers.validity import (
    Mode,
    ValidityMonitor,
    ValiditySample,
    ValidityThresholds,
    check_validity,
    sample_from_belief,
)
from beliefsignal.errors import ContractViolation
from beliefsignal.intersection import Interval, PhaseState, standard_cross


def sample(time, innovation=0.0, rate=0.03, service=0.5, spillback=False):
    return ValiditySample(time, innovation, np.full(8, rate), service, spillback)


def window(n=10, **kwargs):
    return [sample(float(t), **kwargs) for t in range(n)]


class TestCheckValidity(unittest.TestCase):
    def test_clean_window(self):
        status = check_validity(window(), ValidityThresholds())
        self.assertIs(status.overall, Mode.NOMINAL)
        self.assertEqual(status.failures(), [])

    def test_too_short(self):
        with self.assertRaises(ContractViolation):
            check_validity(window(1), ValidityThresholds())

    def test_perception_envelope(self):
        samples = window()
        samples[3] = sample(3.0, innovation=5.0)
        samples[7] = sample(7.0, innovation=5.0)
        status = check_validity(samples, ValidityThresholds(exceedance_share=0.1))
        self.assertFalse(status.perception_ok)
        self.assertEqual(status.failures(), ["perception"])

    def test_rate_drift(self):
        samples = window(11)
        samples[-1] = sample(10.0, rate=0.03 + 0.2)
        status = check_validity(samples, ValidityThresholds(drift_bound=0.005))
        self.assertFalse(status.drift_ok)
        slow = window(11)
        slow[-1] = sample(10.0, rate=0.03 + 0.04)
        self.assertTrue(check_validity(slow, ValidityThresholds(drift_bound=0.005)).drift_ok)

    def test_service_jump(self):
        samples = window()
        samples[5] = sample(5.0, service=4.0)
        self.assertFalse(check_validity(samples, ValidityThresholds()).service_ok)

    def test_spillback_share(self):
        samples = window(10, spillback=True)
        status = check_validity(samples, ValidityThresholds())
        self.assertFalse(status.spillback_ok)
        self.assertIs(status.overall, Mode.DEGRADED)


class TestSampleFromBelief(unittest.TestCase):
    def test_idle_belief(self):
        intersection = standard_cross(4)
        belief = init_belief(intersection)
        green = sample_from_belief(belief, PhaseState(0), intersection)
        self.assertEqual(green.expected_service, 0.0)
        self.assertFalse(green.spillback)
        np.testing.assert_allclose(green.rates, np.full(8, 2.0 / 60.0))
        yellow = PhaseState(0, Interval.YELLOW, 0.0, next_phase=1)
        self.assertEqual(sample_from_belief(belief, yellow, intersection).expected_service, 0.0)
        self.assertEqual(sample_from_belief(belief, None, intersection).expected_service, 0.0)


class TestValidityMonitor(unittest.TestCase):
    def test_degrades_and_recovers_with_hysteresis(self):
        monitor = ValidityMonitor(ValidityThresholds(window_steps=3, clean_windows=2))
        statuses = [monitor.record(s) for s in window(3, spillback=True)]
        self.assertEqual(statuses[:2], [None, None])
        self.assertIs(statuses[2].overall, Mode.DEGRADED)
        self.assertTrue(monitor.degraded)
        self.assertEqual(monitor.degradations, 1)

        for s in window(3):
            monitor.record(s)
        self.assertTrue(monitor.degraded)
        for s in window(3):
            monitor.record(s)
        self.assertFalse(monitor.degraded)
        self.assertEqual(monitor.degradations, 1)

    def test_perception_flag(self):
        monitor = ValidityMonitor(ValidityThresholds(window_steps=2))
        self.assertFalse(monitor.perception_failed)
        monitor.record(sample(0.0, innovation=9.0))
        monitor.record(sample(1.0, innovation=9.0))
        self.assertTrue(monitor.perception_failed)


if __name__ == "__main__":
    unittest.main()
