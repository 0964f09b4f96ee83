"""
Tests for dilemma-zone kinematics and the yellow-onset risk estimators.
"""

import math
import unittest
from unittest.mock import patch

import numpy as np
from scipy import integrate, stats

from beliefsignal.intersection import PhaseState, standard_cross
from beliefsignal.safety import (
    DzParams,
    KinematicBelief,
    RiskMethod,
    clearing_time,
    dilemma_probability,
    dz_risk,
    in_dilemma,
    stopping_distance,
)

PARAMS = DzParams()


def vehicle(vid, movement, v, d, sigma_v=0.0, sigma_d=0.0):
    return KinematicBelief.from_estimate(vid, movement, v, d, sigma_v, sigma_d)


class TestKinematics(unittest.TestCase):
    def test_stopping_distance(self):
        self.assertAlmostEqual(stopping_distance(15.0, PARAMS), 52.5)
        self.assertEqual(stopping_distance(0.0, PARAMS), 0.0)

    def test_clearing_time(self):
        # 35 m to the line + 20 m width + 5 m margin at 12 m/s
        self.assertAlmostEqual(clearing_time(35.0, 12.0, 5.0, PARAMS), 5.0)

    def test_clearing_time_uses_speed_floor(self):
        self.assertAlmostEqual(clearing_time(0.0, 0.0, 5.0, PARAMS), 25.0)

    def test_dilemma_band(self):
        """At 15 m/s the band is (50, 52.5) m with a 5 s clearance window."""
        self.assertTrue(in_dilemma(15.0, 51.0, 5.0, PARAMS))
        self.assertFalse(in_dilemma(15.0, 49.0, 5.0, PARAMS))
        self.assertFalse(in_dilemma(15.0, 53.0, 5.0, PARAMS))

    def test_in_dilemma_vectorized(self):
        flags = in_dilemma(np.array([15.0, 15.0]), np.array([51.0, 80.0]), 5.0, PARAMS)
        self.assertEqual(flags.tolist(), [True, False])

    def test_advanced_moves_mean_and_inflates_distance(self):
        kb = vehicle(1, 0, 10.0, 50.0, sigma_v=1.0, sigma_d=2.0).advanced(2.0)
        self.assertAlmostEqual(kb.mean[1], 30.0)
        self.assertAlmostEqual(kb.cov[1, 1], 4.0 + 4.0)


class TestDilemmaProbability(unittest.TestCase):
    def test_degenerate_belief_is_indicator(self):
        rng = np.random.default_rng(0)
        self.assertEqual(dilemma_probability(vehicle(1, 0, 15.0, 51.0), PARAMS, rng), 1.0)
        self.assertEqual(dilemma_probability(vehicle(1, 0, 15.0, 90.0), PARAMS, rng), 0.0)

    def test_uncertain_belief_is_a_probability(self):
        rng = np.random.default_rng(1)
        p = dilemma_probability(vehicle(1, 0, 15.0, 51.25, 0.2, 1.0), PARAMS, rng, 4000)
        self.assertGreater(p, 0.2)
        self.assertLess(p, 1.0)


class TestDzRisk(unittest.TestCase):
    def setUp(self):
        self.intersection = standard_cross(4)
        self.green = PhaseState(active_phase=0, interval_elapsed=20.0)
        self.rng = np.random.default_rng(7)

    def test_no_vehicles_no_risk(self):
        report = dz_risk((), self.green, self.intersection, PARAMS, self.rng)
        self.assertEqual(report.risk, 0.0)
        self.assertEqual(report.per_vehicle, ())

    def test_only_served_approaches_within_lookahead_count(self):
        kinematics = (
            vehicle(1, 1, 15.0, 51.0),  # left turn, red in phase 0
            vehicle(2, 0, 15.0, 200.0),  # beyond lookahead
        )
        report = dz_risk(kinematics, self.green, self.intersection, PARAMS, self.rng)
        self.assertEqual(report.risk, 0.0)

    def test_independence_bound_combines_vehicles(self):
        kinematics = (vehicle(1, 0, 15.0, 60.0), vehicle(2, 4, 15.0, 70.0))
        with patch("beliefsignal.safety.dilemma_probability", side_effect=[0.1, 0.2]):
            report = dz_risk(
                kinematics,
                self.green,
                self.intersection,
                PARAMS,
                self.rng,
                method=RiskMethod.INDEPENDENCE_BOUND,
            )
        self.assertAlmostEqual(report.risk, 0.28)
        self.assertEqual(report.per_vehicle, ((1, 0.1), (2, 0.2)))

    def test_monte_carlo_dominates_each_vehicle(self):
        kinematics = (vehicle(1, 0, 15.0, 51.0, 0.5, 2.0), vehicle(2, 4, 12.0, 45.0, 0.5, 2.0))
        report = dz_risk(kinematics, self.green, self.intersection, PARAMS, self.rng)
        self.assertEqual(report.method, RiskMethod.MONTE_CARLO)
        self.assertEqual(report.mc_samples, PARAMS.mc_samples)
        self.assertGreaterEqual(report.risk, max(p for _, p in report.per_vehicle))
        self.assertLessEqual(report.risk, 1.0)

    def test_offset_advances_vehicles(self):
        # At 15 m/s, 81 m now is 51 m after two seconds: inside the band.
        kinematics = (vehicle(1, 0, 15.0, 81.0),)
        now = dz_risk(kinematics, self.green, self.intersection, PARAMS, self.rng)
        later = dz_risk(kinematics, self.green, self.intersection, PARAMS, self.rng, offset_s=2.0)
        self.assertEqual(now.risk, 0.0)
        self.assertEqual(later.risk, 1.0)

    def test_as_dict(self):
        report = dz_risk(
            (vehicle(3, 0, 15.0, 51.0),), self.green, self.intersection, PARAMS, self.rng
        )
        data = report.as_dict()
        self.assertEqual(data["per_vehicle"], [[3, 1.0]])
        self.assertEqual(data["method"], "monte-carlo")

    def test_monte_carlo_agrees_with_independence_bound(self):
        params = DzParams(mc_samples=100_000)
        kinematics = (vehicle(1, 0, 15.0, 51.0, 0.5, 2.0), vehicle(2, 4, 12.0, 45.0, 0.5, 2.0))
        joint = dz_risk(kinematics, self.green, self.intersection, params, self.rng)
        bound = dz_risk(
            kinematics,
            self.green,
            self.intersection,
            params,
            np.random.default_rng(8),
            method=RiskMethod.INDEPENDENCE_BOUND,
        )
        r = bound.risk
        self.assertLess(abs(joint.risk - r), 3.0 * math.sqrt(2.0 * r * (1.0 - r) / 100_000))

    def test_shorter_clearance_window_never_lowers_risk(self):
        kinematics = (vehicle(1, 0, 14.0, 45.0, 1.0, 3.0),)
        risks = []
        for t_yellow, t_all_red in ((3.0, 2.0), (3.0, 1.0), (2.0, 1.0), (2.0, 0.5)):
            params = DzParams(t_yellow=t_yellow, t_all_red=t_all_red, mc_samples=4000)
            rng = np.random.default_rng(11)
            risks.append(dz_risk(kinematics, self.green, self.intersection, params, rng).risk)
        self.assertEqual(risks, sorted(risks))
        self.assertGreater(risks[-1], risks[0])

    def test_spread_grows_risk_outside_the_band(self):
        # 54 m at 15 m/s sits just past the stopping distance: safe to stop when exact.
        params = DzParams(mc_samples=20_000)
        exact = dz_risk(
            (vehicle(1, 0, 15.0, 54.0),), self.green, self.intersection, params, self.rng
        )
        self.assertEqual(exact.risk, 0.0)
        risks = [exact.risk]
        for scale in (1.0, 2.0, 4.0):
            kb = vehicle(1, 0, 15.0, 54.0, 0.05 * scale, 0.5 * scale)
            rng = np.random.default_rng(12)
            risks.append(dz_risk((kb,), self.green, self.intersection, params, rng).risk)
        self.assertEqual(risks, sorted(risks))
        self.assertGreater(risks[-1], 0.1)


class TestDilemmaQuadrature(unittest.TestCase):
    """Sampled dilemma probability against direct integration over speed."""

    @staticmethod
    def exact(mv, md, sv, sd, params):
        def density(v):
            stop = stopping_distance(v, params)
            low = params.clearance_window * max(v, params.v_min) - (
                params.intersection_width + params.vehicle_margin
            )
            inside = stats.norm.cdf(stop, md, sd) - stats.norm.cdf(low, md, sd)
            return stats.norm.pdf(v, mv, sv) * max(0.0, inside)

        value, _ = integrate.quad(density, mv - 8.0 * sv, mv + 8.0 * sv, limit=200)
        return value

    def test_matches_quadrature(self):
        cases = np.random.default_rng(2024)
        n = 1_000_000
        for case in range(50):
            mv = cases.uniform(8.0, 16.0)
            sv = cases.uniform(0.2, 1.0)
            sd = cases.uniform(0.5, 3.0)
            low = PARAMS.clearance_window * mv - PARAMS.intersection_width - PARAMS.vehicle_margin
            md = cases.uniform(low - 2.0, stopping_distance(mv, PARAMS) + 2.0)
            kb = vehicle(case, 0, mv, md, sv, sd)
            with self.subTest(v=mv, d=md):
                p = self.exact(mv, md, sv, sd, PARAMS)
                sampled = dilemma_probability(kb, PARAMS, np.random.default_rng(case), n)
                # 4 sigma over 50 cases
                self.assertLess(abs(sampled - p), 4.0 * math.sqrt(max(p * (1 - p), 1.0 / n) / n))


if __name__ == "__main__":
    unittest.main()
