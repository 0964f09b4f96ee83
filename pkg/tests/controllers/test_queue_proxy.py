import unittest

import numpy as np

from beliefsignal.controllers.base import DecisionContext, phase_counts
from beliefsignal.controllers.queue_proxy import QueueProxyController
from beliefsignal.intersection import EXTEND, PhaseState, SignalAction, standard_cross
from beliefsignal.microsim import EpisodeStreams
from beliefsignal.sensor import Observation


class TestQueueProxy(unittest.TestCase):
    def setUp(self):
        self.intersection = standard_cross(2)
        self.controller = QueueProxyController()

    def _decide(self, elapsed, counts, phase=0):
        detected = np.asarray(counts, dtype=np.int64)
        context = DecisionContext(
            time=0.0,
            phase_state=PhaseState(phase, interval_elapsed=elapsed),
            observation=Observation(0.0, detected, detected.copy(), (), 0.95),
            intersection=self.intersection,
            streams=EpisodeStreams.from_seed(0),
        )
        return self.controller.decide(context).action

    def test_phase_counts(self):
        observation = Observation(0.0, np.arange(8), np.arange(8), (), 1.0)
        self.assertEqual(phase_counts(observation, self.intersection), {0: 10.0, 1: 18.0})

    # Phase 0 holds 3 detected vehicles, phase 1 holds 9
    def test_switches_to_longer_queue(self):
        counts = [1, 1, 3, 3, 1, 0, 3, 0]
        self.assertEqual(self._decide(10, counts), SignalAction.terminate_to(1))

    def test_keeps_green_when_active_is_longest(self):
        self.assertEqual(self._decide(10, [5, 0, 0, 0, 5, 0, 1, 0]), EXTEND)

    def test_ties_keep_active_phase(self):
        self.assertEqual(self._decide(10, [2, 0, 2, 0, 0, 0, 0, 0]), EXTEND)

    def test_min_green_respected(self):
        self.assertEqual(self._decide(3, [0, 0, 9, 9, 0, 0, 9, 9]), EXTEND)

    def test_max_green_picks_best_rival(self):
        self.assertEqual(self._decide(60, [9, 9, 0, 0, 9, 9, 0, 0]), SignalAction.terminate_to(1))

    def test_best_rival_among_many(self):
        intersection = standard_cross(4)
        detected = np.array([0, 2, 0, 7, 0, 0, 0, 1])
        context = DecisionContext(
            time=0.0,
            phase_state=PhaseState(0, interval_elapsed=60),
            observation=Observation(0.0, detected, detected.copy(), (), 0.95),
            intersection=intersection,
            streams=EpisodeStreams.from_seed(0),
        )
        self.assertEqual(self.controller.decide(context).action, SignalAction.terminate_to(3))


if __name__ == "__main__":
    unittest.main()
