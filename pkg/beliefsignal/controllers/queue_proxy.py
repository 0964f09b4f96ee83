"""
Queue-proxy control: after the minimum green, switch to the phase with the largest weighted
detected queue.
"""

from ..intersection import EXTEND, TIME_EPS, SignalAction
from .base import BaseController, Decision, DecisionContext, phase_counts


class QueueProxyController(BaseController):
    """Greedy max-queue switching on raw detected counts."""

    name = "queue-proxy"

    def decide(self, context: DecisionContext) -> Decision:
        phase_state = context.phase_state
        intersection = context.intersection
        if not phase_state.is_green:
            return Decision(EXTEND)

        timing = intersection.timing
        elapsed = phase_state.interval_elapsed
        if elapsed < timing.g_min - TIME_EPS:
            return Decision(EXTEND)

        counts = phase_counts(context.observation, intersection)
        active = phase_state.active_phase
        # max() keeps the first maximum, so the active phase wins ties when listed first
        order = [active, *(q for q in sorted(counts) if q != active)]
        best = max(order, key=lambda q: counts[q])
        if elapsed >= timing.g_max - TIME_EPS:
            if best == active:
                rivals = [q for q in order if q != active]
                best = max(rivals, key=lambda q: counts[q])
            return Decision(SignalAction.terminate_to(best))
        if best == active:
            return Decision(EXTEND)
        return Decision(SignalAction.terminate_to(best))
