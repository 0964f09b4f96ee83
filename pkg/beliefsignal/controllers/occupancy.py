"""
Occupancy-actuated control: hold green while the served approaches show presence, gap out after
a quiet interval, and hand over to the next phase in cycle order.
"""

from pydantic import BaseModel, ConfigDict, Field

from ..intersection import EXTEND, TIME_EPS, Intersection, PhaseState, SignalAction
from ..sensor import Observation
from .base import BaseController, Decision, DecisionContext


class OccupancyParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    gap_s: float = Field(3.0, gt=0, description="quiet time on the served zone before gap-out")
    detector_range: float = Field(40.0, gt=0, description="tracked presence counts within this, m")


class OccupancyController(BaseController):
    """Gap-out actuation on detected presence; g_min and g_max come from the interval machine."""

    name = "occupancy"

    def __init__(self, params: OccupancyParams | None = None):
        self.params = params or OccupancyParams()
        self.quiet_s = 0.0

    def reset(self, intersection: Intersection) -> None:
        self.quiet_s = 0.0

    def decide(self, context: DecisionContext) -> Decision:
        phase_state = context.phase_state
        intersection = context.intersection
        if not phase_state.is_green:
            self.quiet_s = 0.0
            return Decision(EXTEND)

        if served_presence(context.observation, phase_state, intersection, self.params):
            self.quiet_s = 0.0
        else:
            self.quiet_s += intersection.timing.dt

        timing = intersection.timing
        elapsed = phase_state.interval_elapsed
        gapped_out = self.quiet_s >= self.params.gap_s - TIME_EPS
        if elapsed >= timing.g_max - TIME_EPS or (
            gapped_out and elapsed >= timing.g_min - TIME_EPS
        ):
            self.quiet_s = 0.0
            target = intersection.next_phase(phase_state.active_phase)
            return Decision(SignalAction.terminate_to(target))
        return Decision(EXTEND)


def served_presence(
    observation: Observation,
    phase_state: PhaseState,
    intersection: Intersection,
    params: OccupancyParams,
) -> bool:
    """True when any served movement shows a detected vehicle in its zone or near the line."""
    served = intersection.phase(phase_state.active_phase).served_movements
    if any(observation.detected_count[m] > 0 for m in served):
        return True
    return any(
        track.movement in served and track.distance <= params.detector_range
        for track in observation.tracks
    )
