"""
Fixed-time control: every phase keeps a constant green split and phases follow cycle order.
"""

from pydantic import BaseModel, ConfigDict, Field

from ..intersection import EXTEND, TIME_EPS, Intersection, PhaseState, SignalAction
from .base import BaseController, Decision, DecisionContext

DEFAULT_SPLIT_S = 30.0


class FixedTimeParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    split_s: float = Field(DEFAULT_SPLIT_S, gt=0)
    splits: dict[int, float] = Field(default_factory=dict, description="per-phase overrides")


class FixedTimeController(BaseController):
    """Cycles phases on a fixed split schedule, ignoring observations."""

    name = "fixed-time"

    def __init__(self, params: FixedTimeParams | None = None):
        self.params = params or FixedTimeParams()

    def decide(self, context: DecisionContext) -> Decision:
        return Decision(scheduled_action(context.phase_state, context.intersection, self.params))


def scheduled_action(
    phase_state: PhaseState, intersection: Intersection, params: FixedTimeParams
) -> SignalAction:
    if not phase_state.is_green:
        return EXTEND
    split = green_split(phase_state.active_phase, intersection, params)
    if phase_state.interval_elapsed >= split - TIME_EPS:
        return SignalAction.terminate_to(intersection.next_phase(phase_state.active_phase))
    return EXTEND


def green_split(phase_id: int, intersection: Intersection, params: FixedTimeParams) -> float:
    """Configured split clamped into [g_min, g_max]."""
    timing = intersection.timing
    split = params.splits.get(phase_id, params.split_s)
    return min(timing.g_max, max(timing.g_min, split))
