"""
Abstract base class for all signal controllers.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any

from ..intersection import Intersection, PhaseState, SignalAction
from ..microsim import EpisodeStreams
from ..sensor import Observation


@dataclass(frozen=True)
class DecisionContext:
    """Everything a controller may look at when choosing the next action.

    ``phase_state`` is the indication before the action; ``governing`` is the indication that
    was in force during the step just simulated (None at the first step of an episode).
    """

    time: float
    phase_state: PhaseState
    observation: Observation
    intersection: Intersection
    streams: EpisodeStreams
    governing: PhaseState | None = None
    previous_action: SignalAction | None = None


@dataclass(frozen=True)
class Decision:
    action: SignalAction
    trace: Any = None  # DecisionTrace for the belief-space controller
    risk: float = 0.0
    degraded: bool = False


def phase_counts(observation: Observation, intersection: Intersection) -> dict[int, float]:
    """Weighted detected counts summed over the movements each phase serves."""
    weighted = observation.detected_count * intersection.weights()
    return {
        phase.id: float(sum(weighted[m] for m in phase.movements))
        for phase in intersection.phases
    }


class BaseController(ABC):
    """
    Every controller must implement `decide`. The harness calls reset() once per episode and
    decide(context) once per control step without knowing the policy's internals.
    """

    name: str = ""
    uses_belief: bool = False
    min_green_hold: bool = True

    def reset(self, intersection: Intersection) -> None:
        """Clear per-episode state."""

    @abstractmethod
    def decide(self, context: DecisionContext) -> Decision:
        """Return an action admissible at ``context.phase_state``."""
        ...
