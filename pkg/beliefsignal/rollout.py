"""
Open-loop counterfactual rollouts of the belief under a candidate first action.
"""

from dataclasses import dataclass, replace

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .belief import Belief, propagate_queue_belief, update_service_age
from .intersection import (
    EXTEND,
    TIME_EPS,
    Intersection,
    Interval,
    PhaseState,
    SignalAction,
    apply_action,
)

__all__ = [
    "HorizonConfig",
    "RolloutTrace",
    "continuation_action",
    "propagate_belief",
    "propagate_queue_belief",
    "rollout",
    "update_service_age",
]


class HorizonConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    steps: int = Field(10, ge=0, description="rollout horizon H in control steps")
    gamma: float = Field(1.0, gt=0, le=1, description="per-step discount")


@dataclass(frozen=True)
class RolloutTrace:
    action: SignalAction
    beliefs: tuple[Belief, ...]
    phase_states: tuple[PhaseState, ...]
    yellow_onset_steps: frozenset[int]

    @property
    def horizon(self) -> int:
        return len(self.beliefs) - 1


def continuation_action(phase_state: PhaseState, intersection: Intersection) -> SignalAction:
    """Extend until g_max, then hand over to the next phase in cycle order."""
    if phase_state.interval is not Interval.GREEN:
        return EXTEND
    if phase_state.interval_elapsed >= intersection.timing.g_max - TIME_EPS:
        return SignalAction.terminate_to(intersection.next_phase(phase_state.active_phase))
    return EXTEND


def propagate_belief(
    belief: Belief, phase_state: PhaseState, intersection: Intersection, rng: np.random.Generator
) -> Belief:
    """Predict-only step of every movement under the indication *phase_state*."""
    dt = intersection.timing.dt
    served = intersection.served_mask(phase_state)
    mu = intersection.saturation_flows()
    movements = []
    for m, mb in enumerate(belief.movements):
        mb = propagate_queue_belief(mb, bool(served[m]), float(mu[m]), dt, rng)
        movements.append(
            replace(mb, service_age=update_service_age(mb.service_age, bool(served[m]), dt))
        )
    return replace(belief, movements=tuple(movements), time=round(belief.time + dt, 9))


def rollout(
    belief: Belief,
    action: SignalAction,
    phase_state: PhaseState,
    intersection: Intersection,
    horizon: HorizonConfig,
    rng: np.random.Generator,
    min_green_hold: bool = True,
) -> RolloutTrace:
    """Apply *action* now, follow the continuation policy, and predict H beliefs ahead.

    ``phase_states[k]`` is the indication in force during step k and ``beliefs[k + 1]`` is the
    belief after that step. Pass every candidate a generator seeded identically so that cost
    differences come from the action alone.
    """
    current = apply_action(phase_state, action, intersection, min_green_hold)
    beliefs = [belief]
    phase_states = [current]
    onsets = set()
    if _is_onset(phase_state, current):
        onsets.add(0)

    for k in range(horizon.steps):
        beliefs.append(propagate_belief(beliefs[k], current, intersection, rng))
        following = apply_action(
            current, continuation_action(current, intersection), intersection, min_green_hold
        )
        if _is_onset(current, following):
            onsets.add(k + 1)
        phase_states.append(following)
        current = following

    return RolloutTrace(
        action=action,
        beliefs=tuple(beliefs),
        phase_states=tuple(phase_states),
        yellow_onset_steps=frozenset(onsets),
    )


def _is_onset(before: PhaseState, after: PhaseState) -> bool:
    return before.is_green and after.interval is Interval.YELLOW
