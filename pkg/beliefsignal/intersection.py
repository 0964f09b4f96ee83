"""
Intersection geometry, phases, the signal interval machine and the admissible action set.
"""

from dataclasses import dataclass, replace
from enum import StrEnum
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import ContractViolation, InadmissibleActionError

# Timers are sums of Δt; compare with a small tolerance instead of exact float equality.
TIME_EPS = 1e-9

APPROACHES = ("N", "E", "S", "W")


class TimingConfig(BaseModel):
    """Signal timing in seconds. Invariants are checked by `validate_config`, not here."""

    model_config = ConfigDict(frozen=True)

    g_min: float = 5.0
    g_max: float = 60.0
    t_yellow: float = 3.0
    t_all_red: float = 2.0
    dt: float = 1.0


class Movement(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: int
    name: str = ""
    approach: int = 0
    turn: Literal["through", "left"] = "through"
    saturation_flow: float = Field(0.5, description="veh/s discharged from the queue on green")
    storage_capacity: int = Field(40, description="queue length (veh) that marks spillback")
    weight: float = Field(1.0, description="zone weight for queue/stopped proxies")


class Phase(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: int
    movements: tuple[int, ...]

    @property
    def served_movements(self) -> frozenset[int]:
        return frozenset(self.movements)


class Intersection(BaseModel):
    """A single intersection: movements, phases in cycle order, conflict pairs and timing."""

    model_config = ConfigDict(frozen=True)

    name: str = "intersection"
    movements: tuple[Movement, ...]
    phases: tuple[Phase, ...]
    conflicts: tuple[tuple[int, int], ...] = ()
    timing: TimingConfig = TimingConfig()

    @property
    def movement_count(self) -> int:
        return len(self.movements)

    @property
    def phase_ids(self) -> tuple[int, ...]:
        return tuple(p.id for p in self.phases)

    def phase(self, phase_id: int) -> Phase:
        for p in self.phases:
            if p.id == phase_id:
                return p
        raise ContractViolation(f"unknown phase {phase_id}")

    def next_phase(self, phase_id: int) -> int:
        """The phase following *phase_id* in cycle order."""
        ids = self.phase_ids
        return ids[(ids.index(phase_id) + 1) % len(ids)]

    def conflicting(self, a: int, b: int) -> bool:
        return (a, b) in self.conflicts or (b, a) in self.conflicts

    def saturation_flows(self) -> np.ndarray:
        return np.array([m.saturation_flow for m in self.movements], dtype=float)

    def weights(self) -> np.ndarray:
        return np.array([m.weight for m in self.movements], dtype=float)

    def phase_mask(self, phase_id: int) -> np.ndarray:
        mask = np.zeros(self.movement_count, dtype=bool)
        mask[list(self.phase(phase_id).movements)] = True
        return mask

    def served_mask(self, phase_state: "PhaseState") -> np.ndarray:
        """Movements receiving green under *phase_state* (none during Yellow/AllRed)."""
        if phase_state.interval is not Interval.GREEN:
            return np.zeros(self.movement_count, dtype=bool)
        return self.phase_mask(phase_state.active_phase)


class Interval(StrEnum):
    GREEN = "green"
    YELLOW = "yellow"
    ALL_RED = "all-red"


class ActionKind(StrEnum):
    EXTEND = "extend"
    TERMINATE = "terminate"


@dataclass(frozen=True, slots=True)
class SignalAction:
    kind: ActionKind
    target: int | None = None

    @classmethod
    def terminate_to(cls, target: int) -> "SignalAction":
        return cls(ActionKind.TERMINATE, target)

    @property
    def is_extend(self) -> bool:
        return self.kind is ActionKind.EXTEND

    def __str__(self) -> str:
        return "extend" if self.is_extend else f"terminate->{self.target}"


EXTEND = SignalAction(ActionKind.EXTEND)


@dataclass(frozen=True, slots=True)
class PhaseState:
    active_phase: int
    interval: Interval = Interval.GREEN
    interval_elapsed: float = 0.0
    next_phase: int | None = None

    @property
    def is_green(self) -> bool:
        return self.interval is Interval.GREEN


def initial_phase_state(intersection: Intersection) -> PhaseState:
    return PhaseState(active_phase=intersection.phase_ids[0])


def admissible_actions(
    phase_state: PhaseState, intersection: Intersection, min_green_hold: bool = True
) -> tuple[SignalAction, ...]:
    """Legally admissible actions at *phase_state*, Extend first then targets in id order.

    With ``min_green_hold=False`` the g_min floor is dropped (no-hold ablation); g_max and
    the intergreen sequence still apply.
    """
    _check_phase_state(phase_state)
    timing = intersection.timing
    if phase_state.interval is not Interval.GREEN:
        return (EXTEND,)

    elapsed = phase_state.interval_elapsed
    terminations = tuple(
        SignalAction.terminate_to(q)
        for q in sorted(intersection.phase_ids)
        if q != phase_state.active_phase
    )
    if min_green_hold and elapsed < timing.g_min - TIME_EPS:
        return (EXTEND,)
    if elapsed >= timing.g_max - TIME_EPS:
        return terminations
    return (EXTEND, *terminations)


def apply_action(
    phase_state: PhaseState,
    action: SignalAction,
    intersection: Intersection,
    min_green_hold: bool = True,
) -> PhaseState:
    """Advance the interval machine by one control step under *action*."""
    allowed = admissible_actions(phase_state, intersection, min_green_hold)
    if action not in allowed:
        raise InadmissibleActionError(_rejection_reason(phase_state, action, intersection))

    timing = intersection.timing
    dt = timing.dt
    elapsed = round(phase_state.interval_elapsed + dt, 9)

    match phase_state.interval:
        case Interval.GREEN:
            if action.is_extend:
                return replace(phase_state, interval_elapsed=elapsed)
            return PhaseState(
                active_phase=phase_state.active_phase,
                interval=Interval.YELLOW,
                interval_elapsed=0.0,
                next_phase=action.target,
            )
        case Interval.YELLOW:
            if elapsed < timing.t_yellow - TIME_EPS:
                return replace(phase_state, interval_elapsed=elapsed)
            if timing.t_all_red <= TIME_EPS:
                return _start_green(phase_state)
            return replace(phase_state, interval=Interval.ALL_RED, interval_elapsed=0.0)
        case Interval.ALL_RED:
            if elapsed < timing.t_all_red - TIME_EPS:
                return replace(phase_state, interval_elapsed=elapsed)
            return _start_green(phase_state)
    raise ContractViolation(f"unknown interval {phase_state.interval}")


def validate_config(intersection: Intersection) -> list[str]:
    """Return every violated Phase/TimingConfig invariant; an empty list means ok."""
    violations: list[str] = []
    ids = [m.id for m in intersection.movements]
    count = len(ids)

    if count < 2:
        violations.append(f"need at least 2 movements, found {count}")
    if sorted(ids) != list(range(count)):
        violations.append(f"movement ids must be exactly 0..{count - 1}, found {sorted(ids)}")

    phase_ids = intersection.phase_ids
    if len(set(phase_ids)) != len(phase_ids):
        violations.append(f"duplicate phase ids {list(phase_ids)}")
    if len(phase_ids) < 2:
        violations.append("need at least 2 phases so that termination is always possible")

    covered: set[int] = set()
    for phase in intersection.phases:
        unknown = sorted(set(phase.movements) - set(ids))
        if unknown:
            violations.append(f"phase {phase.id} references unknown movements {unknown}")
        if not phase.movements:
            violations.append(f"phase {phase.id} serves no movement")
        covered.update(phase.movements)
        served = sorted(set(phase.movements))
        for i, a in enumerate(served):
            for b in served[i + 1 :]:
                if intersection.conflicting(a, b):
                    violations.append(f"conflict within phase {phase.id}: movements {a} and {b}")

    for m in sorted(set(ids) - covered):
        violations.append(f"movement {m} is not served by any phase")
    for a, b in intersection.conflicts:
        if a == b:
            violations.append(f"movement {a} listed as conflicting with itself")

    violations.extend(_timing_violations(intersection.timing))
    return violations


def standard_cross(phase_count: int = 4, timing: TimingConfig | None = None) -> Intersection:
    """Four-approach cross, through+left per approach (rights merged with throughs).

    Movement ids are ``2*approach`` (through) and ``2*approach + 1`` (left), approaches in
    N, E, S, W order. The 2-phase layout runs lefts permissively with the opposing through.
    """
    if phase_count not in (2, 4):
        raise ContractViolation(f"standard cross supports 2 or 4 phases, got {phase_count}")

    movements = tuple(
        Movement(id=2 * a + k, name=f"{APPROACHES[a]}-{turn}", approach=a, turn=turn)
        for a in range(4)
        for k, turn in enumerate(("through", "left"))
    )
    conflicts: set[tuple[int, int]] = set()
    for a in range(4):
        for perpendicular in ((a + 1) % 4, (a + 3) % 4):
            for mine in (2 * a, 2 * a + 1):
                for theirs in (2 * perpendicular, 2 * perpendicular + 1):
                    conflicts.add((min(mine, theirs), max(mine, theirs)))
        if phase_count == 4:
            opposite = (a + 2) % 4
            left, opposing_through = 2 * a + 1, 2 * opposite
            conflicts.add((min(left, opposing_through), max(left, opposing_through)))

    if phase_count == 4:
        phases = (
            Phase(id=0, movements=(0, 4)),
            Phase(id=1, movements=(1, 5)),
            Phase(id=2, movements=(2, 6)),
            Phase(id=3, movements=(3, 7)),
        )
    else:
        phases = (Phase(id=0, movements=(0, 1, 4, 5)), Phase(id=1, movements=(2, 3, 6, 7)))

    return Intersection(
        name=f"cross4-{phase_count}phase",
        movements=movements,
        phases=phases,
        conflicts=tuple(sorted(conflicts)),
        timing=timing or TimingConfig(),
    )


# Helpers


def _start_green(phase_state: PhaseState) -> PhaseState:
    assert phase_state.next_phase is not None, "intergreen without a recorded next phase"
    return PhaseState(active_phase=phase_state.next_phase)


def _check_phase_state(phase_state: PhaseState) -> None:
    if phase_state.interval_elapsed < 0:
        raise ContractViolation(f"negative interval timer {phase_state.interval_elapsed}")
    in_intergreen = phase_state.interval is not Interval.GREEN
    if in_intergreen != (phase_state.next_phase is not None):
        raise ContractViolation("next_phase must be set exactly during Yellow/AllRed")


def _rejection_reason(
    phase_state: PhaseState, action: SignalAction, intersection: Intersection
) -> str:
    timing = intersection.timing
    if phase_state.interval is not Interval.GREEN:
        return f"{action} rejected: {phase_state.interval} interval must run to completion"
    if not action.is_extend:
        if action.target == phase_state.active_phase:
            return f"{action} rejected: target is the active phase"
        if action.target not in intersection.phase_ids:
            return f"{action} rejected: unknown phase {action.target}"
        return (
            f"{action} rejected: green elapsed {phase_state.interval_elapsed:g}s "
            f"is below g_min {timing.g_min:g}s"
        )
    return (
        f"extend rejected: green elapsed {phase_state.interval_elapsed:g}s "
        f"has reached g_max {timing.g_max:g}s"
    )


def _timing_violations(timing: TimingConfig) -> list[str]:
    violations = []
    if timing.dt <= 0:
        violations.append(f"dt must be positive, got {timing.dt}")
        return violations
    if timing.g_min <= 0:
        violations.append(f"g_min must be positive, got {timing.g_min}")
    if timing.g_min > timing.g_max:
        violations.append(f"g_min {timing.g_min} exceeds g_max {timing.g_max}")
    if timing.t_yellow <= 0:
        violations.append(f"t_yellow must be positive, got {timing.t_yellow}")
    if timing.t_all_red < 0:
        violations.append(f"t_all_red must be nonnegative, got {timing.t_all_red}")
    for name in ("g_min", "g_max", "t_yellow", "t_all_red"):
        value = getattr(timing, name)
        steps = value / timing.dt
        if abs(steps - round(steps)) > 1e-6:
            violations.append(f"{name} {value} is not a multiple of dt {timing.dt}")
    return violations
