"""
Ground-truth microsimulation of one intersection.

Arrivals spawn upstream as tracked vehicles, travel to the stop line (or the queue tail),
join the queue on red and cross on green. Queues discharge at saturation flow through a
carry accumulator. Queue bookkeeping follows Q' = max(0, Q + A - S) exactly, where A counts
vehicles joining the queue during the step and S the vehicles discharged from it.
"""

import math
from dataclasses import dataclass, field, replace
from enum import StrEnum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import ContractViolation
from .intersection import Intersection, Interval, PhaseState
from .safety import DzParams, stopping_distance

# Vehicles within this distance of their stop point have arrived there.
JOIN_TOLERANCE = 0.5
# Deceleration used when a vehicle starts braking for a stop point, as a share of a_max.
COMFORT_BRAKE_SHARE = 0.6
ACCELERATION = 2.0  # m/s^2 when pulling away towards desired speed


class DemandProfile(BaseModel):
    """Arrival intensities; per-approach rates split by turning proportions unless overridden."""

    model_config = ConfigDict(frozen=True)

    approach_rates: tuple[float, ...] = Field((2.0, 2.0, 2.0, 2.0), description="veh/min")
    movement_rates: tuple[float, ...] | None = Field(None, description="veh/min, overrides")
    turning_proportions: tuple[float, float, float] = (0.2, 0.7, 0.1)  # left, through, right
    drift_amplitude: float = Field(0.0, ge=0, description="relative sinusoidal modulation")
    drift_period_s: float = Field(900.0, gt=0)
    drift_slope_bound: float = Field(0.005, gt=0, description="L_lambda, veh/s^2")

    def base_rates(self, intersection: Intersection) -> np.ndarray:
        """Per-movement base intensity in veh/s."""
        if self.movement_rates is not None:
            return np.asarray(self.movement_rates, dtype=float) / 60.0
        p_left, p_through, p_right = self.turning_proportions
        rates = []
        for m in intersection.movements:
            share = p_left if m.turn == "left" else p_through + p_right
            rates.append(self.approach_rates[m.approach] * share / 60.0)
        return np.array(rates)

    def rates_at(self, intersection: Intersection, t: float) -> np.ndarray:
        base = self.base_rates(intersection)
        if self.drift_amplitude == 0:
            return base
        phase = 2.0 * math.pi * t / self.drift_period_s
        return base * max(0.0, 1.0 + self.drift_amplitude * math.sin(phase))

    def violations(self, intersection: Intersection) -> list[str]:
        found = []
        if abs(sum(self.turning_proportions) - 1.0) > 1e-9:
            found.append(f"turning proportions sum to {sum(self.turning_proportions)}, not 1")
        if any(p < 0 for p in self.turning_proportions):
            found.append("turning proportions must be nonnegative")
        rates = self.movement_rates if self.movement_rates is not None else self.approach_rates
        if any(r < 0 for r in rates):
            found.append("arrival rates must be nonnegative")
        if self.movement_rates is not None:
            if len(self.movement_rates) != intersection.movement_count:
                found.append("movement_rates needs one entry per movement")
        elif len(self.approach_rates) <= max(m.approach for m in intersection.movements):
            found.append("approach_rates needs one entry per approach")
        if not found:
            peak_slope = float(np.max(self.base_rates(intersection))) * self.drift_amplitude
            peak_slope *= 2.0 * math.pi / self.drift_period_s
            if peak_slope > self.drift_slope_bound:
                found.append(
                    f"drift slope {peak_slope:.4g} veh/s^2 exceeds bound {self.drift_slope_bound}"
                )
        return found


class MicrosimParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    spawn_distance: float = 150.0
    spawn_speed_min: float = 10.0
    spawn_speed_max: float = 16.0
    length_margin: float = 5.0
    driver: DzParams = DzParams()


class SignalStatus(StrEnum):
    GREEN = "green"
    YELLOW = "yellow"
    RED = "red"


class Intent(StrEnum):
    NONE = "none"
    STOP = "stop"
    GO = "go"


@dataclass(frozen=True, slots=True)
class VehicleTrack:
    id: int
    movement: int
    speed: float
    distance: float
    length_margin: float = 5.0
    desired_speed: float = 13.0
    intent: Intent = Intent.NONE


@dataclass(frozen=True, slots=True)
class ClearingVehicle:
    """A vehicle past its stop line that has not yet left the conflict zone."""

    id: int
    movement: int
    remaining: float
    speed: float


@dataclass(frozen=True, slots=True)
class StepEvents:
    arrivals: np.ndarray  # vehicles joining the queue (A)
    served: np.ndarray  # vehicles discharged from the queue (S)
    spawned: np.ndarray
    crossed: np.ndarray  # tracked vehicles crossing the stop line
    conflict: bool = False
    spillback: bool = False


@dataclass(frozen=True)
class TrueState:
    queues: np.ndarray
    true_lambda: np.ndarray
    tracks: tuple[VehicleTrack, ...] = ()
    sim_time: float = 0.0
    carry: np.ndarray | None = None
    clearing: tuple[ClearingVehicle, ...] = ()
    next_vehicle_id: int = 0
    totals: dict[str, np.ndarray] = field(default_factory=dict)
    last_step: StepEvents | None = None

    @property
    def movement_count(self) -> int:
        return len(self.queues)


@dataclass
class EpisodeStreams:
    """Independent random streams of one episode, all derived from a single seed."""

    arrivals: np.random.Generator
    speeds: np.random.Generator
    sensor: np.random.Generator
    occlusion: np.random.Generator
    belief: np.random.Generator
    rollout: np.random.Generator
    decisions: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int | np.random.SeedSequence) -> "EpisodeStreams":
        if not isinstance(seed, np.random.SeedSequence):
            seed = np.random.SeedSequence(seed)
        children = seed.spawn(7)
        return cls(*(np.random.default_rng(child) for child in children))


def initial_true_state(intersection: Intersection, demand: DemandProfile) -> TrueState:
    count = intersection.movement_count
    zeros = np.zeros(count, dtype=np.int64)
    return TrueState(
        queues=zeros.copy(),
        true_lambda=demand.rates_at(intersection, 0.0),
        carry=np.zeros(count),
        totals={key: zeros.copy() for key in ("spawned", "crossed", "discharged", "joined")},
    )


def sample_arrivals(rate: float, dt: float, rng: np.random.Generator) -> int:
    """Poisson(rate * dt) arrivals in one step."""
    if rate < 0:
        raise ContractViolation(f"negative arrival rate {rate}")
    if dt <= 0:
        raise ContractViolation(f"non-positive step {dt}")
    if rate == 0:
        return 0
    return int(rng.poisson(rate * dt))


def discharge(
    queue: int, served: bool, mu: float, dt: float, carry: float = 0.0
) -> tuple[int, float]:
    """Vehicles discharged this step and the updated fractional-capacity carry.

    Capacity accrues as mu*dt per served step; only whole vehicles leave. The fractional
    remainder carries over while the queue saturates the capacity and is dropped otherwise.
    """
    if queue < 0:
        raise ContractViolation(f"negative queue {queue}")
    if not served:
        return 0, 0.0
    capacity = carry + mu * dt
    whole = math.floor(capacity + 1e-12)
    count = min(queue, whole)
    if count < whole:
        return count, 0.0
    return count, capacity - whole


def signal_status(
    movement: int, phase_state: PhaseState, intersection: Intersection
) -> SignalStatus:
    if movement not in intersection.phase(phase_state.active_phase).served_movements:
        return SignalStatus.RED
    match phase_state.interval:
        case Interval.GREEN:
            return SignalStatus.GREEN
        case Interval.YELLOW:
            return SignalStatus.YELLOW
    return SignalStatus.RED


def step_true_state(
    state: TrueState,
    phase_state: PhaseState,
    demand: DemandProfile,
    intersection: Intersection,
    params: MicrosimParams,
    streams: EpisodeStreams,
) -> TrueState:
    """Advance the true state by one step under the indication *phase_state*."""
    dt = intersection.timing.dt
    count = intersection.movement_count
    mu = intersection.saturation_flows()
    served_mask = intersection.served_mask(phase_state)

    queues = state.queues.copy()
    carry = state.carry.copy() if state.carry is not None else np.zeros(count)
    served = np.zeros(count, dtype=np.int64)
    for m in range(count):
        served[m], carry[m] = discharge(int(queues[m]), bool(served_mask[m]), mu[m], dt, carry[m])
    after_service = queues - served

    arrivals = np.zeros(count, dtype=np.int64)
    crossed = np.zeros(count, dtype=np.int64)
    clearing = [_advance_clearing(c, dt) for c in state.clearing]
    clearing = [c for c in clearing if c.remaining > 0]

    tracks: list[VehicleTrack] = []
    for track in state.tracks:
        status = signal_status(track.movement, phase_state, intersection)
        tail = (after_service[track.movement] + arrivals[track.movement]) * params.length_margin
        moved, outcome = _advance_track(track, status, tail, params, dt)
        if outcome == "joined":
            arrivals[track.movement] += 1
        elif outcome == "crossed":
            crossed[track.movement] += 1
            remaining = params.driver.intersection_width + track.length_margin + moved.distance
            clearing.append(ClearingVehicle(track.id, track.movement, remaining, moved.speed))
        else:
            tracks.append(moved)

    sim_time = round(state.sim_time + dt, 9)
    true_lambda = demand.rates_at(intersection, sim_time)
    spawned = np.zeros(count, dtype=np.int64)
    next_id = state.next_vehicle_id
    for m in range(count):
        for _ in range(sample_arrivals(float(true_lambda[m]), dt, streams.arrivals)):
            speed = float(streams.speeds.uniform(params.spawn_speed_min, params.spawn_speed_max))
            spawned[m] += 1
            tail = (after_service[m] + arrivals[m]) * params.length_margin
            if params.spawn_distance - tail <= JOIN_TOLERANCE:
                arrivals[m] += 1
            else:
                tracks.append(
                    VehicleTrack(
                        id=next_id,
                        movement=m,
                        speed=speed,
                        distance=params.spawn_distance,
                        length_margin=params.length_margin,
                        desired_speed=speed,
                    )
                )
            next_id += 1

    new_queues = np.maximum(0, queues + arrivals - served)
    capacities = np.array([mv.storage_capacity for mv in intersection.movements])
    totals = {
        "spawned": state.totals["spawned"] + spawned,
        "crossed": state.totals["crossed"] + crossed,
        "discharged": state.totals["discharged"] + served,
        "joined": state.totals["joined"] + arrivals,
    }
    events = StepEvents(
        arrivals=arrivals,
        served=served,
        spawned=spawned,
        crossed=crossed,
        conflict=_conflict(clearing, phase_state, intersection),
        spillback=bool(np.any(new_queues > capacities)),
    )
    return replace(
        state,
        queues=new_queues,
        true_lambda=true_lambda,
        tracks=tuple(tracks),
        sim_time=sim_time,
        carry=carry,
        clearing=tuple(clearing),
        next_vehicle_id=next_id,
        totals=totals,
        last_step=events,
    )


# Helpers


def _advance_clearing(vehicle: ClearingVehicle, dt: float) -> ClearingVehicle:
    return replace(vehicle, remaining=vehicle.remaining - max(vehicle.speed, 1.0) * dt)


def _conflict(
    clearing: list[ClearingVehicle], phase_state: PhaseState, intersection: Intersection
) -> bool:
    """A green released while a conflicting vehicle is still inside the intersection."""
    if phase_state.interval is not Interval.GREEN:
        return False
    green = intersection.phase(phase_state.active_phase).served_movements
    return any(intersection.conflicting(c.movement, g) for c in clearing for g in green)


def _advance_track(
    track: VehicleTrack, status: SignalStatus, tail: float, params: MicrosimParams, dt: float
) -> tuple[VehicleTrack, str]:
    """Move one vehicle for a step. Outcome is 'moving', 'joined' or 'crossed'."""
    intent = track.intent
    queue_ahead = tail > 0
    if status is SignalStatus.GREEN and not queue_ahead:
        intent = Intent.NONE if intent is Intent.STOP else intent
    elif status is not SignalStatus.GREEN and intent is Intent.NONE:
        # Decide at the first non-green indication seen: stop if the stop line is reachable.
        at_line = track.distance - tail <= JOIN_TOLERANCE
        feasible = at_line or track.distance >= stopping_distance(track.speed, params.driver)
        intent = Intent.STOP if feasible or queue_ahead else Intent.GO
    if queue_ahead and intent is not Intent.GO:
        intent = Intent.STOP

    if intent is Intent.STOP:
        return _brake_towards(replace(track, intent=Intent.STOP), tail, params, dt)

    speed = min(track.desired_speed, track.speed + ACCELERATION * dt)
    distance = track.distance - 0.5 * (track.speed + speed) * dt
    moved = replace(track, speed=speed, distance=distance, intent=intent)
    if distance <= 0:
        return moved, "crossed"
    return moved, "moving"


def _brake_towards(
    track: VehicleTrack, stop_point: float, params: MicrosimParams, dt: float
) -> tuple[VehicleTrack, str]:
    gap = track.distance - stop_point
    if gap <= JOIN_TOLERANCE:
        return replace(track, speed=0.0, distance=max(stop_point, 0.0)), "joined"

    v = track.speed
    comfort = COMFORT_BRAKE_SHARE * params.driver.a_max
    if v <= 0:
        # Stopped short of the stop point (the queue ahead moved up): creep forward.
        v_next = min(track.desired_speed, ACCELERATION * dt)
        travelled = 0.5 * v_next * dt
    elif gap > v**2 / (2.0 * comfort) + v * dt:
        v_next = v
        travelled = v * dt
    else:
        decel = min(v**2 / (2.0 * gap), params.driver.a_max)
        v_next = max(0.0, v - decel * dt)
        travelled = 0.5 * (v + v_next) * dt

    distance = track.distance - travelled
    if distance - stop_point <= JOIN_TOLERANCE:
        return replace(track, speed=0.0, distance=max(stop_point, 0.0)), "joined"
    return replace(track, speed=v_next, distance=distance), "moving"
