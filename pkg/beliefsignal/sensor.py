"""
Synthetic camera observation model.

Every queued or tracked vehicle is detected independently with one per-step detection
probability that falls with zone density, occlusion severity and (optionally) poor
illumination. Detected approach vehicles carry kinematic estimates whose noise grows with
distance from the camera. Only missed detections are modelled: no false positives.
"""

import math
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import stats

from .microsim import TrueState

# Reported sigma when kinematic noise is disabled; keeps sigma strictly positive.
SIGMA_FLOOR = 1e-6


class ScenarioClass(StrEnum):
    S1 = "S1"  # clear view, regular demand
    S2 = "S2"  # intermittent obstructions
    S3 = "S3"  # sustained occlusion
    S4 = "S4"  # near-capacity demand


class OcclusionMode(StrEnum):
    CLEAR = "clear"
    INTERMITTENT = "intermittent"
    SUSTAINED = "sustained"


class SensorParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    p0: float = Field(0.98, ge=0, le=1, description="detection probability, empty and clear")
    density_coef: float = Field(0.0015, ge=0, description="loss per vehicle in the zones")
    occlusion_coef: float = Field(0.5, ge=0, description="loss per unit occlusion severity")
    p_floor: float = Field(0.5, ge=0, le=1)
    noise_enabled: bool = True
    sigma_v: float = Field(1.0, gt=0, description="speed noise at the reference distance, m/s")
    sigma_d: float = Field(3.0, gt=0, description="distance noise at the reference distance, m")
    noise_reference_distance: float = 100.0
    noise_floor_distance: float = 10.0
    stop_speed: float = Field(1.0, description="estimated speed below which a vehicle is stopped")
    queue_zone_length: float = Field(60.0, description="queue zone extent from the stop line, m")
    camera_range: float = 150.0
    queue_spacing: float = Field(5.0, gt=0, description="spacing of queued vehicles, m")
    intermittent_rate: float = Field(0.01, ge=0, description="episode starts per second")
    intermittent_mean_s: float = Field(20.0, gt=0)
    intermittent_severity: float = Field(0.02, gt=0, le=1)
    sustained_rate: float = Field(0.004, ge=0)
    sustained_mean_s: float = Field(120.0, gt=0)
    sustained_severity: float = Field(0.03, gt=0, le=1)
    severity_density_coef: float = Field(0.002, ge=0, description="severity added per vehicle")
    illumination_penalty: float = Field(0.0, ge=0, description="peak loss at night, 0 disables")
    illumination_period_s: float = Field(900.0, gt=0)


@dataclass(frozen=True, slots=True)
class OcclusionState:
    mode: OcclusionMode = OcclusionMode.CLEAR
    episode_remaining: float = 0.0
    severity: float = 0.0

    @property
    def occluded(self) -> bool:
        return self.mode is not OcclusionMode.CLEAR


CLEAR = OcclusionState()


@dataclass(frozen=True, slots=True)
class NoisyTrack:
    vehicle_id: int
    movement: int
    speed: float
    distance: float
    sigma_v: float
    sigma_d: float
    confidence: float


@dataclass(frozen=True)
class Observation:
    time: float
    detected_count: np.ndarray
    stopped_count: np.ndarray
    tracks: tuple[NoisyTrack, ...]
    p_det: float

    @property
    def occlusion_proxy(self) -> float:
        return 1.0 - self.p_det


def detection_probability(
    zone_count: int, occlusion: OcclusionState, params: SensorParams, t: float = 0.0
) -> float:
    """Per-step detection probability, nonincreasing in density and occlusion severity."""
    p = params.p0 - params.density_coef * zone_count - params.occlusion_coef * occlusion.severity
    if params.illumination_penalty > 0:
        darkness = 0.5 - 0.5 * math.cos(2.0 * math.pi * t / params.illumination_period_s)
        p -= params.illumination_penalty * darkness
    return min(1.0, max(params.p_floor, p))


def zone_counts(state: TrueState, params: SensorParams) -> np.ndarray:
    """True number of vehicles per movement inside the queue zone (queued plus approaching)."""
    counts = state.queues.astype(np.int64).copy()
    for track in state.tracks:
        if track.distance <= params.queue_zone_length:
            counts[track.movement] += 1
    return counts


def observe(
    state: TrueState,
    occlusion: OcclusionState,
    params: SensorParams,
    rng: np.random.Generator,
) -> Observation:
    """Sample one noisy observation of *state*."""
    true_zone = zone_counts(state, params)
    p = detection_probability(int(true_zone.sum()), occlusion, params, state.sim_time)
    count = state.movement_count
    detected = np.zeros(count, dtype=np.int64)
    stopped = np.zeros(count, dtype=np.int64)
    for m in range(count):
        queued = int(state.queues[m])
        if queued == 0:
            continue
        seen = rng.random(queued) < p
        positions = np.arange(queued) * params.queue_spacing
        speeds = _noisy(np.zeros(queued), _sigma(positions, params.sigma_v, params), params, rng)
        detected[m] += int(seen.sum())
        stopped[m] += int(np.sum(seen & (speeds < params.stop_speed)))

    tracks = []
    for track in state.tracks:
        if track.distance > params.camera_range or rng.random() >= p:
            continue
        sigma_v = float(_sigma(track.distance, params.sigma_v, params))
        sigma_d = float(_sigma(track.distance, params.sigma_d, params))
        speed = float(_noisy(track.speed, sigma_v, params, rng))
        distance = float(_noisy(track.distance, sigma_d, params, rng))
        reach = min(track.distance, params.camera_range) / params.camera_range
        if track.distance <= params.queue_zone_length:
            detected[track.movement] += 1
            if speed < params.stop_speed:
                stopped[track.movement] += 1
        tracks.append(
            NoisyTrack(
                vehicle_id=track.id,
                movement=track.movement,
                speed=speed,
                distance=distance,
                sigma_v=sigma_v if params.noise_enabled else SIGMA_FLOOR,
                sigma_d=sigma_d if params.noise_enabled else SIGMA_FLOOR,
                confidence=p * (1.0 - 0.5 * reach),
            )
        )

    return Observation(
        time=state.sim_time,
        detected_count=detected,
        stopped_count=stopped,
        tracks=tuple(tracks),
        p_det=p,
    )


def stop_classification_share(queue_sizes, params: SensorParams) -> np.ndarray:
    """Expected share of a queue of each size whose estimated speed reads as stopped.

    Queued vehicles stand still; only their speed noise, which grows with distance along the
    queue, can push an estimate above the stop threshold.
    """
    sizes = np.asarray(queue_sizes, dtype=np.int64)
    if not params.noise_enabled:
        return np.ones(sizes.shape)
    longest = int(sizes.max(initial=0))
    positions = np.arange(max(longest, 1)) * params.queue_spacing
    # v_hat = max(0, N(0, sigma)) reads below the threshold with probability Phi(threshold / sigma)
    per_slot = stats.norm.cdf(params.stop_speed / _sigma(positions, params.sigma_v, params))
    cumulative = np.concatenate(([0.0], np.cumsum(per_slot)))
    share = np.ones(sizes.shape)
    nonempty = sizes > 0
    share[nonempty] = cumulative[sizes[nonempty]] / sizes[nonempty]
    return share


def step_occlusion(
    occlusion: OcclusionState,
    scenario: ScenarioClass,
    density: int,
    params: SensorParams,
    rng: np.random.Generator,
    dt: float = 1.0,
) -> OcclusionState:
    """Advance the occlusion process one step; severity tracks the current zone density."""
    match scenario:
        case ScenarioClass.S2:
            mode, rate, mean_s, base = (
                OcclusionMode.INTERMITTENT,
                params.intermittent_rate,
                params.intermittent_mean_s,
                params.intermittent_severity,
            )
        case ScenarioClass.S3:
            mode, rate, mean_s, base = (
                OcclusionMode.SUSTAINED,
                params.sustained_rate,
                params.sustained_mean_s,
                params.sustained_severity,
            )
        case _:
            return CLEAR

    severity = min(1.0, base + params.severity_density_coef * density)
    if occlusion.occluded:
        remaining = round(occlusion.episode_remaining - dt, 9)
        if remaining <= 0:
            return CLEAR
        return OcclusionState(occlusion.mode, remaining, severity)

    if rng.random() < min(1.0, rate * dt):
        steps = int(rng.geometric(min(1.0, dt / mean_s)))
        return OcclusionState(mode, steps * dt, severity)
    return CLEAR


# Helpers


def _sigma(distance, reference_sigma: float, params: SensorParams):
    scale = np.maximum(distance, params.noise_floor_distance) / params.noise_reference_distance
    return reference_sigma * scale


def _noisy(value, sigma, params: SensorParams, rng: np.random.Generator):
    if not params.noise_enabled:
        return value
    return np.maximum(0.0, value + sigma * rng.standard_normal(np.shape(value)))
