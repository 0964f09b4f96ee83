"""
Movement-level belief filter.

For each movement the belief keeps a weighted particle set over the queue length, a Gamma
posterior over the arrival rate and the deterministic service age. Approaching vehicles
carry Gaussian kinematic beliefs taken from the camera tracks. The predict step applies the
queue transition Q' = max(0, Q + A - S) per particle; the update step reweights particles by a
binomial thinning likelihood of the counted vehicles and learns the rate from first sightings.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field
from scipy import stats

from .errors import ContractViolation
from .intersection import Intersection, PhaseState
from .safety import KinematicBelief
from .sensor import Observation, SensorParams, stop_classification_share

# Track ids not seen for this long are forgotten.
SEEN_MEMORY_S = 120.0


class BeliefParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    particles: int = Field(256, ge=1)
    prior_rate: float = Field(2.0, ge=0, description="prior mean arrival rate, veh/min")
    prior_shape: float = Field(2.0, gt=0)
    ema_factor: float = Field(0.3, ge=0, le=1, description="0 disables count smoothing")
    motion_aggregation: bool = Field(True, description="count stopped vehicles only")
    resample_threshold: float = Field(0.5, gt=0, le=1, description="share of N for the ESS test")
    rate_memory_s: float | None = Field(600.0, gt=0, description="rate forgetting horizon")
    coast_s: float = Field(3.0, ge=0, description="keep missed tracks this long")
    kinematic_inflation: float = Field(1.0, ge=1.0)


@dataclass(frozen=True)
class MovementBelief:
    particles: np.ndarray
    weights: np.ndarray
    alpha: float
    beta: float  # math.inf encodes a rate known to be zero
    service_age: float = 0.0
    ema_count: float = 0.0
    carry: np.ndarray | None = None

    @property
    def rate_mean(self) -> float:
        """Posterior mean arrival rate in veh/s."""
        if math.isinf(self.beta):
            return 0.0
        return self.alpha / self.beta

    @property
    def effective_sample_size(self) -> float:
        return float(1.0 / np.sum(self.weights**2))


@dataclass(frozen=True)
class Belief:
    movements: tuple[MovementBelief, ...]
    kinematics: tuple[KinematicBelief, ...] = ()
    time: float = 0.0
    seen: dict[int, float] = field(default_factory=dict)
    innovation: float = 0.0

    @property
    def movement_count(self) -> int:
        return len(self.movements)

    def expected_queues(self) -> np.ndarray:
        return np.array([_mean(mb) for mb in self.movements])

    def queue_variances(self) -> np.ndarray:
        return np.array([_variance(mb) for mb in self.movements])

    def rate_means(self) -> np.ndarray:
        return np.array([mb.rate_mean for mb in self.movements])

    def service_ages(self) -> np.ndarray:
        return np.array([mb.service_age for mb in self.movements])

    def summary(self) -> dict[str, np.ndarray]:
        return {
            "eq": self.expected_queues(),
            "varq": self.queue_variances(),
            "elam": self.rate_means(),
            "tau": self.service_ages(),
        }


def init_belief(intersection: Intersection, params: BeliefParams | None = None) -> Belief:
    """Empty queues, Gamma rate prior with the configured mean, zero service ages."""
    params = params or BeliefParams()
    n = params.particles
    rate = params.prior_rate / 60.0
    beta = params.prior_shape / rate if rate > 0 else math.inf
    movements = tuple(
        MovementBelief(
            particles=np.zeros(n, dtype=np.int64),
            weights=np.full(n, 1.0 / n),
            alpha=params.prior_shape,
            beta=beta,
            carry=np.zeros(n),
        )
        for _ in range(intersection.movement_count)
    )
    return Belief(movements=movements)


def expected_queue(belief: Belief, movement: int) -> float:
    return _mean(belief.movements[movement])


def queue_variance(belief: Belief, movement: int) -> float:
    return _variance(belief.movements[movement])


def credible_interval(mb: MovementBelief, level: float = 0.9) -> tuple[int, int]:
    """Central credible interval of the queue posterior, inclusive bounds."""
    order = np.argsort(mb.particles, kind="stable")
    values = mb.particles[order]
    cdf = np.cumsum(mb.weights[order])
    tail = (1.0 - level) / 2.0
    low = values[min(np.searchsorted(cdf, tail - 1e-12), len(values) - 1)]
    high = values[min(np.searchsorted(cdf, 1.0 - tail - 1e-12), len(values) - 1)]
    return int(low), int(high)


def pit_value(mb: MovementBelief, true_queue: int, rng: np.random.Generator) -> float:
    """Randomised probability integral transform of *true_queue* under the queue posterior.

    Uniform on [0, 1] when the posterior is calibrated, despite the discrete support.
    """
    below = float(mb.weights[mb.particles < true_queue].sum())
    at = float(mb.weights[mb.particles == true_queue].sum())
    return min(1.0, below + rng.random() * at)


def ema_smooth(previous: float, observed: float, factor: float) -> float:
    if not 0.0 <= factor <= 1.0:
        raise ContractViolation(f"smoothing factor {factor} outside [0, 1]")
    return factor * previous + (1.0 - factor) * observed


def update_service_age(tau: float, served: bool, dt: float) -> float:
    """Seconds since the movement last received green service."""
    if tau < 0:
        raise ContractViolation(f"negative service age {tau}")
    return 0.0 if served else round(tau + dt, 9)


def propagate_queue_belief(
    mb: MovementBelief, served: bool, mu: float, dt: float, rng: np.random.Generator
) -> MovementBelief:
    """Open-loop transition of one movement's queue particles over one step."""
    carry = mb.carry if mb.carry is not None else np.zeros(len(mb.particles))
    particles, carry = propagate_particles(
        mb.particles, carry, mb.alpha, mb.beta, served, mu, dt, rng
    )
    return replace(mb, particles=particles, carry=carry)


def propagate_particles(
    particles: np.ndarray,
    carry: np.ndarray,
    alpha: float,
    beta: float,
    served: bool,
    mu: float,
    dt: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised Q' = max(0, Q + A - S) with A ~ Poisson(lambda * dt), lambda ~ Gamma."""
    n = len(particles)
    if math.isinf(beta):
        arrivals = np.zeros(n, dtype=np.int64)
    else:
        rates = rng.gamma(alpha, 1.0 / beta, size=n)
        arrivals = rng.poisson(rates * dt)

    if served:
        capacity = carry + mu * dt
        whole = np.floor(capacity + 1e-12).astype(np.int64)
        discharged = np.minimum(particles, whole)
        new_carry = np.where(discharged < whole, 0.0, capacity - whole)
    else:
        discharged = np.zeros(n, dtype=np.int64)
        new_carry = np.zeros(n)
    return np.maximum(0, particles + arrivals - discharged), new_carry


def update_belief(
    belief: Belief,
    observation: Observation,
    previous_action,
    phase_state: PhaseState | None,
    intersection: Intersection,
    params: BeliefParams,
    rng: np.random.Generator,
    sensor: SensorParams | None = None,
    inflation: float = 1.0,
) -> Belief:
    """One filter step: predict under *phase_state*, then condition on *observation*.

    *phase_state* is the indication that governed the step just simulated; ``None`` skips the
    predict step (first observation of an episode). *previous_action* is only logged.
    *sensor* supplies the speed-noise model behind the stopped-vehicle likelihood.
    """
    dt = intersection.timing.dt
    counts = observation.stopped_count if params.motion_aggregation else observation.detected_count
    p_det = observation.p_det
    if p_det <= 0 and np.any(observation.detected_count > 0):
        raise ContractViolation("vehicles counted with zero detection probability")

    movements = list(belief.movements)
    time = belief.time
    if phase_state is not None:
        movements = _predict(movements, phase_state, intersection, params, rng)
        time = round(time + dt, 9)

    new_arrivals = np.zeros(len(movements), dtype=np.int64)
    for track in observation.tracks:
        if track.vehicle_id not in belief.seen:
            new_arrivals[track.movement] += 1

    innovation = 0.0
    for m, mb in enumerate(movements):
        smoothed = ema_smooth(mb.ema_count, float(counts[m]), params.ema_factor)
        z = int(counts[m]) if params.ema_factor == 0 else min(int(counts[m]), round(smoothed))
        mb = replace(mb, ema_count=smoothed)
        if p_det > 0:
            mb, residual = _reweight(mb, z, p_det, params, sensor, rng, m)
            innovation = max(innovation, residual)
        # A blind camera sees no first sightings; only forgetting applies then.
        exposure = dt if phase_state is not None and p_det > 0 else 0.0
        movements[m] = _learn_rate(mb, int(new_arrivals[m]), exposure)

    seen = {vid: t for vid, t in belief.seen.items() if time - t <= SEEN_MEMORY_S}
    seen.update((track.vehicle_id, time) for track in observation.tracks)

    logger.debug(
        "belief t={} after {}: E[Q]={} innovation={:.2f}",
        time,
        previous_action,
        np.round([_mean(mb) for mb in movements], 2).tolist(),
        innovation,
    )
    return Belief(
        movements=tuple(movements),
        kinematics=_kinematics(belief, observation, time, params, inflation),
        time=time,
        seen=seen,
        innovation=innovation,
    )


# Helpers


def _mean(mb: MovementBelief) -> float:
    return float(np.dot(mb.weights, mb.particles))


def _variance(mb: MovementBelief) -> float:
    mean = _mean(mb)
    return float(np.dot(mb.weights, (mb.particles - mean) ** 2))


def _predict(
    movements: list[MovementBelief],
    phase_state: PhaseState,
    intersection: Intersection,
    params: BeliefParams,
    rng: np.random.Generator,
) -> list[MovementBelief]:
    dt = intersection.timing.dt
    served = intersection.served_mask(phase_state)
    mu = intersection.saturation_flows()
    forget = 1.0 if params.rate_memory_s is None else math.exp(-dt / params.rate_memory_s)
    predicted = []
    for m, mb in enumerate(movements):
        mb = propagate_queue_belief(mb, bool(served[m]), float(mu[m]), dt, rng)
        predicted.append(
            replace(
                mb,
                alpha=mb.alpha * forget,
                beta=mb.beta * forget,
                service_age=update_service_age(mb.service_age, bool(served[m]), dt),
            )
        )
    return predicted


def _reweight(
    mb: MovementBelief,
    z: int,
    p_det: float,
    params: BeliefParams,
    sensor: SensorParams | None,
    rng: np.random.Generator,
    movement: int,
) -> tuple[MovementBelief, float]:
    """Condition on *z* counted vehicles; returns the new belief and the count residual."""
    p = np.full(len(mb.particles), p_det)
    if params.motion_aggregation and sensor is not None:
        p = p * stop_classification_share(mb.particles, sensor)
    residual = abs(z - float(np.dot(mb.weights, p * mb.particles)))

    weights = mb.weights * stats.binom.pmf(z, mb.particles, p)
    total = weights.sum()
    if total <= 0:
        logger.warning(
            "movement {}: no particle explains {} counted vehicles, reinitialising", movement, z
        )
        n = len(mb.particles)
        particles = z + rng.negative_binomial(z + 1, p_det, size=n)
        reset = replace(
            mb,
            particles=particles.astype(np.int64),
            weights=np.full(n, 1.0 / n),
            carry=np.zeros(n),
        )
        return reset, residual

    weights = weights / total
    mb = replace(mb, weights=weights)
    if mb.effective_sample_size < params.resample_threshold * len(weights):
        mb = _resample(mb, rng)
    return mb, residual


def _resample(mb: MovementBelief, rng: np.random.Generator) -> MovementBelief:
    """Systematic resampling to uniform weights."""
    n = len(mb.weights)
    positions = (rng.random() + np.arange(n)) / n
    index = np.minimum(np.searchsorted(np.cumsum(mb.weights), positions), n - 1)
    carry = mb.carry[index] if mb.carry is not None else None
    return replace(mb, particles=mb.particles[index], weights=np.full(n, 1.0 / n), carry=carry)


def _learn_rate(mb: MovementBelief, arrivals: int, exposure: float) -> MovementBelief:
    """Poisson-Gamma conjugate update on first-seen vehicles over *exposure* seconds."""
    if math.isinf(mb.beta):
        if arrivals == 0 or exposure == 0:
            return mb
        return replace(mb, alpha=float(arrivals), beta=exposure)
    return replace(mb, alpha=mb.alpha + arrivals, beta=mb.beta + exposure)


def _kinematics(
    belief: Belief,
    observation: Observation,
    time: float,
    params: BeliefParams,
    inflation: float,
) -> tuple[KinematicBelief, ...]:
    scale = params.kinematic_inflation * inflation
    current = {
        track.vehicle_id: KinematicBelief.from_estimate(
            track.vehicle_id,
            track.movement,
            track.speed,
            track.distance,
            track.sigma_v * scale,
            track.sigma_d * scale,
            confidence=track.confidence,
            last_seen=time,
        )
        for track in observation.tracks
    }
    elapsed = time - belief.time
    for kb in belief.kinematics:
        if kb.vehicle_id in current or time - kb.last_seen > params.coast_s:
            continue
        coasted = kb.advanced(elapsed)
        if coasted.mean[1] >= 0:
            current[kb.vehicle_id] = coasted
    return tuple(current.values())
