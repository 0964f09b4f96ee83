"""
Dilemma-zone risk at yellow onset.

A vehicle is in the dilemma zone when it can neither stop before the stop line with bounded
deceleration nor clear the intersection before conflicting traffic is released. Kinematics are
uncertain, so the risk of terminating a phase is a probability under the kinematic belief.
"""

from dataclasses import dataclass
from enum import StrEnum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .intersection import Intersection, PhaseState

# Below this variance a kinematic Gaussian is treated as a point mass.
DEGENERATE_VARIANCE = 1e-12


class RiskMethod(StrEnum):
    INDEPENDENCE_BOUND = "independence-bound"
    MONTE_CARLO = "monte-carlo"


class DzParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    a_max: float = Field(3.0, gt=0, description="comfortable maximum deceleration, m/s^2")
    reaction_time: float = Field(1.0, ge=0, description="driver reaction time, s")
    v_min: float = Field(1.0, gt=0, description="speed floor for clearing time, m/s")
    intersection_width: float = Field(20.0, ge=0, description="m")
    vehicle_margin: float = Field(5.0, ge=0, description="vehicle length margin, m")
    t_yellow: float = 3.0
    t_all_red: float = 2.0
    lookahead: float = Field(120.0, gt=0, description="relevance distance on green approaches, m")
    mc_samples: int = Field(512, ge=1)
    method: RiskMethod = RiskMethod.MONTE_CARLO

    @property
    def clearance_window(self) -> float:
        return self.t_yellow + self.t_all_red


@dataclass(frozen=True, slots=True)
class KinematicBelief:
    """Gaussian belief over (speed, distance-to-stopline) of one approaching vehicle."""

    vehicle_id: int
    movement: int
    mean: np.ndarray  # (v, d)
    cov: np.ndarray  # 2x2
    margin: float = 5.0
    confidence: float = 1.0
    last_seen: float = 0.0

    @classmethod
    def from_estimate(
        cls,
        vehicle_id: int,
        movement: int,
        v: float,
        d: float,
        sigma_v: float,
        sigma_d: float,
        **kwargs,
    ) -> "KinematicBelief":
        return cls(
            vehicle_id=vehicle_id,
            movement=movement,
            mean=np.array([v, d], dtype=float),
            cov=np.diag([sigma_v**2, sigma_d**2]),
            **kwargs,
        )

    def advanced(self, seconds: float) -> "KinematicBelief":
        """Constant-velocity prediction: d <- d - v*t, covariance pushed through the same map."""
        if seconds == 0:
            return self
        transform = np.array([[1.0, 0.0], [-seconds, 1.0]])
        return KinematicBelief(
            vehicle_id=self.vehicle_id,
            movement=self.movement,
            mean=transform @ self.mean,
            cov=transform @ self.cov @ transform.T,
            margin=self.margin,
            confidence=self.confidence,
            last_seen=self.last_seen,
        )

    def sample(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Draw *n* (v, d) samples clamped to v >= 0, d >= 0."""
        if is_degenerate(self.cov):
            v = np.full(n, max(self.mean[0], 0.0))
            d = np.full(n, max(self.mean[1], 0.0))
            return v, d
        chol = np.linalg.cholesky(self.cov)
        draws = self.mean + rng.standard_normal((n, 2)) @ chol.T
        return np.maximum(draws[:, 0], 0.0), np.maximum(draws[:, 1], 0.0)


@dataclass(frozen=True, slots=True)
class RiskReport:
    risk: float
    per_vehicle: tuple[tuple[int, float], ...]
    method: RiskMethod
    mc_samples: int | None = None

    def as_dict(self) -> dict:
        return {
            "risk": self.risk,
            "per_vehicle": [[vid, p] for vid, p in self.per_vehicle],
            "method": str(self.method),
            "mc_samples": self.mc_samples,
        }


NO_RISK = RiskReport(risk=0.0, per_vehicle=(), method=RiskMethod.MONTE_CARLO)


def stopping_distance(v, params: DzParams):
    """Reaction distance plus braking distance at a_max; works on scalars and arrays."""
    return v * params.reaction_time + v**2 / (2.0 * params.a_max)


def clearing_time(d, v, vehicle_margin: float, params: DzParams):
    """Time to travel past the far side of the intersection at the current speed."""
    distance = d + params.intersection_width + vehicle_margin
    return distance / np.maximum(v, params.v_min)


def in_dilemma(v, d, vehicle_margin: float, params: DzParams):
    """Indicator of the dilemma event: stopping infeasible and clearing infeasible."""
    cannot_stop = d < stopping_distance(v, params)
    cannot_clear = clearing_time(d, v, vehicle_margin, params) > params.clearance_window
    return np.logical_and(cannot_stop, cannot_clear)


def is_degenerate(cov: np.ndarray) -> bool:
    if np.all(np.abs(cov) <= DEGENERATE_VARIANCE):
        return True
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return True
    return False


def dilemma_probability(
    kinematics: KinematicBelief,
    params: DzParams,
    rng: np.random.Generator,
    mc_samples: int | None = None,
) -> float:
    """P(dilemma) for one vehicle; a degenerate belief yields the 0/1 indicator."""
    if is_degenerate(kinematics.cov):
        v, d = max(kinematics.mean[0], 0.0), max(kinematics.mean[1], 0.0)
        return float(in_dilemma(v, d, kinematics.margin, params))
    n = mc_samples or params.mc_samples
    v, d = kinematics.sample(rng, n)
    return float(np.mean(in_dilemma(v, d, kinematics.margin, params)))


def relevant_vehicles(
    kinematics: tuple[KinematicBelief, ...] | list[KinematicBelief],
    phase_state: PhaseState,
    intersection: Intersection,
    params: DzParams,
    offset_s: float = 0.0,
) -> list[KinematicBelief]:
    """Vehicles on the approaches green in *phase_state*, advanced by *offset_s*, in lookahead."""
    served = intersection.phase(phase_state.active_phase).served_movements
    relevant = []
    for kb in kinematics:
        if kb.movement not in served:
            continue
        moved = kb.advanced(offset_s)
        if 0.0 <= moved.mean[1] <= params.lookahead:
            relevant.append(moved)
    return relevant


def dz_risk(
    kinematics: tuple[KinematicBelief, ...] | list[KinematicBelief],
    phase_state: PhaseState,
    intersection: Intersection,
    params: DzParams,
    rng: np.random.Generator,
    method: RiskMethod | None = None,
    offset_s: float = 0.0,
) -> RiskReport:
    """Risk of initiating yellow on the phase green in *phase_state*, *offset_s* from now."""
    method = method or params.method
    vehicles = relevant_vehicles(kinematics, phase_state, intersection, params, offset_s)
    if not vehicles:
        return RiskReport(risk=0.0, per_vehicle=(), method=method)

    if method is RiskMethod.INDEPENDENCE_BOUND:
        probs = [dilemma_probability(kb, params, rng) for kb in vehicles]
        risk = 1.0 - float(np.prod([1.0 - p for p in probs]))
        return RiskReport(
            risk=_unit(risk),
            per_vehicle=tuple((kb.vehicle_id, p) for kb, p in zip(vehicles, probs)),
            method=method,
        )

    n = params.mc_samples
    events = np.zeros((len(vehicles), n), dtype=bool)
    for row, kb in enumerate(vehicles):
        v, d = kb.sample(rng, n)
        events[row] = in_dilemma(v, d, kb.margin, params)
    per_vehicle = events.mean(axis=1)
    return RiskReport(
        risk=_unit(float(events.any(axis=0).mean())),
        per_vehicle=tuple((kb.vehicle_id, float(p)) for kb, p in zip(vehicles, per_vehicle)),
        method=method,
        mc_samples=n,
    )


def _unit(p: float) -> float:
    return min(1.0, max(0.0, p))
