"""
Runtime checks of the modelling assumptions the belief-space controller relies on.

Samples are grouped into tumbling windows. A window fails when the perception residuals leave
their envelope, the estimated arrival rates drift faster than the stationarity bound, the
expected service jumps, or spillback is flagged too often. A failed window degrades the
controller to fixed-time fallback until enough consecutive clean windows have passed.
"""

from collections.abc import Sequence
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from ..belief import Belief
from ..errors import ContractViolation
from ..intersection import Intersection, PhaseState

MIN_WINDOW_STEPS = 2


class ValidityThresholds(BaseModel):
    model_config = ConfigDict(frozen=True)

    innovation_bound: float = Field(3.0, gt=0, description="count residual envelope, vehicles")
    exceedance_share: float = Field(0.1, ge=0, le=1, description="allowed share outside it")
    drift_bound: float = Field(0.005, gt=0, description="rate drift bound, veh/s^2")
    service_bound: float = Field(2.0, gt=0, description="step-to-step expected service change")
    spillback_share: float = Field(0.2, ge=0, le=1)
    window_steps: int = Field(30, ge=MIN_WINDOW_STEPS)
    clean_windows: int = Field(2, ge=1, description="clean windows needed to recover")


class Mode(StrEnum):
    NOMINAL = "nominal"
    DEGRADED = "degraded"


@dataclass(frozen=True, slots=True)
class ValiditySample:
    time: float
    innovation: float
    rates: np.ndarray
    expected_service: float
    spillback: bool


@dataclass(frozen=True, slots=True)
class ValidityStatus:
    perception_ok: bool = True
    drift_ok: bool = True
    service_ok: bool = True
    spillback_ok: bool = True

    @property
    def overall(self) -> Mode:
        if self.perception_ok and self.drift_ok and self.service_ok and self.spillback_ok:
            return Mode.NOMINAL
        return Mode.DEGRADED

    def failures(self) -> list[str]:
        checks = {
            "perception": self.perception_ok,
            "drift": self.drift_ok,
            "service": self.service_ok,
            "spillback": self.spillback_ok,
        }
        return [name for name, ok in checks.items() if not ok]


def sample_from_belief(
    belief: Belief, governing: PhaseState | None, intersection: Intersection
) -> ValiditySample:
    """Summarise one filter step for the validity checks."""
    dt = intersection.timing.dt
    mu = intersection.saturation_flows()
    served = (
        intersection.served_mask(governing)
        if governing is not None
        else np.zeros(intersection.movement_count, dtype=bool)
    )
    expected_service = sum(
        float(np.dot(mb.weights, np.minimum(mb.particles, mu[m] * dt)))
        for m, mb in enumerate(belief.movements)
        if served[m]
    )
    capacities = np.array([mv.storage_capacity for mv in intersection.movements])
    return ValiditySample(
        time=belief.time,
        innovation=belief.innovation,
        rates=belief.rate_means(),
        expected_service=expected_service,
        spillback=bool(np.any(belief.expected_queues() > capacities)),
    )


def check_validity(
    window: Sequence[ValiditySample], thresholds: ValidityThresholds
) -> ValidityStatus:
    if len(window) < MIN_WINDOW_STEPS:
        raise ContractViolation(f"validity window of {len(window)} samples is too short")

    exceed = np.mean([s.innovation > thresholds.innovation_bound for s in window])
    span = window[-1].time - window[0].time
    drift = float(np.max(np.abs(window[-1].rates - window[0].rates)))
    service = np.array([s.expected_service for s in window])
    jumps = float(np.max(np.abs(np.diff(service)))) if len(service) > 1 else 0.0
    spill = np.mean([s.spillback for s in window])

    return ValidityStatus(
        perception_ok=bool(exceed <= thresholds.exceedance_share),
        drift_ok=drift <= thresholds.drift_bound * max(span, 0.0) + 1e-12,
        service_ok=jumps <= thresholds.service_bound,
        spillback_ok=bool(spill <= thresholds.spillback_share),
    )


class ValidityMonitor:
    """Tumbling-window validity monitor with recovery hysteresis."""

    def __init__(self, thresholds: ValidityThresholds | None = None):
        self.thresholds = thresholds or ValidityThresholds()
        self.samples: list[ValiditySample] = []
        self.mode = Mode.NOMINAL
        self.last_status = ValidityStatus()
        self.clean_streak = 0
        self.degradations = 0

    @property
    def degraded(self) -> bool:
        return self.mode is Mode.DEGRADED

    @property
    def perception_failed(self) -> bool:
        return not self.last_status.perception_ok

    def record(self, sample: ValiditySample) -> ValidityStatus | None:
        """Add one sample; returns the window status when a window completes."""
        self.samples.append(sample)
        if len(self.samples) < self.thresholds.window_steps:
            return None

        status = check_validity(self.samples, self.thresholds)
        self.samples = []
        self.last_status = status
        if status.overall is Mode.DEGRADED:
            if not self.degraded:
                self.degradations += 1
                logger.warning(
                    "t={}: validity checks failed ({}), falling back to fixed time",
                    sample.time,
                    ", ".join(status.failures()),
                )
            self.mode = Mode.DEGRADED
            self.clean_streak = 0
        elif self.degraded:
            self.clean_streak += 1
            if self.clean_streak >= self.thresholds.clean_windows:
                logger.info("t={}: validity restored", sample.time)
                self.mode = Mode.NOMINAL
                self.clean_streak = 0
        return status
