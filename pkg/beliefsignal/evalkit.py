"""
Per-step proxy metrics, integrated emission proxies and the statistics used in reports.
"""

from collections.abc import Sequence
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
from scipy import stats

from .errors import ContractViolation
from .intersection import Intersection
from .microsim import TrueState
from .sensor import Observation


@dataclass(frozen=True, slots=True)
class MetricRecord:
    time: float
    queue_proxy: float
    stopped_proxy: float
    risk_proxy: float
    occlusion_proxy: float
    decision_latency_ms: float = 0.0
    conflict: bool = False


@dataclass(frozen=True, slots=True)
class EmissionSummary:
    idle_proxy: float = 0.0
    queue_emission_proxy: float = 0.0
    risk_spike_proxy: float = 0.0

    @property
    def total_proxy(self) -> float:
        return self.idle_proxy + self.queue_emission_proxy + self.risk_spike_proxy

    def as_dict(self) -> dict[str, float]:
        return {**asdict(self), "total_proxy": self.total_proxy}


def step_metrics(
    state: TrueState,
    observation: Observation,
    intersection: Intersection,
    risk: float = 0.0,
    latency_ms: float = 0.0,
) -> MetricRecord:
    weights = intersection.weights()
    events = state.last_step
    return MetricRecord(
        time=observation.time,
        queue_proxy=float(np.dot(weights, observation.detected_count)),
        stopped_proxy=float(np.dot(weights, observation.stopped_count)),
        risk_proxy=min(1.0, max(0.0, risk)),
        occlusion_proxy=observation.occlusion_proxy,
        decision_latency_ms=latency_ms,
        conflict=bool(events.conflict) if events is not None else False,
    )


def emission_proxies(
    records: Sequence[MetricRecord], risk_threshold: float, dt: float = 1.0
) -> EmissionSummary:
    """Integrate stopped, queue and above-threshold risk signals over a uniform-step series."""
    if not records:
        return EmissionSummary()
    stopped = np.array([r.stopped_proxy for r in records])
    queue = np.array([r.queue_proxy for r in records])
    risk = np.array([r.risk_proxy for r in records])
    return EmissionSummary(
        idle_proxy=float(stopped.sum() * dt),
        queue_emission_proxy=float(queue.sum() * dt),
        risk_spike_proxy=float(np.maximum(0.0, risk - risk_threshold).sum() * dt),
    )


def confidence_interval(values: Sequence[float], level: float = 0.95) -> tuple[float, float, float]:
    """Two-sided Student-t interval: (mean, lower, upper)."""
    data = np.asarray(values, dtype=float)
    if len(data) < 2:
        raise ContractViolation(f"confidence interval needs at least 2 runs, got {len(data)}")
    mean = float(data.mean())
    half = float(stats.t.ppf(0.5 + level / 2.0, len(data) - 1) * stats.sem(data))
    return mean, mean - half, mean + half


def bootstrap_interval(
    values: Sequence[float],
    rng: np.random.Generator,
    level: float = 0.95,
    resamples: int = 2000,
) -> tuple[float, float, float]:
    """Percentile bootstrap interval of the mean: (mean, lower, upper)."""
    data = np.asarray(values, dtype=float)
    if len(data) < 2:
        raise ContractViolation(f"bootstrap needs at least 2 runs, got {len(data)}")
    means = rng.choice(data, size=(resamples, len(data)), replace=True).mean(axis=1)
    tail = (1.0 - level) / 2.0
    low, high = np.quantile(means, [tail, 1.0 - tail])
    return float(data.mean()), float(low), float(high)


def relative_change(value: float, baseline: float) -> float:
    """Percent change versus *baseline*, positive when *value* is lower (a reduction)."""
    if baseline == 0:
        return 0.0 if value == 0 else float("nan")
    return 100.0 * (baseline - value) / abs(baseline)


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing moving average; the first points average what is available."""
    series = pd.Series(np.asarray(values, dtype=float))
    return series.rolling(window, min_periods=1).mean().to_numpy()


def five_number_summary(values: Sequence[float]) -> dict[str, float]:
    data = np.asarray(values, dtype=float)
    q = np.quantile(data, [0.0, 0.25, 0.5, 0.75, 1.0])
    return dict(zip(("min", "q1", "median", "q3", "max"), map(float, q), strict=True))


def coverage_rate(pit_values: Sequence[float], level: float = 0.9) -> float:
    """Share of randomised PIT values inside the central *level* band."""
    pits = np.asarray(pit_values, dtype=float)
    if len(pits) == 0:
        return float("nan")
    tail = (1.0 - level) / 2.0
    return float(np.mean((pits >= tail) & (pits <= 1.0 - tail)))
