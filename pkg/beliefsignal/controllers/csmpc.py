"""
Belief-space constrained model-predictive control.

Every admissible action is rolled out over a short horizon from the current belief. Candidates
whose rollout initiates yellow with too much dilemma-zone risk, or lets any movement wait past
the service-age bound, are discarded; the cheapest remaining candidate is applied. When nothing
is feasible, the service-age bound is relaxed as little as possible before safety is, and safety
only yields when the maximum green forces a switch. Every decision leaves a DecisionTrace behind.
"""

from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from ..belief import Belief, BeliefParams, init_belief, update_belief
from ..errors import ContractViolation
from ..intersection import (
    EXTEND,
    TIME_EPS,
    Intersection,
    PhaseState,
    SignalAction,
    admissible_actions,
)
from ..rollout import HorizonConfig, RolloutTrace, rollout
from ..safety import DzParams, RiskReport, dz_risk
from ..sensor import SensorParams
from .base import BaseController, Decision, DecisionContext
from .fixed_time import FixedTimeController, FixedTimeParams
from .validity import ValidityMonitor, ValidityThresholds, sample_from_belief

# Relative cost difference under which two candidates count as tied.
TIE_TOLERANCE = 1e-9
# Kinematic noise multiplier while the perception check is failing.
DEGRADED_INFLATION = 2.0


class Ablation(StrEnum):
    NO_EMA = "no-ema"
    NO_HOLD = "no-hold"
    NO_MOTION = "no-motion"


class Override(StrEnum):
    FAIRNESS = "fairness"
    SAFETY = "safety"
    HOLD = "hold"


class ControllerConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    epsilon: float = Field(0.05, gt=0, lt=1, description="dilemma-zone risk budget per onset")
    tau_max: float = Field(120.0, gt=0, description="service-age bound, s")
    tau_soft_share: float = Field(0.8, gt=0, le=1)
    alpha: float = Field(0.0, ge=0, description="weight of the risk term")
    beta: float = Field(0.0, ge=0, description="weight of the starvation term")
    horizon: HorizonConfig = HorizonConfig()
    dz: DzParams = DzParams()
    belief: BeliefParams = BeliefParams()
    validity: ValidityThresholds = ValidityThresholds()
    fallback: FixedTimeParams = FixedTimeParams()
    ablations: frozenset[Ablation] = frozenset()

    @property
    def tau_soft(self) -> float:
        return self.tau_soft_share * self.tau_max

    def belief_params(self) -> BeliefParams:
        """Filter parameters with the ablations applied."""
        updates = {}
        if Ablation.NO_EMA in self.ablations:
            updates["ema_factor"] = 0.0
        if Ablation.NO_MOTION in self.ablations:
            updates["motion_aggregation"] = False
        return self.belief.model_copy(update=updates)


@dataclass(frozen=True, slots=True)
class ConstraintReport:
    c2_ok: bool = True
    c2_step: int | None = None
    c3_ok: bool = True
    c3_step: int | None = None
    c3_movement: int | None = None
    c3_excess: float = 0.0
    c4_ok: bool = True

    @property
    def feasible(self) -> bool:
        return self.c2_ok and self.c3_ok and self.c4_ok


@dataclass(frozen=True)
class CandidateEvaluation:
    action: SignalAction
    cost: float
    constraints: ConstraintReport
    risks: dict[int, RiskReport] = field(default_factory=dict)

    def as_dict(self) -> dict:
        c = self.constraints
        return {
            "action": str(self.action),
            "cost": self.cost,
            "c2_ok": c.c2_ok,
            "c2_step": c.c2_step,
            "c3_ok": c.c3_ok,
            "c3_step": c.c3_step,
            "c3_movement": c.c3_movement,
            "c3_excess": c.c3_excess,
            "c4_ok": c.c4_ok,
            "risks": {str(k): r.as_dict() for k, r in self.risks.items()},
        }


@dataclass(frozen=True)
class DecisionTrace:
    time: float
    candidates: tuple[CandidateEvaluation, ...]
    chosen: SignalAction
    override: Override | None = None
    fallback: bool = False

    @property
    def chosen_evaluation(self) -> CandidateEvaluation | None:
        for candidate in self.candidates:
            if candidate.action == self.chosen:
                return candidate
        return None

    def as_dict(self) -> dict:
        return {
            "time": self.time,
            "chosen": str(self.chosen),
            "override": str(self.override) if self.override else None,
            "fallback": self.fallback,
            "candidates": [c.as_dict() for c in self.candidates],
        }


def rollout_cost(
    trace: RolloutTrace, config: ControllerConfig, onset_risks: dict[int, float] | None = None
) -> float:
    """Discounted sum over the horizon of expected queues plus the weighted soft terms."""
    onset_risks = onset_risks or {}
    total = 0.0
    for k, belief in enumerate(trace.beliefs):
        stage = float(belief.expected_queues().sum())
        if config.alpha:
            stage += config.alpha * onset_risks.get(k, 0.0)
        if config.beta:
            excess = np.maximum(0.0, belief.service_ages() - config.tau_soft)
            stage += config.beta * float(excess.sum()) / config.tau_max
        total += config.horizon.gamma**k * stage
    return total


def check_constraints(
    trace: RolloutTrace, config: ControllerConfig, onset_risks: dict[int, float] | None = None
) -> ConstraintReport:
    """Risk budget at every yellow onset, service-age bound at every step, queue sign."""
    onset_risks = onset_risks or {}
    c2_step = next(
        (k for k in sorted(trace.yellow_onset_steps) if onset_risks.get(k, 0.0) > config.epsilon),
        None,
    )

    c3_step = c3_movement = None
    c3_excess = 0.0
    bound = config.tau_max - TIME_EPS
    for k, belief in enumerate(trace.beliefs):
        ages = belief.service_ages()
        over = np.flatnonzero(ages >= bound)
        if len(over) and c3_step is None:
            c3_step, c3_movement = k, int(over[0])
        c3_excess += float(np.maximum(ages - bound, 0.0).sum())

    c4_ok = all(np.all(mb.particles >= 0) for b in trace.beliefs for mb in b.movements)
    return ConstraintReport(
        c2_ok=c2_step is None,
        c2_step=c2_step,
        c3_ok=c3_step is None,
        c3_step=c3_step,
        c3_movement=c3_movement,
        c3_excess=c3_excess,
        c4_ok=c4_ok,
    )


def select_action(
    belief: Belief,
    phase_state: PhaseState,
    intersection: Intersection,
    config: ControllerConfig,
    rng: np.random.Generator,
) -> tuple[SignalAction, DecisionTrace]:
    """Pick the cheapest feasible admissible action; see the module docstring for fallbacks."""
    hold = Ablation.NO_HOLD not in config.ablations
    candidates = admissible_actions(phase_state, intersection, hold)
    if not candidates:
        raise ContractViolation(f"no admissible action at {phase_state}")

    rollout_seed, risk_seed = (int(s) for s in rng.integers(0, 2**63 - 1, size=2))
    risk_rng = np.random.default_rng(risk_seed)
    risk_cache: dict[tuple[int, int], RiskReport] = {}

    evaluations = []
    for action in candidates:
        trace = rollout(
            belief,
            action,
            phase_state,
            intersection,
            config.horizon,
            np.random.default_rng(rollout_seed),
            hold,
        )
        risks = {}
        for k in sorted(trace.yellow_onset_steps):
            risks[k] = _onset_risk(
                belief, trace.phase_states[k], k, intersection, config, risk_rng, risk_cache
            )
        values = {k: r.risk for k, r in risks.items()}
        evaluations.append(
            CandidateEvaluation(
                action=action,
                cost=rollout_cost(trace, config, values),
                constraints=check_constraints(trace, config, values),
                risks=risks,
            )
        )

    chosen, override = _choose(evaluations, belief, intersection, hold, rng)
    if override is Override.FAIRNESS:
        logger.warning("t={}: fairness override, service-age bound relaxed", belief.time)
    elif override is Override.HOLD:
        logger.warning("t={}: hold override, every termination breaks the risk budget", belief.time)
    elif override is Override.SAFETY:
        logger.warning("t={}: safety override, forced switch to {}", belief.time, chosen)
    logger.debug(
        "t={} candidates {} -> {}",
        belief.time,
        [(str(e.action), round(e.cost, 3), e.constraints.feasible) for e in evaluations],
        chosen,
    )
    return chosen, DecisionTrace(
        time=belief.time, candidates=tuple(evaluations), chosen=chosen, override=override
    )


class CsmpcController(BaseController):
    """Belief-space controller with validity monitoring and fixed-time fallback."""

    name = "csmpc"
    uses_belief = True

    def __init__(self, config: ControllerConfig | None = None, sensor: SensorParams | None = None):
        self.config = config or ControllerConfig()
        self.sensor = sensor
        self.min_green_hold = Ablation.NO_HOLD not in self.config.ablations
        self.belief_params = self.config.belief_params()
        self.fallback = FixedTimeController(self.config.fallback)
        self.belief: Belief | None = None
        self.monitor = ValidityMonitor(self.config.validity)

    def reset(self, intersection: Intersection) -> None:
        self.belief = init_belief(intersection, self.belief_params)
        self.monitor = ValidityMonitor(self.config.validity)
        self.fallback.reset(intersection)

    def decide(self, context: DecisionContext) -> Decision:
        intersection = context.intersection
        if self.belief is None:
            self.reset(intersection)
        inflation = DEGRADED_INFLATION if self.monitor.perception_failed else 1.0
        self.belief = update_belief(
            self.belief,
            context.observation,
            context.previous_action,
            context.governing,
            intersection,
            self.belief_params,
            context.streams.belief,
            sensor=self.sensor,
            inflation=inflation,
        )
        self.monitor.record(sample_from_belief(self.belief, context.governing, intersection))

        if self.monitor.degraded:
            action = self.fallback.decide(context).action
            trace = DecisionTrace(
                time=self.belief.time, candidates=(), chosen=action, fallback=True
            )
            return Decision(action, trace=trace, degraded=True)

        action, trace = select_action(
            self.belief, context.phase_state, intersection, self.config, context.streams.rollout
        )
        evaluation = trace.chosen_evaluation
        risk = evaluation.risks[0].risk if evaluation and 0 in evaluation.risks else 0.0
        return Decision(action, trace=trace, risk=risk)


# Helpers


def _onset_risk(
    belief: Belief,
    phase_state: PhaseState,
    step: int,
    intersection: Intersection,
    config: ControllerConfig,
    rng: np.random.Generator,
    cache: dict[tuple[int, int], RiskReport],
) -> RiskReport:
    """Risk of yellow starting on *phase_state*'s phase *step* steps ahead, current kinematics."""
    key = (phase_state.active_phase, step)
    if key not in cache:
        cache[key] = dz_risk(
            belief.kinematics,
            PhaseState(active_phase=phase_state.active_phase),
            intersection,
            config.dz,
            rng,
            offset_s=step * intersection.timing.dt,
        )
    return cache[key]


def _choose(
    evaluations: list[CandidateEvaluation],
    belief: Belief,
    intersection: Intersection,
    hold: bool,
    rng: np.random.Generator,
) -> tuple[SignalAction, Override | None]:
    feasible = [e for e in evaluations if e.constraints.feasible]
    if feasible:
        return _cheapest(feasible, hold, rng), None

    safe = [e for e in evaluations if e.constraints.c2_ok and e.constraints.c4_ok]
    if safe:
        # relax the service-age bound as little as possible, then minimise cost
        least = min(e.constraints.c3_excess for e in safe)
        relaxed = [e for e in safe if e.constraints.c3_excess <= least + TIME_EPS]
        return _cheapest(relaxed, hold, rng), Override.FAIRNESS

    if any(e.action == EXTEND for e in evaluations):
        return EXTEND, Override.HOLD

    # g_max has made termination mandatory and every target breaks the risk budget
    ages = belief.service_ages()
    targets = sorted(e.action.target for e in evaluations)
    starved = max(
        targets,
        key=lambda q: (max(ages[m] for m in intersection.phase(q).movements), -q),
    )
    return SignalAction.terminate_to(starved), Override.SAFETY


def _cheapest(
    evaluations: list[CandidateEvaluation], hold: bool, rng: np.random.Generator
) -> SignalAction:
    best = min(e.cost for e in evaluations)
    tolerance = TIE_TOLERANCE * max(1.0, abs(best))
    tied = [e.action for e in evaluations if e.cost <= best + tolerance]
    if len(tied) == 1:
        return tied[0]
    if not hold:
        return tied[int(rng.integers(len(tied)))]
    return min(tied, key=lambda a: (not a.is_extend, a.target if a.target is not None else -1))
