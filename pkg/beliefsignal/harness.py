"""
Experiment orchestration: seeded closed-loop episodes, controller x scenario sweeps, the
post-hoc episode auditor and report emission.
"""

import hashlib
import json
import math
import time
from collections.abc import Callable
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from loguru import logger

from .belief import update_service_age
from .config import ExperimentConfig, ScenarioSpec
from .controllers import BASELINE, ControllerEntry, ControllerSettings, DecisionContext
from .evalkit import (
    EmissionSummary,
    MetricRecord,
    confidence_interval,
    emission_proxies,
    five_number_summary,
    moving_average,
    relative_change,
    step_metrics,
)
from .intersection import (
    Intersection,
    Interval,
    PhaseState,
    SignalAction,
    apply_action,
    initial_phase_state,
)
from .microsim import EpisodeStreams, MicrosimParams, initial_true_state, step_true_state
from .safety import DzParams, KinematicBelief, dz_risk
from .sensor import CLEAR, Observation, observe, step_occlusion, zone_counts

SUMMARY_FILE = "summary.json"
REPORT_FILE = "report.txt"

# Per-episode values carried into the summary tables, with their report titles.
TABLE_METRICS = {
    "queue_proxy": "Queue proxy",
    "stopped_proxy": "Stopped proxy",
    "risk_proxy": "Risk proxy",
    "occlusion_proxy": "Occlusion proxy",
    "idle_proxy": "Idle emission",
    "queue_emission_proxy": "Queue emission",
    "risk_spike_proxy": "Risk-spike emission",
    "total_proxy": "Total emission",
}


@dataclass
class EpisodeResult:
    controller: str
    scenario: str
    trial: int
    seed: int
    log: pd.DataFrame
    emissions: EmissionSummary
    stats: dict[str, float]
    audit: list[str] = field(default_factory=list)
    traces: list[dict] = field(default_factory=list)


def cell_seed(master: int, scenario: str, trial: int) -> int:
    """Stable per-trial seed; every controller sees the same episode for a scenario and trial."""
    digest = hashlib.sha256(f"{master}|{scenario}|{trial}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def matched_settings(
    settings: ControllerSettings, intersection: Intersection
) -> ControllerSettings:
    """Align the dilemma-zone clearance window with the intersection's intergreen timing."""
    dz = _timed_dz(settings.csmpc.dz, intersection)
    return settings.model_copy(update={"csmpc": settings.csmpc.model_copy(update={"dz": dz})})


def run_episode(
    scenario: ScenarioSpec,
    entry: ControllerEntry,
    seed: int,
    intersection: Intersection,
    settings: ControllerSettings | None = None,
    microsim: MicrosimParams | None = None,
    trial: int = 0,
    trace: bool = False,
    latency_warmup_steps: int = 10,
    smoothing_s: float = 30.0,
    clock: Callable[[], float] = time.perf_counter,
) -> EpisodeResult:
    """Run one closed-loop episode of *entry* on *scenario*; deterministic per seed."""
    settings = matched_settings(settings or ControllerSettings(), intersection)
    microsim = microsim or MicrosimParams()
    microsim = microsim.model_copy(update={"driver": _timed_dz(microsim.driver, intersection)})
    dz = settings.csmpc.dz
    dt = intersection.timing.dt
    steps = int(round(scenario.horizon_s / dt))
    count = intersection.movement_count

    streams = EpisodeStreams.from_seed(seed)
    controller = entry.build(settings, scenario.sensor)
    controller.reset(intersection)
    state = initial_true_state(intersection, scenario.demand)
    phase_state = initial_phase_state(intersection)
    occlusion = CLEAR
    governing: PhaseState | None = None
    previous: SignalAction | None = None
    ledger = np.zeros(count)

    rows: list[dict] = []
    records: list[MetricRecord] = []
    traces: list[dict] = []
    for _ in range(steps):
        true_zone = zone_counts(state, scenario.sensor)
        occlusion = step_occlusion(
            occlusion,
            scenario.scenario_class,
            int(true_zone.sum()),
            scenario.sensor,
            streams.occlusion,
            dt,
        )
        observation = observe(state, occlusion, scenario.sensor, streams.sensor)
        context = DecisionContext(
            time=state.sim_time,
            phase_state=phase_state,
            observation=observation,
            intersection=intersection,
            streams=streams,
            governing=governing,
            previous_action=previous,
        )
        started = clock()
        decision = controller.decide(context)
        latency_ms = (clock() - started) * 1000.0

        hold = controller.min_green_hold
        applied = apply_action(phase_state, decision.action, intersection, hold)
        risk = 0.0
        if not decision.action.is_extend:
            kinematics = observed_kinematics(observation, dz)
            risk = dz_risk(kinematics, phase_state, intersection, dz, streams.decisions).risk
        before = state
        state = step_true_state(before, applied, scenario.demand, intersection, microsim, streams)
        served = intersection.served_mask(applied)
        ledger = np.array(
            [update_service_age(ledger[m], bool(served[m]), dt) for m in range(count)]
        )

        record = step_metrics(state, observation, intersection, risk, latency_ms)
        records.append(record)
        rows.append(
            _row(
                before,
                state,
                phase_state,
                applied,
                decision,
                observation,
                occlusion.mode,
                ledger,
                record,
                controller,
                float(np.max(np.abs(observation.detected_count - true_zone), initial=0)),
            )
        )
        if trace and decision.trace is not None:
            traces.append(decision.trace.as_dict())
        governing, previous, phase_state = applied, decision.action, applied

    log = pd.DataFrame(rows)
    emissions = emission_proxies(records, settings.csmpc.epsilon, dt)
    result = EpisodeResult(
        controller=entry.label,
        scenario=scenario.label,
        trial=trial,
        seed=seed,
        log=log,
        emissions=emissions,
        stats=episode_stats(log, emissions, settings, latency_warmup_steps, smoothing_s, dt),
        traces=traces,
    )
    result.audit = audit_episode(log, intersection, controller.min_green_hold, emissions, dt)
    for problem in result.audit:
        logger.warning("{} {} trial {}: audit: {}", entry.label, scenario.label, trial, problem)
    return result


def observed_kinematics(observation: Observation, dz: DzParams) -> list[KinematicBelief]:
    """Kinematic beliefs straight from the camera tracks, for controller-independent risk."""
    return [
        KinematicBelief.from_estimate(
            track.vehicle_id,
            track.movement,
            track.speed,
            track.distance,
            track.sigma_v,
            track.sigma_d,
            margin=dz.vehicle_margin,
            confidence=track.confidence,
        )
        for track in observation.tracks
    ]


def episode_stats(
    log: pd.DataFrame,
    emissions: EmissionSummary,
    settings: ControllerSettings,
    latency_warmup_steps: int,
    smoothing_s: float,
    dt: float,
) -> dict[str, float]:
    if log.empty:
        return {}
    window = max(1, int(round(smoothing_s / dt)))
    latency = log["latency_ms"].to_numpy()[latency_warmup_steps:]
    if len(latency) == 0:
        latency = log["latency_ms"].to_numpy()
    risk = log["risk_proxy"].to_numpy()
    tau = log.filter(regex=r"^tau_").to_numpy()
    return {
        "queue_proxy": float(log["queue_proxy"].mean()),
        "stopped_proxy": float(log["stopped_proxy"].mean()),
        "risk_proxy": float(risk.mean()),
        "occlusion_proxy": float(log["occlusion_proxy"].mean()),
        "occlusion_peak": float(moving_average(log["occlusion_proxy"], window).max()),
        "risk_p50": float(np.quantile(risk, 0.5)),
        "risk_p99": float(np.quantile(risk, 0.99)),
        "latency_mean_ms": float(latency.mean()),
        "latency_p95_ms": float(np.quantile(latency, 0.95)),
        "switches": int((log["action"] != "extend").sum()),
        "conflicts": int(log["conflict"].sum()),
        "spillback_steps": int(log["spillback"].sum()),
        "max_service_age": float(tau.max()) if tau.size else 0.0,
        "fairness_overrides": int((log["override"] == "fairness").sum()),
        "safety_overrides": int((log["override"] == "safety").sum()),
        "fallback_steps": int(log["fallback"].sum()),
        "perception_residual_p90": float(log["perception_residual"].quantile(0.9)),
        "perception_exceedance": float(
            (log["perception_residual"] > settings.csmpc.validity.innovation_bound).mean()
        ),
        **emissions.as_dict(),
    }


def audit_episode(
    log: pd.DataFrame,
    intersection: Intersection,
    min_green_hold: bool,
    emissions: EmissionSummary,
    dt: float,
) -> list[str]:
    """Check a finished episode log; returns a description of every problem found."""
    problems: list[str] = []
    if log.empty:
        return problems
    timing = intersection.timing
    count = intersection.movement_count

    for m in range(count):
        q, a, s = (log[f"{c}_{m}"].to_numpy() for c in ("q_true", "arrivals", "served"))
        expected = np.maximum(0, q + a - s)
        bad = np.flatnonzero(expected != log[f"q_next_{m}"].to_numpy())
        if len(bad):
            problems.append(f"queue balance broken on movement {m} at t={log['time'].iat[bad[0]]}")

    for row in log.itertuples():
        if row.action == "extend":
            continue
        if row.interval != Interval.GREEN:
            problems.append(f"termination outside green at t={row.time}")
        elif row.elapsed > timing.g_max + 1e-9 or (
            min_green_hold and row.elapsed < timing.g_min - 1e-9
        ):
            problems.append(f"green of {row.elapsed}s ended at t={row.time}")
    intergreen = ((Interval.YELLOW, timing.t_yellow), (Interval.ALL_RED, timing.t_all_red))
    for interval, length in intergreen:
        runs = _run_lengths(log["post_interval"].to_numpy(), str(interval))
        if any(abs(r * dt - length) > 1e-9 for r in runs):
            problems.append(f"{interval} interval lasted {sorted(set(runs))} steps, not {length}s")
    green = log["post_interval"] == str(Interval.GREEN)
    if (log.loc[green, "post_elapsed"] > timing.g_max + 1e-9).any():
        problems.append("green exceeded g_max")

    tau = np.zeros(count)
    for row in log.itertuples():
        served = intersection.served_mask(PhaseState(row.post_phase, Interval(row.post_interval)))
        tau = np.where(served, 0.0, np.round(tau + dt, 9))
        logged = np.array([getattr(row, f"tau_{m}") for m in range(count)])
        if not np.allclose(tau, logged):
            problems.append(f"service ages diverge at t={row.time}")
            break

    idle = float(log["stopped_proxy"].sum() * dt)
    if not math.isclose(idle, emissions.idle_proxy, rel_tol=1e-9, abs_tol=1e-9):
        problems.append("idle emission does not match the stopped-proxy integral")
    parts = emissions.idle_proxy + emissions.queue_emission_proxy + emissions.risk_spike_proxy
    if not math.isclose(parts, emissions.total_proxy, rel_tol=1e-12, abs_tol=1e-12):
        problems.append("emission components do not add up to the total")
    return problems


def run_experiment(
    config: ExperimentConfig,
    intersection: Intersection,
    out_dir: str | Path | None = None,
    workers: int | None = None,
    trace: bool | None = None,
) -> dict:
    """Run every controller x scenario x trial cell and write logs plus ``summary.json``."""
    out = Path(out_dir or config.out_dir)
    (out / "episodes").mkdir(parents=True, exist_ok=True)
    workers = workers or config.workers
    trace = config.trace if trace is None else trace

    jobs = [
        (config, intersection, entry, scenario, trial, str(out), trace)
        for scenario in config.scenarios
        for entry in config.controllers
        for trial in range(scenario.trials)
    ]
    logger.info("running {} episodes on {} worker(s)", len(jobs), workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_run_cell, jobs))
    else:
        cells = [_run_cell(job) for job in jobs]

    cells.sort(key=lambda c: (c["scenario"], c["controller"], c["trial"]))
    summary = {
        "seed": config.seed,
        "risk_threshold": config.settings.csmpc.epsilon,
        "dt": intersection.timing.dt,
        "smoothing_s": config.smoothing_s,
        "baseline": _baseline_label(config),
        "cells": cells,
        "aggregates": aggregate(cells, _baseline_label(config)),
        "failures": [c for c in cells if c.get("error")],
    }
    with open(out / SUMMARY_FILE, "w") as f:
        json.dump(summary, f, indent=2, allow_nan=True)
    logger.info("wrote {}", out / SUMMARY_FILE)
    return summary


def aggregate(cells: list[dict], baseline: str | None) -> dict:
    """Cross-trial means, 95% intervals and relative change versus the baseline controller."""
    frame = pd.DataFrame(
        [
            {"scenario": c["scenario"], "controller": c["controller"], **c["stats"]}
            for c in cells
            if not c.get("error")
        ]
    )
    result: dict = {}
    if frame.empty:
        return result
    for (scenario, controller), group in frame.groupby(["scenario", "controller"], sort=True):
        block = {}
        for metric in TABLE_METRICS:
            values = group[metric].to_numpy()
            if len(values) >= 2:
                mean, low, high = confidence_interval(values)
            else:
                mean = low = high = float(values.mean())
            block[metric] = {"mean": mean, "lower": low, "upper": high, "n": len(values)}
        result.setdefault(scenario, {})[controller] = block

    for controllers in result.values():
        reference = controllers.get(baseline) if baseline else None
        for block in controllers.values():
            for metric in TABLE_METRICS:
                block[metric]["change_pct"] = (
                    relative_change(block[metric]["mean"], reference[metric]["mean"])
                    if reference
                    else None
                )
    return result


def report(out_dir: str | Path) -> Path:
    """Write text tables and plot-ready series from a finished experiment directory."""
    out = Path(out_dir)
    with open(out / SUMMARY_FILE) as f:
        summary = json.load(f)
    series_dir = out / "series"
    series_dir.mkdir(exist_ok=True)

    lines = []
    for scenario, controllers in summary["aggregates"].items():
        lines.append(f"Scenario {scenario} (baseline: {summary['baseline']})")
        for metric, title in TABLE_METRICS.items():
            lines.append(f"  {title}")
            for controller, block in controllers.items():
                cell = block[metric]
                change = cell.get("change_pct")
                delta = "" if change is None or math.isnan(change) else f"  {change:+.1f}%"
                lines.append(
                    f"    {controller:<28} {cell['mean']:10.4f}  "
                    f"[{cell['lower']:.4f}, {cell['upper']:.4f}]{delta}"
                )
        lines.append("")
    if summary["failures"]:
        lines.append("Failed cells")
        lines.extend(
            f"  {c['controller']} {c['scenario']} trial {c['trial']}: {c['error']}"
            for c in summary["failures"]
        )
    report_path = out / REPORT_FILE
    report_path.write_text("\n".join(lines) + "\n")

    _write_series(summary, out, series_dir)
    logger.info("wrote {}", report_path)
    return report_path


# Helpers


def _timed_dz(dz: DzParams, intersection: Intersection) -> DzParams:
    timing = intersection.timing
    return dz.model_copy(update={"t_yellow": timing.t_yellow, "t_all_red": timing.t_all_red})


def _baseline_label(config: ExperimentConfig) -> str | None:
    labels = [entry.label for entry in config.controllers]
    return BASELINE if BASELINE in labels else None


def _cell_name(controller: str, scenario: str, trial: int) -> str:
    slug = controller.replace("[", "-").replace("]", "").replace(",", "+")
    return f"{slug}__{scenario}__t{trial:02d}"


def _run_cell(job) -> dict:
    config, intersection, entry, scenario, trial, out, trace = job
    master = scenario.seed if scenario.seed is not None else config.seed
    seed = cell_seed(master, scenario.label, trial)
    name = _cell_name(entry.label, scenario.label, trial)
    cell = {"controller": entry.label, "scenario": scenario.label, "trial": trial, "seed": seed}
    try:
        result = run_episode(
            scenario,
            entry,
            seed,
            intersection,
            config.settings,
            config.microsim,
            trial=trial,
            trace=trace,
            latency_warmup_steps=config.latency_warmup_steps,
            smoothing_s=config.smoothing_s,
        )
    except Exception as err:
        logger.warning("{} failed: {}", name, err)
        return {**cell, "error": f"{type(err).__name__}: {err}", "stats": {}}

    result.log.to_csv(Path(out) / "episodes" / f"{name}.csv", index=False)
    if trace:
        with open(Path(out) / "episodes" / f"{name}.trace.json", "w") as f:
            json.dump(result.traces, f)
    logger.info("{} done: total emission proxy {:.2f}", name, result.emissions.total_proxy)
    return {
        **cell,
        "log": f"episodes/{name}.csv",
        "emissions": result.emissions.as_dict(),
        "stats": result.stats,
        "audit": result.audit,
    }


def _row(
    before,
    after,
    phase_state: PhaseState,
    applied: PhaseState,
    decision,
    observation: Observation,
    occlusion_mode,
    ledger: np.ndarray,
    record: MetricRecord,
    controller,
    perception_residual: float,
) -> dict:
    events = after.last_step
    row = {
        "time": before.sim_time,
        "phase": phase_state.active_phase,
        "interval": str(phase_state.interval),
        "elapsed": phase_state.interval_elapsed,
        "action": str(decision.action),
        "post_phase": applied.active_phase,
        "post_interval": str(applied.interval),
        "post_elapsed": applied.interval_elapsed,
        "p_det": observation.p_det,
        "occlusion_mode": str(occlusion_mode),
        "queue_proxy": record.queue_proxy,
        "stopped_proxy": record.stopped_proxy,
        "risk_proxy": record.risk_proxy,
        "controller_risk": decision.risk,
        "occlusion_proxy": record.occlusion_proxy,
        "conflict": record.conflict,
        "spillback": events.spillback,
        "override": str(decision.trace.override) if _override(decision) else "",
        "fallback": bool(decision.degraded),
        "latency_ms": record.decision_latency_ms,
    }
    row["perception_residual"] = perception_residual
    belief = getattr(controller, "belief", None) if controller.uses_belief else None
    summary = belief.summary() if belief is not None else None
    for m in range(len(before.queues)):
        row[f"q_true_{m}"] = int(before.queues[m])
        row[f"q_next_{m}"] = int(after.queues[m])
        row[f"arrivals_{m}"] = int(events.arrivals[m])
        row[f"served_{m}"] = int(events.served[m])
        row[f"det_{m}"] = int(observation.detected_count[m])
        row[f"stopped_{m}"] = int(observation.stopped_count[m])
        row[f"tau_{m}"] = float(ledger[m])
        for key in ("eq", "varq", "elam", "tau"):
            column = f"b{key}_{m}" if key == "tau" else f"{key}_{m}"
            row[column] = float(summary[key][m]) if summary is not None else float("nan")
    return row


def _override(decision) -> bool:
    return decision.trace is not None and getattr(decision.trace, "override", None) is not None


def _run_lengths(values: np.ndarray, target: str) -> list[int]:
    """Lengths of complete runs of *target*; a run still open at the end is ignored."""
    runs, current = [], 0
    for value in values:
        if value == target:
            current += 1
        elif current:
            runs.append(current)
            current = 0
    return runs


def _write_series(summary: dict, out: Path, series_dir: Path) -> None:
    dt = summary["dt"]
    window = max(1, int(round(summary["smoothing_s"] / dt)))
    threshold = summary["risk_threshold"]
    logs: dict[str, dict[str, list[pd.DataFrame]]] = {}
    for cell in summary["cells"]:
        if cell.get("error"):
            continue
        frame = pd.read_csv(out / cell["log"])
        logs.setdefault(cell["scenario"], {}).setdefault(cell["controller"], []).append(frame)

    for scenario, controllers in logs.items():
        p_det, occlusion, cumulative, boxes = {}, {}, {}, []
        time_axis = None
        for controller, frames in controllers.items():
            stacked = pd.concat(frames).groupby("time", sort=True)
            mean = stacked.mean(numeric_only=True)
            time_axis = mean.index.to_numpy()
            p_det[controller] = moving_average(mean["p_det"], window)
            occlusion[controller] = moving_average(mean["occlusion_proxy"], window)
            step_total = (
                mean["stopped_proxy"]
                + mean["queue_proxy"]
                + np.maximum(0.0, mean["risk_proxy"] - threshold)
            ) * dt
            cumulative[controller] = np.cumsum(step_total.to_numpy())
            risks = pd.concat(frames)["risk_proxy"].to_numpy()
            boxes.append({"controller": controller, **five_number_summary(risks)})
        for suffix, columns in (
            ("pdet", p_det),
            ("occlusion", occlusion),
            ("cumulative_emission", cumulative),
        ):
            pd.DataFrame({"time": time_axis, **columns}).to_csv(
                series_dir / f"{scenario}_{suffix}.csv", index=False
            )
        pd.DataFrame(boxes).to_csv(series_dir / f"{scenario}_risk_boxplot.csv", index=False)
