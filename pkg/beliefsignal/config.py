"""
Configuration documents and loaders.

Intersections and experiments are JSON documents validated by pydantic. Shape errors surface as
ConfigError; domain violations are collected by ``config_violations`` and reported as data.
"""

import json
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .controllers import ControllerEntry, ControllerSettings
from .errors import ConfigError
from .intersection import Intersection, validate_config
from .microsim import DemandProfile, MicrosimParams
from .sensor import ScenarioClass, SensorParams

DEFAULT_CONFIG = "configs/experiment.json"
DEFAULT_OUT = "results"


class ScenarioSpec(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    name: str = ""
    scenario_class: ScenarioClass = Field(ScenarioClass.S1, alias="class")
    horizon_s: float = Field(900.0, gt=0)
    trials: int = Field(20, ge=1)
    demand: DemandProfile = DemandProfile()
    sensor: SensorParams = SensorParams()
    seed: int | None = Field(None, description="overrides the experiment seed")

    @property
    def label(self) -> str:
        return self.name or str(self.scenario_class)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    intersection: str = "cross4_4phase.json"
    controllers: tuple[ControllerEntry, ...] = Field(min_length=1)
    scenarios: tuple[ScenarioSpec, ...] = Field(min_length=1)
    out_dir: str = DEFAULT_OUT
    seed: int = 0
    settings: ControllerSettings = ControllerSettings()
    microsim: MicrosimParams = MicrosimParams()
    workers: int = Field(1, ge=1)
    trace: bool = False
    latency_warmup_steps: int = Field(10, ge=0)
    smoothing_s: float = Field(30.0, gt=0)

    @field_validator("controllers", mode="before")
    @classmethod
    def _parse_controllers(cls, value):
        if isinstance(value, str):
            value = [value]
        return tuple(ControllerEntry.parse(v) if isinstance(v, str) else v for v in value)


def load_intersection(path: str | Path) -> Intersection:
    try:
        return Intersection.model_validate(_read_json(path))
    except ValidationError as err:
        raise ConfigError(f"{path}: {err}") from err


def load_experiment(path: str | Path) -> tuple[ExperimentConfig, Intersection]:
    """Load an experiment and the intersection it references (relative to its own folder)."""
    path = Path(path)
    try:
        experiment = ExperimentConfig.model_validate(_read_json(path))
    except ValidationError as err:
        raise ConfigError(f"{path}: {err}") from err
    intersection_path = Path(experiment.intersection)
    if not intersection_path.is_absolute():
        intersection_path = path.parent / intersection_path
    return experiment, load_intersection(intersection_path)


def config_violations(experiment: ExperimentConfig, intersection: Intersection) -> list[str]:
    """Domain problems that must be fixed before any simulation runs."""
    found = validate_config(intersection)
    if found:
        return found
    for scenario in experiment.scenarios:
        found.extend(f"{scenario.label}: {v}" for v in scenario.demand.violations(intersection))
        if scenario.horizon_s < intersection.timing.dt:
            found.append(f"{scenario.label}: horizon shorter than one step")
    csmpc = experiment.settings.csmpc
    if csmpc.tau_max <= intersection.timing.g_max:
        found.append(f"tau_max {csmpc.tau_max} must exceed g_max {intersection.timing.g_max}")
    return found


# Helpers


def _read_json(path: str | Path) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {path}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path} is not valid JSON: {err}") from err
