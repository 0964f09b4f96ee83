"""
Controller registry: maps config/CLI controller names to factories.

Entries are written ``kind`` or ``kind:ablation,ablation`` (e.g. ``csmpc:no-hold``). When adding
a new controller, add a new entry here.
"""

from collections.abc import Callable
from dataclasses import dataclass

from pydantic import BaseModel, ConfigDict

from ..errors import ConfigError
from ..sensor import SensorParams
from .base import BaseController, Decision, DecisionContext
from .csmpc import Ablation, ControllerConfig, CsmpcController
from .fixed_time import FixedTimeController, FixedTimeParams
from .occupancy import OccupancyController, OccupancyParams
from .queue_proxy import QueueProxyController

BASELINE = "queue-proxy"


class ControllerSettings(BaseModel):
    """Parameter blocks of every registered controller."""

    model_config = ConfigDict(frozen=True)

    csmpc: ControllerConfig = ControllerConfig()
    fixed_time: FixedTimeParams = FixedTimeParams()
    occupancy: OccupancyParams = OccupancyParams()


Factory = Callable[[ControllerSettings, SensorParams | None, frozenset[Ablation]], BaseController]

CONTROLLERS: dict[str, Factory] = {
    "fixed-time": lambda settings, sensor, ablations: FixedTimeController(settings.fixed_time),
    "occupancy": lambda settings, sensor, ablations: OccupancyController(settings.occupancy),
    "queue-proxy": lambda settings, sensor, ablations: QueueProxyController(),
    "csmpc": lambda settings, sensor, ablations: CsmpcController(
        settings.csmpc.model_copy(update={"ablations": ablations}), sensor
    ),
}

# Controllers that accept ablation flags.
ABLATABLE = frozenset({"csmpc"})


@dataclass(frozen=True, slots=True)
class ControllerEntry:
    kind: str
    ablations: frozenset[Ablation] = frozenset()

    @classmethod
    def parse(cls, text: str) -> "ControllerEntry":
        kind, _, flags = text.strip().partition(":")
        if kind not in CONTROLLERS:
            raise ConfigError(f"unknown controller '{kind}', expected one of {sorted(CONTROLLERS)}")
        names = [f.strip() for f in flags.split(",") if f.strip()]
        try:
            ablations = frozenset(Ablation(name) for name in names)
        except ValueError as err:
            raise ConfigError(f"unknown ablation in '{text}': {err}") from err
        if ablations and kind not in ABLATABLE:
            raise ConfigError(f"controller '{kind}' takes no ablations")
        return cls(kind, ablations)

    @property
    def label(self) -> str:
        if not self.ablations:
            return self.kind
        return f"{self.kind}[{','.join(sorted(self.ablations))}]"

    def build(
        self, settings: ControllerSettings, sensor: SensorParams | None = None
    ) -> BaseController:
        return CONTROLLERS[self.kind](settings, sensor, self.ablations)


__all__ = [
    "BASELINE",
    "CONTROLLERS",
    "BaseController",
    "ControllerEntry",
    "ControllerSettings",
    "Decision",
    "DecisionContext",
]
