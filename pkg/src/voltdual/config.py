"""Run configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .dual import StepsizeSchedule
from .errors import ConfigError, ParameterError
from .recovery import RobustBounds, robust_limits

__all__ = ["ScenarioConfig", "PRESET_MODES", "VOLTAGE_MODES"]

PRESET_MODES = ("1", "2", "3", "custom")
VOLTAGE_MODES = ("linear", "ac")


@dataclass(frozen=True)
class ScenarioConfig:
    """Resolved settings for one closed-loop run.

    ``feeder``/``inventory`` are file paths or ``builtin:<name>``;
    ``profiles`` maps a profile kind to a CSV path.  ``preset`` selects the
    TCL aggregation mode (``1`` combined two-rate, ``2`` independent, ``3``
    combined fine grid, ``custom`` as listed in the inventory).
    ``sample_window`` is the number of trailing iterations used for
    post-convergence statistics.
    """

    feeder: str
    inventory: str
    profiles: dict = field(default_factory=dict)
    timestep: int = 0
    name: str = "custom"
    preset: str = "custom"
    M: int = 60
    K: int = 30_000
    stepsize: StepsizeSchedule = StepsizeSchedule("constant", 0.1)
    v_limits: tuple[float, float] = (0.95, 1.05)
    delta: float = 0.0
    seed: int = 0
    voltage_mode: str = "linear"
    sample_window: int = 25_000
    ac_tolerance: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "profiles", dict(self.profiles))
        object.__setattr__(self, "v_limits", tuple(float(v) for v in self.v_limits))
        object.__setattr__(self, "preset", str(self.preset))
        if self.preset not in PRESET_MODES:
            raise ConfigError(f"preset must be one of {PRESET_MODES}, got {self.preset!r}")
        if self.voltage_mode not in VOLTAGE_MODES:
            raise ConfigError(f"voltage_mode must be one of {VOLTAGE_MODES}, got {self.voltage_mode!r}")
        if not self.M >= 1:
            raise ConfigError(f"M must be at least 1, got {self.M}")
        if not self.K >= self.M:
            raise ConfigError(f"K must be at least M, got K={self.K}, M={self.M}")
        if not 0 < self.sample_window:
            raise ConfigError("sample_window must be positive")
        if not self.ac_tolerance > 0:
            raise ConfigError("ac_tolerance must be positive")
        try:
            self.bounds
        except ParameterError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def bounds(self) -> RobustBounds:
        """Operator limits after tightening by ``delta``."""
        return robust_limits(self.v_limits, self.delta)

    def replace(self, **changes) -> "ScenarioConfig":
        if "epsilon" in changes:
            eps = changes.pop("epsilon")
            changes["stepsize"] = StepsizeSchedule("constant", float(eps))
        try:
            return dataclasses.replace(self, **changes)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["v_limits"] = list(self.v_limits)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = dict(data)
        step = data.pop("stepsize", None)
        if isinstance(step, dict):
            data["stepsize"] = StepsizeSchedule(**step)
        elif isinstance(step, StepsizeSchedule):
            data["stepsize"] = step
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown configuration fields: {sorted(unknown)}")
        try:
            return cls(**data)
        except (TypeError, ParameterError) as exc:
            raise ConfigError(str(exc)) from exc
