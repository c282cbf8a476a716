"""Scenario configuration: nested TOML sections mapped onto frozen dataclasses.

Every section is optional and falls back to the defaults below.  Unknown
sections or keys are rejected so that typos never pass silently.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .channel import DISTANCE_DOMAIN, POWER_DOMAIN, ChannelParams
from .graph import DEFAULT_FILL_WEIGHT
from .localization import PAPER_LITERAL, SMACOF

__all__ = [
    "ConfigError",
    "DeploymentConfig",
    "NoiseConfig",
    "EnergyConfig",
    "LocalizationConfig",
    "ExperimentConfig",
    "ScenarioConfig",
    "SWEEP_AXES",
    "ALGORITHMS",
    "PROPOSED",
    "MDS_BASELINE",
    "load_config",
    "parse_config",
    "config_to_dict",
]

PROPOSED = "proposed"
MDS_BASELINE = "mds-shortest-path"
ALGORITHMS = (PROPOSED, MDS_BASELINE)

SWEEP_AXES = (
    "active_nodes",
    "energy_arrival",
    "energy_arrival_range",
    "tx_range",
    "anchors",
    "noise_variance",
    "measurements",
    "node_count",
)

CRLB_KINDS = ("oracle", "analytic", "both", "none")


class ConfigError(ValueError):
    """Invalid or unreadable scenario configuration."""


@dataclass(frozen=True)
class DeploymentConfig:
    n_sensors: int = 100
    n_anchors: int = 10
    area: tuple[float, float] = (100.0, 100.0)
    anchor_layout: str = "random"
    tx_range: float = 20.0

    def __post_init__(self):
        object.__setattr__(self, "area", tuple(float(v) for v in self.area))
        if len(self.area) != 2 or min(self.area) <= 0:
            raise ConfigError("deployment.area must be two positive lengths")
        if self.n_sensors < 1:
            raise ConfigError("deployment.n_sensors must be >= 1")
        if self.n_anchors < 3:
            raise ConfigError("deployment.n_anchors must be >= 3")
        if self.anchor_layout not in ("random", "perimeter"):
            raise ConfigError("deployment.anchor_layout must be 'random' or 'perimeter'")
        if self.tx_range <= 0:
            raise ConfigError("deployment.tx_range must be positive")


@dataclass(frozen=True)
class NoiseConfig:
    mode: str = DISTANCE_DOMAIN
    variance: float = 0.02

    def __post_init__(self):
        if self.mode not in (DISTANCE_DOMAIN, POWER_DOMAIN):
            raise ConfigError(f"noise.mode must be '{DISTANCE_DOMAIN}' or '{POWER_DOMAIN}'")
        if self.variance < 0:
            raise ConfigError("noise.variance must be non-negative")


@dataclass(frozen=True)
class EnergyConfig:
    """Harvesting model that decides which sensors are active in a trial.

    ``consumption`` (W) is derived from ``target_range`` (default: the
    deployment range) when left unset: the optical power that delivers
    ``sensitivity`` at that range, times ``power_scale``.  ``sensitivity``
    defaults to the received power at 20 m for the configured transmitter.
    With ``range_from_harvest`` each sensor's range follows from the optical
    power its mean harvest can sustain instead of the deployment range.
    """

    enabled: bool = True
    arrival_min: float = 0.5
    arrival_max: float = 2.0
    slots: int = 1000
    slot_duration: float = 1.0
    threshold: float = 0.1
    initial_battery: float = 1.0
    capacity: float = 10.0
    store_efficiency: float = 0.9
    leak: float = 0.0
    consumption: float | None = None
    target_range: float | None = None
    power_scale: float = 25.0
    sensitivity: float | None = None
    range_from_harvest: bool = False

    def __post_init__(self):
        if not 0 <= self.arrival_min <= self.arrival_max:
            raise ConfigError("energy needs 0 <= arrival_min <= arrival_max")
        if self.slots < 1:
            raise ConfigError("energy.slots must be >= 1")
        if self.slot_duration <= 0 or self.capacity <= 0 or self.power_scale <= 0:
            raise ConfigError("energy.slot_duration, capacity and power_scale must be positive")
        if not 0 <= self.initial_battery <= self.capacity:
            raise ConfigError("energy needs 0 <= initial_battery <= capacity")
        if not 0 < self.store_efficiency <= 1:
            raise ConfigError("energy.store_efficiency must lie in (0, 1]")
        if not 0 <= self.threshold < 1:
            raise ConfigError("energy.threshold must lie in [0, 1)")
        if self.leak < 0:
            raise ConfigError("energy.leak must be non-negative")
        for name in ("consumption", "target_range", "sensitivity"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ConfigError(f"energy.{name} must be positive when set")


@dataclass(frozen=True)
class LocalizationConfig:
    algorithms: tuple[str, ...] = ALGORITHMS
    matrix_mode: str = SMACOF
    max_iters: int = 500
    tol: float = 1e-6
    samples_per_link: int = 1
    fill_weight_ratio: float = DEFAULT_FILL_WEIGHT
    init: str = "mds"
    crlb: str = "both"

    def __post_init__(self):
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        if not self.algorithms:
            raise ConfigError("localization.algorithms must not be empty")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {a!r}; choose from {ALGORITHMS}")
        if self.matrix_mode not in (SMACOF, PAPER_LITERAL):
            raise ConfigError(f"localization.matrix_mode must be '{SMACOF}' or '{PAPER_LITERAL}'")
        if self.max_iters < 1 or self.tol < 0 or self.samples_per_link < 1:
            raise ConfigError("need max_iters >= 1, tol >= 0, samples_per_link >= 1")
        if self.fill_weight_ratio < 0:
            raise ConfigError("localization.fill_weight_ratio must be non-negative")
        if self.init not in ("mds", "random"):
            raise ConfigError("localization.init must be 'mds' or 'random'")
        if self.crlb not in CRLB_KINDS:
            raise ConfigError(f"localization.crlb must be one of {CRLB_KINDS}")


@dataclass(frozen=True)
class ExperimentConfig:
    sweep_axis: str | None = None
    sweep_values: tuple[float, ...] = ()
    trials: int = 100
    master_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "sweep_values", tuple(float(v) for v in self.sweep_values))
        if self.sweep_axis is not None and self.sweep_axis not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {self.sweep_axis!r}; choose from {SWEEP_AXES}")
        if self.trials < 1:
            raise ConfigError("experiment.trials must be >= 1")
        if self.master_seed < 0:
            raise ConfigError("experiment.master_seed must be non-negative")
        if self.workers < 1:
            raise ConfigError("experiment.workers must be >= 1")


@dataclass(frozen=True)
class ScenarioConfig:
    deployment: DeploymentConfig = field(default_factory=DeploymentConfig)
    channel: ChannelParams = field(default_factory=ChannelParams)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    localization: LocalizationConfig = field(default_factory=LocalizationConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def with_section(self, name: str, **changes) -> "ScenarioConfig":
        return replace(self, **{name: replace(getattr(self, name), **changes)})


_SECTIONS = {f.name: f for f in fields(ScenarioConfig)}
_SECTION_TYPES = {
    "deployment": DeploymentConfig,
    "channel": ChannelParams,
    "noise": NoiseConfig,
    "energy": EnergyConfig,
    "localization": LocalizationConfig,
    "experiment": ExperimentConfig,
}


def _build_section(name: str, raw) -> object:
    cls = _SECTION_TYPES[name]
    if not isinstance(raw, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    try:
        return cls(**raw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def parse_config(data: dict) -> ScenarioConfig:
    """Build a `ScenarioConfig` from a nested mapping (as produced by a TOML parser)."""
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    return ScenarioConfig(**{name: _build_section(name, raw) for name, raw in data.items()})


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return parse_config(data)


def config_to_dict(config: ScenarioConfig) -> dict:
    """Plain nested dict with ``None`` values dropped (TOML has no null)."""

    def clean(v):
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items() if x is not None}
        if isinstance(v, tuple):
            return [clean(x) for x in v]
        return v

    return clean(asdict(config))
