"""
Run configuration: one TOML file with a section per pipeline stage.

Example: ::

    [network]
    file = "SiouxFalls_net.tntp"

    [scenario]
    vehicles = 2000
    platoon_size = 4
    seed = 7
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from traffic_twin.autodiff import RngStream
from traffic_twin.errors import ConfigInvalid
from traffic_twin.network import DEADEND_POLICIES, MILE, Network, attach_virtual_links, load_network, read_tntp
from traffic_twin.optimization.adamw import OptimizerConfig
from traffic_twin.simulation import Scenario, SimConfig
from traffic_twin.utils import hash_string_tuple

__all__ = [
    "NetworkSection",
    "ScenarioSection",
    "ObservationSection",
    "NowcastSection",
    "ControlSection",
    "RunConfig",
    "load_config",
    "parse_config",
]

REQUIRED = object()

Number = (int, float)

# section -> field -> (accepted types, default)
SCHEMA: dict[str, dict[str, tuple[tuple[type, ...], Any]]] = {
    "network": {
        "file": ((str,), REQUIRED),
        "length_scale": (Number, MILE),
        "virtual_length": (Number, 1000.0),
        "deadend_policy": ((str,), "keep_both"),
    },
    "scenario": {
        "vehicles": ((int,), 20000),
        "platoon_size": ((int,), 1),
        "horizon_minutes": (Number, 90.0),
        "seed": ((int,), REQUIRED),
        "temperature": (Number, 0.01),
        "mean_parameters": ((bool,), False),
    },
    "observation": {
        "interval_seconds": (Number, 300.0),
        "window_minutes": (Number, 30.0),
        "noise": (Number, 0.10),
        "coverage": (Number, 0.80),
    },
    "optimizer": {
        "learning_rate": (Number, 0.1),
        "weight_decay": (Number, 1e-5),
        "patience": ((int,), 20),
        "max_iterations": ((int,), 200),
        "resample_noise": ((bool,), True),
        "checkpoint": ((bool,), True),
    },
    "nowcast": {
        "horizons_minutes": ((list,), [5, 10, 30, 60]),
    },
    "control": {
        "target_link": ((int,), None),
        "reduction": (Number, 0.5),
        "cost_floor": (Number, 0.05),
    },
}


@dataclass(frozen=True)
class NetworkSection:
    file: Path
    length_scale: float = MILE
    virtual_length: float = 1000.0
    deadend_policy: str = "keep_both"


@dataclass(frozen=True)
class ScenarioSection:
    seed: int
    vehicles: int = 20000
    platoon_size: int = 1
    horizon_minutes: float = 90.0
    temperature: float = 0.01
    # ground truth at the range midpoints instead of random draws
    mean_parameters: bool = False


@dataclass(frozen=True)
class ObservationSection:
    interval_seconds: float = 300.0
    window_minutes: float = 30.0
    noise: float = 0.10
    coverage: float = 0.80

    @property
    def points(self) -> int:
        return int(round(self.window_minutes * 60 / self.interval_seconds))


@dataclass(frozen=True)
class NowcastSection:
    horizons_minutes: tuple[float, ...] = (5.0, 10.0, 30.0, 60.0)


@dataclass(frozen=True)
class ControlSection:
    target_link: int | None = None
    reduction: float = 0.5
    cost_floor: float = 0.05


@dataclass(frozen=True)
class RunConfig:
    path: Path
    # SHA-256 of the config text
    digest: str
    network: NetworkSection
    scenario: ScenarioSection
    observation: ObservationSection
    optimizer: OptimizerConfig
    nowcast: NowcastSection = field(default_factory=NowcastSection)
    control: ControlSection = field(default_factory=ControlSection)

    @property
    def seed(self) -> int:
        return self.scenario.seed

    @property
    def rng(self) -> RngStream:
        return RngStream(self.seed)

    def with_seed(self, seed: int) -> "RunConfig":
        if seed < 0:
            raise ConfigInvalid(f"scenario.seed must be non-negative, got {seed}", self.path)

        return replace(self, scenario=replace(self.scenario, seed=seed))

    def sim_config(self) -> SimConfig:
        return SimConfig(platoon_size=self.scenario.platoon_size, temperature=self.scenario.temperature)

    def build_network(self) -> Network:
        """Network file with virtual links attached, or a saved network dump as is"""
        if self.network.file.suffix == ".json":
            network, _ = load_network(self.network.file)
            return network

        physical = read_tntp(self.network.file, self.network.length_scale)
        return attach_virtual_links(
            physical,
            self.rng.child("network").generator("coin"),
            self.network.deadend_policy,
            self.network.virtual_length,
        )

    def scenario_for(self, network: Network, minutes: float) -> Scenario:
        return Scenario(
            network,
            self.sim_config(),
            vehicles=self.scenario.vehicles,
            horizon=minutes * 60.0,
            interval=self.observation.interval_seconds,
        )


def _invalid(message: str, path: Path) -> ConfigInvalid:
    return ConfigInvalid(message, path)


def _required_fields(content: dict[str, Any], path: Path):
    """Checks if all required fields are set"""
    for section, fields in SCHEMA.items():
        for name, (_, default) in fields.items():
            if default is REQUIRED and name not in content.get(section, {}):
                raise _invalid(f"{section}.{name} is required", path)


def _fields_types(content: dict[str, Any], path: Path):
    """Checks section names, field names and field types"""
    for section, values in content.items():
        if section not in SCHEMA:
            raise _invalid(f"Unknown section [{section}]", path)

        if not isinstance(values, dict):
            raise _invalid(f"[{section}] must be a table", path)

        for name, value in values.items():
            if name not in SCHEMA[section]:
                raise _invalid(f"Unknown field {section}.{name}", path)

            types, _ = SCHEMA[section][name]
            if isinstance(value, bool) and bool not in types:
                raise _invalid(f"{section}.{name} has invalid type bool", path)

            if not isinstance(value, types):
                raise _invalid(
                    f"{section}.{name} has invalid type {type(value).__name__}. "
                    f"Required type is {' or '.join(t.__name__ for t in types)}",
                    path,
                )


def _section(content: dict[str, Any], section: str) -> dict[str, Any]:
    values = {}
    for name, (_, default) in SCHEMA[section].items():
        value = content.get(section, {}).get(name, default)
        if value is not REQUIRED:
            values[name] = value

    return values


def _check(condition: bool, message: str, path: Path):
    if not condition:
        raise _invalid(message, path)


def _validate_ranges(config: RunConfig):
    path = config.path
    network, scenario, observation = config.network, config.scenario, config.observation

    _check(network.file.is_file(), f"network.file {network.file} does not exist", path)
    _check(network.length_scale > 0, "network.length_scale must be positive", path)
    _check(network.virtual_length > 0, "network.virtual_length must be positive", path)
    _check(
        network.deadend_policy in DEADEND_POLICIES,
        f"network.deadend_policy must be one of {', '.join(DEADEND_POLICIES)}",
        path,
    )

    _check(scenario.seed >= 0, "scenario.seed must be non-negative", path)
    _check(scenario.vehicles >= 1, "scenario.vehicles must be at least 1", path)
    _check(scenario.platoon_size >= 1, "scenario.platoon_size must be at least 1", path)
    _check(
        scenario.vehicles % scenario.platoon_size == 0,
        "scenario.vehicles must be a multiple of scenario.platoon_size",
        path,
    )
    _check(scenario.temperature > 0, "scenario.temperature must be positive", path)
    _check(scenario.horizon_minutes > 0, "scenario.horizon_minutes must be positive", path)

    _check(observation.interval_seconds > 0, "observation.interval_seconds must be positive", path)
    _check(
        (observation.interval_seconds / scenario.platoon_size).is_integer(),
        "observation.interval_seconds must be a multiple of the time step",
        path,
    )
    _check(observation.window_minutes > 0, "observation.window_minutes must be positive", path)
    _check(
        (observation.window_minutes * 60 / observation.interval_seconds).is_integer(),
        "observation.window_minutes must span a whole number of intervals",
        path,
    )
    _check(
        observation.window_minutes <= scenario.horizon_minutes,
        "observation.window_minutes must not exceed scenario.horizon_minutes",
        path,
    )
    _check(0 <= observation.noise < 1, "observation.noise must lie in [0, 1)", path)
    _check(0 < observation.coverage <= 1, "observation.coverage must lie in (0, 1]", path)

    horizons = config.nowcast.horizons_minutes
    _check(len(horizons) > 0, "nowcast.horizons_minutes must not be empty", path)
    _check(all(h >= 0 for h in horizons), "nowcast.horizons_minutes must be non-negative", path)

    control = config.control
    _check(control.target_link is None or control.target_link >= 0, "control.target_link must be a link id", path)
    _check(0 <= control.reduction <= 1, "control.reduction must lie in [0, 1]", path)
    _check(0 < control.cost_floor < 1, "control.cost_floor must lie in (0, 1)", path)


def parse_config(text: str, path: Path | str) -> RunConfig:
    """
    Validate config text and build a :class:`RunConfig`.

    Section and field names and field types are checked first, then required
    fields, then value ranges; the first failure raises :class:`ConfigInvalid` naming
    ``section.field``.
    """
    path = Path(path)

    try:
        content = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise _invalid(f"Config is not valid TOML: {e}", path) from e

    _fields_types(content, path)
    _required_fields(content, path)

    network = _section(content, "network")
    network["file"] = (path.parent / network["file"]).resolve()

    horizons = _section(content, "nowcast")["horizons_minutes"]
    if not all(isinstance(h, Number) and not isinstance(h, bool) for h in horizons):
        raise _invalid("All elements of nowcast.horizons_minutes must be numbers", path)

    optimizer = _section(content, "optimizer")
    _check(optimizer["learning_rate"] > 0, "optimizer.learning_rate must be positive", path)
    _check(optimizer["weight_decay"] >= 0, "optimizer.weight_decay must be non-negative", path)
    _check(optimizer["patience"] >= 1, "optimizer.patience must be at least 1", path)
    _check(optimizer["max_iterations"] >= 1, "optimizer.max_iterations must be at least 1", path)

    config = RunConfig(
        path=path,
        digest=hash_string_tuple((text,)),
        network=NetworkSection(**network),
        scenario=ScenarioSection(**_section(content, "scenario")),
        observation=ObservationSection(**_section(content, "observation")),
        optimizer=OptimizerConfig(**optimizer),
        nowcast=NowcastSection(tuple(float(h) for h in horizons)),
        control=ControlSection(**_section(content, "control")),
    )
    _validate_ranges(config)
    return config


def load_config(path: Path | str) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigInvalid("Config file doesn't exist", path)

    return parse_config(path.read_text(encoding="utf8"), path)
