from dataclasses import dataclass, field, replace
from functools import cached_property
import logging
import math

import numpy as np

from traffic_twin.autodiff import RngStream, Tensor, checkpoint, ops
from traffic_twin.errors import SeedingError, SimulationError
from traffic_twin.network import LinkParams, Network
from traffic_twin.simulation.car_following import position_update_all
from traffic_twin.simulation.core import SENTINEL, LinkTensors, SimConfig, as_link_tensors
from traffic_twin.simulation.node_model import node_step
from traffic_twin.simulation.observation import link_counts

__all__ = ["Scenario", "Trajectory", "seed_agents", "step", "simulate"]

logger = logging.getLogger(__name__)


def _whole(value: float, what: str) -> int:
    if value < 0 or not math.isclose(value, round(value), rel_tol=0.0, abs_tol=1e-9):
        raise SimulationError(f"{what} must be a whole non-negative number, got {value}")

    return int(round(value))


@dataclass(frozen=True)
class Scenario:
    network: Network
    config: SimConfig = SimConfig()
    # vehicles, split into platoons of config.platoon_size
    vehicles: int = 20000
    # seconds
    horizon: float = 5400.0
    # seconds between count samples
    interval: float = 300.0
    # queue density of the seeded inflow links, veh/m
    seed_density: float = 0.22
    expand_inflow: bool = True
    # explicit agents x links initial state; seeds the inflow links when absent
    initial_state: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.seed_density <= 0:
            raise SimulationError(f"Seeding density must be positive, got {self.seed_density}")

        # divisibility checks
        _ = self.agents, self.steps, self.steps_per_interval

    @property
    def agents(self) -> int:
        if self.vehicles % self.config.platoon_size:
            raise SimulationError(
                f"{self.vehicles} vehicles do not split into platoons of {self.config.platoon_size}"
            )

        return self.vehicles // self.config.platoon_size

    @property
    def steps(self) -> int:
        return _whole(self.horizon / self.config.dt, f"Horizon {self.horizon} s / time step {self.config.dt} s")

    @property
    def steps_per_interval(self) -> int:
        spi = _whole(self.interval / self.config.dt, f"Interval {self.interval} s / time step {self.config.dt} s")
        if spi == 0:
            raise SimulationError(f"Interval {self.interval} s is shorter than one time step")

        return spi

    @property
    def points(self) -> int:
        """Count samples within the horizon"""
        return self.steps // self.steps_per_interval

    def with_horizon(self, horizon: float) -> "Scenario":
        return replace(self, horizon=horizon)

    def with_config(self, **changes) -> "Scenario":
        return replace(self, config=replace(self.config, **changes))

    @cached_property
    def seeded(self) -> tuple[np.ndarray, Network]:
        """Initial agent state and the network it was seeded on"""
        if self.initial_state is None:
            return seed_agents(self)

        state = np.array(self.initial_state, dtype=np.float64)
        if state.shape != (self.agents, self.network.size):
            raise SimulationError(
                f"Initial state has shape {state.shape}, expected ({self.agents}, {self.network.size})"
            )

        return state, self.network


@dataclass(frozen=True, eq=False)
class Trajectory:
    scenario: Scenario
    # network the run used (inflow links possibly expanded)
    network: Network
    final_state: Tensor
    # links x count samples, cumulative vehicles
    counts: Tensor
    # cumulative vehicles per link at the end of the horizon
    cumulative: Tensor
    # cumulative vehicles over all links at the end of the horizon
    total: Tensor
    # steps x links, vehicles counted per step
    increments: np.ndarray
    snapshots: tuple[np.ndarray, ...] | None = field(default=None, repr=False)

    @property
    def steps(self) -> int:
        return self.increments.shape[0]


def seed_agents(scenario: Scenario) -> tuple[np.ndarray, Network]:
    """
    Queue the scenario's agents on the virtual inflow links.

    Agents go round-robin over the inflow links; on each link they queue back
    from its end at ``platoon_size / seed_density`` meters. Inflow links too
    short for their queue are lengthened, or :class:`SeedingError` is raised
    when expansion is disabled.
    """
    network = scenario.network
    inflow = network.inflow_links.tolist()
    agents = scenario.agents

    if agents and not inflow:
        raise SeedingError("Network has no virtual inflow links to seed agents on")

    X = np.full((agents, network.size), -SENTINEL)
    if agents == 0:
        return X, network

    spacing = scenario.config.platoon_size / scenario.seed_density
    required = ((agents - 1) // len(inflow)) * spacing
    lengths = network.lengths.copy()
    short = [j for j in inflow if lengths[j] < required]

    if short:
        if not scenario.expand_inflow:
            raise SeedingError(
                f"{agents} agents need virtual inflow links of at least {required:.2f} m, "
                f"{len(short)} are shorter"
            )

        logger.warning("Lengthening %d virtual inflow links to %.2f m to fit the initial queue", len(short), required)
        lengths[short] = required
        network = network.with_lengths(lengths)

    for agent in range(agents):
        link = inflow[agent % len(inflow)]
        X[agent, link] = lengths[link] - (agent // len(inflow)) * spacing

    return X, network


def _phases(
    X: Tensor,
    params: LinkTensors,
    network: Network,
    cfg: SimConfig,
    rng: RngStream,
    index: int,
) -> tuple[Tensor, Tensor]:
    moved = position_update_all(X, params.u, params.kappa, network.lengths, cfg, network.sink_mask)
    after = node_step(
        moved,
        params,
        network,
        cfg,
        rng.generator("link_choice", index),
        rng.generator("merge", index),
    )
    return moved, after


def step(
    X: Tensor,
    params: LinkTensors,
    network: Network,
    cfg: SimConfig,
    rng: RngStream,
    index: int,
) -> Tensor:
    """One time step: car-following on every link, then the node model"""
    return _phases(X, params, network, cfg, rng, index)[1]


def _counted_step(network: Network, cfg: SimConfig, rng: RngStream, index: int, shape: tuple[int, int]):
    agents, links = shape

    def run(flat_state, u, kappa, beta, alpha, cost):
        X = ops.reshape(flat_state, shape)
        moved, after = _phases(X, LinkTensors(u, kappa, beta, alpha, cost), network, cfg, rng, index)
        crossed = link_counts(moved, network.lengths)
        return ops.concat([ops.reshape(after, (agents * links,)), crossed, link_counts(after, network.lengths)])

    return run


def simulate(
    scenario: Scenario,
    params: LinkParams | LinkTensors,
    rng: RngStream,
    *,
    record_snapshots: bool = False,
    checkpointing: bool = True,
) -> Trajectory:
    """
    Run the scenario for its horizon.

    Counts are accumulated per step from the increase of every link's count
    between the end of the previous step and the end of this step's car
    following, so agents leaving a link keep their contribution. With
    ``checkpointing`` each step is a single node on the tape and is
    recomputed during backward.
    """
    X0, network = scenario.seeded
    cfg = scenario.config
    params = as_link_tensors(params)

    if params.u.shape != (network.size,):
        raise SimulationError(f"Parameters cover {params.u.shape[0]} links, network has {network.size}")

    shape = X0.shape
    agents, links = shape
    state = Tensor.constant(X0.reshape(-1))
    before = link_counts(X0, network.lengths)

    cumulative = Tensor.constant(np.zeros(links))
    samples: list[Tensor] = []
    increments = np.zeros((scenario.steps, links))
    snapshots = [X0] if record_snapshots else None
    spi = scenario.steps_per_interval
    progress = max(scenario.steps // 10, 1)

    for index in range(scenario.steps):
        run = _counted_step(network, cfg, rng, index, shape)

        if checkpointing:
            out = checkpoint(run, state, *params)
        else:
            out = run(state, *params)

        state = ops.take(out, 0, agents * links)
        crossed = ops.take(out, agents * links, agents * links + links)

        increment = ops.maximum(crossed - before, 0.0) * cfg.platoon_size
        cumulative = cumulative + increment
        increments[index] = increment.numpy()
        before = ops.take(out, agents * links + links, agents * links + 2 * links)

        if (index + 1) % spi == 0:
            samples.append(cumulative)

        if record_snapshots:
            snapshots.append(state.numpy().reshape(shape))

        if (index + 1) % progress == 0:
            logger.debug("Simulated step %d/%d", index + 1, scenario.steps)

    if samples:
        counts = ops.stack(samples, axis=1)
    else:
        counts = Tensor.constant(np.zeros((links, 0)))

    return Trajectory(
        scenario=scenario,
        network=network,
        final_state=ops.reshape(state, shape),
        counts=counts,
        cumulative=cumulative,
        total=ops.reduce_sum(cumulative),
        increments=increments,
        snapshots=tuple(snapshots) if record_snapshots else None,
    )
