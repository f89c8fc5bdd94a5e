from dataclasses import dataclass
from typing import Iterable, Sequence
import logging

import numpy as np

from traffic_twin.autodiff import RngStream, Tape
from traffic_twin.errors import ParameterInvalid
from traffic_twin.network import LinkParams, Network
from traffic_twin.optimization.adamw import OptimizerConfig
from traffic_twin.optimization.calibration import noise_stream
from traffic_twin.optimization.loop import OptimizationOutcome, minimize
from traffic_twin.optimization.objectives import target_loss
from traffic_twin.optimization.parameters import ParameterSet
from traffic_twin.simulation.engine import Scenario, simulate

__all__ = ["ControlTarget", "ControlResult", "busiest_link", "control", "cost_sweep"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ControlTarget:
    link: int
    # cumulative vehicles on the link at the end of the horizon
    desired: float

    @classmethod
    def reduction(cls, link: int, uncontrolled: float, fraction: float) -> "ControlTarget":
        if not 0.0 <= fraction <= 1.0:
            raise ParameterInvalid(f"Reduction must lie in [0, 1], got {fraction}")

        return cls(link, uncontrolled * (1.0 - fraction))


@dataclass(frozen=True, eq=False)
class ControlResult:
    target: ControlTarget
    costs: np.ndarray
    achieved: float
    uncontrolled: float
    outcome: OptimizationOutcome

    @property
    def gap_percent(self) -> float | None:
        """Distance between achieved and desired count, in percent of the desired"""
        if self.target.desired == 0:
            return None

        return abs(self.achieved - self.target.desired) / self.target.desired * 100.0

    @property
    def stalled(self) -> bool:
        return self.outcome.stalled

    def to_dict(self) -> dict:
        return {
            "target_link": self.target.link,
            "desired": self.target.desired,
            "uncontrolled": self.uncontrolled,
            "achieved": self.achieved,
            "gap_percent": self.gap_percent,
            "stalled": self.stalled,
            "costs": self.costs.tolist(),
        }


def busiest_link(network: Network, counts: np.ndarray, candidates: Iterable[int] | None = None) -> int:
    """Physical link (among ``candidates``) with the largest cumulative count"""
    physical = set(network.physical_links.tolist())
    pool = sorted(physical if candidates is None else physical.intersection(candidates))

    if not pool:
        raise ParameterInvalid("No physical link to choose a control target from")

    counts = np.asarray(counts)
    return max(pool, key=lambda link: (counts[link], -link))


def control(
    scenario: Scenario,
    params: LinkParams,
    target: ControlTarget,
    cfg: OptimizerConfig = OptimizerConfig(),
    rng: RngStream | None = None,
    *,
    floor: float = 0.05,
) -> ControlResult:
    """
    Optimize link costs so the target link's cumulative count at the end of
    the horizon approaches the desired value.

    Behavioral parameters stay fixed at ``params``. Costs stay above
    ``floor`` and may fall below 1 on links where a discount helps.
    """
    rng = rng or RngStream(0)
    network = scenario.network

    if not 0 <= target.link < network.size:
        raise ParameterInvalid(f"Control target {target.link} is not a link of the network")

    start = ParameterSet.environmental(params, floor)
    counts: dict[int, float] = {}

    def evaluate(costs: ParameterSet, iteration: int):
        tape = Tape()
        tensors, leaves = costs.materialize(tape)
        run = simulate(
            scenario,
            tensors,
            noise_stream(rng, iteration, cfg.resample_noise),
            checkpointing=cfg.checkpoint,
        )

        counts[iteration] = float(run.cumulative.numpy()[target.link])
        value = target_loss(run.cumulative, target.link, target.desired)
        (grad,) = tape.backward(value, leaves) if value.requires_grad else [np.zeros(network.size)]
        return value.item(), {"cost": grad}

    uncontrolled = simulate(scenario, params, noise_stream(rng, 0, cfg.resample_noise), checkpointing=False)
    logger.info(
        "Steering link %d from %.1f towards %.1f vehicles",
        target.link,
        uncontrolled.cumulative.numpy()[target.link],
        target.desired,
    )

    outcome = minimize(start, evaluate, cfg)
    result = ControlResult(
        target=target,
        costs=outcome.best.values().cost,
        achieved=counts[outcome.best_iteration],
        uncontrolled=float(uncontrolled.cumulative.numpy()[target.link]),
        outcome=outcome,
    )

    if result.stalled:
        logger.warning("Link %d does not respond to any cost change", target.link)

    return result


def cost_sweep(
    scenario: Scenario,
    params: LinkParams,
    target: ControlTarget,
    link: int,
    grid: Sequence[float],
    rng: RngStream | None = None,
) -> np.ndarray:
    """Target loss for every cost of ``link`` in ``grid``, all other costs kept"""
    rng = rng or RngStream(0)
    losses = []

    for cost in grid:
        costs = params.cost.copy()
        costs[link] = cost
        run = simulate(scenario, params.replace(cost=costs), noise_stream(rng, 0, False), checkpointing=False)
        losses.append(target_loss(run.cumulative, target.link, target.desired).item())

    return np.array(losses)
