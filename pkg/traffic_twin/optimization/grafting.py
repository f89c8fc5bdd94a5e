"""
Two-link toy showing what trajectory grafting does to gradients.

A single agent starts at the entry of link 0 and should stand exactly at the
entry of link 1 after 10 seconds. Plain gradient descent on the two free-flow
speeds finds speeds that make this happen only when gradients survive the
cap at the end of link 0 and the transfer onto link 1.
"""

from dataclasses import dataclass
import logging

import numpy as np
import pandas as pd

from traffic_twin.autodiff import RngStream, Tape, Tensor, ops
from traffic_twin.network import Link, Network, Node
from traffic_twin.simulation.core import SENTINEL, LinkTensors, SimConfig
from traffic_twin.simulation.engine import Scenario, simulate

__all__ = ["GraftingRun", "toy_scenario", "run_grafting_demo"]

logger = logging.getLogger(__name__)

LINK_LENGTH = 15.0
HORIZON = 10.0
INITIAL_SPEEDS = (2.0, 1.0)


@dataclass(frozen=True, eq=False)
class GraftingRun:
    grafting: bool
    # iterations x 2 speeds, before each update
    speeds: np.ndarray
    losses: np.ndarray

    @property
    def final(self) -> tuple[float, float]:
        return float(self.speeds[-1, 0]), float(self.speeds[-1, 1])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "iteration": np.arange(len(self.losses)),
                "grafting": self.grafting,
                "u1": self.speeds[:, 0],
                "u2": self.speeds[:, 1],
                "loss": self.losses,
            }
        )


def toy_scenario(grafting: bool) -> Scenario:
    network = Network(
        [Node(1), Node(2), Node(3)],
        [Link(0, 1, 2, LINK_LENGTH), Link(1, 2, 3, LINK_LENGTH)],
        name="grafting-toy",
    )
    return Scenario(
        network,
        SimConfig(grafting=grafting),
        vehicles=1,
        horizon=HORIZON,
        interval=HORIZON,
        initial_state=np.array([[0.0, -SENTINEL]]),
    )


def run_grafting_demo(grafting: bool, iterations: int = 100, learning_rate: float = 1e-2) -> GraftingRun:
    """Fixed-step gradient descent on the toy's two speeds"""
    scenario = toy_scenario(grafting)

    constants = {
        "kappa": Tensor.constant(np.full(2, 0.2)),
        "beta": Tensor.constant(np.ones(2)),
        "alpha": Tensor.constant(np.ones(2)),
        "cost": Tensor.constant(np.ones(2)),
    }
    rng = RngStream(0)
    speeds = np.array(INITIAL_SPEEDS)
    history, losses = [], []

    for _ in range(iterations):
        tape = Tape()
        u = tape.watch(speeds, "u")
        run = simulate(scenario, LinkTensors(u=u, **constants), rng)

        position = ops.take(ops.reshape(run.final_state, (2,)), 1, 2)
        loss = ops.reduce_sum(position * position)

        history.append(speeds)
        losses.append(loss.item())

        if loss.requires_grad:
            (grad,) = tape.backward(loss, [u])
        else:
            grad = np.zeros(2)

        speeds = speeds - learning_rate * grad

    result = GraftingRun(grafting, np.array(history), np.array(losses))
    logger.info("Grafting %s: speeds %.4f, %.4f", "on" if grafting else "off", *result.final)
    return result
