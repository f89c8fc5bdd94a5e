"""
Tape gradients against central finite differences.

The simulation is piecewise smooth: sorting, argmax sampling, min/max
selections and indicators switch discretely. Finite differences are taken on
the relaxed surrogate that keeps every such decision of a recorded forward
pass (see :func:`~traffic_twin.autodiff.frozen_constants`), which is exactly
the function the tape differentiates.

Three small networks are checked: a chain, where only ``u`` and ``kappa``
matter, a diverge, where agents pick between two roads (``beta``, ``cost``),
and a merge, where two queues compete for one road (``alpha``). The
branching networks run at temperature 1; at the default temperature the
relaxed choices are saturated and their gradients vanish to rounding noise.
"""

from dataclasses import dataclass
from typing import Callable
import logging

import numpy as np

from traffic_twin.autodiff import RngStream, Tape, Tensor, frozen_constants
from traffic_twin.network import PARAMETER_KINDS, Link, LinkKind, LinkParams, Network, Node, ParameterRanges
from traffic_twin.network import sample_parameters
from traffic_twin.simulation.core import LinkTensors, SimConfig
from traffic_twin.simulation.engine import Scenario, simulate

__all__ = [
    "GradientCheck",
    "chain_scenario",
    "diverge_scenario",
    "merge_scenario",
    "SCENARIOS",
    "finite_difference",
    "check_gradients",
    "gradcheck",
]

logger = logging.getLogger(__name__)

# a parameter kind whose gradients all stay below this is compared absolutely
GRADIENT_SCALE = 1e-3

# relaxed choices enter positions scaled by SENTINEL through the transfer, so
# their parameters take a smaller difference step than the car-following ones
CHOICE_KINDS = ("beta", "alpha", "cost")
CHOICE_EPS = 1e-7

BRANCHING = SimConfig(temperature=1.0)


@dataclass(frozen=True, eq=False)
class GradientCheck:
    analytic: dict[str, np.ndarray]
    numeric: dict[str, np.ndarray]
    scenario: str = "chain"
    draw: int = 0

    def errors(self) -> dict[str, float]:
        """
        Largest deviation per parameter kind, relative to the largest gradient
        of that kind (or to ``GRADIENT_SCALE`` when every gradient is smaller)
        """
        result = {}
        for kind, analytic in self.analytic.items():
            numeric = self.numeric[kind]
            scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)))
            result[kind] = float(np.max(np.abs(analytic - numeric), initial=0.0) / max(scale, GRADIENT_SCALE))

        return result

    @property
    def max_error(self) -> float:
        return max(self.errors().values())

    def responsive(self, kind: str) -> bool:
        """Whether some gradient of ``kind`` is large enough to be checked relatively"""
        return bool(np.max(np.abs(self.analytic[kind]), initial=0.0) > GRADIENT_SCALE)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "draw": self.draw,
            "errors": self.errors(),
            "responsive": [kind for kind in PARAMETER_KINDS if self.responsive(kind)],
        }


def chain_scenario(agents: int = 5, steps: int = 20) -> Scenario:
    """Inflow link, one physical link and an outflow link in a row"""
    network = Network(
        [Node(1, virtual=True), Node(2), Node(3), Node(4, virtual=True)],
        [
            Link(0, 1, 2, 40.0, LinkKind.INFLOW),
            Link(1, 2, 3, 60.0),
            Link(2, 3, 4, 40.0, LinkKind.OUTFLOW),
        ],
        name="chain",
    )
    return Scenario(network, SimConfig(), vehicles=agents, horizon=float(steps), interval=float(steps))


def diverge_scenario(agents: int = 5, steps: int = 20) -> Scenario:
    """One inflow link splitting into two roads, each with its own outflow link"""
    network = Network(
        [Node(1, virtual=True), Node(2), Node(3), Node(4), Node(5, virtual=True), Node(6, virtual=True)],
        [
            Link(0, 1, 2, 40.0, LinkKind.INFLOW),
            Link(1, 2, 3, 60.0),
            Link(2, 2, 4, 60.0),
            Link(3, 3, 5, 40.0, LinkKind.OUTFLOW),
            Link(4, 4, 6, 40.0, LinkKind.OUTFLOW),
        ],
        name="diverge",
    )
    return Scenario(network, BRANCHING, vehicles=agents, horizon=float(steps), interval=float(steps))


def merge_scenario(agents: int = 6, steps: int = 20) -> Scenario:
    """Two inflow links feeding one road"""
    network = Network(
        [Node(1, virtual=True), Node(2, virtual=True), Node(3), Node(4), Node(5, virtual=True)],
        [
            Link(0, 1, 3, 40.0, LinkKind.INFLOW),
            Link(1, 2, 3, 40.0, LinkKind.INFLOW),
            Link(2, 3, 4, 60.0),
            Link(3, 4, 5, 40.0, LinkKind.OUTFLOW),
        ],
        name="merge",
    )
    return Scenario(network, BRANCHING, vehicles=agents, horizon=float(steps), interval=float(steps))


SCENARIOS: dict[str, Callable[[], Scenario]] = {
    "chain": chain_scenario,
    "diverge": diverge_scenario,
    "merge": merge_scenario,
}


def finite_difference(func: Callable[[np.ndarray], float], x0: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences with a step of ``eps * max(1, |x|)`` per entry"""
    grad = np.zeros(x0.size)

    for j in range(x0.size):
        step = eps * max(1.0, abs(x0[j]))
        x = np.array(x0, dtype=np.float64)

        x[j] = x0[j] + step
        f_plus = func(x)

        x[j] = x0[j] - step
        f_minus = func(x)

        grad[j] = (f_plus - f_minus) / (2 * step)

    return grad


def check_gradients(scenario: Scenario, params: LinkParams, rng: RngStream, eps: float = 1e-5) -> GradientCheck:
    """
    Gradients of the total count at the end of the horizon, tape vs finite differences.

    :param eps: relative difference step of ``u`` and ``kappa``; choice
        parameters use ``min(eps, CHOICE_EPS)``
    """
    with frozen_constants() as ledger:
        tape = Tape()
        leaves = [tape.watch(values, kind) for kind, values in params]
        run = simulate(scenario, LinkTensors(*leaves), rng)

    with frozen_constants(ledger):
        analytic = tape.backward(run.total, leaves)

    def total(kind: str, values: np.ndarray) -> float:
        tensors = {name: Tensor.constant(vector) for name, vector in params}
        tensors[kind] = Tensor.constant(values)
        with frozen_constants(ledger):
            return simulate(scenario, LinkTensors(**tensors), rng).total.item()

    numeric = {
        kind: finite_difference(
            lambda x, kind=kind: total(kind, x),
            params.get(kind),
            min(eps, CHOICE_EPS) if kind in CHOICE_KINDS else eps,
        )
        for kind in PARAMETER_KINDS
    }
    return GradientCheck(dict(zip(PARAMETER_KINDS, analytic)), numeric, scenario.network.name)


def gradcheck(draws: int = 20, seed: int = 0, eps: float = 1e-5) -> list[GradientCheck]:
    """Gradient checks on every scenario of ``SCENARIOS`` at ``draws`` random parameter points each"""
    rng = RngStream(seed)
    ranges = ParameterRanges()
    checks = []

    for name, build in SCENARIOS.items():
        scenario = build()
        size = scenario.network.size
        stream = rng.child("draws").child(name)

        for draw in range(draws):
            params = sample_parameters(scenario.network, ranges, stream.generator("params", draw))
            params = params.replace(cost=stream.generator("cost", draw).uniform(0.5, 2.0, size))

            check = check_gradients(scenario, params, rng.child("gumbel").child(draw), eps)
            check = GradientCheck(check.analytic, check.numeric, name, draw)
            logger.info("%s draw %d: max relative error %.3g", name, draw, check.max_error)
            checks.append(check)

    return checks
