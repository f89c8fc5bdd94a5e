from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np

from traffic_twin.autodiff import Tensor
from traffic_twin.autodiff.ops import as_tensor
from traffic_twin.errors import SimulationError
from traffic_twin.network.params import LinkParams, PARAMETER_KINDS

__all__ = [
    "SENTINEL",
    "FLOOR",
    "VALID_THRESHOLD",
    "ARRIVAL_TOLERANCE",
    "COUNTER_SHARPNESS",
    "SimConfig",
    "LinkTensors",
    "as_link_tensors",
]

# position of an agent on a link it does not occupy is -SENTINEL
SENTINEL = 99999.0
# masks sort keys and utilities of unavailable entries
FLOOR = 1e12
# an agent is on a link when its entry is at least this
VALID_THRESHOLD = -1e-2
# an agent has reached the end of link j when x >= L_j - ARRIVAL_TOLERANCE
ARRIVAL_TOLERANCE = 1e-2
# soft counter slope is COUNTER_SHARPNESS / L_j
COUNTER_SHARPNESS = 5.0


@dataclass(frozen=True)
class SimConfig:
    # vehicles per agent
    platoon_size: int = 1
    # seconds
    reaction_time: float = 1.0
    # Gumbel-softmax temperature
    temperature: float = 0.01
    grafting: bool = True

    def __post_init__(self):
        if isinstance(self.platoon_size, bool) or not isinstance(self.platoon_size, int):
            raise SimulationError(f"Platoon size must be an integer, got {self.platoon_size!r}")

        if self.platoon_size < 1:
            raise SimulationError(f"Platoon size must be at least 1, got {self.platoon_size}")

        if self.reaction_time <= 0:
            raise SimulationError(f"Reaction time must be positive, got {self.reaction_time}")

        if self.temperature <= 0:
            raise SimulationError(f"Temperature must be positive, got {self.temperature}")

    @property
    def dt(self) -> float:
        """Time step in seconds"""
        return self.reaction_time * self.platoon_size


class LinkTensors(NamedTuple):
    u: Tensor
    kappa: Tensor
    beta: Tensor
    alpha: Tensor
    cost: Tensor


def as_link_tensors(params: LinkParams | LinkTensors | Mapping[str, Tensor | np.ndarray]) -> LinkTensors:
    """Parameter vectors as tensors, constants unless already recorded"""
    if isinstance(params, LinkTensors):
        return params

    if isinstance(params, LinkParams):
        return LinkTensors(*(as_tensor(values) for _, values in params))

    return LinkTensors(*(as_tensor(params[kind]) for kind in PARAMETER_KINDS))
