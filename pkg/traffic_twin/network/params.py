from dataclasses import dataclass, fields
from typing import Any, Iterator
import logging

import numpy as np

from traffic_twin.errors import ParameterInvalid
from traffic_twin.network.network import LinkKind, Network

__all__ = [
    "PARAMETER_KINDS",
    "BEHAVIORAL_KINDS",
    "ParameterRanges",
    "LinkParams",
    "sample_parameters",
    "normalize_beta",
]

logger = logging.getLogger(__name__)

PARAMETER_KINDS = ("u", "kappa", "beta", "alpha", "cost")
BEHAVIORAL_KINDS = ("u", "kappa", "beta", "alpha")


@dataclass(frozen=True)
class ParameterRanges:
    """Uniform sampling ranges (and calibration bounds) of the behavioral parameters"""

    # free-flow speed, m/s
    u: tuple[float, float] = (13.9, 22.2)
    # jam density, veh/m
    kappa: tuple[float, float] = (0.18, 0.22)
    beta: tuple[float, float] = (0.0, 5.0)
    alpha: tuple[float, float] = (0.01, 5.0)

    def __post_init__(self):
        for kind in BEHAVIORAL_KINDS:
            low, high = getattr(self, kind)
            if not (np.isfinite(low) and np.isfinite(high)):
                raise ParameterInvalid(f"Range of {kind} must be finite, got [{low}, {high}]")
            if low > high:
                raise ParameterInvalid(f"Range of {kind} is empty: [{low}, {high}]")

    def bounds(self, kind: str) -> tuple[float, float]:
        return getattr(self, kind)

    def midpoint(self, kind: str) -> float:
        low, high = self.bounds(kind)
        return low + (high - low) * 0.5


@dataclass(frozen=True, eq=False)
class LinkParams:
    """Per-link parameter vectors, all of the same length"""

    u: np.ndarray
    kappa: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray
    cost: np.ndarray

    def __post_init__(self):
        sizes = set()
        for kind in PARAMETER_KINDS:
            values = np.array(getattr(self, kind), dtype=np.float64)
            if values.ndim != 1:
                raise ParameterInvalid(f"{kind} must be a vector, got shape {values.shape}")
            if not np.all(np.isfinite(values)):
                raise ParameterInvalid(f"{kind} contains non-finite values")
            values.flags.writeable = False
            object.__setattr__(self, kind, values)
            sizes.add(values.size)

        if len(sizes) != 1:
            raise ParameterInvalid("All parameter vectors must have the same length")

        for kind in ("u", "kappa", "alpha", "cost"):
            if np.any(getattr(self, kind) <= 0):
                raise ParameterInvalid(f"{kind} must be strictly positive on every link")

        if np.any(self.beta < 0):
            raise ParameterInvalid("beta must be non-negative on every link")

    def __len__(self):
        return self.u.size

    def __iter__(self) -> Iterator[tuple[str, np.ndarray]]:
        for kind in PARAMETER_KINDS:
            yield kind, getattr(self, kind)

    def __eq__(self, other):
        if not isinstance(other, LinkParams):
            return NotImplemented

        return all(np.array_equal(getattr(self, f.name), getattr(other, f.name)) for f in fields(self))

    def get(self, kind: str) -> np.ndarray:
        if kind not in PARAMETER_KINDS:
            raise KeyError(f"Unknown parameter kind {kind!r}")

        return getattr(self, kind)

    def replace(self, **values) -> "LinkParams":
        return LinkParams(**(dict(self) | values))

    def to_dict(self) -> dict[str, list[float]]:
        return {kind: values.tolist() for kind, values in self}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "LinkParams":
        missing = [kind for kind in PARAMETER_KINDS if kind not in data]
        if missing:
            raise ParameterInvalid(f"Parameter file lacks {', '.join(missing)}")

        return cls(**{kind: data[kind] for kind in PARAMETER_KINDS})

    @classmethod
    def midpoint(cls, network: Network, ranges: ParameterRanges = ParameterRanges()) -> "LinkParams":
        """Every link at the middle of every range, costs 1"""
        size = network.size
        return cls(
            **{kind: np.full(size, ranges.midpoint(kind)) for kind in BEHAVIORAL_KINDS},
            cost=np.ones(size),
        )


def sample_parameters(
    network: Network,
    ranges: ParameterRanges,
    rng: np.random.Generator,
) -> LinkParams:
    """
    Independent uniform draws per link within ``ranges``.

    Virtual links take the midpoint speed; costs start at 1 everywhere.
    """
    size = network.size
    values = {kind: rng.uniform(*ranges.bounds(kind), size=size) for kind in BEHAVIORAL_KINDS}

    virtual = np.array([link.kind is not LinkKind.PHYSICAL for link in network.links], dtype=bool)
    values["u"][virtual] = ranges.midpoint("u")

    return LinkParams(**values, cost=np.ones(size))


def normalize_beta(beta: np.ndarray, network: Network) -> np.ndarray:
    """
    Remove the mean of beta over each junction.

    Choice probabilities depend only on utility differences among the links
    leaving one node, so beta is identifiable only up to a per-junction shift.
    """
    normalized = np.array(beta, dtype=np.float64)

    for links in network.junctions().values():
        normalized[links] -= normalized[links].mean()

    return normalized
