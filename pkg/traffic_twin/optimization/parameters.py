"""
Unconstrained ("raw") parameters and the smooth maps that make them feasible.

The optimizer only ever sees raw values; :meth:`ParameterSet.materialize`
turns them into link parameter tensors that satisfy the
:class:`~traffic_twin.network.LinkParams` invariants by construction.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from traffic_twin.autodiff import Tape, Tensor, ops
from traffic_twin.errors import ParameterInvalid
from traffic_twin.network import BEHAVIORAL_KINDS, PARAMETER_KINDS, LinkParams, Network, ParameterRanges
from traffic_twin.simulation.core import LinkTensors

__all__ = ["Transform", "BoxSigmoid", "SoftplusFloor", "ParameterSet"]

# keeps inverse transforms finite at the edges of their range
_EDGE = 1e-12


class Transform(ABC):
    """Strictly increasing smooth map from the real line into a feasible set"""

    @abstractmethod
    def forward(self, raw: Tensor) -> Tensor:
        raise NotImplementedError

    @abstractmethod
    def inverse(self, value: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def value(self, raw: np.ndarray) -> np.ndarray:
        return self.forward(Tensor.constant(raw)).numpy()


@dataclass(frozen=True)
class BoxSigmoid(Transform):
    low: float
    high: float

    def forward(self, raw: Tensor) -> Tensor:
        return (self.high - self.low) * ops.sigmoid(raw) + self.low

    def inverse(self, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value, dtype=np.float64)
        if self.high == self.low:
            return np.zeros_like(value)

        share = np.clip((value - self.low) / (self.high - self.low), _EDGE, 1.0 - _EDGE)
        return np.log(share) - np.log1p(-share)


@dataclass(frozen=True)
class SoftplusFloor(Transform):
    floor: float

    def forward(self, raw: Tensor) -> Tensor:
        return ops.softplus(raw) + self.floor

    def inverse(self, value: np.ndarray) -> np.ndarray:
        excess = np.maximum(np.asarray(value, dtype=np.float64) - self.floor, _EDGE)
        return np.log(np.expm1(excess))


@dataclass(frozen=True, eq=False)
class ParameterSet:
    """
    Optimized parameter blocks in raw space plus the fixed remainder.

    ``raw`` and ``transforms`` are keyed by the parameter kinds being
    optimized; every other kind is taken from ``fixed``.
    """

    raw: Mapping[str, np.ndarray]
    transforms: Mapping[str, Transform]
    fixed: LinkParams = field(repr=False)

    def __post_init__(self):
        if set(self.raw) != set(self.transforms):
            raise ParameterInvalid("Every optimized block needs exactly one transform")

        unknown = set(self.raw) - set(PARAMETER_KINDS)
        if unknown:
            raise ParameterInvalid(f"Unknown parameter blocks: {', '.join(sorted(unknown))}")

        raw = {}
        for kind in PARAMETER_KINDS:
            if kind not in self.raw:
                continue

            values = np.array(self.raw[kind], dtype=np.float64)
            if values.shape != (len(self.fixed),):
                raise ParameterInvalid(f"Raw {kind} has shape {values.shape}, expected ({len(self.fixed)},)")

            values.flags.writeable = False
            raw[kind] = values

        object.__setattr__(self, "raw", raw)
        object.__setattr__(self, "transforms", {kind: self.transforms[kind] for kind in raw})

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(self.raw)

    @classmethod
    def behavioral(
        cls,
        network: Network,
        ranges: ParameterRanges = ParameterRanges(),
        initial: LinkParams | None = None,
    ) -> "ParameterSet":
        """u, kappa, beta and alpha inside ``ranges``; starts at the range midpoints"""
        transforms = {kind: BoxSigmoid(*ranges.bounds(kind)) for kind in BEHAVIORAL_KINDS}

        if initial is None:
            return cls(
                {kind: np.zeros(network.size) for kind in BEHAVIORAL_KINDS},
                transforms,
                LinkParams.midpoint(network, ranges),
            )

        return cls(
            {kind: transforms[kind].inverse(initial.get(kind)) for kind in BEHAVIORAL_KINDS},
            transforms,
            initial,
        )

    @classmethod
    def environmental(cls, params: LinkParams, floor: float = 0.05) -> "ParameterSet":
        """Link costs kept above ``floor``; starts at ``params.cost``"""
        if np.any(params.cost <= floor):
            raise ParameterInvalid(f"Initial costs must exceed the cost floor {floor}")

        transform = SoftplusFloor(floor)
        return cls({"cost": transform.inverse(params.cost)}, {"cost": transform}, params)

    def with_raw(self, raw: Mapping[str, np.ndarray]) -> "ParameterSet":
        return ParameterSet(raw, self.transforms, self.fixed)

    def materialize(self, tape: Tape) -> tuple[LinkTensors, list[Tensor]]:
        """Link parameter tensors and the raw leaves they were derived from"""
        leaves = []
        values = []

        for kind in PARAMETER_KINDS:
            if kind in self.raw:
                leaf = tape.watch(self.raw[kind], kind)
                leaves.append(leaf)
                values.append(self.transforms[kind].forward(leaf))
            else:
                values.append(Tensor.constant(self.fixed.get(kind)))

        return LinkTensors(*values), leaves

    def values(self) -> LinkParams:
        return self.fixed.replace(
            **{kind: self.transforms[kind].value(raw) for kind, raw in self.raw.items()}
        )
