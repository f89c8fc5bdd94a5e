from dataclasses import dataclass
from typing import Sequence

import numpy as np

from traffic_twin.autodiff import Tensor, ops
from traffic_twin.errors import ObservationError
from traffic_twin.simulation.observation import CountSeries, ObservationMask

__all__ = ["Metrics", "loss", "target_loss", "metrics"]


@dataclass(frozen=True)
class Metrics:
    mae: float
    # None when either series is constant
    pearson_r: float | None
    pairs: int

    def to_dict(self) -> dict[str, float | int | None]:
        return {"mae": self.mae, "pearson_r": self.pearson_r, "pairs": self.pairs}


def loss(sim: CountSeries, obs: CountSeries, mask: ObservationMask) -> Tensor:
    """
    Mean squared count error over observed links.

    Squared errors are averaged over the samples of each observed link, then
    over the links. Uses the simulated series' recorded tensor when it has
    one, so the result can be differentiated.
    """
    if not len(mask):
        raise ObservationError("Observation mask selects no link")

    if sim.interval != obs.interval or sim.points != obs.points:
        raise ObservationError(
            f"Simulated counts ({sim.points} x {sim.interval} s) and observations "
            f"({obs.points} x {obs.interval} s) are misaligned"
        )

    if sim.points == 0:
        raise ObservationError("Count series hold no samples")

    selection = np.zeros((len(mask), len(sim.link_ids)))
    for row, link_id in enumerate(mask.observed):
        selection[row, sim.row(link_id)] = 1.0

    target = obs.select(mask.observed).values
    simulated = sim.tensor if sim.tensor is not None else Tensor.constant(sim.values)

    error = ops.matmul(selection, simulated) - target
    return ops.reduce_sum(error * error) / float(target.size)


def target_loss(cumulative: Tensor, link: int, desired: float) -> Tensor:
    """Squared gap between the cumulative count of ``link`` and ``desired``"""
    count = ops.take(cumulative, link, link + 1)
    gap = ops.reduce_sum(count) - desired
    return gap * gap


def metrics(sim: CountSeries, truth: CountSeries, links: Sequence[int] | None = None) -> Metrics:
    """
    MAE and Pearson correlation over per-interval count increments.

    Pairs are all (link, interval) combinations of ``links``, by default
    every link of ``truth``.
    """
    links = tuple(truth.link_ids if links is None else links)

    if sim.interval != truth.interval or sim.points != truth.points:
        raise ObservationError("Simulated and true counts are misaligned")

    simulated = sim.select(links).increments().reshape(-1)
    expected = truth.select(links).increments().reshape(-1)

    if simulated.size == 0:
        raise ObservationError("No count pairs to compare")

    mae = float(np.mean(np.abs(simulated - expected)))

    if np.ptp(simulated) == 0.0 or np.ptp(expected) == 0.0:
        return Metrics(mae, None, simulated.size)

    return Metrics(mae, float(np.corrcoef(simulated, expected)[0, 1]), simulated.size)
