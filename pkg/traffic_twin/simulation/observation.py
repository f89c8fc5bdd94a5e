from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence
import json
import logging
import math

import numpy as np
import pandas as pd

from traffic_twin.autodiff import RngStream, Tensor, ops
from traffic_twin.autodiff.ops import Operand, as_tensor
from traffic_twin.errors import ObservationError
from traffic_twin.simulation.core import COUNTER_SHARPNESS, VALID_THRESHOLD

__all__ = [
    "CSV_COLUMNS",
    "differentiable_count",
    "link_counts",
    "CountSeries",
    "ObservationMask",
    "record_counts",
    "synthesize_observations",
]

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("link_id", "t_seconds", "cumulative_count")


def _indicator(x: Tensor, offset: Operand, sharpness: Operand) -> Tensor:
    valid = ops.ge(x, VALID_THRESHOLD)
    soft = ops.sigmoid((x - offset) * sharpness)
    return valid * (ops.ge(x, offset) + (soft - ops.stop_gradient(soft)))


def differentiable_count(x_col: Operand, offset: float, length: float) -> Tensor:
    """
    Number of valid agents on a link that are past the counter at ``offset``.

    The forward value is the exact integer count; the gradient is the one of
    a sigmoid of slope ``5 / length`` centred on the counter.
    """
    if not 0.0 < offset < length:
        raise ObservationError(f"Counter offset {offset} lies outside (0, {length})")

    x = as_tensor(x_col)
    if x.size == 0:
        return ops.reduce_sum(x)

    return ops.reduce_sum(_indicator(x, offset, COUNTER_SHARPNESS / length))


def link_counts(X: Operand, lengths: np.ndarray) -> Tensor:
    """Per-link count of agents past the link midpoint"""
    X = as_tensor(X)
    lengths = np.asarray(lengths, dtype=np.float64)

    if X.shape[0] == 0:
        return ops.reduce_sum(X, axis=0)

    offset = np.broadcast_to(lengths / 2, X.shape)
    sharpness = np.broadcast_to(COUNTER_SHARPNESS / lengths, X.shape)
    return ops.reduce_sum(_indicator(X, offset, sharpness), axis=0)


@dataclass(frozen=True, eq=False)
class CountSeries:
    """
    Cumulative vehicle counts per link, sampled at the end of every interval.

    ``values[j, k]`` is the count of link ``link_ids[j]`` at ``(k + 1) *
    interval`` seconds. ``tensor`` holds the same values as a recorded tensor
    when the series came out of a differentiable simulation.
    """

    link_ids: tuple[int, ...]
    interval: float
    values: np.ndarray
    tensor: Tensor | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "link_ids", tuple(int(i) for i in self.link_ids))
        values = np.array(self.values, dtype=np.float64).reshape(len(self.link_ids), -1)

        if self.interval <= 0:
            raise ObservationError(f"Count interval must be positive, got {self.interval}")

        if len(set(self.link_ids)) != len(self.link_ids):
            raise ObservationError("Count series lists a link more than once")

        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ObservationError("Counts must be finite and non-negative")

        if np.any(np.diff(values, axis=1) < 0):
            raise ObservationError("Cumulative counts must not decrease over time")

        if self.tensor is not None and self.tensor.shape != values.shape:
            raise ObservationError(f"Count tensor {self.tensor.shape} does not match values {values.shape}")

        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __eq__(self, other):
        if not isinstance(other, CountSeries):
            return NotImplemented

        return (
            self.link_ids == other.link_ids
            and self.interval == other.interval
            and np.array_equal(self.values, other.values)
        )

    @property
    def points(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(1, self.points + 1) * self.interval

    def row(self, link_id: int) -> int:
        try:
            return self.link_ids.index(link_id)
        except ValueError:
            raise ObservationError(f"Count series has no link {link_id}") from None

    def select(self, link_ids: Iterable[int]) -> "CountSeries":
        rows = [self.row(i) for i in link_ids]
        return CountSeries(tuple(self.link_ids[r] for r in rows), self.interval, self.values[rows])

    def head(self, points: int) -> "CountSeries":
        if points > self.points:
            raise ObservationError(f"Count series has {self.points} points, {points} requested")

        return CountSeries(self.link_ids, self.interval, self.values[:, :points])

    def tail(self, points: int) -> "CountSeries":
        """Last ``points`` samples, counted from the start of that stretch"""
        if points > self.points:
            raise ObservationError(f"Count series has {self.points} points, {points} requested")

        return CountSeries.from_increments(self.link_ids, self.interval, self.increments()[:, self.points - points :])

    def increments(self) -> np.ndarray:
        """Vehicles counted within each interval"""
        return np.diff(self.values, axis=1, prepend=0.0)

    @classmethod
    def from_increments(cls, link_ids: Sequence[int], interval: float, increments: np.ndarray) -> "CountSeries":
        return cls(tuple(link_ids), interval, np.cumsum(increments, axis=1))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "link_id": np.repeat(np.array(self.link_ids, dtype=np.int64), self.points),
                "t_seconds": np.tile(self.times, len(self.link_ids)),
                "cumulative_count": self.values.reshape(-1),
            },
            columns=list(CSV_COLUMNS),
        )

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "CountSeries":
        missing = [column for column in CSV_COLUMNS if column not in frame.columns]
        if missing:
            raise ObservationError(f"Count table lacks columns {', '.join(missing)}")

        if frame.empty:
            raise ObservationError("Count table is empty")

        table = frame.pivot(index="link_id", columns="t_seconds", values="cumulative_count")
        if table.isna().any(axis=None):
            raise ObservationError("Count table is misaligned: links are sampled at different times")

        times = table.columns.to_numpy(dtype=np.float64)
        interval = float(times[0])
        if not np.allclose(times, np.arange(1, times.size + 1) * interval):
            raise ObservationError("Count table times are not evenly spaced from the first interval")

        return cls(tuple(table.index.tolist()), interval, table.to_numpy(dtype=np.float64))

    def to_csv(self, path: Path | str) -> None:
        self.to_frame().to_csv(path, index=False, lineterminator="\n")

    @classmethod
    def read_csv(cls, path: Path | str) -> "CountSeries":
        return cls.from_frame(pd.read_csv(path))


@dataclass(frozen=True)
class ObservationMask:
    """Links whose counts are observed"""

    observed: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "observed", tuple(sorted(int(i) for i in self.observed)))

    def __len__(self):
        return len(self.observed)

    def __contains__(self, link_id: int):
        return link_id in self.observed

    def to_dict(self) -> dict[str, list[int]]:
        return {"observed_links": list(self.observed)}

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf8")

    @classmethod
    def load(cls, path: Path | str) -> "ObservationMask":
        data = json.loads(Path(path).read_text(encoding="utf8"))
        if "observed_links" not in data:
            raise ObservationError(f"Mask file {path} lacks observed_links")

        return cls(tuple(data["observed_links"]))


def record_counts(trajectory, interval: float | None = None) -> CountSeries:
    """
    Cumulative counts of a trajectory, sampled every ``interval`` seconds.

    Defaults to the scenario's observation interval, in which case the
    series keeps the trajectory's differentiable count tensor.
    """
    scenario = trajectory.scenario
    link_ids = tuple(link.id for link in scenario.network.links)

    if interval is None or interval == scenario.interval:
        return CountSeries(link_ids, scenario.interval, trajectory.counts.numpy(), trajectory.counts)

    stride = interval / scenario.config.dt
    if stride <= 0 or not float(stride).is_integer():
        raise ObservationError(f"Interval {interval} s is not a multiple of the time step {scenario.config.dt} s")

    stride = int(stride)
    cumulative = np.cumsum(trajectory.increments, axis=0)
    boundaries = np.arange(stride, trajectory.steps + 1, stride) - 1
    return CountSeries(link_ids, float(interval), cumulative[boundaries].T)


def synthesize_observations(
    series: CountSeries,
    physical_links: Sequence[int],
    noise_frac: float = 0.10,
    coverage: float = 0.80,
    rng: RngStream | None = None,
) -> tuple[CountSeries, ObservationMask]:
    """
    Noisy partial observations of a ground-truth series.

    Every per-interval increment is scaled by ``1 + eps`` with ``eps``
    uniform in ``[-noise_frac, noise_frac]`` and the increments are summed
    back up, so noisy counts stay cumulative. ``floor(coverage *
    len(physical_links))`` physical links are drawn as observed.
    """
    if not 0.0 <= noise_frac < 1.0:
        raise ObservationError(f"Noise fraction must lie in [0, 1), got {noise_frac}")

    if not 0.0 < coverage <= 1.0:
        raise ObservationError(f"Coverage must lie in (0, 1], got {coverage}")

    rng = rng or RngStream(0)
    values = series.values

    if noise_frac > 0.0:
        eps = rng.generator("noise").uniform(-noise_frac, noise_frac, size=values.shape)
        values = np.cumsum(np.maximum(series.increments() * (1.0 + eps), 0.0), axis=1)

    physical = np.array(sorted(physical_links), dtype=np.int64)
    chosen = math.floor(coverage * physical.size + 1e-9)
    observed = rng.generator("coverage").choice(physical, size=chosen, replace=False)

    if chosen == 0:
        raise ObservationError("Coverage selects no physical link")

    logger.debug("Observing %d of %d physical links", chosen, physical.size)
    return CountSeries(series.link_ids, series.interval, values), ObservationMask(tuple(observed.tolist()))
