from dataclasses import dataclass
from typing import Iterable
import logging
import time

import numpy as np

from traffic_twin.autodiff import RngStream
from traffic_twin.errors import SimulationError
from traffic_twin.network import LinkParams
from traffic_twin.simulation.engine import Scenario, simulate
from traffic_twin.simulation.observation import CountSeries, record_counts

__all__ = ["Forecast", "nowcast"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Forecast:
    # seconds past the end of the observation window
    horizon: float
    steps: int
    # wall time of the forward run
    seconds: float
    # counts from the start of the run through window + horizon
    series: CountSeries
    # cumulative counts per link at window + horizon
    final: np.ndarray

    @property
    def ahead(self) -> CountSeries:
        """Samples after the observation window, counted from its end"""
        points = int(round(self.horizon / self.series.interval))
        return self.series.tail(min(points, self.series.points))


def nowcast(
    scenario: Scenario,
    params: LinkParams,
    rng: RngStream,
    horizons: Iterable[float],
) -> list[Forecast]:
    """
    Forward runs from the initial state through the scenario horizon (the
    observation window) plus each of ``horizons`` seconds.

    Runs keep no tape and no snapshots; their wall time is measured per
    horizon.
    """
    forecasts = []

    for horizon in horizons:
        if horizon < 0:
            raise SimulationError(f"Nowcast horizon must be non-negative, got {horizon}")

        extended = scenario.with_horizon(scenario.horizon + horizon)

        started = time.perf_counter()
        run = simulate(extended, params, rng, checkpointing=False)
        seconds = time.perf_counter() - started

        logger.info("Nowcast %+.0f s: %d steps in %.3f s", horizon, run.steps, seconds)
        forecasts.append(
            Forecast(
                horizon=float(horizon),
                steps=run.steps,
                seconds=seconds,
                series=record_counts(run),
                final=run.increments.sum(axis=0),
            )
        )

    return forecasts
