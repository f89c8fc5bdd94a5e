from dataclasses import dataclass
import logging

from traffic_twin.autodiff import RngStream, Tape
from traffic_twin.network import LinkParams, ParameterRanges
from traffic_twin.optimization.adamw import OptimizerConfig
from traffic_twin.optimization.loop import OptimizationOutcome, minimize
from traffic_twin.optimization.objectives import loss
from traffic_twin.optimization.parameters import ParameterSet
from traffic_twin.simulation.engine import Scenario, simulate
from traffic_twin.simulation.observation import CountSeries, ObservationMask, record_counts

__all__ = ["CalibrationResult", "noise_stream", "calibrate"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    params: LinkParams
    outcome: OptimizationOutcome


def noise_stream(rng: RngStream, iteration: int, resample: bool) -> RngStream:
    """Gumbel noise of one optimization iteration"""
    return rng.child("gumbel").child(iteration if resample else 0)


def calibrate(
    scenario: Scenario,
    obs: CountSeries,
    mask: ObservationMask,
    cfg: OptimizerConfig = OptimizerConfig(),
    rng: RngStream | None = None,
    *,
    ranges: ParameterRanges = ParameterRanges(),
    initial: LinkParams | None = None,
) -> CalibrationResult:
    """
    Fit u, kappa, beta and alpha to observed counts.

    Every iteration simulates the scenario, takes the masked count loss,
    differentiates it and applies one AdamW step. Starts from the range
    midpoints, or from ``initial`` when resuming.
    """
    rng = rng or RngStream(0)
    start = ParameterSet.behavioral(scenario.network, ranges, initial)

    def evaluate(params: ParameterSet, iteration: int):
        tape = Tape()
        tensors, leaves = params.materialize(tape)
        run = simulate(
            scenario,
            tensors,
            noise_stream(rng, iteration, cfg.resample_noise),
            checkpointing=cfg.checkpoint,
        )

        value = loss(record_counts(run), obs, mask)
        grads = tape.backward(value, leaves) if value.requires_grad else [leaf.numpy() * 0.0 for leaf in leaves]
        return value.item(), dict(zip(params.kinds, grads))

    logger.info("Calibrating %d links against %d observed links", scenario.network.size, len(mask))
    outcome = minimize(start, evaluate, cfg)
    logger.info(
        "Calibration stopped (%s) after %d iterations, best loss %.6g at iteration %d",
        outcome.stop_reason,
        outcome.iterations,
        outcome.best_loss,
        outcome.best_iteration,
    )

    return CalibrationResult(outcome.best.values(), outcome)
