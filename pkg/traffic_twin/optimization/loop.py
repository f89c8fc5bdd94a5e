from dataclasses import dataclass
from typing import Callable, Mapping
import logging
import math

import numpy as np

from traffic_twin.errors import DivergenceError
from traffic_twin.optimization.adamw import OptimizerConfig, OptimizerState, adamw_step
from traffic_twin.optimization.parameters import ParameterSet

__all__ = ["IterationRecord", "OptimizationOutcome", "Evaluator", "minimize"]

logger = logging.getLogger(__name__)

# (parameters, iteration) -> (loss, gradient per optimized block)
Evaluator = Callable[[ParameterSet, int], tuple[float, Mapping[str, np.ndarray]]]


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    loss: float
    best_loss: float
    stale: int
    # L2 norm of the gradient per block
    grad_norms: dict[str, float]


@dataclass(frozen=True, eq=False)
class OptimizationOutcome:
    history: tuple[IterationRecord, ...]
    best: ParameterSet
    best_loss: float
    best_iteration: int
    # "converged", "patience" or "max_iterations"
    stop_reason: str
    # every evaluated gradient was exactly zero
    stalled: bool

    @property
    def iterations(self) -> int:
        return len(self.history)


def _check_finite(loss: float, grads: Mapping[str, np.ndarray], kinds: tuple[str, ...], iteration: int):
    for kind in kinds:
        if not np.all(np.isfinite(grads[kind])):
            raise DivergenceError(f"Gradient is not finite at iteration {iteration}", kind)

    if not math.isfinite(loss):
        raise DivergenceError(f"Loss is {loss} at iteration {iteration}", ", ".join(kinds))


def minimize(params: ParameterSet, evaluate: Evaluator, cfg: OptimizerConfig = OptimizerConfig()) -> OptimizationOutcome:
    """
    AdamW descent with early stopping.

    Stops when the loss reaches zero, when the best loss has not improved for
    ``cfg.patience`` consecutive iterations, or after ``cfg.max_iterations``
    evaluations. The returned parameters are the best evaluated iterate.
    """
    state = OptimizerState.fresh(params.raw)
    current = params
    history = []
    stalled = True
    stop_reason = "max_iterations"

    for iteration in range(cfg.max_iterations):
        loss, grads = evaluate(current, iteration)
        loss = float(loss)
        _check_finite(loss, grads, current.kinds, iteration)

        state = state.observe(loss, current.raw, iteration)
        norms = {kind: float(np.linalg.norm(grads[kind])) for kind in current.kinds}
        stalled = stalled and not any(norms.values())

        history.append(IterationRecord(iteration, loss, state.best_loss, state.stale, norms))
        logger.info(
            "Iteration %d: loss %.6g, best %.6g, stale %d/%d",
            iteration,
            loss,
            state.best_loss,
            state.stale,
            cfg.patience,
        )

        if loss <= 0.0:
            stop_reason = "converged"
            break

        if state.stale >= cfg.patience:
            stop_reason = "patience"
            break

        if iteration + 1 < cfg.max_iterations:
            raw, state = adamw_step(current.raw, grads, state, cfg)
            current = current.with_raw(raw)

    if stalled and stop_reason != "converged":
        logger.warning("Gradient was zero at every iteration; the objective does not depend on %s", ", ".join(params.kinds))

    return OptimizationOutcome(
        history=tuple(history),
        best=params.with_raw(state.best_raw),
        best_loss=state.best_loss,
        best_iteration=state.best_iteration,
        stop_reason=stop_reason,
        stalled=stalled,
    )
