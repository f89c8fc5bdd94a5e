from dataclasses import dataclass, field, replace
from typing import Mapping
import math

import numpy as np

from traffic_twin.errors import ParameterInvalid

__all__ = ["OptimizerConfig", "OptimizerState", "adamw_step"]


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.1
    weight_decay: float = 1e-5
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    # iterations without a new best loss before stopping
    patience: int = 20
    max_iterations: int = 200
    # fresh Gumbel noise every iteration
    resample_noise: bool = True
    checkpoint: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ParameterInvalid(f"Learning rate must be positive, got {self.learning_rate}")

        if self.weight_decay < 0:
            raise ParameterInvalid(f"Weight decay must be non-negative, got {self.weight_decay}")

        if not all(0.0 <= beta < 1.0 for beta in self.betas):
            raise ParameterInvalid(f"Moment decay rates must lie in [0, 1), got {self.betas}")

        if self.patience < 1 or self.max_iterations < 1:
            raise ParameterInvalid("Patience and iteration limit must be at least 1")


@dataclass(frozen=True, eq=False)
class OptimizerState:
    """AdamW moments plus the best-iterate bookkeeping of early stopping"""

    m: Mapping[str, np.ndarray]
    v: Mapping[str, np.ndarray]
    step: int = 0
    best_loss: float = math.inf
    best_raw: Mapping[str, np.ndarray] = field(default_factory=dict)
    best_iteration: int | None = None
    # iterations since the best loss last improved
    stale: int = 0

    @classmethod
    def fresh(cls, raw: Mapping[str, np.ndarray]) -> "OptimizerState":
        return cls(
            m={kind: np.zeros_like(values) for kind, values in raw.items()},
            v={kind: np.zeros_like(values) for kind, values in raw.items()},
        )

    def observe(self, loss: float, raw: Mapping[str, np.ndarray], iteration: int) -> "OptimizerState":
        """Record the loss evaluated at ``raw``"""
        if loss < self.best_loss:
            return replace(
                self,
                best_loss=loss,
                best_raw={kind: np.array(values) for kind, values in raw.items()},
                best_iteration=iteration,
                stale=0,
            )

        return replace(self, stale=self.stale + 1)


def adamw_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    cfg: OptimizerConfig = OptimizerConfig(),
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """
    One AdamW update of every parameter block.

    Weight decay is decoupled and applied to the parameters before the
    bias-corrected moment update.
    """
    beta1, beta2 = cfg.betas
    step = state.step + 1
    updated, m, v = {}, {}, {}

    for kind, values in params.items():
        grad = np.asarray(grads[kind], dtype=np.float64)
        if grad.shape != values.shape:
            raise ParameterInvalid(f"Gradient of {kind} has shape {grad.shape}, parameters {values.shape}")

        m[kind] = beta1 * state.m[kind] + (1.0 - beta1) * grad
        v[kind] = beta2 * state.v[kind] + (1.0 - beta2) * grad * grad

        m_hat = m[kind] / (1.0 - beta1**step)
        v_hat = v[kind] / (1.0 - beta2**step)

        decayed = values * (1.0 - cfg.learning_rate * cfg.weight_decay)
        updated[kind] = decayed - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)

    return updated, replace(state, m=m, v=v, step=step)
