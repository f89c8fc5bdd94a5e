"""
Intersection logic: which link an arriving agent wants next, which agent a
contested link admits, and the transfer itself.

Both choices sample a Gumbel-softmax with a straight-through one-hot, so the
forward pass moves whole agents while the backward pass sees the relaxed
probabilities.
"""

import numpy as np

from traffic_twin.autodiff import Tensor, ops
from traffic_twin.autodiff.ops import Operand, as_tensor
from traffic_twin.network import Network
from traffic_twin.simulation.core import (
    ARRIVAL_TOLERANCE,
    FLOOR,
    SENTINEL,
    VALID_THRESHOLD,
    LinkTensors,
    SimConfig,
)

__all__ = ["link_choice", "merge_choice", "transfer", "node_step"]


def _sample_onehot(utility: Tensor, cfg: SimConfig, generator: np.random.Generator) -> Tensor:
    """Straight-through Gumbel-softmax sample along the last axis"""
    noise = ops.gumbel_sample(utility.shape, generator)
    relaxed = ops.softmax((ops.log_softmax(utility, axis=1) + noise) / cfg.temperature, axis=1)
    return ops.straight_through(ops.onehot_argmax(relaxed, axis=1), relaxed)


def link_choice(
    X: Operand,
    beta: Operand,
    cost: Operand,
    adjacency: np.ndarray,
    lengths: np.ndarray,
    kappa: Operand,
    cfg: SimConfig,
    generator: np.random.Generator,
) -> Tensor:
    """
    Next-link choice of every agent (agents x links).

    The utility of a successor link is ``beta / cost``; links that do not
    continue the agent's current link are masked out. A row is one-hot only
    for agents that are connected to a successor, have reached the end of
    their link, and whose chosen successor is vacant (its rearmost agent is
    further than ``platoon_size / kappa`` from its entry).
    """
    X = as_tensor(X)
    shape = X.shape
    frozen = ops.stop_gradient(X)

    valid = ops.ge(frozen, VALID_THRESHOLD)
    reach = ops.matmul(valid, adjacency)

    utility = ops.expand(as_tensor(beta) / cost, shape, axis=0) * reach - FLOOR * (1.0 - reach)
    wanted = _sample_onehot(utility, cfg, generator)

    connected = ops.reduce_max(reach, axis=1)
    arrived = ops.reduce_max(
        ops.ge(frozen, np.broadcast_to(lengths - ARRIVAL_TOLERANCE, shape)), axis=1
    )
    rearmost = ops.reduce_min(valid * frozen + (1.0 - valid) * SENTINEL, axis=0)
    vacant = ops.gt(rearmost, cfg.platoon_size / ops.stop_gradient(kappa))

    return ops.expand(connected, shape, axis=1) * (
        ops.expand(arrived, shape, axis=1) * (ops.expand(vacant, shape, axis=0) * wanted)
    )


def merge_choice(
    choice: Operand,
    X: Operand,
    alpha: Operand,
    cfg: SimConfig,
    generator: np.random.Generator,
) -> Tensor:
    """
    Admitted agent of every link (links x agents).

    Candidates for a link are the agents whose choice row targets it; each
    candidate's weight is the merge priority of the link it is leaving. Links
    nobody targets admit nobody.
    """
    choice, X = as_tensor(choice), as_tensor(X)
    valid = ops.ge(X, VALID_THRESHOLD)

    priority = ops.transpose(ops.expand(ops.matmul(valid, alpha), X.shape, axis=1) * choice)
    utility = priority - FLOOR * ops.eq(priority, 0.0)
    admitted = _sample_onehot(utility, cfg, generator)

    targeted = ops.reduce_max(choice, axis=0)
    return ops.expand(targeted, priority.shape, axis=1) * admitted


def transfer(X: Operand, admitted: Operand, cfg: SimConfig) -> Tensor:
    """
    Move admitted agents to the entry of their new link.

    The old entry becomes ``-SENTINEL`` and the new one exactly 0. With
    grafting on, the new entry also carries the gradient history of the
    agent's position on the old link.
    """
    X, admitted = as_tensor(X), as_tensor(admitted)
    shape = X.shape

    valid = ops.ge(X, VALID_THRESHOLD)
    arriving = ops.transpose(admitted)
    leaving = valid * ops.expand(ops.reduce_sum(arriving, axis=1), shape, axis=1)

    carrier = 0.0
    if cfg.grafting:
        position = ops.expand(ops.reduce_max(X, axis=1), shape, axis=1)
        carrier = position - ops.stop_gradient(position)

    return X * (1.0 - leaving) - SENTINEL * leaving + (SENTINEL + carrier) * arriving


def node_step(
    X: Operand,
    params: LinkTensors,
    network: Network,
    cfg: SimConfig,
    choice_generator: np.random.Generator,
    merge_generator: np.random.Generator,
) -> Tensor:
    """Link choice, then merge choice, then transfer"""
    choice = link_choice(
        X,
        params.beta,
        params.cost,
        network.adjacency,
        network.lengths,
        params.kappa,
        cfg,
        choice_generator,
    )
    admitted = merge_choice(choice, X, params.alpha, cfg, merge_generator)
    return transfer(X, admitted, cfg)
