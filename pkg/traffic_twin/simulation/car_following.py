"""
Newell car-following on the masked position tensor.

Every link is a column of the agent state ``X`` (agents x links). Entries of
agents that are not on the link hold ``-SENTINEL`` and never move.
"""

import numpy as np

from traffic_twin.autodiff import Tensor, ops
from traffic_twin.autodiff.ops import Operand, as_tensor
from traffic_twin.simulation.core import FLOOR, SENTINEL, VALID_THRESHOLD, SimConfig

__all__ = ["headways", "car_following_step", "position_update_all"]


def headways(x: Operand) -> Tensor:
    """
    Distance from every valid agent to the next valid agent ahead of it.

    Works column-wise on a vector (one link) or on the whole state. The
    leading agent of a link and all invalid entries get ``SENTINEL``.
    """
    x = as_tensor(x)
    agents = x.shape[0]

    if agents == 0:
        return x

    valid = ops.ge(x, VALID_THRESHOLD)
    masked = valid * x + (1.0 - valid) * -FLOOR
    order = ops.argsort_desc(masked, axis=0)
    ranked = ops.gather(masked, order, axis=0)

    gaps = ops.take(ranked, 0, agents - 1) - ops.take(ranked, 1, agents)
    lead = np.full((1,) + x.shape[1:], SENTINEL)
    spread = ops.scatter(ops.concat([lead, gaps], axis=0), order, x.shape, axis=0)

    return valid * spread + (1.0 - valid) * SENTINEL


def _advance(
    x: Tensor,
    u: Tensor,
    kappa: Tensor,
    length: Tensor,
    cfg: SimConfig,
    sink: np.ndarray | None = None,
) -> Tensor:
    valid = ops.ge(x, VALID_THRESHOLD)
    free = valid * u * cfg.dt

    spacing = headways(x)
    if sink is not None:
        spacing = spacing * (1.0 - sink) + sink * SENTINEL

    congested = valid * ops.maximum(spacing - cfg.platoon_size / kappa, 0.0)
    moved = x + ops.minimum(congested, free)

    limit = ops.graft(length, moved) if cfg.grafting else length
    return ops.minimum(moved, limit)


def car_following_step(
    x_col: Operand,
    u: Operand,
    kappa: Operand,
    length: float,
    cfg: SimConfig,
) -> Tensor:
    """
    Advance the agents of one link by one time step.

    Free flow moves an agent ``u * dt``; congestion keeps it ``platoon_size /
    kappa`` behind its leader. Positions are capped at the link end through a
    graft, so gradients survive the cap.

    :param x_col: positions on the link (one column of the state)
    :param u: free-flow speed of the link, m/s
    :param kappa: jam density of the link, veh/m
    :param length: link length, m
    """
    x = as_tensor(x_col)
    shape = x.shape

    u, kappa = ops.expand(u, shape, axis=0), ops.expand(kappa, shape, axis=0)
    return _advance(x, u, kappa, Tensor.constant(np.full(shape, length)), cfg)


def position_update_all(
    X: Operand,
    u: Operand,
    kappa: Operand,
    lengths: np.ndarray,
    cfg: SimConfig,
    sink: np.ndarray | None = None,
) -> Tensor:
    """
    Car-following on every link column at once.

    :param u: per-link free-flow speeds
    :param kappa: per-link jam densities
    :param lengths: per-link lengths
    :param sink: per-link 0/1 mask of links whose agents do not interact
        (virtual outflow links)
    """
    X = as_tensor(X)
    shape = X.shape

    if sink is not None:
        sink = np.broadcast_to(sink, shape)

    return _advance(
        X,
        ops.expand(u, shape, axis=0),
        ops.expand(kappa, shape, axis=0),
        Tensor.constant(np.broadcast_to(lengths, shape)),
        cfg,
        sink,
    )
