import numpy as np
import pytest

from traffic_twin.autodiff import RngStream, Tape, ops
from traffic_twin.network import Link, Network, Node
from traffic_twin.simulation import SENTINEL, SimConfig, as_link_tensors, link_choice, merge_choice, node_step, transfer

from .conftest import chain_network, uniform_params

M = SENTINEL
CFG = SimConfig()


def diverge() -> Network:
    """Link 0 ends at a node where links 1 and 2 depart"""
    nodes = [Node(i) for i in range(1, 5)]
    links = [Link(0, 1, 2, 100.0), Link(1, 2, 3, 100.0), Link(2, 2, 4, 100.0)]
    return Network(nodes, links)


def merge() -> Network:
    """Links 0 and 1 both end at the node where link 2 departs"""
    nodes = [Node(i) for i in range(1, 5)]
    links = [Link(0, 1, 3, 100.0), Link(1, 2, 3, 100.0), Link(2, 3, 4, 100.0)]
    return Network(nodes, links)


def choose(network: Network, X: np.ndarray, beta=None, cost=None, kappa=None, seed: int = 0) -> np.ndarray:
    size = network.size
    return link_choice(
        X,
        np.ones(size) if beta is None else np.asarray(beta, dtype=float),
        np.ones(size) if cost is None else np.asarray(cost, dtype=float),
        network.adjacency,
        network.lengths,
        np.full(size, 0.2) if kappa is None else np.asarray(kappa, dtype=float),
        CFG,
        RngStream(seed).generator("link_choice"),
    ).numpy()


def test_single_vacant_successor_is_chosen():
    network = chain_network()
    X = np.array([[40.0, -M, -M]])

    for seed in range(5):
        assert choose(network, X, seed=seed).tolist() == [[0.0, 1.0, 0.0]]


def test_agent_mid_link_does_not_choose():
    network = chain_network()
    assert choose(network, np.array([[20.0, -M, -M]])).tolist() == [[0.0, 0.0, 0.0]]


def test_occupied_successor_blocks_transfer():
    network = chain_network()
    # rearmost agent of link 1 sits at 3 m, closer than 1 / 0.2 = 5 m to the entry
    X = np.array([[40.0, -M, -M], [-M, 3.0, -M]])
    assert choose(network, X).tolist() == [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]


def test_agent_without_successor_does_not_choose():
    network = chain_network()
    assert choose(network, np.array([[-M, -M, 40.0]])).tolist() == [[0.0, 0.0, 0.0]]


def test_choice_frequency_follows_softmax():
    network = diverge()
    X = np.tile([100.0, -M, -M], (10_000, 1))

    choice = choose(network, X, beta=[1.0, 2.0, 1.0], seed=3)

    assert choice.sum(axis=1).tolist() == [1.0] * 10_000
    assert choice[:, 1].mean() == pytest.approx(0.7311, abs=0.02)


def test_cost_divides_utility():
    network = diverge()
    X = np.tile([100.0, -M, -M], (10_000, 1))

    # beta / cost = (2, 1) again
    choice = choose(network, X, beta=[1.0, 4.0, 2.0], cost=[1.0, 2.0, 2.0], seed=4)
    assert choice[:, 1].mean() == pytest.approx(0.7311, abs=0.02)


def test_merge_frequency_follows_priorities():
    X = np.array([[100.0, -M, -M], [-M, 100.0, -M]])
    choice = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    alpha = np.array([3.0, 1.0, 1.0])
    rng = RngStream(5)
    wins = 0

    for trial in range(10_000):
        admitted = merge_choice(choice, X, alpha, CFG, rng.generator("merge", trial)).numpy()
        assert admitted[2].sum() == 1.0
        wins += admitted[2, 0]

    assert wins / 10_000 == pytest.approx(0.881, abs=0.02)


def test_single_candidate_is_admitted():
    X = np.array([[100.0, -M, -M], [-M, 50.0, -M]])
    choice = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
    admitted = merge_choice(choice, X, np.ones(3), CFG, RngStream(0).generator("merge")).numpy()

    assert admitted.tolist() == [[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]


def test_untargeted_links_admit_nobody():
    X = np.array([[50.0, -M, -M]])
    admitted = merge_choice(np.zeros((1, 3)), X, np.ones(3), CFG, RngStream(0).generator("merge")).numpy()
    assert admitted.tolist() == [[0.0], [0.0], [0.0]]


def test_transfer_moves_admitted_agent():
    X = np.array([[100.0, -M, -M]])
    admitted = np.array([[0.0], [1.0], [0.0]])

    assert transfer(X, admitted, CFG).numpy().tolist() == [[-M, 0.0, -M]]


def test_transfer_keeps_other_agents():
    X = np.array([[100.0, -M, -M], [-M, 30.0, -M]])
    admitted = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]])

    assert transfer(X, admitted, CFG).numpy().tolist() == [[-M, 0.0, -M], [-M, 30.0, -M]]


@pytest.mark.parametrize("grafting, expected", [(True, [[1.0, 1.0, 0.0]]), (False, [[0.0, 1.0, 0.0]])])
def test_transfer_grafts_position_history(grafting, expected):
    tape = Tape()
    X = tape.watch([[100.0, -M, -M]])
    admitted = np.array([[0.0], [1.0], [0.0]])

    moved = transfer(X, admitted, SimConfig(grafting=grafting))
    (grad,) = tape.backward(ops.reduce_sum(ops.take(moved, 1, 2, axis=1)), [X])

    assert grad.tolist() == expected


def test_node_step_without_arrivals_is_identity():
    network = chain_network()
    X = np.array([[10.0, -M, -M], [-M, 20.0, -M]])
    params = as_link_tensors(uniform_params(network))

    out = node_step(X, params, network, CFG, RngStream(0).generator("a"), RngStream(0).generator("b"))
    assert out.numpy().tolist() == X.tolist()


def test_node_step_admits_one_agent_per_link():
    network = merge()
    # both agents reached the end of their link and want link 2
    X = np.array([[100.0, -M, -M], [-M, 100.0, -M]])
    params = as_link_tensors(uniform_params(network))

    out = node_step(X, params, network, CFG, RngStream(1).generator("a"), RngStream(1).generator("b")).numpy()

    on_link2 = out[:, 2] >= 0
    assert on_link2.sum() == 1
    assert np.all((out >= -1e-2).sum(axis=1) == 1)
    # the agent that lost the merge waits at the end of its link
    loser = int(np.flatnonzero(~on_link2)[0])
    assert out[loser, loser] == 100.0
