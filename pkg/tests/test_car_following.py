import numpy as np
import pytest

from traffic_twin.autodiff import RngStream, Tape, Tensor, ops
from traffic_twin.simulation import SENTINEL, SimConfig, car_following_step, headways, position_update_all

M = SENTINEL
CFG = SimConfig()


def newell_reference(x: list[float], u: float, kappa: float, length: float, platoon: int = 1) -> list[float]:
    """One Newell step agent by agent, leader first"""
    dt = platoon * 1.0
    valid = sorted((i for i, value in enumerate(x) if value >= -1e-2), key=lambda i: -x[i])
    result = list(x)

    for rank, i in enumerate(valid):
        free = u * dt
        if rank == 0:
            congested = M - platoon / kappa
        else:
            congested = max((x[valid[rank - 1]] - x[i]) - platoon / kappa, 0.0)
        result[i] = min(x[i] + min(congested, free), length)

    return result


def test_leader_headway():
    assert headways([0.0, 10.0]).numpy().tolist() == [10.0, M]


def test_single_agent_headway():
    assert headways([3.0]).numpy().tolist() == [M]


def test_invalid_agents_get_sentinel_headway():
    assert headways([-M, 4.0, 9.0]).numpy().tolist() == [M, 5.0, M]


def test_headways_per_column():
    X = np.array([[0.0, -M], [10.0, 2.0], [-M, 7.0]])
    assert headways(X).numpy().tolist() == [[10.0, M], [M, 5.0], [M, M]]


def test_lone_leader_free_flows():
    assert car_following_step([0.0], 15.0, 0.2, 100.0, CFG).numpy().tolist() == [15.0]


def test_follower_keeps_jam_spacing():
    out = car_following_step([0.0, 10.0], 15.0, 0.2, 100.0, CFG).numpy()
    assert out == pytest.approx([5.0, 25.0])


def test_no_backward_motion():
    out = car_following_step([0.0, 2.0], 15.0, 0.2, 100.0, CFG).numpy()
    assert out == pytest.approx([0.0, 17.0])


def test_cap_at_link_end():
    assert car_following_step([95.0], 15.0, 0.2, 100.0, CFG).numpy().tolist() == [100.0]


def test_invalid_entries_do_not_move():
    out = car_following_step([-M, 0.0], 15.0, 0.2, 100.0, CFG).numpy()
    assert out.tolist() == [-M, 15.0]


def test_empty_column_unchanged():
    X = np.zeros((0, 3))
    out = position_update_all(X, np.full(3, 15.0), np.full(3, 0.2), np.full(3, 100.0), CFG)
    assert out.shape == (0, 3)


def test_platoon_scales_time_step_and_spacing():
    cfg = SimConfig(platoon_size=2)
    out = car_following_step([0.0, 30.0], 10.0, 0.2, 100.0, cfg).numpy()
    # dt = 2 s, spacing 2 / 0.2 = 10 m
    assert out == pytest.approx([20.0, 50.0])


def test_columns_evolve_independently():
    u, kappa = np.array([15.0, 20.0]), np.array([0.2, 0.18])
    lengths = np.array([100.0, 80.0])
    X = np.array([[0.0, -M], [10.0, -M], [-M, 3.0], [-M, 40.0]])

    joint = position_update_all(X, u, kappa, lengths, CFG).numpy()
    for j in range(2):
        alone = car_following_step(X[:, j], u[j], kappa[j], lengths[j], CFG).numpy()
        assert joint[:, j].tolist() == alone.tolist()


def test_sink_links_do_not_queue():
    X = np.array([[10.0], [9.0]])
    u, kappa, lengths = np.array([15.0]), np.array([0.2]), np.array([100.0])

    queued = position_update_all(X, u, kappa, lengths, CFG).numpy()
    sunk = position_update_all(X, u, kappa, lengths, CFG, sink=np.array([1.0])).numpy()

    assert queued[:, 0].tolist() == [25.0, 9.0]
    assert sunk[:, 0].tolist() == [25.0, 24.0]


def test_matches_scalar_reference_on_random_links():
    rng = RngStream(11)

    for instance in range(100):
        gen = rng.generator("instance", instance)
        agents = int(gen.integers(1, 33))
        length = float(gen.uniform(50.0, 500.0))
        u = float(gen.uniform(13.9, 22.2))
        kappa = float(gen.uniform(0.18, 0.22))

        x = gen.uniform(0.0, length, agents)
        x[gen.random(agents) < 0.2] = -M
        expected = x.tolist()
        state = x

        for _ in range(50):
            state = car_following_step(state, u, kappa, length, CFG).numpy()
            expected = newell_reference(expected, u, kappa, length)

        assert state == pytest.approx(np.array(expected), abs=1e-12)


def test_step_keeps_order_and_bounds():
    rng = np.random.default_rng(4)
    x = np.sort(rng.uniform(0.0, 200.0, 20))
    state = x

    for _ in range(30):
        moved = car_following_step(state, 18.0, 0.2, 200.0, CFG).numpy()
        assert np.all(moved >= state)
        assert np.all((moved >= 0.0) & (moved <= 200.0))
        # ascending input stays ascending: followers never overtake
        assert np.all(np.diff(moved) >= 0.0)
        state = moved


def _speed_gradient(x, grafting: bool):
    tape = Tape()
    u = tape.watch(15.0)
    out = car_following_step(x, u, 0.2, 100.0, SimConfig(grafting=grafting))
    (grad,) = tape.backward(ops.reduce_sum(out), [u])
    return float(grad)


def test_grafted_cap_keeps_speed_gradient():
    assert _speed_gradient([95.0], grafting=True) == 1.0
    assert _speed_gradient([95.0], grafting=False) == 0.0
    assert _speed_gradient([0.0], grafting=False) == 1.0


def test_gradients_against_finite_differences():
    x = np.array([0.0, 8.0, 30.0])

    def total(u, kappa):
        return ops.reduce_sum(car_following_step(x, u, kappa, 100.0, CFG))

    tape = Tape()
    u, kappa = tape.watch(15.0), tape.watch(0.2)
    grad_u, grad_kappa = tape.backward(total(u, kappa), [u, kappa])

    h = 1e-6
    numeric_u = (total(Tensor.constant(15.0 + h), 0.2).item() - total(Tensor.constant(15.0 - h), 0.2).item()) / (2 * h)
    numeric_kappa = (total(15.0, Tensor.constant(0.2 + h)).item() - total(15.0, Tensor.constant(0.2 - h)).item()) / (2 * h)

    # the rearmost agent is congested, the other two free-flow
    assert float(grad_u) == pytest.approx(numeric_u, rel=1e-5)
    assert float(grad_kappa) == pytest.approx(numeric_kappa, rel=1e-5)
    assert float(grad_kappa) == pytest.approx(1.0 / 0.2**2)
