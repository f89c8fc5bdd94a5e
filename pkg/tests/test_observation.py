import numpy as np
import pandas as pd
import pytest

from traffic_twin.autodiff import RngStream, Tape, ops
from traffic_twin.errors import ObservationError
from traffic_twin.simulation import (
    SENTINEL,
    CountSeries,
    ObservationMask,
    Scenario,
    SimConfig,
    as_link_tensors,
    differentiable_count,
    link_counts,
    record_counts,
    simulate,
    synthesize_observations,
)

from .conftest import chain_network, uniform_params

M = SENTINEL


def series(values, link_ids=(0, 1), interval=300.0) -> CountSeries:
    return CountSeries(link_ids, interval, np.array(values, dtype=float))


def test_count_past_counter():
    assert differentiable_count([10.0], 5.0, 20.0).item() == 1.0
    assert differentiable_count([3.0], 5.0, 20.0).item() == 0.0


def test_count_ignores_invalid_agents():
    assert differentiable_count([-M, 12.0, 14.0, 1.0], 7.5, 15.0).item() == 2.0


def test_count_gradient_at_counter():
    tape = Tape()
    x = tape.watch([7.5])
    (grad,) = tape.backward(differentiable_count(x, 7.5, 15.0), [x])

    assert grad[0] == pytest.approx(0.25 / 3, abs=1e-12)


def test_count_gradient_is_positive_for_valid_agents():
    tape = Tape()
    x = tape.watch([1.0, 7.0, 14.0, -M])
    (grad,) = tape.backward(differentiable_count(x, 7.5, 15.0), [x])

    assert np.all(grad[:3] > 0)
    assert grad[3] == 0.0


def test_empty_column_counts_zero():
    tape = Tape()
    x = tape.watch(np.zeros(0))
    count = differentiable_count(x, 5.0, 10.0)

    assert count.item() == 0.0
    (grad,) = tape.backward(count, [x])
    assert grad.shape == (0,)


@pytest.mark.parametrize("offset", [0.0, 10.0, -1.0])
def test_counter_outside_link(offset):
    with pytest.raises(ObservationError):
        differentiable_count([1.0], offset, 10.0)


def test_link_counts_use_midpoints():
    X = np.array([[30.0, -M], [10.0, -M], [-M, 45.0]])
    assert link_counts(X, np.array([40.0, 100.0])).numpy().tolist() == [1.0, 0.0]


def test_single_agent_crossing(single_agent_chain):
    run = simulate(single_agent_chain, uniform_params(single_agent_chain.network), RngStream(0))
    counts = record_counts(run)

    link = counts.values[1]
    assert counts.points == 10
    assert link[0] == 0.0
    assert link[-1] == 1.0
    assert np.all(np.diff(link) >= 0)
    # the inflow link started with its agent past the counter
    assert counts.values[0].tolist() == [0.0] * 10


def test_platoon_counts_vehicles():
    network = chain_network()
    scenario = Scenario(network, SimConfig(platoon_size=2), vehicles=2, horizon=20.0, interval=2.0)
    counts = record_counts(simulate(scenario, uniform_params(network), RngStream(0)))

    assert counts.values[1, -1] == 2.0


def test_thirty_minutes_at_five_minute_cadence():
    network = chain_network()
    scenario = Scenario(network, SimConfig(platoon_size=60), vehicles=60, horizon=1800.0, interval=300.0)
    counts = record_counts(simulate(scenario, uniform_params(network), RngStream(0), checkpointing=False))

    assert counts.points == 6
    assert counts.times.tolist() == [300.0, 600.0, 900.0, 1200.0, 1500.0, 1800.0]


def test_resampled_counts_agree_with_recorded(single_agent_chain):
    run = simulate(single_agent_chain, uniform_params(single_agent_chain.network), RngStream(0))
    fine = record_counts(run)
    coarse = record_counts(run, interval=5.0)

    assert coarse.points == 2
    assert coarse.values.tolist() == fine.values[:, [4, 9]].tolist()


def test_resampling_needs_whole_steps(single_agent_chain):
    run = simulate(single_agent_chain, uniform_params(single_agent_chain.network), RngStream(0))
    with pytest.raises(ObservationError):
        record_counts(run, interval=2.5)


def test_series_rejects_negative_counts():
    with pytest.raises(ObservationError):
        series([[1.0, -2.0], [0.0, 0.0]])


def test_series_rejects_decreasing_counts():
    with pytest.raises(ObservationError) as info:
        series([[1.0, 3.0, 2.0], [0.0, 0.0, 0.0]])

    assert "decrease" in str(info.value)


def test_series_increments():
    s = series([[1.0, 4.0, 4.0], [0.0, 2.0, 7.0]])
    assert s.increments().tolist() == [[1.0, 3.0, 0.0], [0.0, 2.0, 5.0]]
    assert CountSeries.from_increments((0, 1), 300.0, s.increments()) == s


def test_series_head_and_tail():
    s = series([[1.0, 4.0, 6.0], [0.0, 2.0, 7.0]])

    assert s.head(2).values.tolist() == [[1.0, 4.0], [0.0, 2.0]]
    assert s.tail(2).values.tolist() == [[3.0, 5.0], [2.0, 7.0]]

    with pytest.raises(ObservationError):
        s.head(4)


def test_series_select():
    s = series([[1.0], [2.0], [3.0]], link_ids=(4, 7, 9))
    assert s.select([9, 4]).values.tolist() == [[3.0], [1.0]]

    with pytest.raises(ObservationError):
        s.select([5])


def test_csv_layout(tmp_path):
    path = tmp_path / "counts.csv"
    series([[1.0, 4.0], [0.0, 2.5]], link_ids=(3, 8)).to_csv(path)

    assert path.read_text().splitlines() == [
        "link_id,t_seconds,cumulative_count",
        "3,300.0,1.0",
        "3,600.0,4.0",
        "8,300.0,0.0",
        "8,600.0,2.5",
    ]


def test_csv_round_trip(tmp_path):
    path = tmp_path / "counts.csv"
    original = series([[1.0, 4.0, 9.5], [0.0, 2.0, 2.0]], link_ids=(2, 5))
    original.to_csv(path)

    assert CountSeries.read_csv(path) == original


def test_misaligned_table_is_rejected():
    frame = pd.DataFrame(
        {"link_id": [0, 0, 1], "t_seconds": [300.0, 600.0, 300.0], "cumulative_count": [1.0, 2.0, 1.0]}
    )
    with pytest.raises(ObservationError):
        CountSeries.from_frame(frame)


def test_mask_round_trip(tmp_path):
    mask = ObservationMask((5, 1, 3))
    mask.save(tmp_path / "mask.json")

    assert mask.observed == (1, 3, 5)
    assert ObservationMask.load(tmp_path / "mask.json") == mask
    assert 3 in mask and 2 not in mask


def test_no_noise_keeps_series():
    truth = series([[1.0, 4.0], [0.0, 2.0]])
    noisy, _ = synthesize_observations(truth, [0, 1], noise_frac=0.0, coverage=1.0)
    assert noisy == truth


def test_full_coverage_observes_every_physical_link():
    truth = series(np.ones((5, 2)), link_ids=range(5))
    _, mask = synthesize_observations(truth, [0, 2, 4], coverage=1.0)
    assert mask.observed == (0, 2, 4)


def test_coverage_share():
    truth = series(np.ones((100, 1)), link_ids=range(100))
    _, mask = synthesize_observations(truth, range(100), coverage=0.8, rng=RngStream(9))

    assert len(mask) == 80
    assert set(mask.observed) <= set(range(100))


def test_noise_stays_within_bound():
    truth = series(np.arange(1.0, 41.0).reshape(2, 20))
    noisy, _ = synthesize_observations(truth, [0, 1], noise_frac=0.10, rng=RngStream(2))

    ratio = noisy.values / truth.values
    assert np.all((ratio >= 0.9 - 1e-12) & (ratio <= 1.1 + 1e-12))
    assert not np.array_equal(noisy.values, truth.values)


def test_noisy_counts_stay_cumulative():
    # a flat stretch must not dip under noise
    truth = series([[5.0] * 30, [0.0] * 10 + [3.0] * 20])
    noisy, _ = synthesize_observations(truth, [0, 1], noise_frac=0.5, rng=RngStream(4))

    assert np.all(np.diff(noisy.values, axis=1) >= 0)
    assert np.all(noisy.values[:, -1] > 0)
    assert np.all(noisy.values[1, :10] == 0)


def test_synthesis_is_reproducible():
    truth = series(np.arange(1.0, 41.0).reshape(2, 20))
    first = synthesize_observations(truth, [0, 1], rng=RngStream(2).child("observation"))
    second = synthesize_observations(truth, [0, 1], rng=RngStream(2).child("observation"))

    assert first == second


def test_counts_are_differentiable(single_agent_chain):
    network = single_agent_chain.network
    fixed = as_link_tensors(uniform_params(network))
    tape = Tape()
    u = tape.watch(np.full(network.size, 18.05))

    run = simulate(single_agent_chain, fixed._replace(u=u), RngStream(0))
    (grad,) = tape.backward(ops.reduce_sum(record_counts(run).tensor), [u])

    assert np.all(np.isfinite(grad))
    assert np.any(grad != 0.0)
