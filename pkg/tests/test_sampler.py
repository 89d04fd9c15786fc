import asyncio
import math

import numpy as np
import pytest

from changewatch import gwishart
from changewatch.config import SamplerConfig
from changewatch.data_model import DataStream, DayBatch, VariableSpec
from changewatch.graph import Graph
from changewatch.mixture import NGWHyper, RegimeParams, SuffStats, log_marginal_likelihood
from changewatch.posterior import changepoint_probabilities
from changewatch.sampler import run_chain, run_chains, take_snapshot, update_mean_hyper
from changewatch.state import init_state

from .conftest import gaussian_stream


def test_mean_hyper_draws_follow_the_conditional(rng):
    hyper = NGWHyper(m=np.zeros(1), lam=1.0, D=np.eye(1), nu=4.0, c=1.0, d=0.1, m0=np.zeros(1))
    params = [RegimeParams(np.array([[2.0]]), np.array([np.eye(1)]), Graph.full(1))]
    draws = [update_mean_hyper(hyper, params, rng) for _ in range(20_000)]
    m = np.array([h.m[0] for h in draws])
    assert abs(m.mean() - 1.0) < 4 * math.sqrt(0.5 / m.size)
    assert m.var() == pytest.approx(0.5, abs=0.03)
    assert all(h.lam > 0 for h in draws)
    assert draws[0].D is hyper.D and draws[0].nu == hyper.nu


class TestRunChain:
    def test_log_shape_and_snapshots(self, continuous_stream, quick_config):
        log = run_chain(continuous_stream, quick_config)
        assert log.phi_trace.shape == (12, continuous_stream.n_days)
        assert np.all(log.phi_trace[:, 0] == 0)
        assert np.all(np.isin(np.diff(log.phi_trace, axis=1), (0, 1)))
        assert len(log.snapshots) == (12 - 4) // 1
        assert all(len(s.regimes) <= 2 for s in log.snapshots)
        assert log.final_state is not None
        assert log.meta["seed"] == quick_config.seed
        assert set(log.column_groups) == {v.name for v in continuous_stream.variables}

    def test_snapshot_stride(self, continuous_stream, quick_config):
        log = run_chain(continuous_stream, quick_config.model_copy(update={"snapshot_stride": 3}))
        assert len(log.snapshots) == (12 - 4) // 3

    def test_zero_iterations_give_an_empty_log(self, continuous_stream):
        log = run_chain(continuous_stream, SamplerConfig(n_iterations=0, components=1))
        assert log.n_recorded == 0 and log.snapshots == []
        np.testing.assert_array_equal(changepoint_probabilities(log), np.zeros(continuous_stream.n_days - 1))

    def test_same_seed_same_trace(self, mixed_stream, quick_config):
        a = run_chain(mixed_stream, quick_config)
        b = run_chain(mixed_stream, quick_config)
        np.testing.assert_array_equal(a.phi_trace, b.phi_trace)
        np.testing.assert_array_equal(a.snapshots[-1].regimes[0].means, b.snapshots[-1].regimes[0].means)

    def test_needs_two_days(self, rng, quick_config):
        ds = gaussian_stream(rng, n_days=1)
        with pytest.raises(ValueError):
            run_chain(ds, quick_config)

    def test_full_graph_never_estimates_constants(self, continuous_stream, quick_config):
        gwishart.estimator_calls.clear()
        run_chain(continuous_stream, quick_config.model_copy(update={"graph_mode": "full", "components": 2}))
        assert gwishart.estimator_calls["mc"] == 0 and gwishart.estimator_calls["laplace"] == 0

    def test_finds_a_strong_mean_shift(self, rng):
        ds = gaussian_stream(rng, n_days=8, n_obs=30, n_vars=2, change_after=4, shift=(3.0, 3.0))
        config = SamplerConfig(n_iterations=60, burn_in=20, components=1, seed=11)
        probs = changepoint_probabilities(run_chain(ds, config))
        assert probs[3] >= 0.5
        assert np.delete(probs, 3).max() < 0.5


def test_merged_chains_pool_post_burn_in_draws(continuous_stream, quick_config):
    config = quick_config.model_copy(update={"n_chains": 2})
    log = asyncio.run(run_chains(continuous_stream, config, threads=2))
    assert log.burn_in == 0
    assert log.n_recorded == 2 * (12 - 4)
    assert len(log.meta["chains"]) == 2 and log.meta["chains"][0] != log.meta["chains"][1]
    assert {s.chain for s in log.snapshots} == {0, 1}


def test_final_snapshot_keeps_every_regime(rng):
    ds = gaussian_stream(rng, n_days=6, n_obs=10, n_vars=2)
    state = init_state(ds, SamplerConfig(components=1), rng)
    snap = take_snapshot(state, last_only=False)
    assert len(snap.regimes) == 1
    assert (snap.regimes[0].first_day, snap.regimes[0].last_day) == (0, 5)


@pytest.mark.slow
def test_two_day_toy_matches_the_enumerated_posterior():
    rng = np.random.default_rng(2024)
    first, second = rng.normal(0.0, 1.0, (5, 1)), rng.normal(1.2, 1.0, (5, 1))
    variables = (VariableSpec(name="x", kind="continuous"),)
    ds = DataStream(variables, (DayBatch(1, first), DayBatch(2, second)))
    config = SamplerConfig(
        n_iterations=100_000, burn_in=1_000, components=1, graph_mode="full",
        learn_mean_hyper=False, seed=5, snapshot_stride=1000,
    )

    state = init_state(ds, config, np.random.default_rng(0))
    graph = Graph.full(1)
    evidence = lambda rows: log_marginal_likelihood(state.hyper, SuffStats.from_rows(rows), graph, state.constants)
    together = evidence(np.vstack([first, second]))
    apart = evidence(first) + evidence(second)
    # Marginalising the stay probability gives both regime vectors prior mass 1/2.
    expected = 1.0 / (1.0 + math.exp(together - apart))

    probs = changepoint_probabilities(run_chain(ds, config))
    assert probs[0] == pytest.approx(expected, abs=0.02)


@pytest.mark.slow
def test_iid_stream_raises_no_change():
    for replication in range(10):
        rng = np.random.default_rng(100 + replication)
        ds = gaussian_stream(rng, n_days=30, n_obs=50, n_vars=10)
        config = SamplerConfig(n_iterations=300, seed=replication)
        probs = changepoint_probabilities(run_chain(ds, config))
        assert probs.max() < 0.5, f"replication {replication}: day {int(np.argmax(probs)) + 1}"


@pytest.mark.slow
def test_repeated_day_raises_no_change():
    rng = np.random.default_rng(31)
    day = rng.standard_normal((50, 5))
    variables = tuple(VariableSpec(name=f"x{j + 1}", kind="continuous") for j in range(5))
    ds = DataStream(variables, tuple(DayBatch(t, day.copy()) for t in range(1, 31)))
    probs = changepoint_probabilities(run_chain(ds, SamplerConfig(n_iterations=500, seed=7)))
    assert probs.max() < 0.1, f"day {int(np.argmax(probs)) + 1}: {probs.max():.3f}"
