import math

import numpy as np
import pandas as pd
import pytest
from scipy import integrate, stats

from changewatch.config import SamplerConfig, ScenarioSpec
from changewatch.data_model import VariableSpec, prepare_stream
from changewatch.faults import (
    DegenerateSnapshotError,
    GaussianMixtureMeasure,
    NoSpanningSnapshotError,
    SnapshotPair,
    bhattacharyya_distance,
    fault_report,
    first_order_loss,
    hellinger,
    hellinger_estimate,
    marginal,
    marginalize,
    total_effect_loss,
    write_fault_outputs,
)
from changewatch.graph import Graph
from changewatch.posterior import PosteriorLog, RegimeSnapshot, Snapshot
from changewatch.sampler import run_chain
from changewatch.simulate import generate


def _gauss(mean, var) -> GaussianMixtureMeasure:
    return GaussianMixtureMeasure(np.array([1.0]), np.array([[mean]]), np.array([[[var]]]))


def _mix(weights, means, variances) -> GaussianMixtureMeasure:
    return GaussianMixtureMeasure(
        np.asarray(weights, dtype=float),
        np.asarray(means, dtype=float)[:, None],
        np.asarray(variances, dtype=float)[:, None, None],
    )


def _pdf(measure: GaussianMixtureMeasure):
    def f(x):
        return sum(
            w * stats.norm(m[0], math.sqrt(c[0, 0])).pdf(x)
            for w, m, c in zip(measure.weights, measure.means, measure.covariances)
        )
    return f


def _quad_h2(q1: GaussianMixtureMeasure, q2: GaussianMixtureMeasure) -> float:
    f1, f2 = _pdf(q1), _pdf(q2)
    value, _ = integrate.quad(lambda x: 0.5 * (math.sqrt(f1(x)) - math.sqrt(f2(x))) ** 2, -30.0, 30.0, limit=400, epsabs=1e-10)
    return value


class TestHellinger:
    def test_unit_shift(self):
        h = hellinger(_gauss(0.0, 1.0), _gauss(1.0, 1.0))
        assert h ** 2 == pytest.approx(1.0 - math.exp(-1.0 / 8.0), abs=1e-12)
        assert h == pytest.approx(0.34278, abs=1e-5)

    def test_closed_form_matches_quadrature(self, rng):
        for _ in range(100):
            q1 = _gauss(rng.uniform(-2, 2), rng.uniform(0.25, 4.0))
            q2 = _gauss(rng.uniform(-2, 2), rng.uniform(0.25, 4.0))
            assert hellinger(q1, q2) ** 2 == pytest.approx(_quad_h2(q1, q2), abs=1e-6)

    def test_mixture_estimate_matches_quadrature(self, rng):
        misses = 0
        for _ in range(20):
            q1 = _mix(rng.dirichlet([2, 2]), rng.uniform(-3, 3, 2), rng.uniform(0.3, 2.0, 2))
            q2 = _mix(rng.dirichlet([2, 2]), rng.uniform(-3, 3, 2), rng.uniform(0.3, 2.0, 2))
            h, se = hellinger_estimate(q1, q2, 20_000, rng)
            gap = abs(h ** 2 - _quad_h2(q1, q2))
            assert gap <= 4.0 * se + 1e-12
            misses += gap > 3.0 * se
        assert misses <= 1

    def test_identity_and_symmetry(self, rng):
        a = GaussianMixtureMeasure(np.array([1.0]), np.array([[0.0, 1.0]]), np.array([[[2.0, 0.3], [0.3, 1.0]]]))
        b = GaussianMixtureMeasure(np.array([1.0]), np.array([[0.5, 0.0]]), np.array([np.eye(2)]))
        assert hellinger(a, a) == 0.0
        assert hellinger(a, b) == hellinger(b, a)
        m1 = _mix([0.4, 0.6], [-1.0, 2.0], [1.0, 0.5])
        m2 = _mix([0.5, 0.5], [0.0, 1.0], [1.0, 1.0])
        assert hellinger(m1, m1, 1000, rng) == 0.0
        h12, se12 = hellinger_estimate(m1, m2, 20_000, rng)
        h21, se21 = hellinger_estimate(m2, m1, 20_000, rng)
        assert abs(h12 ** 2 - h21 ** 2) <= 4.0 * math.hypot(se12, se21)

    def test_bounds(self, rng):
        far = hellinger(_gauss(0.0, 1.0), _gauss(100.0, 1.0))
        assert 0.0 <= far <= 1.0 and far == pytest.approx(1.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            hellinger(_gauss(0.0, 1.0), GaussianMixtureMeasure(np.array([1.0]), np.zeros((1, 2)), np.array([np.eye(2)])))

    def test_singular_average(self):
        with pytest.raises(DegenerateSnapshotError):
            bhattacharyya_distance(np.zeros(2), np.zeros((2, 2)), np.ones(2), np.zeros((2, 2)))


def test_marginals():
    cov = np.array([[2.0, 0.3, 0.1], [0.3, 1.0, 0.2], [0.1, 0.2, 1.5]])
    q = GaussianMixtureMeasure(np.array([0.3, 0.7]), np.array([[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]]), np.array([cov, 2 * cov]))
    kept = marginal(q, [2, 0])
    np.testing.assert_array_equal(kept.means, [[0.0, 2.0], [3.0, 5.0]])
    np.testing.assert_array_equal(kept.covariances[0], [[2.0, 0.1], [0.1, 1.5]])
    np.testing.assert_array_equal(kept.weights, q.weights)
    dropped = marginalize(q, [1])
    np.testing.assert_array_equal(dropped.covariances, kept.covariances)


def test_losses_of_a_single_shifted_coordinate():
    cov = np.array([np.eye(2)])
    before = GaussianMixtureMeasure(np.array([1.0]), np.array([[0.0, 0.0]]), cov)
    after = GaussianMixtureMeasure(np.array([1.0]), np.array([[0.0, 2.0]]), cov)
    pair = SnapshotPair(before, after, iteration=1)
    assert total_effect_loss(pair, [0]) == pytest.approx(0.0, abs=1e-12)
    assert total_effect_loss(pair, [1]) == pytest.approx(1.0)
    assert first_order_loss(pair, [0]) == pytest.approx(0.0, abs=1e-12)
    assert first_order_loss(pair, [1]) == pytest.approx(1.0)
    still = SnapshotPair(before, before, iteration=2)
    assert math.isnan(total_effect_loss(still, [1])) and math.isnan(first_order_loss(still, [1]))


def _regime(regime, first, last, mean):
    return RegimeSnapshot(
        regime=regime, first_day=first, last_day=last,
        weights=np.array([1.0]), means=np.asarray(mean, dtype=float)[None, :],
        precisions=np.array([np.eye(3)]),
    )


def _fault_log(shift_b: float = 2.0) -> PosteriorLog:
    graph = Graph.empty(3)
    spanning = [
        Snapshot(iteration=i, graph=graph, regimes=(_regime(0, 0, 2, [0, 0, 0]), _regime(1, 3, 5, [0, shift_b, 0])))
        for i in (5, 10)
    ]
    elsewhere = Snapshot(iteration=15, graph=graph, regimes=(_regime(0, 0, 3, [0, 0, 0]), _regime(1, 4, 5, [0, 1, 0])))
    names = ["a", "b", "c"]
    return PosteriorLog(
        n_days=6,
        burn_in=0,
        iterations=np.arange(1, 2),
        phi_trace=np.array([[0, 0, 0, 1, 1, 1]]),
        snapshots=spanning + [elsewhere],
        variables=tuple(VariableSpec(name=n, kind="continuous") for n in names),
        column_groups={n: [k] for k, n in enumerate(names)},
        day_counts=np.full(6, 10),
        daily_means=pd.DataFrame({"day": np.arange(1, 7)}),
    )


class TestFaultReport:
    def test_shifted_variable_ranks_first(self, rng, tmp_path):
        report = fault_report(_fault_log(), 3, 1000, rng)
        assert report.n_snapshots == 2 and report.iterations == [5, 10]
        assert report.ranking("first_order")[0] == "b"
        assert report.ranking("total_effect")[0] == "b"
        assert report.total_effect[0, 0] == pytest.approx(0.0)
        assert report.total_effect[0, 1] == pytest.approx(1.0)
        assert report.first_order[0, 2] == 0.0
        assert sorted(report.ranking()) == ["a", "b", "c"]

        summary = report.summary()
        assert summary["changepoint_day"] == 3 and summary["n_flagged_no_change"] == 0
        write_fault_outputs(report, tmp_path)
        frame = pd.read_csv(tmp_path / "fault_losses.csv")
        assert len(frame) == 2 * 3 * 2
        assert (tmp_path / "fault_report.json").exists()

    def test_identical_regimes_are_flagged(self, rng):
        report = fault_report(_fault_log(shift_b=0.0), 3, 1000, rng)
        assert report.no_change.tolist() == [True, True]
        assert report.all_flagged
        assert np.all(np.isnan(report.mean_total_effect()))
        assert sorted(report.ranking("total_effect")) == ["a", "b", "c"]
        assert report.summary()["no_detectable_change"] is True

    def test_day_without_snapshots(self, rng):
        with pytest.raises(NoSpanningSnapshotError):
            fault_report(_fault_log(), 1, 1000, rng)


@pytest.mark.slow
def test_changed_variables_rank_highest_after_a_mean_shift():
    hits = 0
    for replication in range(10):
        spec = ScenarioSpec(scenario="B", obs_per_day=50, seed=replication)
        ds, _ = prepare_stream(generate(spec, np.random.default_rng(replication)))
        log = run_chain(ds, SamplerConfig(n_iterations=300, components=1, snapshot_stride=2, seed=replication))
        report = fault_report(log, spec.change_day, 20_000, np.random.default_rng(replication))
        if report.n_snapshots >= 20 and set(report.ranking("total_effect")[:2]) == {"x3", "x4"}:
            hits += 1
    assert hits >= 9
