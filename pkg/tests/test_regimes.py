import math

import numpy as np
import pytest

from changewatch.regimes import (
    RegimeVector,
    TransitionModel,
    initial_transitions,
    log_regime_prior,
    transition_counts,
    update_transitions,
)


class TestRegimeVector:
    def test_from_changepoints(self):
        phi = RegimeVector.from_changepoints(6, [2, 4])
        assert phi.labels.tolist() == [0, 0, 1, 1, 2, 2]
        assert phi.changepoints().tolist() == [2, 4]
        assert phi.bounds() == [(0, 1), (2, 3), (4, 5)]
        assert phi.sizes().tolist() == [2, 2, 2]
        np.testing.assert_array_equal(phi.change_indicator(), [0, 1, 0, 1, 0])

    @pytest.mark.parametrize("labels", [[1, 1, 2], [0, 2, 2], [0, 1, 0], []])
    def test_rejects_invalid_vectors(self, labels):
        with pytest.raises(ValueError):
            RegimeVector(np.array(labels, dtype=int))

    def test_split_then_merge_is_identity(self):
        phi = RegimeVector.from_changepoints(8, [3])
        split = phi.split(1, 2)
        assert split.changepoints().tolist() == [3, 5]
        np.testing.assert_array_equal(split.merge(1).labels, phi.labels)

    def test_labels_are_read_only(self):
        phi = RegimeVector.single(3)
        with pytest.raises(ValueError):
            phi.labels[0] = 1


class TestTransitions:
    def test_prior_of_a_path(self):
        tm = TransitionModel(stay=np.array([0.8, 0.6]), w=1.0, v=1.0)
        phi = RegimeVector.from_changepoints(4, [2])
        expected = math.log(0.8) + math.log(0.2) + math.log(0.6)
        assert log_regime_prior(phi, tm) == pytest.approx(expected)
        assert log_regime_prior(RegimeVector.from_changepoints(4, [1, 2, 3]), tm) == -math.inf

    def test_counts(self):
        phi = RegimeVector.from_changepoints(6, [2, 4])
        stays, exits = transition_counts(phi, 2)
        assert stays.tolist() == [1, 1] and exits.tolist() == [1, 1]

    def test_initial_model(self, rng):
        tm = initial_transitions(5, (1.0, 0.1, 1.0, 0.1), rng)
        assert tm.max_regimes == 5 and tm.stay.shape == (4,)
        assert (tm.w, tm.v) == (10.0, 10.0)

    def test_update_tracks_long_regimes(self, rng):
        tm = initial_transitions(3, (1.0, 0.1, 1.0, 0.1), rng)
        phi = RegimeVector.from_changepoints(400, [200])
        draws = []
        for _ in range(300):
            tm = update_transitions(tm, phi, rng)
            draws.append(tm.stay[0])
        assert np.mean(draws[50:]) > 0.9
        assert tm.w > 0 and tm.v > 0
