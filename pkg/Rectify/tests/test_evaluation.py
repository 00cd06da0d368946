import numpy as np
import pytest

from src.errors import InvalidShape, ShapeMismatch
from src.evaluation import (MatchResult, best_permutation, functional_error, kappa_separation, kappa_sweep,
                            match_weights, separation_weights)
from src.model import NetworkWeights, generate_weights
from src.properties import properties_for, run_property


class TestPermutation:

    def test_small_cost_uses_exhaustive_search(self):
        cost = np.array([[5.0, 0.0, 3.0], [0.0, 5.0, 3.0], [3.0, 3.0, 0.0]])
        np.testing.assert_array_equal(best_permutation(cost), [1, 0, 2])

    def test_large_cost_uses_assignment_solver(self, rng):
        perm = rng.permutation(10)
        cost = np.ones((10, 10))
        cost[np.arange(10), perm] = 0.0
        np.testing.assert_array_equal(best_permutation(cost), perm)
        np.testing.assert_array_equal(best_permutation(cost, brute_force_max_k=0), perm)

    def test_result_rejects_non_permutation(self):
        with pytest.raises(InvalidShape):
            MatchResult(np.array([0, 0]), np.zeros(2), 0.0, 0.0)


class TestMatchWeights:

    def test_invariant_under_row_permutation(self, stream):
        w = generate_weights(3, 4, 5, 2.0, stream)
        p = np.array([2, 0, 3, 1])
        got = NetworkWeights(w.u[:, p], w.v[p])
        match = match_weights(got, w)
        assert match.u_error == pytest.approx(0.0, abs=1e-12)
        assert match.v_error == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_array_equal(got.v[match.permutation], w.v)
        assert match.xi is None

    def test_sign_aware_matching(self, stream):
        w = generate_weights(2, 2, 3, 1.0, stream)
        flipped = NetworkWeights(w.u, -w.v)
        assert match_weights(flipped, w).v_error > 1.0
        match = match_weights(flipped, w, sign_aware=True)
        assert match.v_error == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_array_equal(match.xi, [-1.0, -1.0])
        assert match.to_metrics()['xi'] == '-1,-1'

    def test_functional_error_on_columns(self, small_instance, relu):
        w = small_instance.weights
        match = match_weights(w, w, relu, x=small_instance.x)
        assert match.functional_error == pytest.approx(0.0, abs=1e-12)
        assert set(match.to_metrics()) >= {'u_error', 'v_error', 'max_row_error', 'permutation'}

    def test_shape_mismatch(self, stream):
        with pytest.raises(ShapeMismatch):
            match_weights(generate_weights(2, 2, 3, 1.0, stream), generate_weights(2, 2, 4, 1.0, stream))


class TestFunctionalError:

    def test_exact_weights(self, small_instance, relu):
        err, rel = functional_error(small_instance.a, small_instance.weights, small_instance.x, relu)
        assert err == pytest.approx(0.0, abs=1e-10)
        assert rel == pytest.approx(0.0, abs=1e-12)

    def test_relative_to_output_norm(self, small_instance, relu):
        err, rel = functional_error(2 * small_instance.a, small_instance.weights, small_instance.x, relu)
        assert rel == pytest.approx(0.5)
        assert err == pytest.approx(np.linalg.norm(small_instance.a))

    def test_dimensions_checked(self, small_instance):
        with pytest.raises(ShapeMismatch):
            functional_error(small_instance.a[:2], small_instance.weights, small_instance.x)


class TestKappaSeparation:

    def test_separation_weights_are_unit_rows(self):
        w = separation_weights(0.5)
        np.testing.assert_allclose(np.linalg.norm(w.v, axis=1), 1.0)
        assert w.u.shape == (1, 2)

    @pytest.mark.parametrize("a_param", [0.0, -0.1, 1.5])
    def test_parameter_range(self, stream, a_param):
        with pytest.raises(InvalidShape):
            kappa_separation(a_param, 10, stream)

    def test_fraction_grows_with_separation(self, stream):
        near = kappa_separation(0.01, 5000, stream.child('near'))
        far = kappa_separation(1.0, 5000, stream.child('far'))
        assert 0.0 <= near < far <= 1.0

    def test_sweep(self, stream):
        summary = kappa_sweep((0.01, 0.1, 1.0), 2000, 3, stream)
        assert summary.monotone
        assert set(summary.identical_share) == {0.01, 0.1, 1.0}
        assert kappa_sweep((0.01,), 2000, 3, stream).means == summary.means[:1]


@pytest.mark.parametrize("name", properties_for('eval', heavy=False))
def test_property(stream, name):
    ok, note = run_property(name, stream)
    assert ok, note


@pytest.mark.slow
@pytest.mark.parametrize("name", properties_for('eval', heavy=True))
def test_heavy_property(stream, name):
    ok, note = run_property(name, stream)
    assert ok, note
