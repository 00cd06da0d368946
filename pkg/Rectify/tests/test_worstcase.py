import numpy as np
import pytest

from src.errors import BudgetExceeded, ExcessRank, NoRealization, RankDeficientA
from src.evaluation import functional_error
from src.model import NetworkWeights, NoiseModel, generate_instance, generate_weights
from src.numerics import solve_exact
from src.properties import properties_for, run_property
from src.signpat import SignPattern, sign_pattern
from src.worstcase import IterativeState, exact_neural_net, iterative_lp, pattern_base_feasible, select_row_basis


class TestIterativeLp:

    def test_planted_single_unit(self, stream, relu):
        w = generate_weights(1, 1, 3, 1.0, stream)
        inst = generate_instance(w, relu, 15, NoiseModel(), stream.child('i'))
        s = sign_pattern(w.v @ inst.x)
        y = iterative_lp(inst.x, inst.a, s, IterativeState.empty(15))
        assert y is not None
        rect = np.maximum(y, 0.0)
        coef = (rect @ inst.a[0]) / (inst.a[0] @ inst.a[0])
        np.testing.assert_allclose(rect, coef * inst.a[0], atol=1e-7)

    def test_accepted_rows_are_not_repeated(self, stream, relu):
        w = generate_weights(1, 1, 3, 1.0, stream)
        inst = generate_instance(w, relu, 15, NoiseModel(), stream.child('i'))
        s = sign_pattern(w.v @ inst.x)
        y = iterative_lp(inst.x, inst.a, s, IterativeState.empty(15))
        state = IterativeState.empty(15).extended(y, s)
        # the row space of A is one-dimensional, so nothing independent is left
        assert iterative_lp(inst.x, inst.a, s, state) is None

    def test_base_feasibility(self, rng):
        x = rng.standard_normal((2, 6))
        basis = np.abs(rng.standard_normal((1, 6)))
        assert not pattern_base_feasible(x, -basis, SignPattern(6, tuple(range(6))))


class TestExactNeuralNet:

    def test_recovers_functional_fit(self, stream, relu):
        w = generate_weights(3, 2, 4, 1.0, stream.child('w'))
        inst = generate_instance(w, relu, 12, NoiseModel(), stream.child('i'))
        got = exact_neural_net(inst.a, inst.x, 2)
        _, rel = functional_error(inst.a, got, inst.x, relu)
        assert rel <= 1e-6

    def test_threads_give_same_answer(self, stream, relu):
        w = generate_weights(2, 2, 3, 1.0, stream.child('w'))
        inst = generate_instance(w, relu, 10, NoiseModel(), stream.child('i'))
        one = exact_neural_net(inst.a, inst.x, 2)
        many = exact_neural_net(inst.a, inst.x, 2, threads=3)
        np.testing.assert_allclose(one.v, many.v)

    def test_rank_deficient(self, stream, relu):
        w = generate_weights(1, 2, 3, 1.0, stream, u=np.array([[1.0, 1.0]]))
        inst = generate_instance(w, relu, 10, NoiseModel(), stream.child('i'))
        with pytest.raises(RankDeficientA):
            exact_neural_net(inst.a, inst.x, 2)

    def test_rank_above_k_is_refused(self, stream, relu):
        w = generate_weights(3, 3, 4, 1.0, stream.child('w'))
        inst = generate_instance(w, relu, 12, NoiseModel(), stream.child('i'))
        with pytest.raises(ExcessRank, match="rank\\(A\\) = 3 > k = 2") as caught:
            exact_neural_net(inst.a, inst.x, 2)
        assert caught.value.exit_code == 2

    def test_mixed_sign_row_is_not_realizable(self, rng):
        x = rng.standard_normal((3, 6))
        a = np.array([[1.0, -1.0, 2.0, -2.0, 1.0, -1.0]])
        with pytest.raises(NoRealization):
            exact_neural_net(a, x, 1)

    def test_pattern_budget(self, stream, relu):
        w = generate_weights(3, 2, 4, 1.0, stream.child('w'))
        inst = generate_instance(w, relu, 12, NoiseModel(), stream.child('i'))
        with pytest.raises(BudgetExceeded):
            exact_neural_net(inst.a, inst.x, 2, max_patterns=3)


def test_row_basis_is_independent(rng):
    a = rng.standard_normal((5, 2)) @ rng.standard_normal((2, 9))
    basis, rows = select_row_basis(a, 2)
    assert np.linalg.matrix_rank(basis) == 2
    np.testing.assert_array_equal(basis, a[rows])


@pytest.mark.slow
@pytest.mark.parametrize("name", properties_for('worstcase', heavy=True))
def test_heavy_property(stream, name):
    ok, note = run_property(name, stream)
    assert ok, note


def test_accepted_rows_are_reported(stream, relu):
    w = generate_weights(3, 2, 4, 1.0, stream.child('w'))
    inst = generate_instance(w, relu, 12, NoiseModel(), stream.child('i'))
    rows = []
    got = exact_neural_net(inst.a, inst.x, 2, accepted=rows)
    assert len(rows) == 2
    np.testing.assert_allclose(got.output(inst.x, relu), inst.a, atol=1e-6 * np.linalg.norm(inst.a))
    for y in rows:
        coef, resid = solve_exact(inst.x.T, y)
        assert resid <= 1e-9 * np.linalg.norm(y)
