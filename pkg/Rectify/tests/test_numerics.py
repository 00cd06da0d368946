import math
import warnings

import numpy as np
import pytest

from src.errors import InvalidShape, NumericalFailure, ZeroMatrix
from src.numerics import (LinearProgram, SimplexSolver, cond_number, lp_feasible, orthonormal_rows,
                          pinv, projector, rank, residual_energy, solve_exact, svd)
from src.properties import properties_for, run_property


class TestLinearProgram:

    def test_rejects_unknown_relation(self):
        with pytest.raises(InvalidShape):
            LinearProgram(2, np.eye(2), ('<=', '<>'), np.zeros(2))

    def test_from_blocks_skips_empty(self):
        lp = LinearProgram.from_blocks(2, [(np.zeros((0, 2)), '<=', 0.0), (np.eye(2), '>=', 1.0)])
        assert lp.rhs.tolist() == [1.0, 1.0]
        assert lp.relations == ('>=', '>=')

    def test_violations(self):
        lp = LinearProgram.from_constraints(1, [([1.0], '<=', 0.0), ([1.0], '=', 2.0)])
        np.testing.assert_allclose(lp.violations(np.array([1.0])), [1.0, 1.0])


class TestSimplex:

    def test_feasible_point_satisfies_constraints(self):
        lp = LinearProgram.from_constraints(2, [
            ([1.0, 1.0], '=', 1.0),
            ([1.0, -1.0], '>=', 0.5),
            ([0.0, 1.0], '>=', -3.0),
        ])
        point = lp_feasible(lp)
        assert point is not None
        assert lp.is_satisfied(point, 1e-8)

    def test_free_variables_can_be_negative(self):
        lp = LinearProgram.from_constraints(1, [([1.0], '<=', -2.0)])
        point = lp_feasible(lp)
        assert point[0] <= -2.0 + 1e-9

    def test_infeasible_returns_none(self):
        lp = LinearProgram.from_constraints(1, [([1.0], '>=', 1.0), ([1.0], '<=', 0.0)])
        assert lp_feasible(lp) is None

    def test_empty_program_is_feasible(self):
        np.testing.assert_array_equal(lp_feasible(LinearProgram.from_constraints(3, [])), np.zeros(3))

    def test_pivot_guard(self):
        lp = LinearProgram.from_constraints(2, [([1.0, 1.0], '=', 1.0), ([1.0, -1.0], '=', 0.0)])
        with pytest.raises(NumericalFailure):
            SimplexSolver(max_pivots=0).find_feasible(lp)


class TestLinearAlgebra:

    def test_svd_reconstructs(self, rng):
        a = rng.standard_normal((5, 7))
        np.testing.assert_allclose(svd(a).reconstruct(), a, atol=1e-12)

    def test_rank_and_condition(self, rng):
        a = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 9))
        assert rank(a) == 2
        assert cond_number(np.diag([4.0, 2.0, 1.0])) == pytest.approx(4.0)

    def test_condition_of_zero_matrix(self):
        with pytest.raises(ZeroMatrix):
            cond_number(np.zeros((2, 2)))

    def test_condition_past_numerical_rank_is_infinite(self):
        with warnings.catch_warnings():
            warnings.simplefilter('error')
            assert cond_number(np.diag([1.0, 0.0]), r=2) == math.inf
            assert cond_number(np.diag([1.0, 1e-14]), r=2) == math.inf
        assert cond_number(np.diag([1.0, 0.0])) == pytest.approx(1.0)
        with pytest.raises(InvalidShape):
            cond_number(np.eye(2), r=3)

    def test_projector_is_idempotent(self, rng):
        p = projector(rng.standard_normal((2, 6)))
        np.testing.assert_allclose(p @ p, p, atol=1e-12)
        assert np.trace(p) == pytest.approx(2.0)

    def test_residual_energy_vanishes_in_span(self, rng):
        basis = rng.standard_normal((3, 10))
        inside = rng.standard_normal((4, 3)) @ basis
        np.testing.assert_allclose(residual_energy(inside, basis), 0.0, atol=1e-20)

    def test_orthonormal_rows_of_zero(self):
        assert orthonormal_rows(np.zeros((2, 4))).shape == (0, 4)

    def test_solve_exact_and_pinv(self, rng):
        a = rng.standard_normal((8, 3))
        x = rng.standard_normal(3)
        solution, residual = solve_exact(a, a @ x)
        np.testing.assert_allclose(solution, x, atol=1e-10)
        assert residual < 1e-10
        np.testing.assert_allclose(pinv(a) @ a, np.eye(3), atol=1e-10)

    def test_solve_exact_shape_mismatch(self):
        with pytest.raises(InvalidShape):
            solve_exact(np.eye(3), np.ones(2))


@pytest.mark.parametrize("name", properties_for('numerics', heavy=False))
def test_property(stream, name):
    ok, note = run_property(name, stream)
    assert ok, note
