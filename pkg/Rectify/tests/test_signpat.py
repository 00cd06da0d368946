import math

import numpy as np
import pytest

from src.errors import BudgetExceeded, RankDeficientBasis
from src.numerics import lp_feasible
from src.properties import properties_for, run_property
from src.signpat import (SignPattern, brute_force_patterns, enumerate_subspace_patterns, is_realizable,
                         pattern_program, sign_pattern)


def _orthant_count(n, k):
    """Orthants met by a generic k-dimensional subspace of R^n"""
    return 2 * sum(math.comb(n - 1, i) for i in range(k))


class TestSignPattern:

    def test_extraction(self):
        assert sign_pattern([0.5, -1.0, 0.0, 2.0]).positives == (0, 3)
        assert sign_pattern([0.5, 0.05], tol=0.1).positives == (0,)

    def test_canonical_order(self):
        p = SignPattern(5, (3, 1, 3))
        assert p.positives == (1, 3)
        assert SignPattern(5, (4,)) < p

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            SignPattern(2, (2,))

    def test_mask(self):
        np.testing.assert_array_equal(SignPattern(3, (1,)).mask, [False, True, False])


class TestEnumeration:

    @pytest.mark.parametrize("k,n", [(2, 4), (2, 7), (3, 5)])
    def test_generic_count(self, rng, k, n):
        # one pattern per orthant met, plus the empty pattern when the negative orthant is missed
        basis = rng.standard_normal((k, n))
        assert len(enumerate_subspace_patterns(basis)) - _orthant_count(n, k) in (0, 1)

    def test_single_row(self):
        patterns = enumerate_subspace_patterns(np.array([[1.0, -2.0, 3.0]]))
        assert [p.positives for p in patterns] == [(), (1,), (0, 2)]

    def test_every_pattern_has_witness(self, rng):
        basis = rng.standard_normal((2, 6))
        for p in enumerate_subspace_patterns(basis):
            point = lp_feasible(pattern_program(basis, p))
            assert point is not None
            assert sign_pattern(point @ basis, 1e-7) == p

    def test_sampled_patterns_are_covered(self, stream):
        for t in range(5):
            basis = stream.child(t).generator().standard_normal((2, 8))
            exact = set(enumerate_subspace_patterns(basis))
            sampled = set(brute_force_patterns(basis, 20_000, stream.child(f"mc{t}").generator()))
            assert sampled <= exact

    def test_empty_pattern_first(self, rng):
        patterns = enumerate_subspace_patterns(rng.standard_normal((1, 3)))
        assert patterns[0].positives == ()
        assert patterns == sorted(patterns, key=SignPattern.sort_key)

    def test_threads_do_not_change_result(self, rng):
        basis = rng.standard_normal((2, 6))
        assert enumerate_subspace_patterns(basis, threads=4) == enumerate_subspace_patterns(basis)

    def test_rank_deficient(self):
        with pytest.raises(RankDeficientBasis):
            enumerate_subspace_patterns(np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]]))

    def test_budget(self, rng):
        with pytest.raises(BudgetExceeded):
            enumerate_subspace_patterns(rng.standard_normal((3, 10)), max_subsets=100)

    def test_unrealizable_pattern(self):
        basis = np.array([[1.0, 1.0]])
        assert not is_realizable(basis, SignPattern(2, (0,)))
        assert is_realizable(basis, SignPattern(2, (0, 1)))


@pytest.mark.parametrize("name", properties_for('signpat', heavy=False))
def test_property(stream, name):
    ok, note = run_property(name, stream)
    assert ok, note
