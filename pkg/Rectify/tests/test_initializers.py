import math

import numpy as np
import pytest

from src.errors import InvalidShape, WhiteningFailed
from src.initializers import (MomentAccumulator, ScoreConfig, TensorInitConfig, build_collapsed_tensor,
                              init_ica, init_oracle, init_tensor, score2, score3, score4,
                              stein_coefficient, tensor_power_decompose, whitening_matrix)
from src.model import Activation, NoiseModel, generate_instance, generate_weights
from src.properties import properties_for, run_property
from src.utils import normalize_rows


def _row_error_up_to_sign(rows, truth):
    """max over truth rows of the distance to the closest +-row of the estimate"""
    cos = np.abs(normalize_rows(rows) @ truth.T)
    return float(np.max(np.sqrt(np.maximum(0.0, 2 - 2 * cos.max(axis=0)))))


class TestScores:

    def test_scores_have_zero_mean(self, rng):
        x = rng.standard_normal((3, 40000))
        s2 = np.mean([score2(col) for col in x.T[:4000]], axis=0)
        assert np.abs(s2).max() < 0.15
        s3 = np.mean([score3(col) for col in x.T[:4000]], axis=0)
        assert np.abs(s3).max() < 0.3

    def test_score4_symmetry(self, rng):
        s = score4(rng.standard_normal(3))
        np.testing.assert_allclose(s, s.transpose(1, 0, 3, 2))
        np.testing.assert_allclose(s, s.transpose(3, 2, 1, 0))

    @pytest.mark.parametrize("order,expected", [
        (1, 0.5),
        (2, 1 / math.sqrt(2 * math.pi)),
        (3, 0.0),
    ])
    def test_relu_stein_coefficients(self, order, expected):
        assert stein_coefficient(Activation.relu(), order) == pytest.approx(expected, abs=1e-8)

    def test_power_third_coefficient(self):
        assert stein_coefficient(Activation.power(2.0), 3) == pytest.approx(math.sqrt(2 / math.pi), rel=1e-6)


class TestMoments:

    def test_block_size_does_not_matter(self, rng):
        x = rng.standard_normal((3, 101))
        alpha = rng.standard_normal(101)
        big, small = MomentAccumulator(x, alpha, 1000), MomentAccumulator(x, alpha, 7)
        np.testing.assert_allclose(big.second(), small.second(), atol=1e-12)
        np.testing.assert_allclose(big.third(), small.third(), atol=1e-12)
        np.testing.assert_allclose(big.fourth(), small.fourth(), atol=1e-12)

    def test_fixed_block_order_is_bit_stable(self, rng):
        x = rng.standard_normal((3, 257))
        alpha = rng.standard_normal(257)
        first, second = MomentAccumulator(x, alpha, 64), MomentAccumulator(x.copy(), alpha.copy(), 64)
        np.testing.assert_array_equal(first.fourth(), second.fourth())

    def test_accumulator_matches_per_sample_scores(self, rng):
        x = rng.standard_normal((2, 30))
        alpha = rng.standard_normal(30)
        acc = MomentAccumulator(x, alpha, 8)
        np.testing.assert_allclose(acc.second(), np.mean([a * score2(c) for a, c in zip(alpha, x.T)], axis=0),
                                   atol=1e-12)
        np.testing.assert_allclose(acc.third(), np.mean([a * score3(c) for a, c in zip(alpha, x.T)], axis=0),
                                   atol=1e-12)
        np.testing.assert_allclose(acc.fourth(), np.mean([a * score4(c) for a, c in zip(alpha, x.T)], axis=0),
                                   atol=1e-12)

    def test_collapsed_shapes(self, small_instance):
        theta = np.array([1.0, 0.0, 0.0])
        t3, m2 = build_collapsed_tensor(small_instance.a, small_instance.x, ScoreConfig(3, theta))
        assert t3.shape == (4, 4, 4) and m2.shape == (4, 4)
        t2, _ = build_collapsed_tensor(small_instance.a, small_instance.x, ScoreConfig(2, theta))
        assert t2 is None

    def test_score_config_checks(self):
        with pytest.raises(InvalidShape):
            ScoreConfig(5, np.array([1.0]))
        with pytest.raises(InvalidShape):
            ScoreConfig(2, np.array([1.0, 1.0]))
        with pytest.raises(InvalidShape):
            ScoreConfig(4, np.array([1.0]))

    def test_theta_length_checked(self, small_instance):
        with pytest.raises(InvalidShape):
            build_collapsed_tensor(small_instance.a, small_instance.x, ScoreConfig(2, np.array([1.0, 0.0])))


class TestWhitening:

    def test_whitens_top_block(self, rng):
        q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        m2 = q @ np.diag([3.0, 2.0, 0.0, 0.0]) @ q.T
        w, top = whitening_matrix(m2, 2)
        np.testing.assert_allclose(w.T @ m2 @ w, np.eye(2), atol=1e-10)
        np.testing.assert_allclose(top, [3.0, 2.0])

    def test_negative_eigenvalue_fails(self):
        with pytest.raises(WhiteningFailed):
            whitening_matrix(np.diag([1.0, -1.0]), 2)


class TestPowerDecomposition:

    def test_exact_low_rank_tensor(self, rng, stream):
        v = normalize_rows(rng.standard_normal((3, 5)))
        weights = np.array([1.0, 2.0, 0.5])
        m2 = np.einsum('i,ia,ib->ab', weights, v, v)
        t3 = np.einsum('i,ia,ib,ic->abc', weights, v, v, v)
        report = tensor_power_decompose(t3, m2, 3, restarts=10, iters=200, stream=stream)
        assert report.converged
        assert _row_error_up_to_sign(report.rows, v) < 1e-6


class TestInitTensor:

    def test_order_two_pencil(self, stream, relu):
        w = generate_weights(3, 2, 4, 1.0, stream.child('w'))
        inst = generate_instance(w, relu, 60000, NoiseModel(), stream.child('i'))
        report = init_tensor(inst.a, inst.x, 2, TensorInitConfig(order=2), stream.child('init'), relu)
        assert report.rows.shape == (2, 4)
        assert _row_error_up_to_sign(report.rows, w.v) < 0.25
        assert report.theta_draws >= 1

    @pytest.mark.slow
    def test_order_three_power_activation(self, stream):
        f = Activation.power(2.0)
        w = generate_weights(3, 2, 4, 1.0, stream.child('w'))
        inst = generate_instance(w, f, 100000, NoiseModel(), stream.child('i'))
        report = init_tensor(inst.a, inst.x, 2, TensorInitConfig(order=3), stream.child('init'), f)
        assert _row_error_up_to_sign(report.rows, w.v) < 0.2

    def test_k_above_d(self, small_instance, stream):
        with pytest.raises(InvalidShape):
            init_tensor(small_instance.a, small_instance.x, 5, TensorInitConfig(), stream)

    def test_from_settings_overrides(self, settings):
        cfg = TensorInitConfig.from_settings(settings['init'], order=2, restarts=3)
        assert (cfg.order, cfg.restarts, cfg.iters) == (2, 3, settings['init']['iters'])


class TestOtherInitializers:

    def test_ica_recovers_mixing_directions(self, stream, relu):
        w = generate_weights(3, 2, 4, 1.0, stream.child('w'), orthonormal_v=True)
        inst = generate_instance(w, relu, 20000, NoiseModel(), stream.child('i'))
        sketch, mixing = init_ica(inst.a, inst.x, 2, stream.child('ica'))
        truth = (sketch @ w.u).T
        cos = np.abs(normalize_rows(mixing.T) @ normalize_rows(truth).T)
        assert np.all(cos.max(axis=0) > 0.98)

    def test_oracle_signs(self, stream):
        w = generate_weights(3, 3, 5, 1.0, stream)
        report = init_oracle(w, 0.0, stream.child('o'))
        np.testing.assert_allclose(report.rows, w.v * report.eigenvalues[:, None])
        with pytest.raises(InvalidShape):
            init_oracle(w, -1.0, stream)


@pytest.mark.parametrize("name", properties_for('init', heavy=False))
def test_property(stream, name):
    ok, note = run_property(name, stream)
    assert ok, note
