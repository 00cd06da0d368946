import numpy as np
import pytest

from src.errors import InvalidShape, ShapeMismatch, ZeroMatrix
from src.model import (Activation, NetworkWeights, NoiseModel, apply_activation, bounded_lipschitz,
                       describe_instance, estimate_covariance, generate_instance, generate_weights, get_activation,
                       incoherence, normalize_output, sparse_count, sparse_noise, symmetric_power,
                       whiten_input)
from src.properties import properties_for, run_property
from src.utils import SeedStream


class TestActivation:

    def test_relu_is_rectified(self):
        f = Activation.relu()
        np.testing.assert_array_equal(f(np.array([-2.0, 0.0, 3.0])), [0.0, 0.0, 3.0])

    def test_power_and_inverse(self):
        f = Activation.power(2.0)
        y = f(np.array([-1.0, 3.0]))
        np.testing.assert_allclose(y, [0.0, 9.0])
        np.testing.assert_allclose(f.inverse_positive(y[1:]), [3.0])
        assert f.is_homogeneous and f.degree == 2.0

    def test_apply_keeps_shape(self):
        out = apply_activation(Activation.relu(), [[-1, 2], [3, -4]])
        np.testing.assert_array_equal(out, [[0.0, 2.0], [3.0, 0.0]])

    def test_expm1_not_homogeneous(self):
        f = get_activation('expm1')
        assert not f.is_homogeneous
        np.testing.assert_allclose(f.inverse_positive(f(np.array([0.7]))), [0.7])

    @pytest.mark.parametrize("name", ['tanh', 'power:x', 'power:-1'])
    def test_bad_names(self, name):
        with pytest.raises(InvalidShape):
            get_activation(name)

    def test_descriptor_round_trip(self):
        assert get_activation(Activation.power(3).descriptor) == Activation.power(3)


class TestNetworkWeights:

    def test_rows_must_be_unit(self):
        with pytest.raises(InvalidShape):
            NetworkWeights(np.ones((2, 2)), np.array([[1.0, 1.0], [0.0, 1.0]]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            NetworkWeights(np.ones((2, 3)), np.eye(2))

    def test_from_unnormalized_absorbs_scale(self, rng):
        f = Activation.power(2.0)
        u = rng.standard_normal((3, 2))
        v = rng.standard_normal((2, 4)) * 5
        x = rng.standard_normal((4, 50))
        w = NetworkWeights.from_unnormalized(u, v, f)
        np.testing.assert_allclose(w.output(x, f), u @ f(v @ x), rtol=1e-10)

    def test_permuted_keeps_output(self, stream, relu, rng):
        w = generate_weights(3, 3, 5, 2.0, stream)
        x = rng.standard_normal((5, 20))
        np.testing.assert_allclose(w.permuted([2, 0, 1]).output(x, relu), w.output(x, relu))


class TestGeneration:

    def test_same_seed_same_weights(self):
        a = generate_weights(4, 2, 6, 3.0, SeedStream(9))
        b = generate_weights(4, 2, 6, 3.0, SeedStream(9))
        np.testing.assert_array_equal(a.u, b.u)
        np.testing.assert_array_equal(a.v, b.v)

    def test_orthonormal_modes(self, stream):
        w = generate_weights(5, 3, 6, 1.0, stream, orthonormal_u=True, orthonormal_v=True)
        np.testing.assert_allclose(w.v @ w.v.T, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(w.u.T @ w.u, np.eye(3), atol=1e-12)

    def test_kappa_grows_with_target(self, stream):
        low = generate_weights(4, 3, 6, 1.0, stream).kappa_v()
        high = generate_weights(4, 3, 6, 50.0, stream).kappa_v()
        assert high > low

    def test_rank_deficient_needs_explicit_u(self, stream):
        with pytest.raises(InvalidShape):
            generate_weights(1, 2, 3, 1.0, stream)
        w = generate_weights(1, 2, 3, 1.0, stream, u=np.array([[1.0, -1.0]]))
        assert w.u.shape == (1, 2)

    def test_instance_is_clean_plus_noise(self, stream, relu):
        w = generate_weights(3, 2, 4, 1.0, stream.child('w'))
        inst = generate_instance(w, relu, 100, NoiseModel.parse('iid:0.1'), stream.child('i'))
        np.testing.assert_allclose(inst.clean, w.output(inst.x, relu))
        assert inst.e.std() == pytest.approx(0.1, rel=0.3)
        meta = describe_instance(inst)
        assert meta['noise'] == 'iid:0.1' and meta['n'] == 100


class TestNoise:

    def test_parse_descriptors(self):
        assert NoiseModel.parse(None).kind == 'none'
        assert NoiseModel.parse('iid:0.5:rademacher').dist == 'rademacher'
        sparse = NoiseModel.parse('sparse:0.05:10')
        assert (sparse.fraction, sparse.magnitude) == (0.05, 10.0)
        with pytest.raises(InvalidShape):
            NoiseModel.parse('sparse:0.1')

    def test_sparse_support_size(self, stream):
        e = NoiseModel.parse('sparse:0.1:3').sample(10, 20, stream)
        assert np.count_nonzero(e) == sparse_count(0.1, 10, 20) == 20
        assert set(np.abs(e[e != 0])) == {3.0}

    def test_sparse_noise_bounds(self, stream):
        with pytest.raises(InvalidShape):
            sparse_noise(np.ones((2, 2)), 5, stream)

    def test_file_noise_shape_checked(self, tmp_path, stream):
        from src.storage import write_matrix
        path = str(tmp_path / 'E.mat')
        write_matrix(path, np.ones((2, 3)))
        with pytest.raises(ShapeMismatch):
            NoiseModel.parse(f"file:{path}").sample(3, 3, stream)


class TestHelpers:

    def test_whitening(self, rng):
        x = np.diag([1.0, 3.0]) @ rng.standard_normal((2, 20000))
        white = whiten_input(x, estimate_covariance(x))
        np.testing.assert_allclose(estimate_covariance(white), np.eye(2), atol=1e-8)

    def test_symmetric_power(self):
        mat = np.array([[2.0, 0.5], [0.5, 1.0]])
        root = symmetric_power(mat, 0.5)
        np.testing.assert_allclose(root @ root, mat, atol=1e-12)
        np.testing.assert_allclose(root, root.T)
        np.testing.assert_allclose(symmetric_power(mat, -0.5) @ mat @ symmetric_power(mat, -0.5),
                                   np.eye(2), atol=1e-12)
        with pytest.raises(InvalidShape):
            symmetric_power(np.diag([1.0, 0.0]), -0.5)

    def test_correlated_instance(self, stream, relu):
        cov = np.array([[2.0, 0.5], [0.5, 1.0]])
        w = generate_weights(2, 1, 2, 1.0, stream.child('w'))
        inst = generate_instance(w, relu, 40000, NoiseModel(), stream.child('i'), cov)
        np.testing.assert_allclose(estimate_covariance(inst.x), cov, atol=0.05)
        np.testing.assert_allclose(inst.a, w.output(inst.x, relu))

    def test_normalize_output(self):
        scaled, scale = normalize_output(np.array([[3.0, 0.0], [4.0, 1.0]]))
        assert scale == 5.0
        assert np.linalg.norm(scaled, axis=0).max() == pytest.approx(1.0)
        with pytest.raises(ZeroMatrix):
            normalize_output(np.zeros((2, 2)))

    def test_lipschitz(self):
        assert bounded_lipschitz(Activation.relu(), 2.0, 101) == pytest.approx(1.0)
        assert bounded_lipschitz(Activation.power(2.0), 1.0, 1001) == pytest.approx(2.0, rel=1e-2)

    def test_incoherence_range(self, stream):
        u = generate_weights(30, 2, 6, 1.0, stream, orthonormal_u=True).u
        assert 2 / 30 - 1e-12 <= incoherence(u) <= 1.0


@pytest.mark.parametrize("name", properties_for('model', heavy=False))
def test_property(stream, name):
    ok, note = run_property(name, stream)
    assert ok, note
