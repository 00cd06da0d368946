import json
import os

import numpy as np
import pytest

from src.errors import MatrixFormatError
from src.model import NetworkWeights, NoiseModel, generate_instance, generate_weights
from src.storage import InstanceStore, read_matrix, read_metrics, write_matrix, write_metrics


class TestMatrixFiles:

    def test_values_survive_bit_exactly(self, tmp_path, rng):
        path = str(tmp_path / 'M.mat')
        m = rng.standard_normal((3, 4)) * 1e-7
        write_matrix(path, m)
        np.testing.assert_array_equal(read_matrix(path), m)

    def test_header_body_mismatch(self, tmp_path):
        path = tmp_path / 'bad.mat'
        path.write_text("2 2\n1 2\n")
        with pytest.raises(MatrixFormatError):
            read_matrix(str(path))

    def test_non_numeric_entry(self, tmp_path):
        path = tmp_path / 'bad.mat'
        path.write_text("1 2\n1 x\n")
        with pytest.raises(MatrixFormatError):
            read_matrix(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(MatrixFormatError):
            read_matrix(str(tmp_path / 'nope.mat'))

    def test_empty_matrix(self, tmp_path):
        path = tmp_path / 'empty.mat'
        path.write_text("0 3\n")
        assert read_matrix(str(path)).shape == (0, 3)


class TestMetrics:

    def test_order_and_format(self, tmp_path):
        path = str(tmp_path / 'report.txt')
        write_metrics(path, {'b': 0.1, 'a': True, 'n': 3, 'missing': None})
        assert (tmp_path / 'report.txt').read_text().splitlines() == [
            'b 0.10000000000000001', 'a true', 'n 3', 'missing nan']
        assert read_metrics(path)['n'] == '3'


class TestInstanceStore:

    def test_instance_round_trip(self, tmp_path, stream, relu):
        w = generate_weights(3, 2, 4, 2.0, stream.child('w'))
        inst = generate_instance(w, relu, 40, NoiseModel.parse('iid:0.01'), stream.child('i'))
        store = InstanceStore(str(tmp_path / 'inst'))
        store.save_instance(inst, effective_config={'model': {'n': 40}})

        loaded = store.load_instance()
        np.testing.assert_array_equal(loaded.a, inst.a)
        np.testing.assert_array_equal(loaded.weights.v, inst.weights.v)
        assert loaded.noise == inst.noise
        assert loaded.seed == inst.seed
        assert store.read_manifest()['config'] == {'model': {'n': 40}}

    def test_manifest_lists_files(self, tmp_path, small_instance):
        store = InstanceStore(str(tmp_path))
        store.save_instance(small_instance)
        with open(store.manifest_path) as fh:
            manifest = json.load(fh)
        assert set(manifest['files']) == {'X', 'A', 'E', 'U', 'V'}
        assert manifest['activation'] == 'relu'

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(MatrixFormatError):
            InstanceStore(str(tmp_path)).load_instance()

    def test_malformed_manifest(self, tmp_path):
        (tmp_path / 'manifest.json').write_text('{not json')
        with pytest.raises(MatrixFormatError):
            InstanceStore(str(tmp_path)).read_manifest()

    def test_weights(self, tmp_path):
        store = InstanceStore(str(tmp_path))
        w = NetworkWeights(np.ones((2, 2)), np.eye(2))
        u_path, v_path = store.save_weights(w)
        assert os.path.basename(u_path) == 'U_hat.mat'
        np.testing.assert_array_equal(store.load_weights().v, np.eye(2))
