import json
import logging
import os
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from src.errors import MatrixFormatError
from src.model import Instance, NetworkWeights, NoiseModel, describe_instance, get_activation
from src.utils import SeedStream, format_metric

logger = logging.getLogger(__name__)

INSTANCE_MATRICES = ('X', 'A', 'E', 'U', 'V')


def write_matrix(path: str, m: np.ndarray) -> None:
    """Text matrix: 'rows cols' header, then one row per line at 17 significant digits"""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    lines = [f"{m.shape[0]} {m.shape[1]}"]
    lines.extend(' '.join(f"{v:.17g}" for v in row) for row in m)
    with open(path, 'w', encoding='utf-8', newline='\n') as fh:
        fh.write('\n'.join(lines) + '\n')


def read_matrix(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise MatrixFormatError(f"matrix file not found: {path}")
    with open(path, 'r', encoding='utf-8') as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise MatrixFormatError(f"empty matrix file: {path}")
    try:
        rows, cols = (int(tok) for tok in lines[0].split())
        data = np.array([[float(tok) for tok in ln.split()] for ln in lines[1:]], dtype=float)
    except ValueError as e:
        raise MatrixFormatError(f"malformed matrix file {path}: {e}") from e
    if rows == 0 or cols == 0:
        return np.zeros((rows, cols))
    if data.shape != (rows, cols):
        raise MatrixFormatError(f"{path}: header says {rows}x{cols}, body is {data.shape}")
    return data


def write_metrics(path: str, metrics: Mapping[str, object]) -> None:
    """One 'name value' pair per line, in insertion order"""
    with open(path, 'w', encoding='utf-8', newline='\n') as fh:
        for name, value in metrics.items():
            fh.write(f"{name} {format_metric(value)}\n")


def read_metrics(path: str) -> Dict[str, str]:
    if not os.path.exists(path):
        raise MatrixFormatError(f"report not found: {path}")
    out = {}
    with open(path, 'r', encoding='utf-8') as fh:
        for line in fh:
            if line.strip():
                name, _, value = line.strip().partition(' ')
                out[name] = value
    return out


class InstanceStore:
    """Reads and writes instance directories: matrix files plus a JSON manifest"""

    def __init__(self, root: str, manifest_name: str = 'manifest.json', suffix: str = '.mat'):
        self.root = root
        self.manifest_name = manifest_name
        self.suffix = suffix

    @property
    def manifest_path(self) -> str:
        return os.path.join(self.root, self.manifest_name)

    def matrix_path(self, name: str) -> str:
        return os.path.join(self.root, name + self.suffix)

    def save_instance(self, instance: Instance, effective_config: Optional[Dict] = None) -> str:
        os.makedirs(self.root, exist_ok=True)
        matrices = {'X': instance.x, 'A': instance.a, 'E': instance.e,
                    'U': instance.weights.u, 'V': instance.weights.v}
        for name, mat in matrices.items():
            write_matrix(self.matrix_path(name), mat)
        if instance.covariance is not None:
            write_matrix(self.matrix_path('Sigma'), instance.covariance)

        manifest = describe_instance(instance)
        manifest['files'] = {name: name + self.suffix for name in matrices}
        if instance.covariance is not None:
            manifest['files']['Sigma'] = 'Sigma' + self.suffix
        manifest['seed'] = instance.seed.seed
        manifest['seed_path'] = list(instance.seed.path)
        if effective_config is not None:
            manifest['config'] = effective_config
        self.write_manifest(manifest)
        logger.info("Saved instance to %s", self.root)
        return self.manifest_path

    def write_manifest(self, manifest: Dict) -> None:
        with open(self.manifest_path, 'w', encoding='utf-8', newline='\n') as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=float)
            fh.write('\n')

    def read_manifest(self) -> Dict:
        if not os.path.exists(self.manifest_path):
            raise MatrixFormatError(f"manifest not found: {self.manifest_path}")
        try:
            with open(self.manifest_path, 'r', encoding='utf-8') as fh:
                return json.load(fh)
        except json.JSONDecodeError as e:
            raise MatrixFormatError(f"malformed manifest {self.manifest_path}: {e}") from e

    def load_instance(self) -> Instance:
        manifest = self.read_manifest()
        files = manifest.get('files', {})
        missing = [name for name in INSTANCE_MATRICES if name not in files]
        if missing:
            raise MatrixFormatError(f"manifest lacks files for {missing}")
        mats = {name: read_matrix(os.path.join(self.root, files[name])) for name in INSTANCE_MATRICES}
        covariance = None
        if 'Sigma' in files:
            covariance = read_matrix(os.path.join(self.root, files['Sigma']))
        return Instance(
            x=mats['X'], a=mats['A'], e=mats['E'],
            weights=NetworkWeights(mats['U'], mats['V']),
            activation=get_activation(manifest.get('activation', 'relu')),
            noise=NoiseModel.parse(manifest.get('noise', 'none')),
            seed=SeedStream(int(manifest.get('seed', 0)), tuple(manifest.get('seed_path', ()))),
            covariance=covariance,
        )

    def save_weights(self, weights: NetworkWeights, prefix: str = '') -> Tuple[str, str]:
        os.makedirs(self.root, exist_ok=True)
        u_path = self.matrix_path(prefix + 'U_hat')
        v_path = self.matrix_path(prefix + 'V_hat')
        write_matrix(u_path, weights.u)
        write_matrix(v_path, weights.v)
        return u_path, v_path

    def load_weights(self, prefix: str = '') -> NetworkWeights:
        return NetworkWeights(read_matrix(self.matrix_path(prefix + 'U_hat')),
                              read_matrix(self.matrix_path(prefix + 'V_hat')))

