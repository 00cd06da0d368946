import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np
import scipy.linalg
from scipy.stats import ortho_group

from src.errors import InvalidShape, ShapeMismatch, ZeroMatrix
from src.numerics import RANK_TOL, cond_number, gaussian_matrix
from src.utils import MatrixValidator, SeedStream, normalize_rows

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Activation:
    """Rectified activation f(x) = phi(x) for x > 0 and 0 otherwise"""

    kind: str
    exponent: float = 1.0
    name: str = ''
    phi: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False, repr=False)
    phi_inverse: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False, repr=False)

    @classmethod
    def relu(cls) -> 'Activation':
        return cls('relu')

    @classmethod
    def power(cls, c: float) -> 'Activation':
        if not c > 0:
            raise InvalidShape(f"power activation needs c > 0, got {c}")
        return cls('power', exponent=float(c))

    @classmethod
    def expm1(cls) -> 'Activation':
        return cls('expm1')

    @classmethod
    def custom(cls, name: str, phi: Callable, phi_inverse: Callable) -> 'Activation':
        return cls('custom', name=name, phi=phi, phi_inverse=phi_inverse)

    @property
    def descriptor(self) -> str:
        if self.kind == 'power':
            return f"power:{self.exponent:g}"
        if self.kind == 'custom':
            return f"custom:{self.name}"
        return self.kind

    @property
    def is_homogeneous(self) -> bool:
        """Positive scalings pass through f (f(s x) = s^c f(x))"""
        return self.kind in ('relu', 'power')

    @property
    def degree(self) -> float:
        return self.exponent if self.kind == 'power' else 1.0

    def forward(self, m) -> np.ndarray:
        m = np.asarray(m, dtype=float)
        pos = np.maximum(m, 0.0)
        if self.kind == 'relu':
            return pos
        if self.kind == 'power':
            return np.where(m > 0, pos ** self.exponent, 0.0)
        if self.kind == 'expm1':
            return np.expm1(pos)
        return np.where(m > 0, self.phi(pos), 0.0)

    __call__ = forward

    def inverse_positive(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.kind == 'relu':
            return y
        if self.kind == 'power':
            return np.power(np.maximum(y, 0.0), 1.0 / self.exponent)
        if self.kind == 'expm1':
            return np.log1p(np.maximum(y, 0.0))
        return self.phi_inverse(y)


def get_activation(name: str) -> Activation:
    """Parse 'relu', 'power:<c>' or 'expm1'"""
    name = name.strip().lower()
    if name == 'relu':
        return Activation.relu()
    if name == 'expm1':
        return Activation.expm1()
    if name.startswith('power:'):
        try:
            return Activation.power(float(name.split(':', 1)[1]))
        except ValueError as e:
            raise InvalidShape(f"bad power exponent in '{name}'") from e
    raise InvalidShape(f"unknown activation '{name}'")


def apply_activation(f: Activation, m) -> np.ndarray:
    """Entrywise f; accepts any array shape"""
    return f.forward(np.asarray(m, dtype=float))


@dataclass(frozen=True)
class NetworkWeights:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = MatrixValidator.as_matrix(self.u, 'U')
        v = MatrixValidator.as_matrix(self.v, 'V')
        if u.shape[1] != v.shape[0]:
            raise ShapeMismatch(f"U is {u.shape} but V is {v.shape}")
        if v.shape[0] < 1:
            raise InvalidShape("need at least one hidden unit")
        norms = np.linalg.norm(v, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-10):
            raise InvalidShape("rows of V must have unit norm")
        object.__setattr__(self, 'u', u)
        object.__setattr__(self, 'v', v)

    @classmethod
    def from_unnormalized(cls, u, v, f: Activation) -> 'NetworkWeights':
        """Normalize rows of V, absorbing the scale into U when f allows it"""
        u = MatrixValidator.as_matrix(u, 'U')
        v = MatrixValidator.as_matrix(v, 'V')
        norms = np.linalg.norm(v, axis=1)
        if np.any(norms == 0):
            raise InvalidShape("V has a zero row")
        if f.is_homogeneous:
            u = u * norms ** f.degree
        return cls(u, v / norms[:, None])

    @property
    def m(self) -> int:
        return self.u.shape[0]

    @property
    def k(self) -> int:
        return self.v.shape[0]

    @property
    def d(self) -> int:
        return self.v.shape[1]

    def kappa_u(self) -> float:
        return cond_number(self.u)

    def kappa_v(self) -> float:
        return cond_number(self.v)

    def output(self, x, f: Activation) -> np.ndarray:
        return self.u @ apply_activation(f, self.v @ x)

    def permuted(self, order) -> 'NetworkWeights':
        order = np.asarray(order, dtype=int)
        return NetworkWeights(self.u[:, order], self.v[order])


@dataclass(frozen=True)
class NoiseModel:
    kind: str = 'none'  # none | iid | sparse | arbitrary
    sigma: float = 0.0
    dist: str = 'gaussian'
    fraction: float = 0.0
    magnitude: float = 0.0
    path: str = ''

    def __post_init__(self):
        if self.kind not in ('none', 'iid', 'sparse', 'arbitrary'):
            raise InvalidShape(f"unknown noise kind '{self.kind}'")
        if self.sigma < 0:
            raise InvalidShape("noise sigma must be nonnegative")
        if not 0 <= self.fraction <= 1:
            raise InvalidShape("sparse fraction must lie in [0, 1]")
        if self.dist not in ('gaussian', 'rademacher'):
            raise InvalidShape(f"unknown iid distribution '{self.dist}'")

    @classmethod
    def parse(cls, descriptor: Optional[str]) -> 'NoiseModel':
        """'none', 'iid:<sigma>[:rademacher]', 'sparse:<gamma>:<magnitude>', 'file:<path>'"""
        if not descriptor or descriptor == 'none':
            return cls()
        kind, _, rest = descriptor.partition(':')
        try:
            if kind == 'iid':
                parts = rest.split(':')
                dist = parts[1] if len(parts) > 1 else 'gaussian'
                return cls('iid', sigma=float(parts[0]), dist=dist)
            if kind == 'sparse':
                gamma, magnitude = rest.split(':')
                return cls('sparse', fraction=float(gamma), magnitude=float(magnitude))
        except ValueError as e:
            raise InvalidShape(f"malformed noise descriptor '{descriptor}'") from e
        if kind == 'file' and rest:
            return cls('arbitrary', path=rest)
        raise InvalidShape(f"malformed noise descriptor '{descriptor}'")

    @property
    def descriptor(self) -> str:
        if self.kind == 'iid':
            suffix = ':rademacher' if self.dist == 'rademacher' else ''
            return f"iid:{self.sigma:g}{suffix}"
        if self.kind == 'sparse':
            return f"sparse:{self.fraction:g}:{self.magnitude:g}"
        if self.kind == 'arbitrary':
            return f"file:{self.path}"
        return 'none'

    def sample(self, m: int, n: int, stream: SeedStream) -> np.ndarray:
        if self.kind == 'none':
            return np.zeros((m, n))
        if self.kind == 'iid':
            if self.dist == 'rademacher':
                signs = stream.generator().integers(0, 2, size=(m, n)) * 2 - 1
                return self.sigma * signs.astype(float)
            return gaussian_matrix(m, n, 0.0, self.sigma, stream)
        if self.kind == 'sparse':
            signs = stream.child('signs').generator().integers(0, 2, size=(m, n)) * 2 - 1
            base = self.magnitude * signs.astype(float)
            return sparse_noise(base, sparse_count(self.fraction, m, n), stream.child('support'))
        from src.storage import read_matrix
        e = read_matrix(self.path)
        if e.shape != (m, n):
            raise ShapeMismatch(f"noise file {self.path} is {e.shape}, expected {(m, n)}")
        return e


def sparse_count(fraction: float, m: int, n: int) -> int:
    """round(fraction * m * n), halves rounded up"""
    return int(math.floor(fraction * m * n + 0.5))


@dataclass(frozen=True)
class Instance:
    x: np.ndarray
    a: np.ndarray
    e: np.ndarray
    weights: NetworkWeights
    activation: Activation
    noise: NoiseModel
    seed: SeedStream
    covariance: Optional[np.ndarray] = None

    @property
    def clean(self) -> np.ndarray:
        return self.a - self.e


def _random_orthogonal(dim: int, gen: np.random.Generator) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0 if gen.random() < 0.5 else -1.0]])
    return ortho_group.rvs(dim, random_state=gen)


def generate_weights(m: int, k: int, d: int, target_kappa: float, stream: SeedStream,
                     orthonormal_u: bool = False, orthonormal_v: bool = False,
                     u: Optional[np.ndarray] = None) -> NetworkWeights:
    """Random rank-k weights; V gets a log-spaced spectrum from 1 to 1/target_kappa"""
    if min(m, k, d) < 1:
        raise InvalidShape(f"sizes must be positive (m={m}, k={k}, d={d})")
    if k > d:
        raise InvalidShape(f"k={k} exceeds d={d}")
    if u is None and k > m:
        raise InvalidShape(f"k={k} exceeds m={m}; pass an explicit U for the rank-deficient mode")
    if target_kappa < 1:
        raise InvalidShape("target_kappa must be at least 1")

    right = _random_orthogonal(d, stream.child('v_right').generator())[:k]
    if orthonormal_v:
        v = right
    else:
        left = _random_orthogonal(k, stream.child('v_left').generator())
        spectrum = np.logspace(0.0, -math.log10(target_kappa), k)
        v = normalize_rows((left * spectrum) @ right)

    if u is not None:
        u = MatrixValidator.as_matrix(u, 'U')
        if u.shape != (m, k):
            raise InvalidShape(f"explicit U must be {m}x{k}, got {u.shape}")
    elif orthonormal_u:
        q, _ = np.linalg.qr(gaussian_matrix(m, k, 0.0, 1.0, stream.child('u')))
        u = q
    else:
        u = gaussian_matrix(m, k, 0.0, 1.0, stream.child('u'))

    weights = NetworkWeights(u, v)
    logger.debug("generated weights m=%d k=%d d=%d kappa(V)=%.4g", m, k, d, weights.kappa_v())
    return weights


def generate_instance(w: NetworkWeights, f: Activation, n: int, noise: NoiseModel,
                      stream: SeedStream, covariance: Optional[np.ndarray] = None) -> Instance:
    if n < 1:
        raise InvalidShape("n must be at least 1")
    x = gaussian_matrix(w.d, n, 0.0, 1.0, stream.child('x'))
    if covariance is not None:
        covariance = MatrixValidator.as_matrix(covariance, 'covariance')
        x = symmetric_power(covariance, 0.5) @ x
    clean = w.output(x, f)
    e = noise.sample(w.m, n, stream.child('e'))
    return Instance(x=x, a=clean + e, e=e, weights=w, activation=f, noise=noise,
                    seed=stream, covariance=covariance)


def sparse_noise(base, s: int, stream: SeedStream) -> np.ndarray:
    """Keep exactly s uniformly chosen entries of base"""
    base = MatrixValidator.as_matrix(base, 'base')
    if not 0 <= s <= base.size:
        raise InvalidShape(f"s={s} outside [0, {base.size}]")
    keep = stream.generator().choice(base.size, size=s, replace=False)
    out = np.zeros(base.size)
    flat = base.ravel()
    out[keep] = flat[keep]
    return out.reshape(base.shape)


def symmetric_power(mat: np.ndarray, power: float, psd_tol: float = RANK_TOL) -> np.ndarray:
    evals, evecs = scipy.linalg.eigh((mat + mat.T) / 2)
    if power < 0 and evals.min() <= psd_tol * max(evals.max(), 1e-300):
        raise InvalidShape("matrix is not positive definite")
    evals = np.maximum(evals, 0.0)
    return (evecs * evals ** power) @ evecs.T


def estimate_covariance(x) -> np.ndarray:
    x = MatrixValidator.as_matrix(x, 'X')
    cov = x @ x.T / x.shape[1]
    return (cov + cov.T) / 2


def whiten_input(x, sigma_hat) -> np.ndarray:
    x = MatrixValidator.as_matrix(x, 'X')
    sigma_hat = MatrixValidator.as_matrix(sigma_hat, 'sigma_hat')
    if sigma_hat.shape != (x.shape[0], x.shape[0]):
        raise ShapeMismatch(f"covariance {sigma_hat.shape} does not match d={x.shape[0]}")
    return symmetric_power(sigma_hat, -0.5) @ x


def normalize_output(a):
    a = MatrixValidator.as_matrix(a, 'A')
    scale = float(np.linalg.norm(a, axis=0).max()) if a.size else 0.0
    if scale == 0:
        raise ZeroMatrix("cannot normalize a zero output matrix")
    return a / scale, scale


def bounded_lipschitz(f: Activation, b: float, grid: int) -> float:
    """Largest adjacent-point slope of f on a uniform grid over [-b, b]"""
    MatrixValidator.require_positive(b, 'b')
    if grid < 2:
        raise InvalidShape("grid needs at least two points")
    xs = np.linspace(-b, b, grid)
    return float(np.max(np.abs(np.diff(f.forward(xs))) / np.diff(xs)))


def incoherence(u) -> float:
    """Largest leverage score max_i ||Q^T e_i||^2 of the column space of u"""
    u = MatrixValidator.as_matrix(u, 'U')
    q, _ = np.linalg.qr(u)
    return float(np.max(np.sum(q ** 2, axis=1)))


def describe_instance(instance: Instance) -> Dict[str, object]:
    w = instance.weights
    return {
        'm': w.m, 'k': w.k, 'd': w.d, 'n': instance.x.shape[1],
        'activation': instance.activation.descriptor,
        'noise': instance.noise.descriptor,
        'kappa_u': w.kappa_u(),
        'kappa_v': w.kappa_v(),
    }
