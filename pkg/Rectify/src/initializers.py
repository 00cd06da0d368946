import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.stats
from numpy.polynomial import hermite_e
from scipy import integrate
from sklearn.decomposition import FastICA
from sklearn.exceptions import ConvergenceWarning

from src.errors import InvalidShape, NoConvergence, WhiteningFailed
from src.model import Activation, NetworkWeights
from src.numerics import gaussian_matrix
from src.utils import MatrixValidator, SeedStream, chunked, normalize_rows

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoreConfig:
    order: int
    theta: np.ndarray
    theta2: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.order not in (2, 3, 4):
            raise InvalidShape(f"score order must be 2, 3 or 4, got {self.order}")
        theta = MatrixValidator.as_vector(self.theta, 'theta')
        if abs(np.linalg.norm(theta) - 1.0) > 1e-9:
            raise InvalidShape("theta must have unit norm")
        object.__setattr__(self, 'theta', theta)
        if self.order == 4 and self.theta2 is None:
            raise InvalidShape("order-4 collapse needs theta2")


@dataclass
class TensorInitConfig:
    order: int = 4
    restarts: int = 30
    iters: int = 100
    tol: float = 1e-10
    psd_tol: float = 1e-9
    whiten_ratio: float = 0.02
    max_theta_draws: Optional[int] = None  # None -> 2**(k+5)
    theta2_draws: int = 3
    smooth: bool = False
    smooth_sigma: float = 1e-3
    block: int = 65536

    @classmethod
    def from_settings(cls, section: Dict, **overrides) -> 'TensorInitConfig':
        cfg = cls(order=section['order'], restarts=section['restarts'], iters=section['iters'],
                  tol=section['power_tol'], psd_tol=section['psd_tol'],
                  whiten_ratio=section.get('whiten_ratio', 0.02),
                  max_theta_draws=section['max_theta_draws'],
                  theta2_draws=section.get('theta2_draws', 3),
                  smooth=section['smooth'], smooth_sigma=section.get('smooth_sigma', 1e-3),
                  block=section['block'])
        for key, value in overrides.items():
            setattr(cfg, key, value)
        return cfg


@dataclass
class TensorInitReport:
    rows: np.ndarray
    eigenvalues: np.ndarray
    power_iters: int = 0
    restarts: int = 0
    converged: bool = True
    whitening_eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))
    theta_draws: int = 0


def score2(x) -> np.ndarray:
    x = MatrixValidator.as_vector(x, 'x')
    return np.outer(x, x) - np.eye(x.size)


def score3(x) -> np.ndarray:
    x = MatrixValidator.as_vector(x, 'x')
    eye = np.eye(x.size)
    sym = (np.einsum('i,jk->ijk', x, eye) + np.einsum('j,ik->ijk', x, eye)
           + np.einsum('k,ij->ijk', x, eye))
    return np.einsum('i,j,k->ijk', x, x, x) - sym


def score4(x) -> np.ndarray:
    x = MatrixValidator.as_vector(x, 'x')
    return _hermite4(np.einsum('i,j,k,l->ijkl', x, x, x, x), np.outer(x, x), 1.0)


def _hermite4(raw4: np.ndarray, q: np.ndarray, mass: float) -> np.ndarray:
    """raw4 - sym6(q x I) + mass * sym3(I x I)"""
    eye = np.eye(q.shape[0])
    pairs = (np.einsum('ij,kl->ijkl', q, eye) + np.einsum('ik,jl->ijkl', q, eye)
             + np.einsum('il,jk->ijkl', q, eye) + np.einsum('jk,il->ijkl', q, eye)
             + np.einsum('jl,ik->ijkl', q, eye) + np.einsum('kl,ij->ijkl', q, eye))
    deltas = (np.einsum('ij,kl->ijkl', eye, eye) + np.einsum('ik,jl->ijkl', eye, eye)
              + np.einsum('il,jk->ijkl', eye, eye))
    return raw4 - pairs + mass * deltas


def stein_coefficient(f: Activation, order: int) -> float:
    """E[f(g) He_order(g)] for g ~ N(0, 1), by adaptive quadrature on (0, inf)"""
    coeffs = np.zeros(order + 1)
    coeffs[order] = 1.0

    def integrand(g):
        return float(f.forward(g)) * hermite_e.hermeval(g, coeffs) * scipy.stats.norm.pdf(g)

    value, _ = integrate.quad(integrand, 0.0, np.inf, limit=200)
    return float(value)


class MomentAccumulator:
    """Fixed-order block sums of alpha-weighted Gaussian score moments"""

    def __init__(self, x: np.ndarray, alpha: np.ndarray, block: int = 65536):
        self.x = x
        self.alpha = alpha
        self.block = block
        self.n = x.shape[1]

    def second(self) -> np.ndarray:
        d = self.x.shape[0]
        q = np.zeros((d, d))
        mass = 0.0
        for sl in chunked(self.n, self.block):
            xb, ab = self.x[:, sl], self.alpha[sl]
            q += (xb * ab) @ xb.T
            mass += ab.sum()
        m2 = (q - mass * np.eye(d)) / self.n
        return (m2 + m2.T) / 2

    def third(self) -> np.ndarray:
        d = self.x.shape[0]
        raw3 = np.zeros((d * d, d))
        s = np.zeros(d)
        for sl in chunked(self.n, self.block):
            xb, ab = self.x[:, sl], self.alpha[sl]
            z = (xb[:, None, :] * xb[None, :, :]).reshape(d * d, -1)
            raw3 += (z * ab) @ xb.T
            s += xb @ ab
        eye = np.eye(d)
        sym = (np.einsum('i,jk->ijk', s, eye) + np.einsum('j,ik->ijk', s, eye)
               + np.einsum('k,ij->ijk', s, eye))
        return (raw3.reshape(d, d, d) - sym) / self.n

    def fourth(self) -> np.ndarray:
        d = self.x.shape[0]
        raw4 = np.zeros((d * d, d * d))
        q = np.zeros((d, d))
        mass = 0.0
        for sl in chunked(self.n, self.block):
            xb, ab = self.x[:, sl], self.alpha[sl]
            z = (xb[:, None, :] * xb[None, :, :]).reshape(d * d, -1)
            raw4 += (z * ab) @ z.T
            q += (xb * ab) @ xb.T
            mass += ab.sum()
        return _hermite4(raw4.reshape(d, d, d, d), q, mass) / self.n


def build_collapsed_tensor(a, x, cfg: ScoreConfig,
                           block: int = 65536) -> Tuple[Optional[np.ndarray], np.ndarray]:
    """Output-collapsed score moments: (T3, M2); T3 is None for order 2"""
    a = MatrixValidator.as_matrix(a, 'A')
    x = MatrixValidator.as_matrix(x, 'X')
    MatrixValidator.require_same_columns(a, x)
    if cfg.theta.size != a.shape[0]:
        raise InvalidShape(f"theta has length {cfg.theta.size}, A has {a.shape[0]} rows")
    acc = MomentAccumulator(x, cfg.theta @ a, block)
    m2 = acc.second()
    if cfg.order == 2:
        return None, m2
    if cfg.order == 3:
        return acc.third(), m2
    return np.einsum('abcd,d->abc', acc.fourth(), cfg.theta2), m2


def whitening_matrix(m2: np.ndarray, k: int, psd_tol: float = 1e-9) -> Tuple[np.ndarray, np.ndarray]:
    """W = E_k diag(lambda_k)^(-1/2) from the top-k eigenpairs of m2"""
    evals, evecs = scipy.linalg.eigh((m2 + m2.T) / 2)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    top = evals[:k]
    scale = max(float(np.abs(evals).max()), 1e-300)
    if top.size < k or np.any(top <= psd_tol * scale):
        raise WhiteningFailed(f"top-{k} eigenvalues of M2 not all positive: {top}")
    return evecs[:, :k] / np.sqrt(top), top


def _multilinear(t: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.einsum('ijk,j,k->i', t, u, u)


def tensor_power_decompose(t3, m2, k: int, restarts: int, iters: int, stream: SeedStream,
                           tol: float = 1e-10, psd_tol: float = 1e-9) -> TensorInitReport:
    """Whiten, robust power iteration with deflation, unwhiten"""
    t3 = np.asarray(t3, dtype=float)
    w, top = whitening_matrix(np.asarray(m2, dtype=float), k, psd_tol)
    t = np.einsum('abc,ai,bj,ck->ijk', t3, w, w, w)
    unwhiten = np.linalg.pinv(w.T)
    scale = float(np.linalg.norm(t))

    components, values = [], []
    total_iters, converged = 0, True
    for comp in range(k):
        best_u, best_val, best_ok = None, -np.inf, False
        for r in range(restarts):
            u = stream.child(f"comp{comp}").child(f"restart{r}").generator().standard_normal(k)
            u /= np.linalg.norm(u)
            ok = False
            for _ in range(iters):
                total_iters += 1
                nxt = _multilinear(t, u)
                norm = np.linalg.norm(nxt)
                if norm <= 1e-14 * max(scale, 1e-300):
                    break
                nxt /= norm
                done = 1.0 - abs(float(nxt @ u)) < tol
                u = nxt
                if done:
                    ok = True
                    break
            val = abs(float(_multilinear(t, u) @ u))
            if val > best_val:
                best_u, best_val, best_ok = u, val, ok
        lam = float(_multilinear(t, best_u) @ best_u)
        logger.debug("component %d: eigenvalue %.6g (converged=%s)", comp, lam, best_ok)
        converged = converged and best_ok and best_val > 0
        components.append(best_u)
        values.append(lam)
        t = t - lam * np.einsum('i,j,k->ijk', best_u, best_u, best_u)

    rows = normalize_rows(np.array([unwhiten @ u for u in components]))
    if not converged:
        logger.warning("tensor power iteration did not converge for every component")
    return TensorInitReport(rows=rows, eigenvalues=np.array(values), power_iters=total_iters,
                            restarts=restarts, converged=converged, whitening_eigenvalues=top)


def _random_unit(size: int, stream: SeedStream) -> np.ndarray:
    v = stream.generator().standard_normal(size)
    return v / np.linalg.norm(v)


def _whitening_quality(m2: np.ndarray, k: int) -> float:
    """lambda_k / max|lambda|, or -inf when a large negative eigenvalue signals a bad theta"""
    evals = np.sort(np.linalg.eigvalsh(m2))[::-1]
    scale = max(float(np.abs(evals).max()), 1e-300)
    if evals[-1] < -0.5 * evals[k - 1]:
        return -np.inf
    return float(evals[k - 1] / scale)


def _select_theta(acc_for, m: int, k: int, cfg: TensorInitConfig, stream: SeedStream,
                  sign: float) -> Tuple[np.ndarray, np.ndarray, int]:
    max_draws = cfg.max_theta_draws or 2 ** (k + 5)
    best = (-np.inf, None, None)
    for draw in range(max_draws):
        theta = _random_unit(m, stream.child(f"theta{draw}"))
        for candidate in (theta, -theta):
            m2 = sign * acc_for(candidate).second()
            quality = _whitening_quality(m2, k)
            if quality > best[0]:
                best = (quality, candidate, m2)
            if quality >= cfg.whiten_ratio:
                return candidate, m2, draw + 1
    if best[1] is None or not best[0] > 0:
        raise WhiteningFailed(f"no collapse vector whitened M2 in {max_draws} draws")
    logger.warning("using best collapse vector (quality %.3g) after %d draws", best[0], max_draws)
    return best[1], best[2], max_draws


def init_tensor(a, x, k: int, cfg: TensorInitConfig, stream: SeedStream,
                f: Optional[Activation] = None) -> TensorInitReport:
    """Approximate rows +-V from score-function moments of (A, X)"""
    a = MatrixValidator.as_matrix(a, 'A')
    x = MatrixValidator.as_matrix(x, 'X')
    MatrixValidator.require_same_columns(a, x)
    m, d = a.shape[0], x.shape[0]
    if k > d:
        raise InvalidShape(f"k={k} exceeds d={d}")
    f = f or Activation.relu()

    if cfg.smooth:
        a = a + gaussian_matrix(a.shape[0], a.shape[1], 0.0, cfg.smooth_sigma, stream.child('smooth'))

    # E[f''] fixes the sign of the collapsed second moment
    sign = 1.0 if stein_coefficient(f, 2) >= 0 else -1.0

    def acc_for(theta):
        return MomentAccumulator(x, theta @ a, cfg.block)

    theta, m2, draws = _select_theta(acc_for, m, k, cfg, stream.child('theta'), sign)
    acc = acc_for(theta)

    if cfg.order == 2:
        report = _pencil_decompose(acc_for, m2, m, k, cfg, stream.child('pencil'), sign)
    elif cfg.order == 3:
        report = tensor_power_decompose(acc.third(), m2, k, cfg.restarts, cfg.iters,
                                        stream.child('power'), cfg.tol, cfg.psd_tol)
    else:
        t4 = acc.fourth()
        report = None
        for draw in range(max(1, cfg.theta2_draws)):
            theta2 = _random_unit(d, stream.child(f"theta2_{draw}"))
            t3 = np.einsum('abcd,d->abc', t4, theta2)
            candidate = tensor_power_decompose(t3, m2, k, cfg.restarts, cfg.iters,
                                               stream.child(f"power{draw}"), cfg.tol, cfg.psd_tol)
            if report is None or _spread(candidate) > _spread(report):
                report = candidate
    report.theta_draws = draws
    logger.info("tensor init (order %d): eigenvalues %s", cfg.order, np.round(report.eigenvalues, 6))
    return report


def _spread(report: TensorInitReport) -> float:
    vals = np.abs(report.eigenvalues)
    return float(vals.min() / vals.max()) if vals.max() > 0 else 0.0


def _pencil_decompose(acc_for, m2: np.ndarray, m: int, k: int, cfg: TensorInitConfig,
                      stream: SeedStream, sign: float) -> TensorInitReport:
    """Order-2 route: whiten by M2(theta), eigendecompose the whitened M2(theta')"""
    w, top = whitening_matrix(m2, k, cfg.psd_tol)
    unwhiten = np.linalg.pinv(w.T)
    best = None
    for draw in range(max(1, cfg.theta2_draws)):
        theta_b = _random_unit(m, stream.child(f"theta_b{draw}"))
        mb = sign * acc_for(theta_b).second()
        pencil = w.T @ mb @ w
        evals, evecs = scipy.linalg.eigh((pencil + pencil.T) / 2)
        gap = float(np.min(np.diff(np.sort(evals)))) if k > 1 else 1.0
        gap /= max(float(np.abs(evals).max()), 1e-300)
        if best is None or gap > best[0]:
            best = (gap, evals, evecs)
    _, evals, evecs = best
    rows = normalize_rows((unwhiten @ evecs).T)
    return TensorInitReport(rows=rows, eigenvalues=evals, power_iters=0, restarts=0,
                            converged=True, whitening_eigenvalues=top)


def init_ica(a, x_unused, k: int, stream: SeedStream, max_iter: int = 1000,
             tol: float = 1e-8, restarts: int = 5) -> Tuple[np.ndarray, np.ndarray]:
    """Gaussian sketch T (k x m) and an estimate of the mixing T U (columns up to order and positive scale)"""
    a = MatrixValidator.as_matrix(a, 'A')
    m = a.shape[0]
    sketch = gaussian_matrix(k, m, 0.0, 1.0, stream.child('sketch'))
    mixed = (sketch @ a).T

    for attempt in range(restarts):
        ica = FastICA(n_components=k, algorithm='deflation', fun='cube', whiten='unit-variance',
                      max_iter=max_iter, tol=tol,
                      random_state=stream.child(f"ica{attempt}").integer_seed())
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter('always', ConvergenceWarning)
            sources = ica.fit_transform(mixed)
        if any(issubclass(w.category, ConvergenceWarning) for w in caught):
            logger.debug("FastICA attempt %d did not converge", attempt)
            continue
        mixing = ica.mixing_.copy()
        # rectified Gaussians are positively skewed
        flip = scipy.stats.skew(sources, axis=0) < 0
        mixing[:, flip] *= -1
        return sketch, mixing
    raise NoConvergence(f"FastICA failed to converge in {restarts} attempts")


def init_oracle(truth: NetworkWeights, eps: float, stream: SeedStream) -> TensorInitReport:
    """Rows xi_i (V_i + eps * random unit direction), renormalized, xi_i random +-1"""
    if eps < 0:
        raise InvalidShape("eps must be nonnegative")
    gen = stream.generator()
    k, d = truth.v.shape
    directions = normalize_rows(gen.standard_normal((k, d)))
    signs = np.where(gen.random(k) < 0.5, -1.0, 1.0)
    rows = normalize_rows(truth.v + eps * directions) * signs[:, None]
    return TensorInitReport(rows=rows, eigenvalues=signs.copy(), converged=True)
