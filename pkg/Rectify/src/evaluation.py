import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from src.errors import InvalidShape, ShapeMismatch
from src.model import Activation, NetworkWeights
from src.utils import MatrixValidator, SeedStream, safe_divide

logger = logging.getLogger(__name__)

BRUTE_FORCE_MAX_K = 8
OUTPUT_DIFF_TOL = 1e-12


@dataclass
class MatchResult:
    permutation: np.ndarray  # truth row i <-> got row permutation[i]
    row_errors: np.ndarray
    u_error: float
    v_error: float
    functional_error: float = float('nan')
    functional_rel: float = float('nan')
    xi: Optional[np.ndarray] = None

    def __post_init__(self):
        perm = np.asarray(self.permutation, dtype=int)
        if sorted(perm.tolist()) != list(range(perm.size)):
            raise InvalidShape(f"{perm.tolist()} is not a permutation")
        self.permutation = perm

    @property
    def max_row_error(self) -> float:
        return float(self.row_errors.max()) if self.row_errors.size else 0.0

    def to_metrics(self) -> Dict[str, object]:
        metrics = {
            'u_error': self.u_error,
            'v_error': self.v_error,
            'max_row_error': self.max_row_error,
            'functional_error': self.functional_error,
            'functional_rel': self.functional_rel,
            'permutation': ','.join(str(p) for p in self.permutation),
        }
        if self.xi is not None:
            metrics['xi'] = ','.join(str(int(s)) for s in self.xi)
        return metrics


def _row_costs(got_v: np.ndarray, truth_v: np.ndarray, sign_aware: bool) -> Tuple[np.ndarray, np.ndarray]:
    """cost[i, j] = ||got_j - truth_i|| (or min over +-got_j) and the sign achieving it"""
    plus = np.linalg.norm(got_v[None, :, :] - truth_v[:, None, :], axis=2)
    if not sign_aware:
        return plus, np.ones_like(plus)
    minus = np.linalg.norm(-got_v[None, :, :] - truth_v[:, None, :], axis=2)
    return np.minimum(plus, minus), np.where(minus < plus, -1.0, 1.0)


def best_permutation(cost: np.ndarray, brute_force_max_k: int = BRUTE_FORCE_MAX_K) -> np.ndarray:
    k = cost.shape[0]
    if k <= brute_force_max_k:
        rows = np.arange(k)
        best = min(itertools.permutations(range(k)),
                   key=lambda perm: (float(cost[rows, list(perm)].sum()), perm))
        return np.array(best)
    _, cols = linear_sum_assignment(cost)
    return cols


def functional_error(a, w: NetworkWeights, x, f: Optional[Activation] = None) -> Tuple[float, float]:
    a = MatrixValidator.as_matrix(a, 'A')
    x = MatrixValidator.as_matrix(x, 'X')
    f = f or Activation.relu()
    if w.d != x.shape[0] or w.m != a.shape[0]:
        raise ShapeMismatch(f"weights {w.m}x{w.k}x{w.d} do not fit A {a.shape} and X {x.shape}")
    err = float(np.linalg.norm(a - w.output(x, f)))
    return err, safe_divide(err, float(np.linalg.norm(a)), default=math.inf if err > 0 else 0.0)


def match_weights(got: NetworkWeights, truth: NetworkWeights, f: Optional[Activation] = None,
                  x=None, sign_aware: bool = False,
                  brute_force_max_k: int = BRUTE_FORCE_MAX_K) -> MatchResult:
    """Errors after the row permutation of got closest to truth"""
    if got.v.shape != truth.v.shape or got.u.shape != truth.u.shape:
        raise ShapeMismatch(f"got U{got.u.shape} V{got.v.shape}, truth U{truth.u.shape} V{truth.v.shape}")
    f = f or Activation.relu()
    cost, signs = _row_costs(got.v, truth.v, sign_aware)
    perm = best_permutation(cost, brute_force_max_k)
    rows = np.arange(perm.size)
    xi = signs[rows, perm]

    v = got.v[perm] * xi[:, None]
    u = got.u[:, perm]
    row_errors = np.linalg.norm(v - truth.v, axis=1)
    result = MatchResult(
        permutation=perm,
        row_errors=row_errors,
        u_error=float(np.linalg.norm(u - truth.u)),
        v_error=float(np.linalg.norm(v - truth.v)),
        xi=xi if sign_aware else None,
    )
    if x is not None:
        reference = truth.output(x, f)
        result.functional_error, result.functional_rel = functional_error(reference, got, x, f)
    logger.debug("match: permutation %s, v_error %.3e", perm.tolist(), result.v_error)
    return result


def separation_weights(a_param: float) -> NetworkWeights:
    """Two units at angle ~2a about e_1, output mixing (f(x1 + a x2) + f(x1 - a x2)) / 2"""
    norm = math.sqrt(1.0 + a_param ** 2)
    u = np.array([[norm / 2, norm / 2]])
    v = np.array([[1.0, a_param], [1.0, -a_param]]) / norm
    return NetworkWeights(u, v)


def kappa_separation(a_param: float, n: int, stream: SeedStream, tol: float = OUTPUT_DIFF_TOL) -> float:
    """Fraction of Gaussian columns on which the a and 2a instances produce different outputs"""
    if not 0 < a_param <= 1:
        raise InvalidShape(f"a must lie in (0, 1], got {a_param}")
    x = stream.generator().standard_normal((2, n))
    f = Activation.relu()
    first = separation_weights(a_param).output(x, f)
    second = separation_weights(2 * a_param).output(x, f)
    return float(np.mean(np.abs(first - second).max(axis=0) > tol))


@dataclass
class SeparationSummary:
    a_values: Tuple[float, ...]
    means: Tuple[float, ...]
    identical_share: Dict[float, float] = field(default_factory=dict)

    @property
    def monotone(self) -> bool:
        return all(b >= a for a, b in zip(self.means, self.means[1:]))


def kappa_sweep(a_values, n: int, seeds: int, stream: SeedStream) -> SeparationSummary:
    means, identical = [], {}
    for a_param in a_values:
        fractions = np.array([kappa_separation(a_param, n, stream.child(f"a{a_param}").child(s))
                              for s in range(seeds)])
        means.append(float(fractions.mean()))
        identical[a_param] = float(np.mean(fractions == 0))
    return SeparationSummary(tuple(a_values), tuple(means), identical)
