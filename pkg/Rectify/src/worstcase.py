"""Exact recovery for arbitrary inputs X when rank(A) = k, by search over sign patterns.

Each hidden row y = wX is found by a feasibility LP for a fixed pattern S:
y >= 1 on S, y <= 0 off S, f_S(y) = z V' in the row space of A, plus one
coordinate of f_S(y)(I - P) pushed to +1 or -1 so the new row is independent
of those already accepted.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg

from src.errors import BudgetExceeded, ExcessRank, NoRealization, RankDeficientA
from src.model import Activation, NetworkWeights
from src.numerics import RANK_TOL, LinearProgram, lp_feasible, orthonormal_rows, rank, solve_exact
from src.signpat import SignPattern, enumerate_subspace_patterns
from src.utils import MatrixValidator

logger = logging.getLogger(__name__)

MAX_PATTERNS = 1_000_000
FUNCTIONAL_TOL = 1e-6


@dataclass
class IterativeState:
    accepted: List[np.ndarray] = field(default_factory=list)
    patterns: List[SignPattern] = field(default_factory=list)
    projector_complement: Optional[np.ndarray] = None

    @classmethod
    def empty(cls, n: int) -> 'IterativeState':
        return cls([], [], np.eye(n))

    def extended(self, y: np.ndarray, pattern: SignPattern) -> 'IterativeState':
        accepted = self.accepted + [y]
        rectified = np.maximum(np.vstack(accepted), 0.0)
        q = orthonormal_rows(rectified)
        n = y.size
        return IterativeState(accepted, self.patterns + [pattern], np.eye(n) - q.T @ q)


def select_row_basis(a: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """k independent rows of a by pivoted QR on a^T"""
    _, _, piv = scipy.linalg.qr(a.T, mode='economic', pivoting=True)
    chosen = np.sort(piv[:k])
    return a[chosen], chosen


def _pattern_blocks(x: np.ndarray, v_basis: np.ndarray, s: SignPattern):
    d, n = x.shape
    k = v_basis.shape[0]
    mask = s.mask
    # variables: [w (d), z (k)]
    y_rows = np.hstack([x.T, np.zeros((n, k))])
    span_rows = np.hstack([np.zeros((n, d)), v_basis.T])
    blocks = [
        (y_rows[mask], '>=', 1.0),
        (y_rows[~mask], '<=', 0.0),
        (y_rows[mask] - span_rows[mask], '=', 0.0),
        (span_rows[~mask], '=', 0.0),
    ]
    return blocks, span_rows


def pattern_base_feasible(x: np.ndarray, v_basis: np.ndarray, s: SignPattern,
                          max_pivots: int = 50000) -> bool:
    """The pattern LP without the independence constraint"""
    blocks, _ = _pattern_blocks(x, v_basis, s)
    lp = LinearProgram.from_blocks(x.shape[0] + v_basis.shape[0], blocks)
    return lp_feasible(lp, max_pivots=max_pivots) is not None


def iterative_lp(x, v_basis, s: SignPattern, state: IterativeState,
                 max_pivots: int = 50000) -> Optional[np.ndarray]:
    """A row y = wX with sign pattern s, f_S(y) in rowspan(v_basis) and
    f_S(y) independent of the accepted rows; None if all 2n LPs fail"""
    x = MatrixValidator.as_matrix(x, 'X')
    v_basis = MatrixValidator.as_matrix(v_basis, 'V_basis')
    d, n = x.shape
    k = v_basis.shape[0]
    blocks, span_rows = _pattern_blocks(x, v_basis, s)
    complement = state.projector_complement if state.projector_complement is not None else np.eye(n)
    # f_S(y) = z V' on feasible points, so (f_S(y)(I - P))_t is linear in z
    resid_rows = (complement @ span_rows)

    for t in range(n):
        if np.allclose(resid_rows[t], 0.0, atol=1e-12):
            continue
        for sign in (1.0, -1.0):
            rel = '>=' if sign > 0 else '<='
            lp = LinearProgram.from_blocks(d + k, blocks + [(resid_rows[t:t + 1], rel, sign)])
            point = lp_feasible(lp, max_pivots=max_pivots)
            if point is not None:
                y = point[:d] @ x
                logger.debug("pattern of size %d accepted at t=%d sign=%+d", s.size, t, int(sign))
                return y
    return None


def _factor(a: np.ndarray, x: np.ndarray, ys: List[np.ndarray],
            f: Activation) -> Tuple[NetworkWeights, float]:
    y = np.vstack(ys)
    hidden = f.forward(y)
    u_t, _ = solve_exact(hidden.T, a.T)
    v_t, _ = solve_exact(x.T, y.T)
    weights = NetworkWeights.from_unnormalized(u_t.T, v_t.T, f)
    resid = float(np.linalg.norm(a - weights.output(x, f)))
    return weights, resid


def exact_neural_net(a, x, k: int, max_patterns: int = MAX_PATTERNS,
                     functional_tol: float = FUNCTIONAL_TOL, rank_tol: float = RANK_TOL,
                     max_subsets: int = 10_000_000, threads: int = 1,
                     max_pivots: int = 50000,
                     accepted: Optional[List[np.ndarray]] = None) -> NetworkWeights:
    """U, V with A = U relu(V X) for any X, provided rank(A) = k.

    When given, `accepted` receives the k rows y = w X that produced the returned weights.
    """
    a = MatrixValidator.as_matrix(a, 'A')
    x = MatrixValidator.as_matrix(x, 'X')
    MatrixValidator.require_same_columns(a, x)
    f = Activation.relu()
    r = rank(a, rank_tol)
    if r < k:
        raise RankDeficientA(f"rank(A) = {r} < k = {k}")
    if r > k:
        raise ExcessRank(f"rank(A) = {r} > k = {k}: no {k}-unit network produces A")

    v_basis, rows = select_row_basis(a, k)
    patterns = enumerate_subspace_patterns(v_basis, max_subsets=max_subsets,
                                           threads=threads, max_pivots=max_pivots)
    if len(patterns) > max_patterns:
        raise BudgetExceeded(f"{len(patterns)} sign patterns exceed limit {max_patterns}")
    logger.info("worst-case search: rows %s as basis, %d patterns", rows.tolist(), len(patterns))

    viable = [p for p in patterns
              if p.size > 0 and pattern_base_feasible(x, v_basis, p, max_pivots)]
    logger.info("%d patterns pass the base LP", len(viable))

    scale = float(np.linalg.norm(a))
    budget = {'lp_calls': 0}
    best: Dict[str, object] = {}

    def search(state: IterativeState) -> Optional[NetworkWeights]:
        if len(state.accepted) == k:
            weights, resid = _factor(a, x, state.accepted, f)
            if not best or resid < best['resid']:
                best.update(weights=weights, resid=resid)
            if resid > functional_tol * scale:
                return None
            best['rows'] = list(state.accepted)
            return weights
        for pattern in viable:
            budget['lp_calls'] += 1
            if budget['lp_calls'] > max_patterns:
                raise BudgetExceeded(f"pattern trials exceeded {max_patterns}")
            y = iterative_lp(x, v_basis, pattern, state, max_pivots)
            if y is None:
                continue
            found = search(state.extended(y, pattern))
            if found is not None:
                return found
        return None

    weights = search(IterativeState.empty(x.shape[1]))
    if weights is None:
        raise NoRealization("no sign-pattern assignment yields a factorization of A",
                            best_residual=best.get('resid'))
    if accepted is not None:
        accepted.extend(best['rows'])
    logger.info("worst-case recovery done after %d pattern trials", budget['lp_calls'])
    return weights
