import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from src.errors import InvalidShape, NumericalFailure, ZeroMatrix
from src.utils import MatrixValidator, SeedStream, safe_divide

logger = logging.getLogger(__name__)

EQ_TOL = 1e-9
RANK_TOL = 1e-9

RELATIONS = ('>=', '<=', '=')


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD: left @ diag(singular_values) @ right reconstructs the input"""

    left: np.ndarray
    singular_values: np.ndarray
    right: np.ndarray

    def rank(self, rank_tol: float = RANK_TOL) -> int:
        if self.singular_values.size == 0 or self.singular_values[0] == 0:
            return 0
        return int(np.sum(self.singular_values > rank_tol * self.singular_values[0]))

    def reconstruct(self) -> np.ndarray:
        return (self.left * self.singular_values) @ self.right


@dataclass(frozen=True)
class LinearProgram:
    """Feasibility problem over free (sign-unrestricted) variables.

    Constraints are stored as one coefficient matrix with a relation and a
    right-hand side per row.
    """

    num_vars: int
    coefficients: np.ndarray
    relations: Tuple[str, ...]
    rhs: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coefficients, dtype=float).reshape(-1, self.num_vars)
        rhs = np.asarray(self.rhs, dtype=float).ravel()
        if coeffs.shape[0] != rhs.size or len(self.relations) != rhs.size:
            raise InvalidShape("every constraint needs coefficients, a relation and a rhs")
        bad = [rel for rel in self.relations if rel not in RELATIONS]
        if bad:
            raise InvalidShape(f"unknown constraint relation(s): {sorted(set(bad))}")
        object.__setattr__(self, 'coefficients', coeffs)
        object.__setattr__(self, 'rhs', rhs)
        object.__setattr__(self, 'relations', tuple(self.relations))

    @classmethod
    def from_constraints(cls, num_vars: int,
                         constraints: Sequence[Tuple[Sequence[float], str, float]]) -> 'LinearProgram':
        if not constraints:
            return cls(num_vars, np.zeros((0, num_vars)), (), np.zeros(0))
        coeffs = np.array([np.asarray(c, dtype=float) for c, _, _ in constraints])
        if coeffs.ndim != 2 or coeffs.shape[1] != num_vars:
            raise InvalidShape(f"every coefficient vector must have length {num_vars}")
        return cls(num_vars, coeffs, tuple(r for _, r, _ in constraints),
                   np.array([b for _, _, b in constraints], dtype=float))

    @classmethod
    def from_blocks(cls, num_vars: int,
                    blocks: Sequence[Tuple[np.ndarray, str, np.ndarray]]) -> 'LinearProgram':
        """Stack (matrix, relation, rhs-vector) blocks into one program"""
        mats, rels, rhs = [], [], []
        for mat, rel, vec in blocks:
            mat = np.asarray(mat, dtype=float).reshape(-1, num_vars)
            if mat.shape[0] == 0:
                continue
            vec = np.broadcast_to(np.asarray(vec, dtype=float), (mat.shape[0],))
            mats.append(mat)
            rels.extend([rel] * mat.shape[0])
            rhs.append(vec)
        if not mats:
            return cls(num_vars, np.zeros((0, num_vars)), (), np.zeros(0))
        return cls(num_vars, np.vstack(mats), tuple(rels), np.concatenate(rhs))

    @property
    def constraints(self) -> List[Tuple[np.ndarray, str, float]]:
        return [(self.coefficients[i], self.relations[i], float(self.rhs[i]))
                for i in range(self.rhs.size)]

    def violations(self, point: np.ndarray) -> np.ndarray:
        """Per-constraint violation amount (0 when satisfied)"""
        lhs = self.coefficients @ point
        out = np.zeros(self.rhs.size)
        for i, rel in enumerate(self.relations):
            gap = lhs[i] - self.rhs[i]
            if rel == '>=':
                out[i] = max(0.0, -gap)
            elif rel == '<=':
                out[i] = max(0.0, gap)
            else:
                out[i] = abs(gap)
        return out

    def is_satisfied(self, point: np.ndarray, tol: float = EQ_TOL) -> bool:
        if self.rhs.size == 0:
            return True
        return bool(np.all(self.violations(point) <= tol))


class SimplexSolver:
    """Dense two-phase tableau simplex with Bland's rule (phase one only: feasibility)"""

    def __init__(self, pivot_tol: float = 1e-10, max_pivots: int = 50000):
        self.pivot_tol = pivot_tol
        self.max_pivots = max_pivots

    @staticmethod
    def _pivot(tableau: np.ndarray, row: int, col: int) -> None:
        tableau[row, :] /= tableau[row, col]
        column = tableau[:, col].copy()
        column[row] = 0.0
        tableau -= np.outer(column, tableau[row, :])

    def _enter(self, cost_row: np.ndarray) -> int:
        # Bland: lowest-index column with negative reduced cost
        candidates = np.flatnonzero(cost_row[:-1] < -self.pivot_tol)
        return int(candidates[0]) if candidates.size else -1

    def _leave(self, tableau: np.ndarray, col: int, basis: List[int]) -> int:
        column = tableau[:-1, col]
        rows = np.flatnonzero(column > self.pivot_tol)
        if rows.size == 0:
            return -1
        ratios = tableau[rows, -1] / column[rows]
        best = ratios.min()
        tied = rows[ratios <= best + self.pivot_tol * max(1.0, abs(best))]
        # Bland tie-break: smallest basic variable index
        return int(min(tied, key=lambda r: basis[r]))

    def _standard_form(self, lp: LinearProgram):
        # x = x_plus - x_minus; rows flipped so that rhs >= 0
        a = np.hstack([lp.coefficients, -lp.coefficients])
        b = lp.rhs.copy()
        rels = list(lp.relations)
        for i in range(b.size):
            if b[i] < 0:
                a[i] *= -1
                b[i] *= -1
                if rels[i] == '<=':
                    rels[i] = '>='
                elif rels[i] == '>=':
                    rels[i] = '<='

        rows, n_struct = a.shape
        num_slack = sum(1 for r in rels if r in ('<=', '>='))
        num_art = sum(1 for r in rels if r in ('=', '>='))
        total = n_struct + num_slack + num_art
        full = np.zeros((rows, total))
        full[:, :n_struct] = a
        basis = []
        slack_col, art_col = n_struct, n_struct + num_slack
        for i, rel in enumerate(rels):
            if rel == '<=':
                full[i, slack_col] = 1.0
                basis.append(slack_col)
                slack_col += 1
            elif rel == '>=':
                full[i, slack_col] = -1.0
                full[i, art_col] = 1.0
                basis.append(art_col)
                slack_col += 1
                art_col += 1
            else:
                full[i, art_col] = 1.0
                basis.append(art_col)
                art_col += 1
        return full, b, basis, n_struct + num_slack

    def find_feasible(self, lp: LinearProgram) -> Optional[np.ndarray]:
        if lp.rhs.size == 0:
            return np.zeros(lp.num_vars)

        full, b, basis, first_art = self._standard_form(lp)
        rows, total = full.shape
        tableau = np.zeros((rows + 1, total + 1))
        tableau[:rows, :total] = full
        tableau[:rows, -1] = b

        # Phase one objective: minimise the sum of artificials
        art_rows = [r for r, col in enumerate(basis) if col >= first_art]
        tableau[-1, first_art:total] = 1.0
        for r in art_rows:
            tableau[-1, :] -= tableau[r, :]

        for step in range(self.max_pivots):
            col = self._enter(tableau[-1, :])
            if col == -1:
                break
            row = self._leave(tableau, col, basis)
            if row == -1:
                # phase one is bounded below by zero
                raise NumericalFailure("unbounded ray in phase one", pivots=step)
            self._pivot(tableau, row, col)
            basis[row] = col
        else:
            raise NumericalFailure(f"simplex pivot guard ({self.max_pivots}) exceeded")

        infeasibility = -tableau[-1, -1]
        if infeasibility > 1e-9 * max(1.0, float(np.abs(b).max())):
            return None

        # Recompute the basic solution from the original columns for accuracy
        values = np.zeros(total)
        basis_cols = np.array(basis)
        sol, *_ = scipy.linalg.lstsq(full[:, basis_cols], b)
        values[basis_cols] = sol
        values[first_art:] = 0.0
        n_free = lp.num_vars
        point = values[:n_free] - values[n_free:2 * n_free]
        if not lp.is_satisfied(point, 1e-7):
            # fall back to the tableau values when the refit drifted
            values = np.zeros(total)
            values[basis_cols] = tableau[:rows, -1]
            point = values[:n_free] - values[n_free:2 * n_free]
        return point


def svd(a) -> SvdResult:
    a = MatrixValidator.as_matrix(a, 'a')
    if a.size == 0:
        raise InvalidShape("svd of an empty matrix")
    left, s, right = np.linalg.svd(a, full_matrices=False)
    return SvdResult(left, s, right)


def rank(a, rank_tol: float = RANK_TOL) -> int:
    return svd(a).rank(rank_tol)


def cond_number(a, r: Optional[int] = None, rank_tol: float = RANK_TOL) -> float:
    """sigma_max / sigma_min over the rank-r truncation; inf when r exceeds the numerical rank"""
    result = svd(a)
    r = result.rank(rank_tol) if r is None else r
    if r == 0:
        raise ZeroMatrix("condition number of a zero matrix")
    s = result.singular_values
    if r > s.size:
        raise InvalidShape(f"truncation rank {r} exceeds {s.size} singular values")
    if s[r - 1] <= rank_tol * s[0]:
        return math.inf
    return safe_divide(s[0], s[r - 1], default=math.inf)


def pinv(a, rcond: float = 1e-12) -> np.ndarray:
    a = MatrixValidator.as_matrix(a, 'a')
    return np.linalg.pinv(a, rcond=rcond)


def orthonormal_rows(a, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal basis (as rows) of the row span of a"""
    a = MatrixValidator.as_matrix(a, 'rows')
    if a.shape[0] == 0 or not np.any(a):
        return np.zeros((0, a.shape[1]))
    result = svd(a)
    return result.right[:result.rank(rank_tol)]


def projector(rows, rank_tol: float = RANK_TOL) -> np.ndarray:
    rows = MatrixValidator.as_matrix(rows, 'rows')
    q = orthonormal_rows(rows, rank_tol)
    p = q.T @ q
    return (p + p.T) / 2


def residual_energy(rows, basis, rank_tol: float = RANK_TOL) -> np.ndarray:
    """||rows_j (I - P_basis)||^2 per row without forming the n x n projector"""
    rows = MatrixValidator.as_matrix(rows, 'rows')
    q = orthonormal_rows(basis, rank_tol)
    if q.shape[0] == 0:
        return np.sum(rows ** 2, axis=1)
    resid = rows - (rows @ q.T) @ q
    return np.sum(resid ** 2, axis=1)


def solve_exact(a, b) -> Tuple[np.ndarray, float]:
    """Minimum-residual solution of a @ x = b and the residual norm"""
    a = MatrixValidator.as_matrix(a, 'a')
    b_arr = np.asarray(b, dtype=float)
    if b_arr.shape[0] != a.shape[0]:
        raise InvalidShape(f"incompatible shapes {a.shape} and {b_arr.shape}")
    solution, *_ = scipy.linalg.lstsq(a, b_arr)
    residual = float(np.linalg.norm(a @ solution - b_arr))
    return solution, residual


def lp_feasible(lp: LinearProgram, max_pivots: int = 50000) -> Optional[np.ndarray]:
    """A point satisfying every constraint of lp, or None when infeasible"""
    point = SimplexSolver(max_pivots=max_pivots).find_feasible(lp)
    if point is not None:
        logger.debug("LP feasible (%d vars, %d constraints)", lp.num_vars, lp.rhs.size)
    return point


def gaussian_matrix(rows: int, cols: int, mean: float, stddev: float,
                    stream: SeedStream) -> np.ndarray:
    if stddev < 0:
        raise InvalidShape(f"stddev must be nonnegative, got {stddev}")
    return mean + stddev * stream.generator().standard_normal((rows, cols))
