import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Tuple

import numpy as np

from src.errors import BudgetExceeded, RankDeficientBasis
from src.numerics import RANK_TOL, LinearProgram, lp_feasible, rank
from src.utils import MatrixValidator

logger = logging.getLogger(__name__)

MAX_SUBSETS = 10_000_000
BATCH = 4096


@dataclass(frozen=True)
class SignPattern:
    """Coordinates (0-based) where a vector is strictly positive"""

    length: int
    positives: Tuple[int, ...]

    def __post_init__(self):
        pos = tuple(sorted(set(int(i) for i in self.positives)))
        if pos and (pos[0] < 0 or pos[-1] >= self.length):
            raise ValueError(f"pattern index out of range for length {self.length}")
        object.__setattr__(self, 'positives', pos)

    @classmethod
    def from_mask(cls, mask) -> 'SignPattern':
        mask = np.asarray(mask, dtype=bool)
        return cls(mask.size, tuple(np.flatnonzero(mask)))

    @property
    def mask(self) -> np.ndarray:
        out = np.zeros(self.length, dtype=bool)
        out[list(self.positives)] = True
        return out

    @property
    def size(self) -> int:
        return len(self.positives)

    def sort_key(self) -> Tuple[int, Tuple[int, ...]]:
        return (len(self.positives), self.positives)

    def __lt__(self, other: 'SignPattern') -> bool:
        return self.sort_key() < other.sort_key()


def sign_pattern(v, tol: float = 0.0) -> SignPattern:
    v = MatrixValidator.as_vector(v, 'v')
    return SignPattern.from_mask(v > tol)


def pattern_program(basis: np.ndarray, pattern: SignPattern) -> LinearProgram:
    """{(w basis)_j >= 1 on the pattern, <= 0 elsewhere} in the variables w"""
    cols = basis.T
    mask = pattern.mask
    return LinearProgram.from_blocks(basis.shape[0], [
        (cols[mask], '>=', 1.0),
        (cols[~mask], '<=', 0.0),
    ])


def is_realizable(basis: np.ndarray, pattern: SignPattern, max_pivots: int = 50000) -> bool:
    return lp_feasible(pattern_program(basis, pattern), max_pivots=max_pivots) is not None


def _subset_candidates(basis: np.ndarray, subsets: List[Tuple[int, ...]],
                       cond_limit: float) -> Iterable[Tuple[int, ...]]:
    k, n = basis.shape
    idx = np.array(subsets)
    cols = idx % n
    rhs = (idx < n).astype(float)
    # a coordinate tight at both 1 and 0 is contradictory
    sorted_cols = np.sort(cols, axis=1)
    consistent = np.all(np.diff(sorted_cols, axis=1) != 0, axis=1)
    systems = basis.T[cols]  # (batch, k, k): row r is basis[:, col_r]
    sv = np.linalg.svd(systems, compute_uv=False)
    ok = consistent & (sv[:, -1] > sv[:, 0] / cond_limit) & np.any(rhs > 0, axis=1)
    if not np.any(ok):
        return []
    w = np.linalg.solve(systems[ok], rhs[ok][..., None])[..., 0]
    y = w @ basis
    scale = np.maximum(1.0, np.abs(y).max(axis=1, keepdims=True))
    positive = y > 1e-9 * scale
    return [tuple(np.flatnonzero(row)) for row in positive]


def enumerate_subspace_patterns(basis, max_subsets: int = MAX_SUBSETS,
                                threads: int = 1, max_pivots: int = 50000,
                                rank_tol: float = RANK_TOL) -> List[SignPattern]:
    """Every sign pattern realized by a vector w @ basis, sorted by (size, indices).

    Candidates come from the vertices of the {>= 1, <= 0} arrangement (one square
    system per k-subset of the 2n tight constraints); each candidate is then
    confirmed with a feasibility LP.
    """
    basis = MatrixValidator.as_matrix(basis, 'basis')
    k, n = basis.shape
    if k < 1 or rank(basis, rank_tol) < k:
        raise RankDeficientBasis(f"basis of {k} rows has rank below {k}")
    total = math.comb(2 * n, k)
    if total > max_subsets:
        raise BudgetExceeded(f"C({2 * n},{k}) = {total} subsets exceeds limit {max_subsets}")

    candidates = set()
    combos = itertools.combinations(range(2 * n), k)
    while True:
        batch = list(itertools.islice(combos, BATCH))
        if not batch:
            break
        candidates.update(_subset_candidates(basis, batch, cond_limit=1e12))
    candidates.discard(())

    ordered = sorted((SignPattern(n, c) for c in candidates), key=SignPattern.sort_key)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            verdicts = list(executor.map(lambda p: is_realizable(basis, p, max_pivots), ordered))
    else:
        verdicts = [is_realizable(basis, p, max_pivots) for p in ordered]

    patterns = [SignPattern(n, ())] + [p for p, ok in zip(ordered, verdicts) if ok]
    logger.info("sign patterns: %d candidates, %d realizable (k=%d, n=%d)",
                len(ordered), len(patterns), k, n)
    return patterns


def brute_force_patterns(basis, samples: int, rng: np.random.Generator) -> List[SignPattern]:
    """Monte-Carlo lower bound on the realizable pattern set"""
    basis = MatrixValidator.as_matrix(basis, 'basis')
    k, n = basis.shape
    found = {()}
    done = 0
    while done < samples:
        size = min(100_000, samples - done)
        y = rng.standard_normal((size, k)) @ basis
        found.update(tuple(np.flatnonzero(row)) for row in np.unique(y > 0, axis=0))
        done += size
    return sorted((SignPattern(n, c) for c in found), key=SignPattern.sort_key)
