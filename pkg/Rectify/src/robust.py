import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

import numpy as np

from src.errors import BudgetExceeded, DegenerateSum, InvalidShape, NoConvergence, RankDeficientHidden
from src.initializers import TensorInitConfig
from src.model import Activation, NetworkWeights
from src.numerics import gaussian_matrix, solve_exact, svd
from src.recover import RecoveryConfig, RecoveryReport, recover_exact, regress_U
from src.utils import MatrixValidator, SeedStream, normalize_rows

logger = logging.getLogger(__name__)

GRID_BUDGET = 10_000_000
RPCA_PENALTY_HEADROOM = 1e3


@dataclass
class SketchConfig:
    sketch_rows: int
    stream: SeedStream
    refine: bool = True
    refine_quantile: float = 0.5
    noise_guesses: int = 8

    def __post_init__(self):
        if not 0 < self.refine_quantile < 1:
            raise InvalidShape("refine_quantile must lie in (0, 1)")

    @staticmethod
    def default_rows(k: int) -> int:
        return max(k + 1, 8)


@dataclass
class GuessGrid:
    sigma_min_guess: float
    kappa_guess: float
    eps: float
    grid_base: float
    max_exponent: int
    oracle_m: Optional[np.ndarray] = None
    signs: bool = False
    budget: int = GRID_BUDGET

    def __post_init__(self):
        if self.grid_base <= 1:
            raise InvalidShape("grid_base must exceed 1")
        if not 0 < self.eps <= 0.25:
            raise InvalidShape("eps must lie in (0, 1/4]")
        if self.sigma_min_guess <= 0:
            raise InvalidShape("sigma_min_guess must be positive")

    @staticmethod
    def default_base(eps: float, k: int, c: float = 1.0) -> float:
        return 1.0 + eps ** 4 / (c * k ** 4)

    def values(self) -> np.ndarray:
        mags = [1.0 / (self.sigma_min_guess * self.grid_base ** i) for i in range(self.max_exponent + 1)]
        if self.signs:
            mags = mags + [-v for v in mags]
        return np.array(mags)


@dataclass
class HalfspaceProblem:
    x: np.ndarray
    y: np.ndarray
    omega: float = 1.0
    eta: float = 0.0

    def __post_init__(self):
        self.x = MatrixValidator.as_matrix(self.x, 'X')
        self.y = MatrixValidator.as_vector(self.y, 'labels')
        if self.y.size != self.x.shape[1]:
            raise InvalidShape(f"{self.y.size} labels for {self.x.shape[1]} examples")
        if np.any(np.abs(self.y) != 1):
            raise InvalidShape("labels must be +1 or -1")


def learn_halfspace(p: HalfspaceProblem) -> np.ndarray:
    """argmax over the unit ball of sum_q y_q <w, x_q>"""
    if p.x.shape[1] < 1:
        raise InvalidShape("need at least one example")
    s = p.x @ p.y
    norm = np.linalg.norm(s)
    if norm == 0:
        raise DegenerateSum("label-weighted example sum is zero")
    return s / norm


def labels_from(values: np.ndarray) -> np.ndarray:
    return np.where(values > 0, 1.0, -1.0)


def smoothing_stddev(g_norm_guess: float, eps: float, kappa: float, k: int, n: int) -> float:
    return eps ** -2 * kappa ** 2 * k * g_norm_guess / math.sqrt(n)


def smooth_labels(m_sa, g_norm_guess: float, eps: float, kappa: float, k: int,
                  stream: SeedStream) -> np.ndarray:
    m_sa = MatrixValidator.as_matrix(m_sa, 'M S A')
    stddev = smoothing_stddev(g_norm_guess, eps, kappa, k, m_sa.shape[1])
    if stddev == 0:
        return m_sa.copy()
    return m_sa + gaussian_matrix(m_sa.shape[0], m_sa.shape[1], 0.0, stddev, stream)


def sketch_output(a, cfg: SketchConfig) -> Tuple[np.ndarray, np.ndarray]:
    a = MatrixValidator.as_matrix(a, 'A')
    s = gaussian_matrix(cfg.sketch_rows, a.shape[0], 0.0, 1.0, cfg.stream.child('sketch'))
    # entries N(0, 1/k) with k the sketch width
    s /= math.sqrt(cfg.sketch_rows)
    return s, s @ a


def enumerate_inverse_guesses(g: GuessGrid, k: int, sketch_rows: int) -> Iterator[np.ndarray]:
    if g.oracle_m is not None:
        oracle = MatrixValidator.as_matrix(g.oracle_m, 'oracle M')
        if oracle.shape != (k, sketch_rows):
            raise InvalidShape(f"oracle M is {oracle.shape}, expected {(k, sketch_rows)}")
        yield oracle
        return
    values = g.values()
    entries = k * sketch_rows
    total = values.size ** entries
    if total > g.budget:
        raise BudgetExceeded(f"guess grid of {values.size}^{entries} matrices exceeds {g.budget}")
    for combo in itertools.product(values, repeat=entries):
        yield np.array(combo).reshape(k, sketch_rows)


def _noise_levels(sa: np.ndarray, guesses: int) -> List[float]:
    top = float(np.linalg.norm(sa, axis=0).max())
    half = guesses // 2
    return [0.0] + [top * 2.0 ** j for j in range(-half, guesses - half)]


def _refine_row(w: np.ndarray, target: np.ndarray, x: np.ndarray, f: Activation,
                quantile: float) -> np.ndarray:
    """Regress a hidden row on columns deep inside the estimated halfspace"""
    proj = w @ x
    positive = proj[proj > 0]
    if positive.size < x.shape[0]:
        return w
    chosen = proj > np.quantile(positive, quantile)
    if chosen.sum() < x.shape[0]:
        return w
    z, _ = solve_exact(x[:, chosen].T, f.inverse_positive(target[chosen]))
    norm = np.linalg.norm(z)
    return z / norm if norm > 0 else w


@dataclass
class GuessOutcome:
    index: int
    residual: float
    weights: Optional[NetworkWeights] = None
    guess: Tuple[int, int] = (0, 0)


def _evaluate_guess(index: int, m: np.ndarray, g_level: float, a, x, sa, k: int,
                    grid: GuessGrid, cfg: SketchConfig, f: Activation,
                    stream: SeedStream) -> GuessOutcome:
    msa = m @ sa
    smoothed = smooth_labels(msa, g_level, grid.eps, grid.kappa_guess, k, stream)
    rows = np.zeros((k, x.shape[0]))
    try:
        for p in range(k):
            w = learn_halfspace(HalfspaceProblem(x, labels_from(smoothed[p])))
            if cfg.refine:
                w = _refine_row(w, msa[p], x, f, cfg.refine_quantile)
            rows[p] = w
        v = normalize_rows(rows)
        u = regress_U(a, x, v, f)
    except (DegenerateSum, RankDeficientHidden) as e:
        logger.debug("guess %d skipped: %s", index, e)
        return GuessOutcome(index, math.inf)
    weights = NetworkWeights(u, v)
    return GuessOutcome(index, float(np.linalg.norm(a - weights.output(x, f))), weights)


def fpt_noisy_recover(a, x, k: int, g: GuessGrid, cfg: SketchConfig,
                      f: Optional[Activation] = None, threads: int = 1) -> NetworkWeights:
    """Sketch, guess the pseudo-inverse, learn each hidden halfspace, keep the best residual"""
    a = MatrixValidator.as_matrix(a, 'A')
    x = MatrixValidator.as_matrix(x, 'X')
    MatrixValidator.require_same_columns(a, x)
    f = f or Activation.relu()
    if cfg.sketch_rows < k + 1 and g.oracle_m is None:
        raise InvalidShape(f"sketch_rows must be at least k+1 = {k + 1}")
    _, sa = sketch_output(a, cfg)
    levels = _noise_levels(sa, cfg.noise_guesses)

    jobs = []
    for gi, m in enumerate(enumerate_inverse_guesses(g, k, cfg.sketch_rows)):
        for li, level in enumerate(levels):
            jobs.append((len(jobs), m, level, (gi, li)))
    logger.info("fpt-noisy: %d candidates (%d noise levels)", len(jobs), len(levels))

    def run(job):
        index, m, level, guess = job
        out = _evaluate_guess(index, m, level, a, x, sa, k, g, cfg, f,
                              cfg.stream.child(f"smooth{guess[0]}_{guess[1]}"))
        out.guess = guess
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            outcomes = list(executor.map(run, jobs))
    else:
        outcomes = [run(job) for job in jobs]

    best = min(outcomes, key=lambda o: (o.residual, o.index))
    if best.weights is None:
        raise DegenerateSum("no guess produced a usable hidden layer")
    logger.info("fpt-noisy: best guess %s, residual %.6g", best.guess, best.residual)
    return best.weights


@dataclass
class RpcaResult:
    low_rank: np.ndarray
    sparse: np.ndarray
    iterations: int
    history: List[float] = field(default_factory=list)
    converged: bool = True
    rejected: int = 0  # iterates dropped because the residual rose


def _shrink(m: np.ndarray, t: float) -> np.ndarray:
    return np.sign(m) * np.maximum(np.abs(m) - t, 0.0)


def _svt(m: np.ndarray, t: float) -> np.ndarray:
    result = svd(m)
    s = np.maximum(result.singular_values - t, 0.0)
    keep = s > 0
    return (result.left[:, keep] * s[keep]) @ result.right[keep]


def rpca(a, lam: Optional[float] = None, tol: float = 1e-9, max_iters: int = 1000,
         rho: float = 1.5) -> Tuple[np.ndarray, np.ndarray]:
    """Principal component pursuit: min ||Y||_* + lam ||E||_1 subject to Y + E = A"""
    result = rpca_detailed(a, lam, tol, max_iters, rho)
    return result.low_rank, result.sparse


def rpca_detailed(a, lam: Optional[float] = None, tol: float = 1e-9, max_iters: int = 1000,
                  rho: float = 1.5) -> RpcaResult:
    """Inexact augmented Lagrangian with singular-value and entrywise shrinkage.

    The residual history never increases: an iterate whose residual ||A - L - S|| rises
    is dropped and recomputed from the last accepted one under a larger penalty mu,
    which may then exceed its usual ceiling by up to RPCA_PENALTY_HEADROOM.
    """
    a = MatrixValidator.as_matrix(a, 'A')
    if max_iters < 1:
        raise InvalidShape("rpca needs max_iters >= 1")
    lam = lam if lam is not None else 1.0 / math.sqrt(max(a.shape))
    norm_fro = float(np.linalg.norm(a))
    if norm_fro == 0:
        return RpcaResult(np.zeros_like(a), np.zeros_like(a), 0)
    norm_two = float(np.linalg.norm(a, 2))
    y = a / max(norm_two, float(np.abs(a).max()) / lam)
    mu = 1.25 / norm_two
    mu_bar = mu * 1e7
    mu_cap = mu_bar * RPCA_PENALTY_HEADROOM
    low, sparse = np.zeros_like(a), np.zeros_like(a)
    history: List[float] = []
    rejected = 0
    for it in range(1, max_iters + 1):
        trial_sparse = _shrink(a - low + y / mu, lam / mu)
        trial_low = _svt(a - trial_sparse + y / mu, 1.0 / mu)
        gap = a - trial_low - trial_sparse
        residual = float(np.linalg.norm(gap)) / norm_fro
        if history and residual > history[-1]:
            logger.debug("rpca iter %d: residual %.3e rose, retrying with mu %.3e", it, residual, mu * rho)
            if mu >= mu_cap:
                break
            mu = min(mu * rho, mu_cap)
            rejected += 1
            continue
        low, sparse = trial_low, trial_sparse
        y = y + mu * gap
        mu = max(mu, min(mu * rho, mu_bar))
        history.append(residual)
        logger.debug("rpca iter %d: residual %.3e", it, residual)
        if residual <= tol:
            return RpcaResult(low, sparse, it, history, rejected=rejected)
    partial = RpcaResult(low, sparse, it, history, converged=False, rejected=rejected)
    logger.warning("rpca stopped after %d iterations at residual %.3e", it, history[-1])
    raise NoConvergence(f"rpca did not reach {tol} in {it} iterations",
                        partial=partial, residual=history[-1])


def truncate_rank(a: np.ndarray, k: int) -> np.ndarray:
    result = svd(a)
    return (result.left[:, :k] * result.singular_values[:k]) @ result.right[:k]


def recover_sparse(a, x, k: int, cfg: RecoveryConfig, stream: SeedStream,
                   f: Optional[Activation] = None, init_cfg: Optional[TensorInitConfig] = None,
                   lam: Optional[float] = None, rpca_tol: float = 1e-9, rpca_max_iters: int = 1000,
                   rpca_rho: float = 1.5, init_margin: float = 0.3,
                   report: Optional[RecoveryReport] = None, whiten: bool = False) -> NetworkWeights:
    """Separate sparse corruption with rpca, then run exact recovery on the low-rank part"""
    a = MatrixValidator.as_matrix(a, 'A')
    low, sparse = rpca(a, lam, rpca_tol, rpca_max_iters, rpca_rho)
    logger.info("rpca: %d nonzero sparse entries", int(np.count_nonzero(sparse)))
    low = truncate_rank(low, k)
    init_cfg = init_cfg or TensorInitConfig(order=2)
    return recover_exact(low, x, k, cfg, stream.child('exact'), f, init_cfg,
                         init_margin=init_margin, report=report, whiten=whiten)
