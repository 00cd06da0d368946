"""Finishing stages: turn approximate rows of V into exact (or noise-limited) weights.

The exact path uses the fact that every row of f(V X) lies in the row span of
A = U f(V X); knowing (approximately) where a row vanishes pins it down as the
unique direction of that span with those zeros.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar
from sklearn.linear_model import LinearRegression, RANSACRegressor

from src.errors import (AmbiguousSign, InvalidShape, NoFeasibleSign, NoSolution,
                        RankDeficientHidden, TooFewClusters)
from src.initializers import TensorInitConfig, init_ica, init_tensor
from src.model import Activation, NetworkWeights, estimate_covariance, symmetric_power, whiten_input
from src.numerics import RANK_TOL, cond_number, orthonormal_rows, rank, residual_energy, solve_exact
from src.signpat import SignPattern
from src.utils import MatrixValidator, SeedStream, normalize_rows

logger = logging.getLogger(__name__)

SUPPORT_TOL = 1e-9


@dataclass
class RecoveryConfig:
    tau_scale: float = 1e-6
    tau: Optional[float] = None  # absolute threshold; overrides tau_scale
    ell: Optional[int] = None
    zero_tol: float = 1e-8
    margin: float = 0.0
    sigma_noise: Optional[float] = None

    def __post_init__(self):
        if self.tau_scale <= 0 or (self.tau is not None and self.tau <= 0):
            raise InvalidShape("tau must be positive")
        if self.ell is not None and self.ell < 1:
            raise InvalidShape("ell must be at least 1")
        if self.zero_tol <= 0:
            raise InvalidShape("zero_tol must be positive")
        if self.margin < 0:
            raise InvalidShape("margin must be nonnegative")

    @classmethod
    def from_settings(cls, section: Dict, **overrides) -> 'RecoveryConfig':
        cfg = cls(tau_scale=section['tau_scale'], ell=section['ell'],
                  zero_tol=section['zero_tol'], margin=section['margin'])
        for key, value in overrides.items():
            setattr(cfg, key, value)
        cfg.__post_init__()
        return cfg

    def with_margin(self, margin: float) -> 'RecoveryConfig':
        return RecoveryConfig(self.tau_scale, self.tau, self.ell, self.zero_tol, margin, self.sigma_noise)


@dataclass
class SignResolution:
    xi: np.ndarray
    feasible_pattern: List[SignPattern]
    scores: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))  # (a_plus, a_minus) per row

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float)
        if np.any(np.abs(self.xi) != 1):
            raise InvalidShape("sign entries must be +1 or -1")


@dataclass
class RecoveryReport:
    """Stage diagnostics collected by the pipelines"""

    weights: Optional[NetworkWeights] = None
    residual: float = float('nan')
    ell: int = 0
    xi: List[int] = field(default_factory=list)
    chosen_r: List[int] = field(default_factory=list)
    support_sizes: List[int] = field(default_factory=list)
    sign_scores: List[Tuple[float, float]] = field(default_factory=list)
    init_eigenvalues: List[float] = field(default_factory=list)
    init_converged: bool = True

    def to_metrics(self) -> Dict[str, object]:
        metrics = {'residual': self.residual, 'ell': self.ell, 'init_converged': self.init_converged}
        for i, xi in enumerate(self.xi):
            metrics[f"xi_{i}"] = xi
        for i, size in enumerate(self.support_sizes):
            metrics[f"support_{i}"] = size
        for i, (plus, minus) in enumerate(self.sign_scores):
            metrics[f"a_plus_{i}"] = plus
            metrics[f"a_minus_{i}"] = minus
        return metrics


def default_ell(n: int, d: int, k: int, kappa: float) -> int:
    return int(min(n, 200 * d * k * math.ceil(max(kappa, 1.0)) ** 2))


def _prefix(a: np.ndarray, x: np.ndarray, ell: Optional[int], k: int,
            kappa: float) -> Tuple[np.ndarray, np.ndarray]:
    n = x.shape[1]
    ell = ell or default_ell(n, x.shape[0], k, kappa)
    ell = min(ell, n)
    return a[:, :ell], x[:, :ell]


def _threshold(proj: np.ndarray, cfg: RecoveryConfig) -> float:
    if cfg.tau is not None:
        return cfg.tau
    positive = proj[proj > 0]
    return cfg.tau_scale * (float(np.median(positive)) if positive.size else 1.0)


def _null_dimension(cols: np.ndarray, zero_tol: float) -> int:
    if cols.shape[1] == 0:
        return cols.shape[0]
    sv = np.linalg.svd(cols, compute_uv=False)
    return cols.shape[0] - int(np.sum(sv > zero_tol))


def _zero_system(basis: np.ndarray, zero_mask: np.ndarray,
                 zero_tol: float) -> Optional[Tuple[np.ndarray, int]]:
    """First r with a c, c_r = 1, (c basis)_j = 0 on the zero mask; (c, r) or None"""
    k = basis.shape[0]
    cols = basis[:, zero_mask]
    for r in range(k):
        others = [i for i in range(k) if i != r]
        c = np.zeros(k)
        c[r] = 1.0
        if others and cols.shape[1] > 0:
            coef, _ = solve_exact(cols[others].T, -cols[r])
            c[others] = coef
        resid = float(np.linalg.norm(c @ cols)) if cols.shape[1] else 0.0
        if resid <= zero_tol * np.linalg.norm(c):
            return c, r
    return None


def _nonnegative_row(h: np.ndarray) -> np.ndarray:
    return -h if h.sum() < 0 else h


def _fit_row(x_s: np.ndarray, h_s: np.ndarray, f: Activation) -> np.ndarray:
    """z with f(z x_j) proportional to h_j on the support, up to the scale f cannot absorb"""
    if f.is_homogeneous:
        z, _ = solve_exact(x_s.T, f.inverse_positive(h_s))
        return z

    def misfit(log_scale):
        target = f.inverse_positive(h_s * math.exp(-log_scale))
        _, resid = solve_exact(x_s.T, target)
        return resid / max(np.linalg.norm(target), 1e-300)

    centre = math.log(float(h_s.max()))
    grid = centre + np.linspace(-20.0, 20.0, 81)
    best = float(grid[np.argmin([misfit(g) for g in grid])])
    found = minimize_scalar(misfit, bounds=(best - 0.5, best + 0.5), method='bounded',
                            options={'xatol': 1e-12})
    z, _ = solve_exact(x_s.T, f.inverse_positive(h_s * math.exp(-found.x)))
    return z


def _row_from_rectified(h: np.ndarray, x_bar: np.ndarray, f: Activation) -> Tuple[np.ndarray, int]:
    support = h > SUPPORT_TOL * max(float(np.abs(h).max()), 1e-300)
    if support.sum() < x_bar.shape[0]:
        raise NoSolution(f"support of size {int(support.sum())} cannot fix a row in dimension {x_bar.shape[0]}")
    z = _fit_row(x_bar[:, support], h[support], f)
    norm = np.linalg.norm(z)
    if norm == 0:
        raise NoSolution("recovered row is zero")
    return z / norm, int(support.sum())


def _resolve_row(v_hat: np.ndarray, basis: np.ndarray, x_bar: np.ndarray,
                 col_norms: np.ndarray, cfg: RecoveryConfig, f: Activation, index: int):
    feasible = {}
    for q in (1.0, -1.0):
        proj = q * (v_hat @ x_bar)
        tau = _threshold(proj, cfg)
        zero_mask = proj <= tau - cfg.margin * col_norms
        hit = _zero_system(basis, zero_mask, cfg.zero_tol)
        if hit is not None:
            feasible[q] = hit
            # more than one direction vanishing on the zero set leaves the row undetermined
            if _null_dimension(basis[:, zero_mask], cfg.zero_tol) > 1:
                raise AmbiguousSign(f"row {index} is not pinned down by its zero set", row=index)
    if len(feasible) == 2:
        raise AmbiguousSign(f"both signs feasible for row {index}", row=index)
    if not feasible:
        raise NoFeasibleSign(f"neither sign feasible for row {index}", row=index)
    (q, (c, r)), = feasible.items()
    h = _nonnegative_row(c @ basis)
    row, support = _row_from_rectified(h, x_bar, f)
    return row, int(q), r, support


def recover_signs_exact(a, x, rows, cfg: RecoveryConfig, f: Optional[Activation] = None,
                        report: Optional[RecoveryReport] = None) -> np.ndarray:
    """Exact rows of V from rows within eps of xi_i V_i (A noiseless)"""
    a = MatrixValidator.as_matrix(a, 'A')
    x = MatrixValidator.as_matrix(x, 'X')
    rows = normalize_rows(MatrixValidator.as_matrix(rows, 'rows'))
    MatrixValidator.require_same_columns(a, x)
    if rows.shape[1] != x.shape[0]:
        raise InvalidShape(f"rows have {rows.shape[1]} columns, X has {x.shape[0]} rows")
    f = f or Activation.relu()
    k = rows.shape[0]
    a_bar, x_bar = _prefix(a, x, cfg.ell, rows.shape[0], cond_number(rows))
    basis = orthonormal_rows(a_bar)
    if basis.shape[0] < k:
        raise RankDeficientHidden(f"row span of A has dimension {basis.shape[0]} < k = {k}")
    col_norms = np.linalg.norm(x_bar, axis=0)

    out = np.zeros_like(rows)
    for i in range(k):
        out[i], q, r, support = _resolve_row(rows[i], basis, x_bar, col_norms, cfg, f, i)
        logger.debug("row %d: sign %+d, r=%d, support %d", i, q, r, support)
        if report is not None:
            report.xi.append(q)
            report.chosen_r.append(r)
            report.support_sizes.append(support)
    if report is not None:
        report.ell = x_bar.shape[1]
    return out


def recover_pattern_rows(a, patterns: Sequence[SignPattern], cfg: RecoveryConfig) -> np.ndarray:
    """Nonnegative rows of the span of A with the given supports"""
    a = MatrixValidator.as_matrix(a, 'A')
    basis = orthonormal_rows(a)
    out = np.zeros((len(patterns), a.shape[1]))
    for i, pattern in enumerate(patterns):
        if pattern.length != a.shape[1]:
            raise InvalidShape(f"pattern length {pattern.length} != {a.shape[1]} columns")
        if pattern.size == 0:
            raise NoSolution("the empty pattern gives only the zero row")
        hit = _zero_system(basis, ~pattern.mask, cfg.zero_tol)
        if hit is None:
            raise NoSolution(f"pattern {i} is not realized in the row span of A", row=i)
        out[i] = _nonnegative_row(hit[0] @ basis)
    return out


def _least_squares_U(a, x, v, f: Activation, label: str) -> np.ndarray:
    a = MatrixValidator.as_matrix(a, 'A')
    x = MatrixValidator.as_matrix(x, 'X')
    v = MatrixValidator.as_matrix(v, 'V')
    hidden = f.forward(v @ x)
    r = rank(hidden, RANK_TOL)
    if r < v.shape[0]:
        raise RankDeficientHidden(f"f(VX) has rank {r} < k = {v.shape[0]}")
    u_t, resid = solve_exact(hidden.T, a.T)
    logger.info("%s: residual %.3e (relative %.3e)", label, resid,
                resid / max(float(np.linalg.norm(a)), 1e-300))
    return u_t.T


def solve_U(a, x, v, f: Optional[Activation] = None) -> np.ndarray:
    return _least_squares_U(a, x, v, f or Activation.relu(), 'solve_U')


def regress_U(a, x, v, f: Optional[Activation] = None) -> np.ndarray:
    """Least-squares output layer under iid output noise"""
    return _least_squares_U(a, x, v, f or Activation.relu(), 'regress_U')


def _finish(a, x, v: np.ndarray, f: Activation, solver=solve_U,
            report: Optional[RecoveryReport] = None) -> NetworkWeights:
    u = solver(a, x, v, f)
    weights = NetworkWeights(u, normalize_rows(v))
    if report is not None:
        report.weights = weights
        report.residual = float(np.linalg.norm(a - weights.output(x, f)))
    return weights


def recover_orthonormal(a, x, k: int, cfg: RecoveryConfig, stream: SeedStream,
                        f: Optional[Activation] = None, init_margin: float = 0.3,
                        ica_max_iter: int = 1000, ica_tol: float = 1e-8, ica_restarts: int = 5,
                        report: Optional[RecoveryReport] = None) -> NetworkWeights:
    """Exact recovery for orthonormal V from an ICA estimate of the mixing"""
    a = MatrixValidator.as_matrix(a, 'A')
    x = MatrixValidator.as_matrix(x, 'X')
    MatrixValidator.require_same_columns(a, x)
    f = f or Activation.relu()
    sketch, mixing = init_ica(a, x, k, stream.child('ica'), ica_max_iter, ica_tol, ica_restarts)
    if np.linalg.matrix_rank(mixing) < k:
        mixing = mixing + 1e-12 * stream.child('perturb').generator().standard_normal(mixing.shape)
    hidden = np.linalg.solve(mixing, sketch @ a)

    approx = np.zeros((k, x.shape[0]))
    for i in range(k):
        h = _nonnegative_row(hidden[i])
        positive = h[h > 0]
        if positive.size < x.shape[0]:
            raise NoSolution(f"ICA source {i} has too few positive entries")
        active = h >= np.median(positive)
        approx[i], _ = solve_exact(x[:, active].T, f.inverse_positive(h[active]))
    rows = recover_signs_exact(a, x, approx, cfg.with_margin(max(cfg.margin, init_margin)), f, report)
    return _finish(a, x, rows, f, solve_U, report)


def recover_signs_noisy(a, x, rows, cfg: RecoveryConfig,
                        f: Optional[Activation] = None) -> SignResolution:
    """xi_i = +1 iff f(v_i X) explains A better than f(-v_i X), others held at both signs"""
    a = MatrixValidator.as_matrix(a, 'A')
    x = MatrixValidator.as_matrix(x, 'X')
    rows = normalize_rows(MatrixValidator.as_matrix(rows, 'rows'))
    MatrixValidator.require_same_columns(a, x)
    f = f or Activation.relu()
    a_bar, x_bar = _prefix(a, x, cfg.ell, rows.shape[0], cond_number(rows))
    proj = rows @ x_bar
    plus, minus = f.forward(proj), f.forward(-proj)

    k = rows.shape[0]
    xi = np.ones(k)
    patterns, scores = [], np.zeros((k, 2))
    for i in range(k):
        others = [j for j in range(k) if j != i]
        shared = np.vstack([plus[others], minus[others]]) if others else np.zeros((0, x_bar.shape[1]))
        a_plus = float(residual_energy(a_bar, np.vstack([shared, plus[i:i + 1]])).sum())
        a_minus = float(residual_energy(a_bar, np.vstack([shared, minus[i:i + 1]])).sum())
        xi[i] = 1.0 if a_plus < a_minus else -1.0
        scores[i] = (a_plus, a_minus)
        patterns.append(SignPattern.from_mask(xi[i] * proj[i] > 0))
        logger.debug("row %d: a+ %.6g a- %.6g -> %+d", i, a_plus, a_minus, int(xi[i]))
    return SignResolution(xi, patterns, scores)


@dataclass(frozen=True)
class Whitening:
    """Sample-covariance whitening of X, with the maps that carry rows of V across it"""

    sigma_hat: np.ndarray

    @classmethod
    def from_input(cls, x, f: Activation) -> 'Whitening':
        if not f.is_homogeneous:
            raise InvalidShape(f"whitening needs a homogeneous activation, got {f.descriptor}")
        return cls(estimate_covariance(x))

    def input(self, x) -> np.ndarray:
        return whiten_input(x, self.sigma_hat)

    def rows_in(self, rows) -> np.ndarray:
        # v x = (v Sigma^{1/2}) (Sigma^{-1/2} x)
        return normalize_rows(MatrixValidator.as_matrix(rows, 'rows') @ symmetric_power(self.sigma_hat, 0.5))

    def weights_out(self, w: NetworkWeights, f: Activation) -> NetworkWeights:
        return NetworkWeights.from_unnormalized(w.u, w.v @ symmetric_power(self.sigma_hat, -0.5), f)


def _whitened(x, f: Activation, whiten: bool, initial_rows):
    if not whiten:
        return x, initial_rows, None
    whitening = Whitening.from_input(x, f)
    logger.info("whitening X: kappa(Sigma_hat) %.4g", cond_number(whitening.sigma_hat))
    rows = whitening.rows_in(initial_rows) if initial_rows is not None else None
    return whitening.input(x), rows, whitening


def _unwhitened(weights: NetworkWeights, whitening: Optional[Whitening], f: Activation,
                report: Optional[RecoveryReport]) -> NetworkWeights:
    if whitening is None:
        return weights
    weights = whitening.weights_out(weights, f)
    if report is not None:
        report.weights = weights
    return weights


def _initial_rows(a, x, k, init_cfg: TensorInitConfig, stream: SeedStream, f: Activation,
                  initial_rows, report: Optional[RecoveryReport]) -> np.ndarray:
    if initial_rows is not None:
        return MatrixValidator.as_matrix(initial_rows, 'initial rows')
    init = init_tensor(a, x, k, init_cfg, stream.child('init'), f)
    if report is not None:
        report.init_eigenvalues = init.eigenvalues.tolist()
        report.init_converged = init.converged
    return init.rows


def recover_exact(a, x, k: int, cfg: RecoveryConfig, stream: SeedStream,
                  f: Optional[Activation] = None, init_cfg: Optional[TensorInitConfig] = None,
                  init_margin: float = 0.3, initial_rows=None,
                  report: Optional[RecoveryReport] = None, whiten: bool = False) -> NetworkWeights:
    """Noiseless pipeline: moment initializer, exact sign/row recovery, linear solve for U.

    With whiten=True, X is replaced by Sigma_hat^{-1/2} X first and the rows are mapped
    back at the end; initial_rows are given in the original coordinates.
    """
    a = MatrixValidator.as_matrix(a, 'A')
    x = MatrixValidator.as_matrix(x, 'X')
    f = f or Activation.relu()
    margin = cfg.margin if initial_rows is not None else max(cfg.margin, init_margin)
    x, initial_rows, whitening = _whitened(x, f, whiten, initial_rows)
    rows = _initial_rows(a, x, k, init_cfg or TensorInitConfig(), stream, f, initial_rows, report)
    v = recover_signs_exact(a, x, rows, cfg.with_margin(margin), f, report)
    weights = _finish(a, x, v, f, solve_U, report)
    return _unwhitened(weights, whitening, f, report)


def recover_noisy(a, x, k: int, cfg: RecoveryConfig, stream: SeedStream,
                  f: Optional[Activation] = None, init_cfg: Optional[TensorInitConfig] = None,
                  initial_rows=None, report: Optional[RecoveryReport] = None,
                  whiten: bool = False) -> NetworkWeights:
    """iid-noise pipeline: moment initializer, projection sign test, regression for U"""
    a = MatrixValidator.as_matrix(a, 'A')
    x = MatrixValidator.as_matrix(x, 'X')
    f = f or Activation.relu()
    x, initial_rows, whitening = _whitened(x, f, whiten, initial_rows)
    rows = normalize_rows(_initial_rows(a, x, k, init_cfg or TensorInitConfig(), stream, f,
                                        initial_rows, report))
    signs = recover_signs_noisy(a, x, rows, cfg, f)
    if report is not None:
        report.xi = signs.xi.astype(int).tolist()
        report.sign_scores = [tuple(s) for s in signs.scores]
    weights = _finish(a, x, rows * signs.xi[:, None], f, regress_U, report)
    return _unwhitened(weights, whitening, f, report)


def _cluster_columns(a: np.ndarray, tol_match: float) -> List[np.ndarray]:
    """Groups of nonzero columns that are positive multiples of one another (size >= 2)"""
    norms = np.linalg.norm(a, axis=0)
    live = np.flatnonzero(norms > 1e-12 * max(float(norms.max()), 1e-300))
    units = a[:, live] / norms[live]
    unassigned = np.ones(live.size, dtype=bool)
    clusters = []
    for start in range(live.size):
        if not unassigned[start]:
            continue
        open_idx = np.flatnonzero(unassigned)
        cos = units[:, start] @ units[:, open_idx]
        members = open_idx[cos >= 1.0 - tol_match]
        unassigned[members] = False
        if members.size >= 2:
            clusters.append(live[members])
    clusters.sort(key=lambda c: (-c.size, c[0]))
    return clusters


def _consensus_rows(x_s: np.ndarray, target: np.ndarray, trials: int, seed: int,
                    max_models: int = 2) -> List[np.ndarray]:
    """Up to max_models linear relations w x_j = target_j, each fitted by RANSAC then refit on its inliers"""
    d = x_s.shape[0]
    models = []
    remaining = np.arange(target.size)
    threshold = 1e-7 * max(1.0, float(np.median(np.abs(target))))
    while len(models) < max_models and remaining.size >= d + 1:
        ransac = RANSACRegressor(LinearRegression(fit_intercept=False), min_samples=d,
                                 residual_threshold=threshold, max_trials=trials, random_state=seed)
        try:
            ransac.fit(x_s[:, remaining].T, target[remaining])
        except ValueError:
            break
        inliers = remaining[ransac.inlier_mask_]
        if inliers.size < d:
            break
        w, _ = solve_exact(x_s[:, inliers].T, target[inliers])
        models.append(w)
        remaining = remaining[~ransac.inlier_mask_]
    return models


def fpt_exact_arbitrary_U(a, x, k: int, tol_match: float = 1e-8, f: Optional[Activation] = None,
                          ransac_trials: int = 500, stream: Optional[SeedStream] = None) -> NetworkWeights:
    """Exact recovery for any U without two nonnegatively parallel columns, from columns
    of A where exactly one hidden unit fires"""
    a = MatrixValidator.as_matrix(a, 'A')
    x = MatrixValidator.as_matrix(x, 'X')
    MatrixValidator.require_same_columns(a, x)
    f = f or Activation.relu()
    if not f.is_homogeneous:
        raise InvalidShape(f"cluster recovery needs a homogeneous activation, got {f.descriptor}")
    stream = stream or SeedStream(0)
    d = x.shape[0]

    clusters = _cluster_columns(a, tol_match)
    if len(clusters) < k or clusters[k - 1].size < d:
        sizes = [c.size for c in clusters[:k]]
        raise TooFewClusters(f"need {k} clusters of at least {d} columns, found sizes {sizes}",
                             clusters=len(clusters))
    clusters = clusters[:k]
    logger.info("fpt: cluster sizes %s", [c.size for c in clusters])

    candidates = []
    for i, members in enumerate(clusters):
        rep = a[:, members] / np.linalg.norm(a[:, members], axis=0)
        direction = rep.mean(axis=1)
        direction /= np.linalg.norm(direction)
        scalings = direction @ a[:, members]
        models = _consensus_rows(x[:, members], f.inverse_positive(scalings), ransac_trials,
                                 stream.child(f"ransac{i}").integer_seed())
        if not models:
            raise TooFewClusters(f"no linear relation explains cluster {i}", clusters=len(clusters))
        candidates.append(models)

    scale = max(float(np.linalg.norm(a)), 1e-300)
    best = None
    for combo in itertools.product(*candidates):
        v = normalize_rows(np.vstack(combo))
        try:
            u = solve_U(a, x, v, f)
        except RankDeficientHidden:
            continue
        resid = float(np.linalg.norm(a - u @ f.forward(v @ x))) / scale
        if best is None or resid < best[0]:
            best = (resid, u, v)
    if best is None:
        raise TooFewClusters("every cluster combination gives a rank-deficient hidden layer")
    logger.info("fpt: relative residual %.3e", best[0])
    return NetworkWeights(best[1], best[2])
