"""Seeded property checks shared by the test suite and the AC-10 bench criterion.

Every check owns its seed loop, runs at the seed counts and thresholds it names,
and returns (ok, note). Checks are registered in cost order so a truncated AC-10
run keeps the cheap ones.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from numpy.polynomial import hermite_e

from src.errors import InputError, NoConvergence
from src.evaluation import functional_error, kappa_sweep, match_weights
from src.initializers import (MomentAccumulator, score3, score4, stein_coefficient,
                              whitening_matrix)
from src.model import Activation, NetworkWeights, NoiseModel, generate_instance, generate_weights, incoherence
from src.numerics import (EQ_TOL, LinearProgram, cond_number, gaussian_matrix, lp_feasible,
                          orthonormal_rows, pinv, projector, rank, residual_energy, svd)
from src.recover import RecoveryConfig, recover_signs_exact, regress_U
from src.robust import HalfspaceProblem, labels_from, learn_halfspace, rpca_detailed
from src.signpat import brute_force_patterns, enumerate_subspace_patterns, is_realizable
from src.utils import SeedStream
from src.worstcase import exact_neural_net

logger = logging.getLogger(__name__)

Outcome = Tuple[bool, str]


@dataclass(frozen=True)
class PropertyCheck:
    name: str
    module: str
    run: Callable[[SeedStream], Outcome]
    heavy: bool = False


PROPERTIES: Dict[str, PropertyCheck] = {}


def _register(module: str, heavy: bool = False):
    def wrap(fn: Callable[[SeedStream], Outcome]) -> Callable[[SeedStream], Outcome]:
        PROPERTIES[fn.__name__] = PropertyCheck(fn.__name__, module, fn, heavy)
        return fn
    return wrap


def properties_for(module: str, heavy: Optional[bool] = None) -> List[str]:
    return [p.name for p in PROPERTIES.values()
            if p.module == module and (heavy is None or p.heavy == heavy)]


def run_property(name: str, stream: SeedStream) -> Outcome:
    if name not in PROPERTIES:
        raise InputError(f"unknown property '{name}'")
    ok, note = PROPERTIES[name].run(stream.child(name))
    logger.debug("property %s: %s (%s)", name, 'ok' if ok else 'FAILED', note)
    return ok, note


def _tally(hits: List[bool], required: int, what: str) -> Outcome:
    passes = int(sum(hits))
    return passes >= required, f"{what}: {passes}/{len(hits)} (need {required})"


def _planted(s: SeedStream, m: int, k: int, d: int, kappa: float, n: int,
             noise: Optional[NoiseModel] = None):
    w = generate_weights(m, k, d, kappa, s.child('w'))
    return w, generate_instance(w, Activation.relu(), n, noise or NoiseModel(), s.child('i'))


# numerics

@_register('numerics')
def lp_points_feasible(stream: SeedStream) -> Outcome:
    hits = []
    for t in range(20):
        gen = stream.child(t).generator()
        anchor = gen.standard_normal(4)
        coeffs = gen.standard_normal((8, 4))
        relations = ['=' if j < 2 else ('>=' if gen.random() < 0.5 else '<=') for j in range(8)]
        slack = gen.random(8)
        rhs = coeffs @ anchor + np.array([0.0 if r == '=' else (-s if r == '>=' else s)
                                          for r, s in zip(relations, slack)])
        lp = LinearProgram(4, coeffs, tuple(relations), rhs)
        point = lp_feasible(lp)
        hits.append(point is not None and lp.is_satisfied(point, EQ_TOL))
    return _tally(hits, 20, "feasible LP points satisfy every constraint")


@_register('numerics')
def projector_contract(stream: SeedStream) -> Outcome:
    hits = []
    n = 12
    for t in range(20):
        gen = stream.child(t).generator()
        r = 1 + t % 4
        rows = gen.standard_normal((r + 1, r)) @ gen.standard_normal((r, n))
        p = projector(rows)
        hits.append(np.linalg.norm(p @ p - p) <= 1e-8 * n
                    and np.linalg.norm(p.T - p) <= 1e-12 * n
                    and abs(np.trace(p) - r) <= 1e-8)
    return _tally(hits, 20, "projector symmetric and idempotent")


@_register('numerics')
def pinv_perturbation(stream: SeedStream) -> Outcome:
    hits = []
    for t in range(20):
        gen = stream.child(t).generator()
        b = gen.standard_normal((4, 6))
        b *= (1.0 + gen.random()) / max(np.linalg.norm(b, 2), 1e-300)
        eps = 0.25 * (1.0 - gen.random())
        e = gen.standard_normal(b.shape)
        e *= eps / cond_number(b) ** 2 / np.linalg.norm(e)
        hits.append(np.linalg.norm(pinv(b + e) - pinv(b)) <= 10 * eps)
    return _tally(hits, 20, "||(B+E)^+ - B^+||_F <= 10 eps")


@_register('numerics')
def gaussian_operator_norm(stream: SeedStream) -> Outcome:
    hits = []
    for t in range(100):
        k = 1 + t % 5
        n = 10 * k
        s = svd(gaussian_matrix(k, n, 0.0, 1.0, stream.child(t))).singular_values
        hits.append(math.sqrt(n) / 3 <= s[-1] and s[0] <= 2 * math.sqrt(n))
    return _tally(hits, 99, "sqrt(n)/3 <= sigma(S) <= 2 sqrt(n)")


# model

@_register('model')
def scaling_commutation(stream: SeedStream) -> Outcome:
    gen = stream.generator()
    x = gen.standard_normal(50)
    x[0] = 1.0
    ok = True
    for s in np.exp(gen.standard_normal(10)):
        ok &= np.allclose(Activation.relu().forward(s * x), s * Activation.relu().forward(x), rtol=1e-12)
        for c in (0.5, 2.0, 3.0):
            f = Activation.power(c)
            ok &= np.allclose(f.forward(s * x), s ** c * f.forward(x), rtol=1e-10)
    f = Activation.expm1()
    ok &= not np.allclose(f.forward(2.0 * x), 2.0 * f.forward(x))
    return bool(ok), "f(s x) = s^c f(x) for relu and power(c), not for expm1"


@_register('model')
def full_rank_output(stream: SeedStream) -> Outcome:
    hits = []
    for t in range(500):
        k = 1 + t % 3
        m, d = k + (t // 3) % 2, k + 1
        n = math.ceil(10 * k * math.log(k) + 20)
        _, inst = _planted(stream.child(t), m, k, d, 2.0, n)
        hits.append(rank(inst.a) == k)
    return _tally(hits, 495, "rank(A) = k")


# init

@_register('init')
def score_symmetry(stream: SeedStream) -> Outcome:
    ok = True
    for t in range(5):
        x = stream.child(t).generator().standard_normal(3)
        t3, t4 = score3(x), score4(x)
        ok &= all(np.allclose(t3, t3.transpose(p)) for p in itertools.permutations(range(3)))
        ok &= all(np.allclose(t4, t4.transpose(p)) for p in itertools.permutations(range(4)))
    return bool(ok), "score tensors symmetric under index permutation"


@_register('init')
def whitening_contract(stream: SeedStream) -> Outcome:
    hits = []
    for t in range(20):
        gen = stream.child(t).generator()
        b = gen.standard_normal((5, 3))
        m2 = b @ b.T
        w, _ = whitening_matrix(m2, 3)
        hits.append(np.allclose(w.T @ m2 @ w, np.eye(3), atol=1e-6))
    return _tally(hits, 20, "W^T M2 W = I")


def _contract(tensor: np.ndarray, v: np.ndarray) -> float:
    for _ in range(tensor.ndim):
        tensor = tensor @ v
    return float(tensor)


@_register('init')
def stein_consistency(stream: SeedStream) -> Outcome:
    hits = []
    n, d = 20000, 3
    for t in range(20):
        s = stream.child(t)
        v = s.child('v').generator().standard_normal(d)
        v /= np.linalg.norm(v)
        x = gaussian_matrix(d, n, 0.0, 1.0, s.child('x'))
        g = v @ x
        within = True
        for f in (Activation.relu(), Activation.power(2.0)):
            alpha = f.forward(g)
            acc = MomentAccumulator(x, alpha, 4096)
            for order, moment in ((2, acc.second), (3, acc.third), (4, acc.fourth)):
                coeffs = np.zeros(order + 1)
                coeffs[order] = 1.0
                samples = alpha * hermite_e.hermeval(g, coeffs)
                stderr = float(np.std(samples, ddof=1)) / math.sqrt(n)
                within &= abs(_contract(moment(), v) - stein_coefficient(f, order)) <= 3 * stderr
        hits.append(within)
    return _tally(hits, 18, "score cross moments within 3 standard errors of quadrature")


# signpat

def _random_basis(s: SeedStream) -> np.ndarray:
    gen = s.generator()
    return gen.standard_normal((1 + int(gen.integers(2)), 5 + int(gen.integers(4))))


@_register('signpat')
def pattern_soundness(stream: SeedStream) -> Outcome:
    hits = []
    for t in range(10):
        basis = _random_basis(stream.child(t))
        hits.append(all(is_realizable(basis, p) for p in enumerate_subspace_patterns(basis)))
    return _tally(hits, 10, "every enumerated pattern has an LP witness")


@_register('signpat')
def pattern_completeness(stream: SeedStream) -> Outcome:
    hits = []
    for t in range(10):
        basis = _random_basis(stream.child(t))
        exact = {p.positives for p in enumerate_subspace_patterns(basis)}
        sampled = {p.positives for p in brute_force_patterns(basis, 20_000, stream.child(t).child('mc').generator())}
        hits.append(sampled <= exact)
    return _tally(hits, 10, "sampled patterns are enumerated")


@_register('signpat')
def pattern_cardinality(stream: SeedStream) -> Outcome:
    hits = []
    for t in range(10):
        basis = _random_basis(stream.child(t))
        k, n = basis.shape
        bound = sum(math.comb(2 * n, i) for i in range(k + 1)) + 1
        hits.append(len(enumerate_subspace_patterns(basis)) <= bound)
    return _tally(hits, 10, "pattern count within sum_i C(2n, i) + 1")


# recover

@_register('recover')
def condition_angle(stream: SeedStream) -> Outcome:
    hits = []
    for t in range(100):
        s = stream.child(t)
        kappa = 1.0 + 29.0 * s.child('kappa').generator().random()
        v = generate_weights(3, 2 + t % 2, 5, kappa, s.child('w')).v
        cosines = np.abs(np.clip(v @ v.T, -1.0, 1.0))[np.triu_indices(v.shape[0], 1)]
        theta = float(np.arccos(cosines).min())
        hits.append(theta == 0 or cond_number(v) >= 0.1 / theta)
    return _tally(hits, 100, "kappa(V) >= 0.1 / min angle")


@_register('recover')
def pattern_uniqueness(stream: SeedStream) -> Outcome:
    hits = []
    ell = 2000
    for t in range(100):
        k = 1 + t % 3
        w, inst = _planted(stream.child(t), k + 1, k, k + 2, 1.0 + t % 3, ell)
        basis = orthonormal_rows(inst.a)
        one_dimensional = True
        for i in range(k):
            off = ~(w.v[i] @ inst.x > 0)
            sv = np.linalg.svd(basis[:, off], compute_uv=False)
            one_dimensional &= k - int(np.sum(sv > 1e-6)) == 1
        hits.append(w.kappa_v() <= 5 and one_dimensional)
    return _tally(hits, 99, "one-dimensional solution space per pattern")


@_register('recover')
def pairwise_disagreement(stream: SeedStream) -> Outcome:
    hits = []
    ell = 2000
    for t in range(20):
        k = 2 + t % 2
        w, inst = _planted(stream.child(t), k + 1, k, k + 2, 2.0, ell)
        proj = w.v @ inst.x
        need = ell / (50 * w.kappa_v())
        hits.append(all(np.sum((proj[i] < 0) & (proj[j] > 0)) >= need
                        for i, j in itertools.permutations(range(k), 2)))
    return _tally(hits, 19, "ordered pairs disagree on >= l/(50 kappa) columns")


@_register('recover')
def projection_gap(stream: SeedStream) -> Outcome:
    hits = []
    ell = 50_000
    for t in range(20):
        k = 2 + t % 2
        w, inst = _planted(stream.child(t), k + 1, k, k + 2, 2.0, ell)
        proj = w.v @ inst.x
        plus, minus = np.maximum(proj, 0.0), np.maximum(-proj, 0.0)
        factor = 1.0 - 1e-3 / w.kappa_v() ** 2
        ok = True
        for i in range(k):
            others = [j for j in range(k) if j != i]
            span = np.vstack([plus[others], minus[others], minus[i:i + 1]])
            energy = float(plus[i] @ plus[i])
            inside = math.sqrt(max(energy - float(residual_energy(plus[i:i + 1], span)[0]), 0.0))
            ok &= inside <= factor * math.sqrt(energy)
        hits.append(ok)
    return _tally(hits, 19, "||f(V_i X) P_{S_i,-}|| <= (1 - 1e-3/kappa^2) ||f(V_i X)||")


@_register('recover')
def stacked_sigma_min(stream: SeedStream) -> Outcome:
    hits = []
    ell = 5000
    for t in range(20):
        k = 2 + t % 2
        w, inst = _planted(stream.child(t), k + 1, k, k + 2, 2.0, ell)
        proj = w.v @ inst.x
        q = np.vstack([np.maximum(proj, 0.0), np.maximum(-proj, 0.0)])
        hits.append(svd(q).singular_values[-1] >= math.sqrt(ell) / (10 * w.kappa_v() ** 2))
    return _tally(hits, 19, "sigma_min of the 2k rectified rows >= sqrt(l)/(10 kappa^2)")


@_register('recover')
def unique_pattern_rows(stream: SeedStream) -> Outcome:
    hits = []
    for t in range(5):
        w, inst = _planted(stream.child(t), 4, 3, 5, 2.0, 2000)
        rows = recover_signs_exact(inst.a, inst.x, w.v, RecoveryConfig(ell=2000), Activation.relu())
        hits.append(bool(np.allclose(rows, w.v, atol=1e-8)))
    return _tally(hits, 5, "planted rows recovered from their zero sets")


@_register('recover', heavy=True)
def regression_rate(stream: SeedStream) -> Outcome:
    small, big = [], []
    for t in range(10):
        w, inst = _planted(stream.child(t), 3, 2, 4, 2.0, 50_000, NoiseModel('iid', sigma=0.1))
        small.append(np.linalg.norm(regress_U(inst.a[:, :5000], inst.x[:, :5000], w.v) - w.u))
        big.append(np.linalg.norm(regress_U(inst.a, inst.x, w.v) - w.u))
    ok = float(np.mean(big)) <= 0.5 * float(np.mean(small))
    return ok, f"mean U error {np.mean(small):.3e} at n=5e3, {np.mean(big):.3e} at n=5e4"


# robust

@_register('robust')
def halfspace_optimal(stream: SeedStream) -> Outcome:
    hits = []
    for t in range(5):
        gen = stream.child(t).generator()
        x = gen.standard_normal((5, 400))
        y = np.where(gen.random(400) < 0.5, -1.0, 1.0)
        w_hat = learn_halfspace(HalfspaceProblem(x, y))
        others = gen.standard_normal((1000, 5))
        others /= np.linalg.norm(others, axis=1, keepdims=True)
        hits.append(bool(np.all((others @ x) @ y <= w_hat @ x @ y + 1e-9)))
    return _tally(hits, 5, "label-weighted sum direction is optimal")


@_register('robust')
def incoherent_u(stream: SeedStream) -> Outcome:
    hits = [incoherence(generate_weights(30, 2, 6, 1.0, stream.child(t), orthonormal_u=True).u) <= 3 * 2 / 30
            for t in range(20)]
    return _tally(hits, 19, "max leverage of generated U <= 3k/m")


def _noisy_labels(s: SeedStream, d: int, n: int):
    v = s.child('v').generator().standard_normal(d)
    v /= np.linalg.norm(v)
    x = gaussian_matrix(d, n, 0.0, 1.0, s.child('x'))
    clean = np.maximum(v @ x, 0.0) + gaussian_matrix(1, n, 0.0, 0.5, s.child('g'))[0]
    return v, x, clean


@_register('robust')
def modular_rate(stream: SeedStream) -> Outcome:
    small, big = [], []
    for t in range(10):
        v, x, clean = _noisy_labels(stream.child(t), 10, 40_000)
        y = labels_from(clean)
        small.append(np.sum((learn_halfspace(HalfspaceProblem(x[:, :10_000], y[:10_000])) - v) ** 2))
        big.append(np.sum((learn_halfspace(HalfspaceProblem(x, y)) - v) ** 2))
    ok = float(np.median(big)) <= 0.6 * float(np.median(small))
    return ok, f"median ||w - v||^2 {np.median(small):.3e} at n=1e4, {np.median(big):.3e} at n=4e4"


def _worst_flips(clean: np.ndarray, budget: float) -> np.ndarray:
    """B with ||B||_F^2 = budget flipping the smallest-margin labels first"""
    order = np.argsort(np.abs(clean))
    cost = np.cumsum((1.0 + 1e-6) ** 2 * clean[order] ** 2)
    count = int(np.searchsorted(cost, budget, side='right'))
    b = np.zeros_like(clean)
    b[order[:count]] = -(1.0 + 1e-6) * clean[order[:count]]
    spare = budget - (float(cost[count - 1]) if count else 0.0)
    widest = order[-1]
    b[widest] += math.copysign(math.sqrt(max(spare, 0.0)), clean[widest])
    return b


@_register('robust')
def sign_flip_count(stream: SeedStream) -> Outcome:
    hits = []
    n = 4000
    for t in range(20):
        omega = (10.0, 20.0, 30.0)[t % 3]
        _, _, clean = _noisy_labels(stream.child(t), 10, n)
        b = _worst_flips(clean, n / omega ** 2)
        flips = int(np.sum(labels_from(clean + b) != labels_from(clean)))
        hits.append(flips <= 11 * n / omega)
    return _tally(hits, 19, "label flips <= 11 n / omega")


@_register('robust')
def rpca_monotone(stream: SeedStream) -> Outcome:
    hits = []
    for t in range(5):
        s = stream.child(t)
        _, inst = _planted(s, 20, 3, 6, 2.0, 200)
        gen = s.child('corrupt').generator()
        a = inst.a.ravel().copy()
        idx = gen.choice(a.size, size=a.size // 20, replace=False)
        a[idx] += 10.0 * np.where(gen.random(idx.size) < 0.5, -1.0, 1.0)
        try:
            history = rpca_detailed(a.reshape(inst.a.shape)).history
        except NoConvergence as e:
            history = e.partial.history
        hits.append(bool(np.all(np.diff(history) <= 1e-12)))
    return _tally(hits, 5, "rpca residual never rises")


# eval

@_register('eval')
def matching_invariant(stream: SeedStream) -> Outcome:
    hits = []
    for t in range(5):
        truth = generate_weights(4, 3, 5, 2.0, stream.child(t))
        got = NetworkWeights(truth.u + 1e-3 * (1 + t), truth.v)
        base = match_weights(got, truth)
        hits.append(all(np.isclose(base.u_error, shuffled.u_error) and np.isclose(base.v_error, shuffled.v_error)
                        for shuffled in (match_weights(got.permuted(list(p)), truth)
                                         for p in itertools.permutations(range(3)))))
    return _tally(hits, 5, "errors unchanged under row permutations")


@_register('eval', heavy=True)
def kappa_monotone(stream: SeedStream) -> Outcome:
    sweep = kappa_sweep((0.01, 0.1, 1.0), 10_000, 50, stream)
    return sweep.monotone, f"mean distinguishing fractions {[round(m, 4) for m in sweep.means]}"


# worstcase

@_register('worstcase', heavy=True)
def following_rows(stream: SeedStream) -> Outcome:
    hits = []
    for t in range(3):
        _, inst = _planted(stream.child(t), 3, 2, 4, 1.0, 12)
        rows: List[np.ndarray] = []
        exact_neural_net(inst.a, inst.x, 2, accepted=rows)
        ok = len(rows) == 2
        for j, y in enumerate(rows):
            fy = np.maximum(y, 0.0)
            ok &= float(residual_energy(y[None, :], inst.x)[0]) <= (1e-9 * np.linalg.norm(y)) ** 2
            ok &= float(residual_energy(fy[None, :], inst.a)[0]) <= (1e-6 * np.linalg.norm(fy)) ** 2
            if j:
                ok &= float(residual_energy(fy[None, :], np.maximum(np.vstack(rows[:j]), 0.0))[0]) \
                    > (1e-6 * np.linalg.norm(fy)) ** 2
        hits.append(bool(ok))
    return _tally(hits, 3, "accepted rows in rowspan(X), rectified in rowspan(A), independent")


@_register('worstcase', heavy=True)
def worstcase_idempotent(stream: SeedStream) -> Outcome:
    hits = []
    f = Activation.relu()
    for t in range(3):
        _, inst = _planted(stream.child(t), 3, 2, 4, 1.0, 12)
        rebuilt = exact_neural_net(inst.a, inst.x, 2).output(inst.x, f)
        again = exact_neural_net(rebuilt, inst.x, 2)
        _, rel = functional_error(rebuilt, again, inst.x, f)
        hits.append(rel <= 1e-9)
    return _tally(hits, 3, "rerun on the rebuilt output fits within 1e-9")
