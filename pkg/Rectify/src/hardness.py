"""Reduction chain from reversible 6-SAT to ReLU separability to a two-unit network fit."""

import logging
import os
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.errors import BudgetExceeded, InvalidShape, MatrixFormatError
from src.model import Activation
from src.numerics import LinearProgram, lp_feasible
from src.utils import SeedStream

logger = logging.getLogger(__name__)

CLAUSE_WIDTH = 6
SAT_MAX_VARS = 16

# joint sign states of (q'x, q'y) that can sum to one under relu
Q_STATES = ('x', 'y', 'both')


@dataclass(frozen=True)
class Cnf6:
    """Clauses of signed 1-based literals, DIMACS style"""

    num_vars: int
    clauses: Tuple[Tuple[int, ...], ...]

    def __post_init__(self):
        clauses = tuple(tuple(int(lit) for lit in clause) for clause in self.clauses)
        for clause in clauses:
            if len(clause) != CLAUSE_WIDTH:
                raise InvalidShape(f"clause {clause} has {len(clause)} literals, need {CLAUSE_WIDTH}")
            if any(lit == 0 or abs(lit) > self.num_vars for lit in clause):
                raise InvalidShape(f"clause {clause} uses a variable outside 1..{self.num_vars}")
        object.__setattr__(self, 'clauses', clauses)


@dataclass(frozen=True)
class ReluSepInstance:
    dim: int
    p_set: np.ndarray  # rows must map to <= 0
    q_set: np.ndarray  # rows need f(q'x) + f(q'y) = 1

    def __post_init__(self):
        p = np.asarray(self.p_set, dtype=float).reshape(-1, self.dim)
        q = np.asarray(self.q_set, dtype=float).reshape(-1, self.dim)
        object.__setattr__(self, 'p_set', p)
        object.__setattr__(self, 'q_set', q)


def reverse(psi: Cnf6) -> Cnf6:
    return Cnf6(psi.num_vars, tuple(tuple(-lit for lit in clause) for clause in psi.clauses))


def make_reversible(psi: Cnf6) -> Cnf6:
    """psi AND its literal-negated copy"""
    return Cnf6(psi.num_vars, psi.clauses + reverse(psi).clauses)


def clause_vector(clause: Sequence[int], num_vars: int) -> np.ndarray:
    vec = np.zeros(num_vars + 2)
    for lit in clause:
        vec[abs(lit) - 1] += -1.0 if lit > 0 else 1.0
    vec[num_vars] = -10.0
    vec[num_vars + 1] = -10.0
    return vec


def reduce_sat_to_relusep(psi: Cnf6) -> ReluSepInstance:
    n = psi.num_vars
    dim = n + 2
    eye = np.eye(dim)
    q_rows = []
    for i in range(n):
        q_rows.extend([eye[i], -eye[i]])
    q_rows.extend([eye[n], eye[n + 1], -2 * eye[n], -2 * eye[n + 1], eye[n] + eye[n + 1]])
    p_rows = [clause_vector(clause, n) for clause in psi.clauses]
    return ReluSepInstance(dim, np.array(p_rows).reshape(-1, dim), np.array(q_rows))


def assignment_to_witness(assignment: Sequence[bool]) -> Tuple[np.ndarray, np.ndarray]:
    x = np.array([1.0 if value else -1.0 for value in assignment])
    y = -x
    return np.concatenate([x, [1.0, -0.5]]), np.concatenate([y, [-0.5, 1.0]])


def verify_witness(inst: ReluSepInstance, x, y, tol: float = 1e-9) -> Tuple[bool, List[str]]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != inst.dim or y.size != inst.dim:
        raise InvalidShape(f"witness must have length {inst.dim}")
    relu = Activation.relu()
    violations = []
    for i, p in enumerate(inst.p_set):
        if p @ x > tol or p @ y > tol:
            violations.append(f"P[{i}]: p'x={p @ x:.6g}, p'y={p @ y:.6g}")
    for i, q in enumerate(inst.q_set):
        total = float(relu(q @ x) + relu(q @ y))
        if abs(total - 1.0) > tol:
            violations.append(f"Q[{i}]: f(q'x)+f(q'y)={total:.6g}")
    return not violations, violations


def reduce_relusep_to_network(inst: ReluSepInstance,
                              free_alpha: bool = False) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(alpha, X, A) with alpha f([x, y]' X) = A exactly for the witnesses of inst"""
    x = np.hstack([inst.p_set.T, inst.q_set.T])
    a = np.concatenate([np.zeros(inst.p_set.shape[0]), np.ones(inst.q_set.shape[0])])[None, :]
    if free_alpha:
        x = np.vstack([x, np.zeros((1, x.shape[1]))])
        extra = np.zeros((inst.dim + 1, 2))
        extra[inst.dim, 0] = 1.0
        extra[inst.dim, 1] = -1.0
        x = np.hstack([x, extra])
        a = np.hstack([a, np.ones((1, 2))])
    return np.array([[1.0, 1.0]]), x, a


def lift_witness(x, y) -> Tuple[np.ndarray, np.ndarray]:
    """Witness for the free-alpha network instance"""
    return np.append(np.asarray(x, dtype=float), 1.0), np.append(np.asarray(y, dtype=float), -1.0)


def _state_blocks(q: np.ndarray, state: str, dim: int):
    zeros = np.zeros(dim)
    on_x = np.concatenate([q, zeros])[None, :]
    on_y = np.concatenate([zeros, q])[None, :]
    if state == 'x':
        return [(on_x, '=', 1.0), (on_y, '<=', 0.0)]
    if state == 'y':
        return [(on_x, '<=', 0.0), (on_y, '=', 1.0)]
    return [(on_x + on_y, '=', 1.0), (on_x, '>=', 0.0), (on_y, '>=', 0.0)]


def brute_force_relusep(inst: ReluSepInstance, budget: int = 100_000,
                        max_dim: int = 5) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """Depth-first search over the joint sign state of every q, pruned by LP feasibility"""
    if inst.dim > max_dim:
        raise BudgetExceeded(f"dimension {inst.dim} exceeds brute-force limit {max_dim}")
    if budget <= 0:
        raise BudgetExceeded("brute-force budget must be positive")
    dim = inst.dim
    zeros = np.zeros((inst.p_set.shape[0], dim))
    base = [(np.hstack([inst.p_set, zeros]), '<=', 0.0), (np.hstack([zeros, inst.p_set]), '<=', 0.0)]
    calls = {'lp': 0}

    def solve(blocks):
        calls['lp'] += 1
        if calls['lp'] > budget:
            raise BudgetExceeded(f"brute force exceeded {budget} LP solves")
        return lp_feasible(LinearProgram.from_blocks(2 * dim, blocks))

    def search(depth: int, blocks) -> Optional[np.ndarray]:
        if depth == inst.q_set.shape[0]:
            return solve(blocks)
        for state in Q_STATES:
            extended = blocks + _state_blocks(inst.q_set[depth], state, dim)
            if solve(extended) is None:
                continue
            found = search(depth + 1, extended)
            if found is not None:
                return found
        return None

    point = search(0, base)
    logger.info("brute-force separability: %d LP solves, %s", calls['lp'],
                'witness found' if point is not None else 'infeasible')
    if point is None:
        return None
    return point[:dim], point[dim:]


def brute_force_sat(psi: Cnf6) -> Optional[Tuple[bool, ...]]:
    """First satisfying assignment in binary counting order, or None"""
    n = psi.num_vars
    if n > SAT_MAX_VARS:
        raise BudgetExceeded(f"{n} variables exceed the brute-force limit {SAT_MAX_VARS}")
    table = ((np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1).astype(bool)
    ok = np.ones(table.shape[0], dtype=bool)
    for clause in psi.clauses:
        lits = np.array(clause)
        values = table[:, np.abs(lits) - 1]
        ok &= np.any(np.where(lits > 0, values, ~values), axis=1)
    hits = np.flatnonzero(ok)
    return tuple(bool(v) for v in table[hits[0]]) if hits.size else None


def write_dimacs(path: str, psi: Cnf6) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as fh:
        fh.write(f"p cnf {psi.num_vars} {len(psi.clauses)}\n")
        for clause in psi.clauses:
            fh.write(" ".join(str(lit) for lit in clause) + " 0\n")


def parse_dimacs(text: str) -> Cnf6:
    num_vars = None
    tokens: List[int] = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith('c') or line.startswith('%'):
            continue
        if line.startswith('p'):
            parts = line.split()
            if len(parts) < 4 or parts[1] != 'cnf':
                raise MatrixFormatError(f"bad problem line: {line}")
            num_vars = int(parts[2])
            continue
        try:
            tokens.extend(int(tok) for tok in line.split())
        except ValueError as e:
            raise MatrixFormatError(f"bad clause line: {line}") from e
    clauses, current = [], []
    for tok in tokens:
        if tok == 0:
            clauses.append(tuple(current))
            current = []
        else:
            current.append(tok)
    if current:
        raise MatrixFormatError("last clause is not 0-terminated")
    if num_vars is None:
        num_vars = max((abs(lit) for clause in clauses for lit in clause), default=0)
    return Cnf6(num_vars, tuple(clauses))


def read_dimacs(path: str) -> Cnf6:
    if not os.path.exists(path):
        raise MatrixFormatError(f"CNF file not found: {path}")
    with open(path, 'r', encoding='utf-8') as fh:
        return parse_dimacs(fh.read())


def _planted_clause(assignment: np.ndarray, gen: np.random.Generator) -> Tuple[int, ...]:
    """Six literals with at least one true and one false literal under the assignment"""
    n = assignment.size
    while True:
        variables = gen.integers(1, n + 1, CLAUSE_WIDTH)
        signs = np.where(gen.random(CLAUSE_WIDTH) < 0.5, -1, 1)
        truth = np.where(signs > 0, assignment[variables - 1], ~assignment[variables - 1])
        if truth.any() and not truth.all():
            return tuple(int(v) for v in variables * signs)


def random_reversible_corpus(count: int, max_vars: int, stream: SeedStream,
                             max_clauses: int = 4) -> List[Cnf6]:
    """Seeded reversible formulas; even indices are planted-satisfiable, odd ones random"""
    corpus = []
    for i in range(count):
        gen = stream.child(f"formula{i}").generator()
        n = int(gen.integers(1, max_vars + 1))
        m = int(gen.integers(1, max_clauses + 1))
        if i % 2 == 0:
            assignment = gen.random(n) < 0.5
            clauses = tuple(_planted_clause(assignment, gen) for _ in range(m))
        else:
            clauses = tuple(
                tuple(int(v) for v in gen.integers(1, n + 1, CLAUSE_WIDTH)
                      * np.where(gen.random(CLAUSE_WIDTH) < 0.5, -1, 1))
                for _ in range(m))
        corpus.append(make_reversible(Cnf6(n, clauses)))
    return corpus
