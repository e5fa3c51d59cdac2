"""3-SAT to ReLU-network reduction, used as a generator of instances with known answers.

Layout of the reduced network (one hidden ReLU layer):

* inputs ``x_1..x_k`` boxed to [0, 1], plus a constant input ``one`` pinned to [1, 1];
* per clause a unit ``r_i = ReLU(one - sum q)`` where ``q`` is ``x_j`` or
  ``one - x_j``; the clause value is ``y_i = 1 - r_i = min(1, sum q)``;
* per variable ``ReLU(x_j - 0.5)`` and ``ReLU(0.5 - x_j)``, and a pass-through ``ReLU(one)``;
* output ``y = n - sum r_i``, required in ``[n(1 - eps), n]``;
* outputs ``g_j = 0.5 - |x_j - 0.5| = min(x_j, 1 - x_j)``, required in ``[0, eps]``,
  which holds exactly when ``x_j`` is within ``eps`` of 0 or 1.
"""
from __future__ import annotations

import itertools
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from reluplex.frontend import Query, Witness, output_name
from reluplex.network import Network
from reluplex.simplex import LinearAtom, Relation

MAX_BRUTE_FORCE_VARS = 24


class DimacsError(ValueError):
    pass


class ReductionSoundnessError(AssertionError):
    """A witness of the reduced network does not decode to a model of the formula."""


@dataclass(frozen=True)
class CnfFormula:
    num_vars: int
    clauses: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        clauses = []
        for clause in self.clauses:
            clause = tuple(int(l) for l in clause)
            if not 1 <= len(clause) <= 3:
                raise ValueError(f"clause {clause} must have 1 to 3 literals")
            # pad short clauses by repeating their last literal
            clause = clause + (clause[-1],) * (3 - len(clause))
            for lit in clause:
                if lit == 0 or abs(lit) > self.num_vars:
                    raise ValueError(f"literal {lit} outside 1..{self.num_vars}")
            clauses.append(clause)
        object.__setattr__(self, "clauses", tuple(clauses))

    @property
    def num_clauses(self) -> int:
        return len(self.clauses)

    def satisfied_by(self, assignment: Sequence[bool]) -> bool:
        return all(any(assignment[abs(l) - 1] == (l > 0) for l in clause) for clause in self.clauses)

    def to_dimacs(self) -> str:
        lines = [f"p cnf {self.num_vars} {self.num_clauses}"]
        lines.extend(" ".join(str(l) for l in clause) + " 0" for clause in self.clauses)
        return "\n".join(lines) + "\n"


def parse_dimacs(text: str) -> CnfFormula:
    num_vars = num_clauses = None
    clauses: list[tuple[int, ...]] = []
    current: list[int] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("c"):
            continue
        if line.startswith("%"):
            break
        if line.startswith("p"):
            parts = line.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise DimacsError(f"line {number}: malformed problem line {line!r}")
            try:
                num_vars, num_clauses = int(parts[2]), int(parts[3])
            except ValueError:
                raise DimacsError(f"line {number}: malformed problem line {line!r}") from None
            continue
        if num_vars is None:
            raise DimacsError(f"line {number}: clause before the 'p cnf' line")
        for token in line.split():
            try:
                lit = int(token)
            except ValueError:
                raise DimacsError(f"line {number}: non-integer literal {token!r}") from None
            if lit == 0:
                if not current:
                    raise DimacsError(f"line {number}: empty clause")
                if len(current) > 3:
                    raise DimacsError(f"line {number}: clause with {len(current)} literals; only 3-CNF is supported")
                clauses.append(tuple(current))
                current = []
            else:
                if abs(lit) > num_vars:
                    raise DimacsError(f"line {number}: literal {lit} exceeds declared {num_vars} variables")
                current.append(lit)
    if num_vars is None:
        raise DimacsError("missing 'p cnf' line")
    if current:
        raise DimacsError("last clause is not terminated by 0")
    if num_clauses is not None and num_clauses != len(clauses):
        raise DimacsError(f"header declares {num_clauses} clauses, found {len(clauses)}")
    return CnfFormula(num_vars, tuple(clauses))


def load_dimacs(path: str | Path) -> CnfFormula:
    return parse_dimacs(Path(path).read_text())


def brute_force_sat(formula: CnfFormula) -> tuple[bool, ...] | None:
    """A satisfying assignment found by exhaustive enumeration, or ``None``."""
    k = formula.num_vars
    if k > MAX_BRUTE_FORCE_VARS:
        raise ValueError(f"brute force limited to {MAX_BRUTE_FORCE_VARS} variables, formula has {k}")
    for bits in itertools.product((False, True), repeat=k):
        if formula.satisfied_by(bits):
            return bits
    return None


def random_3sat(num_vars: int, num_clauses: int, rng: random.Random) -> CnfFormula:
    clauses = []
    for _ in range(num_clauses):
        chosen = rng.sample(range(1, num_vars + 1), min(3, num_vars))
        while len(chosen) < 3:
            chosen.append(rng.randint(1, num_vars))
        clauses.append(tuple(v if rng.random() < 0.5 else -v for v in chosen))
    return CnfFormula(num_vars, tuple(clauses))


def epsilon_limit(num_clauses: int) -> float:
    return 1.0 / (num_clauses + 3)


def default_epsilon(num_clauses: int) -> float:
    return min(0.01, 1.0 / (num_clauses + 4))


def check_epsilon(epsilon: float, num_clauses: int) -> None:
    limit = epsilon_limit(num_clauses)
    if not 0 < epsilon < limit:
        raise ValueError(f"epsilon must satisfy 0 < epsilon < 1/(n+3) = {limit:.6g} for n = {num_clauses} clauses; "
                         f"got {epsilon}")


@dataclass(frozen=True)
class ReducedInstance:
    network: Network
    query: Query
    formula: CnfFormula
    epsilon: float

    @property
    def one_input(self) -> int:
        return self.formula.num_vars


def reduce(formula: CnfFormula, epsilon: float | None = None) -> ReducedInstance:
    n, k = formula.num_clauses, formula.num_vars
    if epsilon is None:
        epsilon = default_epsilon(n)
    check_epsilon(epsilon, n)
    one = k
    width = k + 1

    hidden_rows = []
    for clause in formula.clauses:
        row = np.zeros(width)
        row[one] = 1.0
        for lit in clause:
            j = abs(lit) - 1
            if lit > 0:
                row[j] -= 1.0
            else:
                # q = one - x_j
                row[one] -= 1.0
                row[j] += 1.0
        hidden_rows.append(row)
    for j in range(k):
        up = np.zeros(width)
        up[j], up[one] = 1.0, -0.5
        down = np.zeros(width)
        down[j], down[one] = -1.0, 0.5
        hidden_rows.extend([up, down])
    passthrough = np.zeros(width)
    passthrough[one] = 1.0
    hidden_rows.append(passthrough)
    w1 = np.array(hidden_rows).reshape(-1, width)

    h = w1.shape[0]
    p = h - 1
    out_rows = []
    conj = np.zeros(h)
    conj[:n] = -1.0
    conj[p] = float(n)
    out_rows.append(conj)
    for j in range(k):
        g = np.zeros(h)
        g[n + 2 * j] = -1.0
        g[n + 2 * j + 1] = -1.0
        g[p] = 0.5
        out_rows.append(g)
    w2 = np.array(out_rows).reshape(-1, h)
    net = Network((w1, w2), (np.zeros(h), np.zeros(w2.shape[0])))

    box = [(0.0, 1.0)] * k + [(1.0, 1.0)]
    constraints = [
        LinearAtom.of({output_name(0): 1.0}, Relation.GE, n * (1 - epsilon)),
        LinearAtom.of({output_name(0): 1.0}, Relation.LE, float(n)),
    ]
    for j in range(k):
        constraints.append(LinearAtom.of({output_name(j + 1): 1.0}, Relation.GE, 0.0))
        constraints.append(LinearAtom.of({output_name(j + 1): 1.0}, Relation.LE, epsilon))
    query = Query(box, constraints, metadata={"clauses": n, "variables": k, "epsilon": epsilon})
    return ReducedInstance(net, query, formula, epsilon)


def decode_boolean_witness(witness: Witness | Sequence[float], epsilon: float,
                           formula: CnfFormula | None = None, tol: float = 1e-6) -> tuple[bool, ...]:
    """Round inputs in ``[0, eps]`` to false and in ``[1 - eps, 1]`` to true.

    Raises :class:`ReductionSoundnessError` for an input strictly between the
    two ranges, or when the rounded assignment falsifies a clause.
    """
    inputs = witness.inputs if isinstance(witness, Witness) else list(witness)
    k = formula.num_vars if formula is not None else len(inputs)
    out = []
    for j, x in enumerate(inputs[:k]):
        if -tol <= x <= epsilon + tol:
            out.append(False)
        elif 1 - epsilon - tol <= x <= 1 + tol:
            out.append(True)
        else:
            raise ReductionSoundnessError(f"input x{j} = {x!r} is not within {epsilon} of 0 or 1")
    bits = tuple(out)
    if formula is not None and not formula.satisfied_by(bits):
        raise ReductionSoundnessError(f"decoded assignment {bits} falsifies the formula")
    return bits


def disjunction_gadget_network(arity: int = 3) -> Network:
    """Inputs ``q_1..q_arity, one``; output ``1 - ReLU(1 - sum q)``."""
    w1 = np.array([[-1.0] * arity + [1.0], [0.0] * arity + [1.0]])
    w2 = np.array([[-1.0, 1.0]])
    return Network((w1, w2), (np.zeros(2), np.zeros(1)))


def negation_gadget_network() -> Network:
    """Inputs ``x, one``; output ``one - x`` (no ReLU needed)."""
    return Network(([[-1.0, 1.0]],), ([0.0],))


def discreteness_gadget_network() -> Network:
    """Inputs ``x, one``; output ``0.5 - ReLU(x - 0.5) - ReLU(0.5 - x) = min(x, 1 - x)``."""
    w1 = np.array([[1.0, -0.5], [-1.0, 0.5], [0.0, 1.0]])
    w2 = np.array([[-1.0, -1.0, 0.5]])
    return Network((w1, w2), (np.zeros(3), np.zeros(1)))


def hinge_sum_gadget_network(epsilon: float) -> Network:
    """Inputs ``x, one``; output ``ReLU(eps - x) + ReLU(x - 1 + eps)``.

    Kept for comparison: this sum is 0 on the whole open interval
    ``(eps, 1 - eps)``, so bounding it by ``eps`` does not force ``x`` to the
    ends of [0, 1].
    """
    w1 = np.array([[-1.0, epsilon], [1.0, epsilon - 1.0]])
    w2 = np.array([[1.0, 1.0]])
    return Network((w1, w2), (np.zeros(2), np.zeros(1)))
