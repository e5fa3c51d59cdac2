"""Bounded-variable simplex state: tableau, bounds, assignment, pivot/update.

Variables are dense integer ids.  Each basic variable owns a sparse row
``x_i = sum_j T[i, j] * x_j`` over non-basic variables; a column index maps
every non-basic variable to the basic rows it appears in so that pivots and
updates only touch affected rows.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping

from reluplex import numerics

logger = logging.getLogger(__name__)

INF = math.inf


class Relation(enum.Enum):
    EQ = "="
    LE = "<="
    GE = ">="

    @classmethod
    def parse(cls, text: str) -> "Relation":
        text = text.strip()
        aliases = {"=": cls.EQ, "==": cls.EQ, "<=": cls.LE, ">=": cls.GE}
        try:
            return aliases[text]
        except KeyError:
            raise ValueError(f"unsupported relation {text!r} (strict relations are not supported)") from None


@dataclass(frozen=True)
class LinearAtom:
    """``sum(c * x) <rel> constant``.

    ``terms`` keeps the (key, coefficient) pairs as given; repeated keys are
    merged by summation in :attr:`coefficients`.  Keys are solver variable
    ids inside the engine and node names (``"x0"``, ``"y2"``) in queries.
    """

    terms: tuple[tuple[Hashable, float], ...]
    relation: Relation
    constant: float

    def __post_init__(self):
        if not isinstance(self.relation, Relation):
            object.__setattr__(self, "relation", Relation.parse(self.relation))
        object.__setattr__(self, "terms", tuple((k, float(c)) for k, c in self.terms))
        object.__setattr__(self, "constant", float(self.constant))
        if not any(c != 0.0 for c in self.coefficients.values()):
            raise ValueError("linear atom needs at least one nonzero coefficient")

    @classmethod
    def of(cls, coefficients: Mapping[Hashable, float] | Iterable[tuple[Hashable, float]],
           relation: Relation | str, constant: float) -> "LinearAtom":
        items = coefficients.items() if isinstance(coefficients, Mapping) else coefficients
        return cls(tuple(items), relation, constant)

    @property
    def coefficients(self) -> dict[Hashable, float]:
        merged: dict[Hashable, float] = {}
        for key, coeff in self.terms:
            merged[key] = merged.get(key, 0.0) + coeff
        return {k: c for k, c in merged.items() if c != 0.0}

    def evaluate(self, values: Mapping[Hashable, float]) -> float:
        return sum(c * values[k] for k, c in self.coefficients.items())

    def holds(self, values: Mapping[Hashable, float], tol: float = 0.0) -> bool:
        lhs = self.evaluate(values)
        if self.relation is Relation.LE:
            return lhs <= self.constant + tol
        if self.relation is Relation.GE:
            return lhs >= self.constant - tol
        return abs(lhs - self.constant) <= tol

    def bounds(self) -> tuple[float, float]:
        """Bounds implied for the auxiliary variable ``b = sum(c * x)``."""
        if self.relation is Relation.LE:
            return -INF, self.constant
        if self.relation is Relation.GE:
            return self.constant, INF
        return self.constant, self.constant


class DegeneratePivotError(ValueError):
    """Pivot element is nonzero but too small to invert safely."""


class RepairStatus(enum.Enum):
    ALL_WITHIN_BOUNDS = "all-within-bounds"
    INFEASIBLE = "infeasible"
    INTERRUPTED = "interrupted"


@dataclass
class RepairOutcome:
    status: RepairStatus
    steps: int = 0
    basic: int | None = None
    row: dict[int, float] | None = None
    below_lower: bool | None = None

    @property
    def feasible(self) -> bool:
        return self.status is RepairStatus.ALL_WITHIN_BOUNDS


@dataclass
class SimplexState:
    min_pivot: float = numerics.MIN_PIVOT_ELEMENT
    drop_tolerance: float = numerics.DROP_TOLERANCE
    bound_tolerance: float = numerics.BOUND_TOLERANCE
    bland_after: int = 10_000
    always_bland: bool = False

    lower: list[float] = field(default_factory=list)
    upper: list[float] = field(default_factory=list)
    value: list[float] = field(default_factory=list)
    names: list[str] = field(default_factory=list)
    rows: dict[int, dict[int, float]] = field(default_factory=dict)
    cols: dict[int, set[int]] = field(default_factory=dict)
    initial_rows: dict[int, dict[int, float]] = field(default_factory=dict)

    pivot_count: int = 0
    update_count: int = 0
    restorations: int = 0
    zeroed_small_pivots: int = 0
    _restored_at: int = -1

    # -- construction -----------------------------------------------------

    @property
    def num_vars(self) -> int:
        return len(self.value)

    def add_variable(self, lower: float = -INF, upper: float = INF, name: str | None = None) -> int:
        var = len(self.value)
        self.lower.append(float(lower))
        self.upper.append(float(upper))
        self.value.append(0.0)
        self.names.append(name if name is not None else f"x{var}")
        self.cols[var] = set()
        return var

    def set_bounds(self, var: int, lower: float | None = None, upper: float | None = None) -> None:
        if lower is not None:
            self.lower[var] = float(lower)
        if upper is not None:
            self.upper[var] = float(upper)

    def add_row(self, basic: int, coefficients: Mapping[int, float]) -> None:
        """Install ``basic = sum(c * x)`` as a new tableau row.

        ``basic`` must be a fresh variable that appears nowhere else.  Basic
        variables among ``coefficients`` are substituted by their rows, both
        in the working tableau and in the stored initial tableau, so the new
        row is in tableau form in each.  The value of ``basic`` is set so that
        the row holds under the current assignment.
        """
        if basic in self.rows or self.cols.get(basic):
            raise ValueError(f"variable {basic} already appears in the tableau")
        self.rows[basic] = row = self._substitute(coefficients, self.rows)
        for var in row:
            self.cols[var].add(basic)
        self.initial_rows[basic] = self._substitute(coefficients, self.initial_rows)
        self.value[basic] = sum(c * self.value[v] for v, c in row.items())

    def _substitute(self, coefficients: Mapping[int, float], rows: Mapping[int, dict[int, float]]) -> dict[int, float]:
        out: dict[int, float] = {}
        for var, coeff in coefficients.items():
            if coeff == 0.0:
                continue
            if var in rows:
                for inner, c in rows[var].items():
                    out[inner] = out.get(inner, 0.0) + coeff * c
            else:
                out[var] = out.get(var, 0.0) + coeff
        return {v: c for v, c in out.items() if abs(c) >= self.drop_tolerance}

    # -- queries ----------------------------------------------------------

    def is_basic(self, var: int) -> bool:
        return var in self.rows

    @property
    def basics(self) -> set[int]:
        return set(self.rows)

    def coefficient(self, basic: int, var: int) -> float:
        return self.rows[basic].get(var, 0.0)

    def row_residual(self, basic: int) -> float:
        row = self.rows[basic]
        return self.value[basic] - sum(c * self.value[v] for v, c in row.items())

    def max_row_residual(self) -> float:
        return max((abs(self.row_residual(b)) for b in self.rows), default=0.0)

    def violation(self, var: int) -> float:
        """Distance of the current value outside ``[l, u]`` (0 when inside, within tolerance)."""
        val = self.value[var]
        if val < self.lower[var] - self.bound_tolerance:
            return self.lower[var] - val
        if val > self.upper[var] + self.bound_tolerance:
            return val - self.upper[var]
        return 0.0

    def out_of_bounds(self) -> list[int]:
        return [v for v in range(self.num_vars) if self.violation(v) > 0.0]

    def within_bounds(self) -> bool:
        return not any(self.violation(v) > 0.0 for v in range(self.num_vars))

    def slack_sets(self, basic: int) -> tuple[set[int], set[int]]:
        if basic not in self.rows:
            raise ValueError(f"variable {basic} is not basic")
        plus: set[int] = set()
        minus: set[int] = set()
        for var, coeff in self.rows[basic].items():
            can_increase = self.value[var] < self.upper[var]
            can_decrease = self.value[var] > self.lower[var]
            if (coeff > 0 and can_increase) or (coeff < 0 and can_decrease):
                plus.add(var)
            if (coeff < 0 and can_increase) or (coeff > 0 and can_decrease):
                minus.add(var)
        return plus, minus

    # -- primitive operations ---------------------------------------------

    def pivot(self, leaving: int, entering: int, *, force: bool = False) -> None:
        """Swap basic ``leaving`` with non-basic ``entering``; the assignment is untouched."""
        row = self.rows.get(leaving)
        if row is None:
            raise ValueError(f"leaving variable {leaving} is not basic")
        pivot_element = row.get(entering, 0.0)
        if pivot_element == 0.0:
            raise ValueError(f"T[{leaving},{entering}] is zero")
        if abs(pivot_element) < self.min_pivot and not force:
            raise DegeneratePivotError(f"|T[{leaving},{entering}]| = {abs(pivot_element):.3g} < {self.min_pivot:g}")

        del self.rows[leaving]
        drop = self.drop_tolerance
        cols = self.cols
        inv = 1.0 / pivot_element
        new_row = {leaving: inv}
        for var, coeff in row.items():
            cols[var].discard(leaving)
            if var != entering:
                new_row[var] = -coeff * inv

        for basic in list(cols[entering]):
            other = self.rows[basic]
            factor = other.pop(entering)
            for var, coeff in new_row.items():
                updated = other.get(var, 0.0) + factor * coeff
                if abs(updated) < drop:
                    if var in other:
                        del other[var]
                        cols[var].discard(basic)
                else:
                    if var not in other:
                        cols[var].add(basic)
                    other[var] = updated
        cols[entering] = set()
        self.rows[entering] = new_row
        for var in new_row:
            cols[var].add(entering)
        self.pivot_count += 1

    def update(self, var: int, delta: float) -> None:
        if var in self.rows:
            raise ValueError(f"cannot update basic variable {var}")
        if delta == 0.0:
            return
        self.value[var] += delta
        for basic in self.cols[var]:
            self.value[basic] += delta * self.rows[basic][var]
        self.update_count += 1

    def assign(self, var: int, target: float) -> None:
        """Update non-basic ``var`` so that its value is exactly ``target``."""
        delta = target - self.value[var]
        self.update(var, delta)
        self.value[var] = target

    def recompute_basics(self) -> None:
        for basic, row in self.rows.items():
            self.value[basic] = sum(c * self.value[v] for v, c in row.items())

    # -- the derivation rules ---------------------------------------------

    def repair_out_of_bounds(
        self,
        max_steps: int | None = None,
        on_pivot: Callable[[int], None] | None = None,
        should_stop: Callable[[], bool] | None = None,
    ) -> RepairOutcome:
        """Apply Update / Pivot1 / Pivot2 until every variable is within bounds or Failure applies.

        The default selection picks the most violated basic variable and the
        slack variable with the largest coefficient; after ``bland_after``
        steps (or always, with ``always_bland``) it switches to Bland's rule,
        lowest index first, which guarantees termination.
        """
        steps = 0
        tol = self.bound_tolerance
        lower, upper, value = self.lower, self.upper, self.value
        while True:
            if should_stop is not None and should_stop():
                return RepairOutcome(RepairStatus.INTERRUPTED, steps)
            if max_steps is not None and steps >= max_steps:
                return RepairOutcome(RepairStatus.INTERRUPTED, steps)
            bland = self.always_bland or steps >= self.bland_after

            for var in range(len(value)):
                if var in self.rows:
                    continue
                val = value[var]
                if val < lower[var] - tol:
                    # Update rule: move onto the violated bound
                    self.assign(var, lower[var])
                    steps += 1
                elif val > upper[var] + tol:
                    self.assign(var, upper[var])
                    steps += 1

            leaving = -1
            worst = 0.0
            for var in self.rows:
                val = value[var]
                if val < lower[var] - tol:
                    gap = lower[var] - val
                elif val > upper[var] + tol:
                    gap = val - upper[var]
                else:
                    continue
                if leaving < 0 or (bland and var < leaving) or (not bland and (gap > worst or (gap == worst and var < leaving))):
                    leaving, worst = var, gap
            if leaving < 0:
                return RepairOutcome(RepairStatus.ALL_WITHIN_BOUNDS, steps)

            below = value[leaving] < lower[leaving]
            plus, minus = self.slack_sets(leaving)
            candidates = plus if below else minus
            if not candidates:
                return RepairOutcome(RepairStatus.INFEASIBLE, steps, leaving, dict(self.rows[leaving]), below)

            row = self.rows[leaving]
            safe = [v for v in candidates if abs(row[v]) >= self.min_pivot]
            if not safe:
                # tiny elements are usually accumulated noise: rebuild the rows from
                # the initial tableau once, and treat whatever is still tiny as zero
                if self._restored_at != self.pivot_count:
                    logger.info("pivot candidates for row %d are all below %g; restoring tableau",
                                leaving, self.min_pivot)
                    numerics.restore_tableau(self)
                    self._restored_at = self.pivot_count
                    continue
                self.zeroed_small_pivots += 1
                kept = {v: c for v, c in row.items() if v not in candidates}
                return RepairOutcome(RepairStatus.INFEASIBLE, steps, leaving, kept, below)
            if bland:
                entering = min(safe)
            else:
                entering = min(safe, key=lambda v: (-abs(row[v]), v))
            self.pivot(leaving, entering)
            steps += 1
            if on_pivot is not None:
                on_pivot(entering)
            # on_pivot may have tightened the leaving variable's bounds
            target = lower[leaving] if below else upper[leaving]
            self.assign(leaving, target)

    def check_invariants(self, tol: float = 1e-9) -> None:
        basics = set(self.rows)
        for basic, row in self.rows.items():
            overlap = basics.intersection(row)
            if overlap:
                raise AssertionError(f"row {basic} mentions basic variables {sorted(overlap)}")
            if abs(self.row_residual(basic)) > tol * max(1.0, abs(self.value[basic])):
                raise AssertionError(f"row {basic} violated by {self.row_residual(basic):.3g}")
        for var, users in self.cols.items():
            for basic in users:
                if var not in self.rows.get(basic, {}):
                    raise AssertionError(f"stale column entry {var} -> {basic}")


def init_configuration(atoms: Iterable[LinearAtom], num_vars: int | None = None,
                       names: Iterable[str] | None = None, **options) -> SimplexState:
    """Build the initial configuration: one auxiliary basic variable per atom.

    Problem variables get ids ``0..num_vars-1`` with bounds ``(-inf, inf)``;
    auxiliaries follow in atom order.  All values start at zero.
    """
    atoms = list(atoms)
    if num_vars is None:
        num_vars = 1 + max((int(k) for a in atoms for k in a.coefficients), default=-1)
    state = SimplexState(**options)
    names = list(names) if names is not None else []
    for var in range(num_vars):
        state.add_variable(name=names[var] if var < len(names) else None)
    for index, atom in enumerate(atoms):
        coeffs = atom.coefficients
        if any(not 0 <= int(k) < num_vars for k in coeffs):
            raise ValueError(f"atom {index} references a variable outside 0..{num_vars - 1}")
        lo, hi = atom.bounds()
        aux = state.add_variable(lo, hi, name=f"a{index + 1}")
        state.add_row(aux, {int(k): c for k, c in coeffs.items()})
    return state
