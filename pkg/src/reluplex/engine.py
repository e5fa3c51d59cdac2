"""The Reluplex search: simplex repair, ReLU repair, lazy splitting, backjumping."""
from __future__ import annotations

import copy
import enum
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from reluplex import numerics
from reluplex.config import SolverConfig
from reluplex.relu import Phase, ReluPair
from reluplex.simplex import LinearAtom, RepairStatus, SimplexState, init_configuration
from reluplex.splitting import (
    LOWER,
    UPPER,
    BoundChange,
    BoundConflict,
    BoundKind,
    BoundLog,
    Case,
    Conflict,
    DerivedBound,
    RootUnsat,
    Snapshot,
    SplitStack,
)
from reluplex.tightening import eliminate_relu_phases, tighten_pass, under_approximate

logger = logging.getLogger(__name__)

INF = math.inf


class Verdict(enum.Enum):
    SAT = "SAT"
    UNSAT = "UNSAT"
    TIMEOUT = "TIMEOUT"
    # under-approximated UNSAT, or a witness that fails re-verification
    UNKNOWN = "UNKNOWN"


class RepairAction(enum.Enum):
    UPDATED_B = "update-b"
    UPDATED_F = "update-f"
    PIVOTED_THEN_UPDATED = "pivot-for-relu"
    NEEDS_SPLIT = "needs-split"


@dataclass
class SolveStats:
    max_stack_depth: int = 0
    total_splits: int = 0
    pivots: int = 0
    relu_repairs: int = 0
    tableau_restorations: int = 0
    wall_time: float = 0.0
    conflicts: int = 0
    backjumped_levels: int = 0
    derived_bounds: int = 0
    phase_fixes: int = 0
    zeroed_small_pivots: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SolveResult:
    verdict: Verdict
    stats: SolveStats
    assignment: list[float] | None = None
    verified: bool = False
    under_approximate: bool = False
    # double-precision arithmetic throughout: answers are not formally sound
    floating_point: bool = True
    # split trace records (push / flip / pop / conflict) when tracing is enabled
    trace: list[dict] | None = None

    @property
    def sat(self) -> bool:
        return self.verdict is Verdict.SAT


class InternalError(RuntimeError):
    pass


class Reluplex:
    """Solver for a conjunction of linear atoms, variable bounds, and ReLU pairs."""

    def __init__(self, state: SimplexState, pairs: Iterable[tuple[int, int] | ReluPair],
                 config: SolverConfig | None = None):
        self.config = config or SolverConfig()
        self.state = state
        state.min_pivot = self.config.min_pivot_element
        state.bland_after = self.config.bland_after
        state.always_bland = self.config.always_bland
        self.pairs: list[ReluPair] = []
        for index, pair in enumerate(pairs):
            if not isinstance(pair, ReluPair):
                pair = ReluPair(int(pair[0]), int(pair[1]))
            pair.index = index
            self.pairs.append(pair)
            # forward variables are non-negative by definition
            if state.lower[pair.forward] < 0:
                state.lower[pair.forward] = 0.0
        self.log = BoundLog(state.num_vars)
        self.stack = SplitStack(self, tracing=self.config.trace)
        self.stats = SolveStats()
        self.under_approximated = False
        self.on_bound: Callable[[DerivedBound, float], None] | None = None
        self.monitor = numerics.RoundoffMonitor(self.config.roundoff_threshold, self.config.roundoff_cadence)
        self._fresh_bounds: dict[int, tuple[float, float]] = {}
        self._last_full_tighten = 0
        self._deadline: float | None = None
        self._pivot_limit: int | None = None

    @classmethod
    def from_atoms(cls, atoms: Sequence[LinearAtom], relu_pairs: Iterable[tuple[int, int]], num_vars: int,
                   bounds: Mapping[int, tuple[float, float]] | None = None,
                   config: SolverConfig | None = None, names: Sequence[str] | None = None) -> "Reluplex":
        state = init_configuration(atoms, num_vars, names=names)
        for var, (lo, hi) in (bounds or {}).items():
            state.set_bounds(var, lo, hi)
        return cls(state, relu_pairs, config)

    # -- bookkeeping --------------------------------------------------------

    @property
    def depth(self) -> int:
        return self.stack.depth

    def snapshot(self) -> Snapshot:
        return Snapshot(list(self.state.lower), list(self.state.upper),
                        [p.phase for p in self.pairs], [p.repair_count for p in self.pairs], len(self.log))

    def restore(self, snap: Snapshot) -> None:
        st = self.state
        n = len(snap.lower)
        st.lower[:n] = snap.lower
        st.upper[:n] = snap.upper
        for var in range(n, st.num_vars):
            st.lower[var], st.upper[var] = self._fresh_bounds[var]
        for pair, phase, count in zip(self.pairs, snap.phases, snap.repair_counts):
            pair.phase = phase
            pair.repair_count = count
        self.log.truncate(snap.log_mark)

    def conflict(self, var: int, lower: float, upper: float, sources, min_depth: int = 0) -> BoundConflict:
        """Package ``l(var) > u(var)`` with the split depth it is blamed on."""
        sources = tuple(sources)
        self.stats.conflicts += 1
        return BoundConflict(Conflict(var, lower, upper, self.level(sources, min_depth), sources))

    def level(self, sources: Iterable[tuple[int, BoundKind]], min_depth: int = 0) -> int:
        """Split level a consequence of ``sources`` belongs to: the deepest level among them."""
        if not self.config.backjumping:
            return self.depth
        return max(min_depth, max((self.log.depth_of(v, k) for v, k in sources), default=0))

    def tighten_lower(self, var: int, value: float, sources: Iterable[tuple[int, BoundKind]] = (),
                      source_row: int | None = None, min_depth: int = 0) -> DerivedBound | None:
        st = self.state
        old = st.lower[var]
        if not value > old + numerics.TIGHTENING_MARGIN:
            return None
        sources = list(sources)
        upper = st.upper[var]
        if value > upper:
            if value - upper > numerics.BOUND_TOLERANCE * max(1.0, abs(upper)):
                raise self.conflict(var, value, upper, [*sources, (var, UPPER)], min_depth)
            # within tolerance: the two bounds meet
            value = upper
            sources.append((var, UPPER))
            if value <= old:
                return None
        entry = DerivedBound(var, LOWER, value, source_row, self.level(sources, min_depth))
        return self._record(entry, old)

    def tighten_upper(self, var: int, value: float, sources: Iterable[tuple[int, BoundKind]] = (),
                      source_row: int | None = None, min_depth: int = 0) -> DerivedBound | None:
        st = self.state
        old = st.upper[var]
        if not value < old - numerics.TIGHTENING_MARGIN:
            return None
        sources = list(sources)
        lower = st.lower[var]
        if value < lower:
            if lower - value > numerics.BOUND_TOLERANCE * max(1.0, abs(lower)):
                raise self.conflict(var, lower, value, [*sources, (var, LOWER)], min_depth)
            value = lower
            sources.append((var, LOWER))
            if value >= old:
                return None
        entry = DerivedBound(var, UPPER, value, source_row, self.level(sources, min_depth))
        return self._record(entry, old)

    def _record(self, entry: DerivedBound, old: float) -> DerivedBound:
        if entry.kind is LOWER:
            self.state.lower[entry.var] = entry.value
        else:
            self.state.upper[entry.var] = entry.value
        self.log.record(entry)
        self.stats.derived_bounds += 1
        if self.on_bound is not None:
            self.on_bound(entry, old)
        return entry

    # under-approximation narrows bounds without any derivation behind it
    def restrict_lower(self, var: int, value: float) -> None:
        self.tighten_lower(var, value, min_depth=self.depth)

    def restrict_upper(self, var: int, value: float) -> None:
        self.tighten_upper(var, value, min_depth=self.depth)

    def _ensure_link(self, pair: ReluPair) -> int:
        """Auxiliary ``link = f - b`` (always >= 0); pinning it to 0 enforces ``f = b``."""
        if pair.link is None:
            st = self.state
            link = st.add_variable(0.0, INF, name=f"link{pair.index}")
            st.add_row(link, {pair.forward: 1.0, pair.backward: -1.0})
            self.log.ensure_size(st.num_vars)
            self._fresh_bounds[link] = (0.0, INF)
            pair.link = link
        return pair.link

    def fix_phase(self, pair: ReluPair, phase: Phase, sources: Iterable[tuple[int, BoundKind]] = (),
                  min_depth: int = 0) -> None:
        sources = list(sources)
        b, f = pair.backward, pair.forward
        if phase is Phase.UNDECIDED:
            raise ValueError("cannot fix a pair to UNDECIDED")
        pair.phase = phase
        if phase is Phase.ACTIVE:
            self.tighten_lower(b, 0.0, sources, min_depth=min_depth)
            link = self._ensure_link(pair)
            self.tighten_upper(link, 0.0, sources, min_depth=min_depth)
        elif phase is Phase.INACTIVE:
            self.tighten_upper(b, 0.0, sources, min_depth=min_depth)
            self.tighten_upper(f, 0.0, sources, min_depth=min_depth)
        self.stats.phase_fixes += 1

    def apply_case(self, pair: ReluPair, case: Case) -> None:
        self.fix_phase(pair, case.phase, min_depth=self.depth)

    # -- ReLU rules ---------------------------------------------------------

    def relu_violations(self, tol: float = numerics.RELU_TOLERANCE) -> list[ReluPair]:
        value = self.state.value
        out = []
        for pair in self.pairs:
            # bounds alone enforce the relation for a fixed pair
            if pair.fixed:
                continue
            vb, vf = value[pair.backward], value[pair.forward]
            if abs(vf - max(0.0, vb)) > tol * max(1.0, abs(vb)):
                out.append(pair)
        return out

    def split_relu(self, pair: ReluPair) -> tuple[BoundChange, BoundChange]:
        st = self.state
        b = pair.backward
        if pair.fixed or not st.lower[b] < 0 < st.upper[b]:
            raise ValueError(f"{pair} is not splittable: backward range [{st.lower[b]}, {st.upper[b]}]")
        return BoundChange(b, LOWER, 0.0), BoundChange(b, UPPER, 0.0)

    def repair_relu(self, pair: ReluPair) -> RepairAction:
        st = self.state
        if not pair.fixed and pair.repair_count >= self.config.split_threshold:
            return RepairAction.NEEDS_SPLIT
        b, f = pair.backward, pair.forward
        pivoted = False
        if b in st.rows and f in st.rows:
            self._pivot_for_relu(pair)
            pivoted = True
        vf = st.value[f]
        if b not in st.rows and vf >= -numerics.BOUND_TOLERANCE:
            st.assign(b, max(vf, 0.0))
            action = RepairAction.UPDATED_B
        elif f not in st.rows:
            st.assign(f, max(0.0, st.value[b]))
            action = RepairAction.UPDATED_F
        else:
            # b non-basic, f basic and negative: bring f out of the basis instead
            self._pivot_for_relu(pair, prefer_forward=True)
            pivoted = True
            st.assign(f, max(0.0, st.value[b]))
            action = RepairAction.UPDATED_F
        pair.repair_count += 1
        self.stats.relu_repairs += 1
        if pivoted:
            return RepairAction.PIVOTED_THEN_UPDATED
        return action

    def _pivot_for_relu(self, pair: ReluPair, prefer_forward: bool = False) -> None:
        st = self.state
        rows = (pair.forward,) if prefer_forward else (pair.backward, pair.forward)

        def best_candidate():
            best = None
            for basic in rows:
                for var, coeff in st.rows.get(basic, {}).items():
                    key = (abs(coeff), -var)
                    if best is None or key > best[0]:
                        best = (key, basic, var)
            return best

        best = best_candidate()
        if best is not None and best[0][0] < st.min_pivot:
            numerics.restore_tableau(st)
            best = best_candidate()
        if best is None:
            raise InternalError(f"{pair}: both variables basic with empty rows")
        (magnitude, _), basic, entering = best
        st.pivot(basic, entering, force=magnitude < st.min_pivot)
        pair.repair_count += 1
        self._after_pivot(entering)

    # -- search -------------------------------------------------------------

    def _after_pivot(self, entering: int) -> None:
        if self.config.tighten_after_pivot:
            tighten_pass(self, entering)
        self.monitor.check_and_maybe_restore(self.state)

    def _out_of_budget(self) -> bool:
        if self._deadline is not None and time.perf_counter() > self._deadline:
            return True
        return self._pivot_limit is not None and self.state.pivot_count >= self._pivot_limit

    def _check_crossed_bounds(self) -> None:
        st = self.state
        for var in range(st.num_vars):
            lo, hi = st.lower[var], st.upper[var]
            if lo - hi > numerics.BOUND_TOLERANCE * max(1.0, abs(hi)):
                raise self.conflict(var, lo, hi, [(var, LOWER), (var, UPPER)])

    def _propagate(self, full: bool) -> None:
        if full:
            tighten_pass(self)
            self._last_full_tighten = self.state.pivot_count
        else:
            eliminate_relu_phases(self)

    def _row_conflict(self, basic: int, row: dict[int, float], below: bool) -> BoundConflict:
        """Failure rule: the row cannot reach the violated bound of ``basic``."""
        st = self.state
        sources = [(basic, LOWER if below else UPPER)]
        for var, coeff in row.items():
            # the bound each non-basic is stuck at
            at_upper = (coeff > 0) == below
            sources.append((var, UPPER if at_upper else LOWER))
        extreme = sum(c * (st.upper[v] if (c > 0) == below else st.lower[v]) for v, c in row.items())
        if below:
            lo, hi = st.lower[basic], min(extreme, st.lower[basic] - numerics.BOUND_TOLERANCE)
        else:
            lo, hi = max(extreme, st.upper[basic] + numerics.BOUND_TOLERANCE), st.upper[basic]
        if not lo > hi:
            lo, hi = hi + 1.0, hi
        return self.conflict(basic, lo, hi, sources, 0)

    def _resolve(self, exc: BoundConflict) -> bool:
        """Backjump past a conflict; False when the root itself is refuted."""
        while True:
            before = self.depth
            try:
                outcome = self.stack.handle_conflict(exc.conflict)
                if isinstance(outcome, RootUnsat):
                    return False
                self.stats.backjumped_levels += max(0, before - outcome.new_depth)
                self._propagate(self.config.tighten_on_split)
                return True
            except BoundConflict as nested:
                exc = nested

    def _choose_split(self, violated: list[ReluPair]) -> ReluPair:
        st = self.state
        ready = [p for p in violated if not p.fixed and p.repair_count >= self.config.split_threshold]
        return min(ready, key=lambda p: (-(st.upper[p.backward] - st.lower[p.backward]), p.backward))

    def _split(self, pair: ReluPair) -> None:
        self.split_relu(pair)  # validates the guard
        first = Case.ACTIVE if self.state.value[pair.backward] > 0 else Case.INACTIVE
        self.stack.push_split(pair, first)
        self._propagate(self.config.tighten_on_split)

    def _witness_ok(self, tol: float = numerics.WITNESS_TOLERANCE) -> bool:
        st = self.state
        value = st.value
        for var in range(st.num_vars):
            if value[var] < st.lower[var] - tol or value[var] > st.upper[var] + tol:
                return False
        for basic, row in st.initial_rows.items():
            if abs(value[basic] - sum(c * value[v] for v, c in row.items())) > tol:
                return False
        return all(abs(value[p.forward] - max(0.0, value[p.backward])) <= tol for p in self.pairs)

    def _finish(self, verdict: Verdict, start: float, verified: bool = False) -> SolveResult:
        stats = self.stats
        stats.max_stack_depth = self.stack.max_depth
        stats.total_splits = self.stack.total_splits
        stats.pivots = self.state.pivot_count
        stats.zeroed_small_pivots = self.state.zeroed_small_pivots
        stats.tableau_restorations = self.state.restorations
        stats.wall_time = time.perf_counter() - start
        if verdict is Verdict.UNSAT and self.under_approximated:
            verdict = Verdict.UNKNOWN
        assignment = list(self.state.value) if verdict is Verdict.SAT else None
        trace = list(self.stack.trace) if self.stack.tracing else None
        return SolveResult(verdict, copy.copy(stats), assignment, verified, self.under_approximated, trace=trace)

    def solve(self, timeout: float | None = None, max_pivots: int | None = None) -> SolveResult:
        start = time.perf_counter()
        timeout = self.config.timeout_seconds if timeout is None else timeout
        max_pivots = self.config.max_pivots if max_pivots is None else max_pivots
        self._deadline = None if timeout is None else start + timeout
        self._pivot_limit = None if max_pivots is None else self.state.pivot_count + max_pivots
        verify_failures = 0

        try:
            self._check_crossed_bounds()
            self._propagate(True)
            if self.config.under_approx_epsilon > 0:
                under_approximate(self, self.config.under_approx_epsilon)
                self._propagate(True)
        except BoundConflict as exc:
            # splits may have been pushed before solve() was called
            if not self._resolve(exc):
                return self._finish(Verdict.UNSAT, start)

        while True:
            if self._out_of_budget():
                return self._finish(Verdict.TIMEOUT, start)
            try:
                outcome = self.state.repair_out_of_bounds(on_pivot=self._after_pivot,
                                                          should_stop=self._out_of_budget)
                if outcome.status is RepairStatus.INTERRUPTED:
                    return self._finish(Verdict.TIMEOUT, start)
                if outcome.status is RepairStatus.INFEASIBLE:
                    raise self._row_conflict(outcome.basic, outcome.row, outcome.below_lower)

                if self.state.pivot_count - self._last_full_tighten >= self.config.tighten_cadence:
                    self._propagate(True)
                    if not self.state.within_bounds():
                        continue

                violated = self.relu_violations()
                if not violated:
                    if self._witness_ok():
                        return self._finish(Verdict.SAT, start, verified=True)
                    verify_failures += 1
                    logger.warning("witness failed re-verification (%d); restoring tableau", verify_failures)
                    if verify_failures > 3:
                        # never report a SAT whose assignment does not check out
                        return self._finish(Verdict.UNKNOWN, start)
                    numerics.restore_tableau(self.state)
                    continue

                pair = min(violated, key=lambda p: (p.repair_count, p.backward))
                if self.repair_relu(pair) is RepairAction.NEEDS_SPLIT:
                    self._split(self._choose_split(violated))
            except BoundConflict as exc:
                if not self._resolve(exc):
                    return self._finish(Verdict.UNSAT, start)


def solve_atoms(atoms: Sequence[LinearAtom], relu_pairs: Iterable[tuple[int, int]], num_vars: int,
                bounds: Mapping[int, tuple[float, float]] | None = None,
                config: SolverConfig | None = None) -> SolveResult:
    return Reluplex.from_atoms(atoms, relu_pairs, num_vars, bounds, config).solve()
