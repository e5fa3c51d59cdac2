"""Floating-point hygiene: tolerances, roundoff measurement, tableau restoration.

All results produced with these routines are floating-point results; a
restored tableau raises confidence but does not make an answer formally sound.
"""
from __future__ import annotations

import enum
import logging
import random
from dataclasses import dataclass
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from reluplex.simplex import SimplexState

logger = logging.getLogger(__name__)

BOUND_TOLERANCE = 1e-9
RELU_TOLERANCE = 1e-9
WITNESS_TOLERANCE = 1e-6
MIN_PIVOT_ELEMENT = 1e-6
DROP_TOLERANCE = 1e-12
TIGHTENING_MARGIN = 1e-12
ROUNDOFF_THRESHOLD = 1e-6
ROUNDOFF_CADENCE = 5000


class RestorationError(RuntimeError):
    """No pivot ordering rebuilds the current basis from the initial tableau."""


@dataclass(frozen=True)
class RoundoffReport:
    cumulative_error: float
    per_row_worst: tuple[int | None, float]
    pivots_since_last_check: int


class CheckOutcome(enum.Enum):
    SKIPPED = "skipped"
    CHECKED = "checked"
    RESTORED = "restored"


def measure_roundoff(state: SimplexState, pivots_since_last_check: int = 0) -> RoundoffReport:
    """Sum over the initial rows of ``|alpha(x_i) - sum_j T0[i,j] * alpha(x_j)|``."""
    value = state.value
    total = 0.0
    worst: tuple[int | None, float] = (None, 0.0)
    for basic, row in state.initial_rows.items():
        err = abs(value[basic] - sum(c * value[v] for v, c in row.items()))
        total += err
        if err > worst[1]:
            worst = (basic, err)
    return RoundoffReport(total, worst, pivots_since_last_check)


def _plan_pivots(rows: dict[int, dict[int, float]], entering: list[int], leaving: set[int],
                 min_pivot: float, rng: random.Random | None) -> list[tuple[int, int]] | None:
    """Greedy pivot plan on a scratch copy; ``None`` when it gets stuck."""
    rows = {b: dict(r) for b, r in rows.items()}
    todo = list(entering)
    leaving = set(leaving)
    plan = []
    while todo:
        best = None
        order = todo if rng is None else rng.sample(todo, len(todo))
        for var in order:
            for basic in leaving:
                coeff = abs(rows[basic].get(var, 0.0))
                if coeff >= min_pivot and (best is None or coeff > best[0]):
                    best = (coeff, basic, var)
            if rng is not None and best is not None:
                break
        if best is None:
            return None
        _, basic, var = best
        _scratch_pivot(rows, basic, var)
        plan.append((basic, var))
        todo.remove(var)
        leaving.discard(basic)
    return plan


def _scratch_pivot(rows: dict[int, dict[int, float]], leaving: int, entering: int) -> None:
    row = rows.pop(leaving)
    c = row.pop(entering)
    new_row = {leaving: 1.0 / c}
    for v, a in row.items():
        new_row[v] = -a / c
    for other in rows.values():
        factor = other.pop(entering, None)
        if factor is None:
            continue
        for v, a in new_row.items():
            updated = other.get(v, 0.0) + factor * a
            if abs(updated) < DROP_TOLERANCE:
                other.pop(v, None)
            else:
                other[v] = updated
    rows[entering] = new_row


def restore_tableau(state: SimplexState, *, attempts: int = 20, seed: int = 0) -> int:
    """Rebuild the working tableau from the initial one, keeping the basic set.

    Pivots each currently-basic variable that is non-basic initially into the
    basis exactly once, always taking the largest available pivot element.
    Basic values are then recomputed from the restored rows.  Returns the
    number of pivots performed.
    """
    target = set(state.rows)
    initial_basics = set(state.initial_rows)
    if len(target) != len(initial_basics):
        raise RestorationError("basis size differs from the initial tableau")
    entering = sorted(target - initial_basics)
    leaving = initial_basics - target

    plan = _plan_pivots(state.initial_rows, entering, leaving, state.min_pivot, None)
    rng = random.Random(seed)
    tries = 0
    while plan is None and tries < attempts:
        plan = _plan_pivots(state.initial_rows, entering, leaving, state.min_pivot, rng)
        tries += 1
    if plan is None:
        # last resort: accept tiny pivot elements
        plan = _plan_pivots(state.initial_rows, entering, leaving, DROP_TOLERANCE, None)
    if plan is None:
        raise RestorationError(f"cannot reach basis of size {len(target)} from the initial tableau")

    state.rows = {b: dict(r) for b, r in state.initial_rows.items()}
    state.cols = {v: set() for v in range(state.num_vars)}
    for basic, row in state.rows.items():
        for var in row:
            state.cols[var].add(basic)
    counted = state.pivot_count
    for basic, var in plan:
        state.pivot(basic, var, force=True)
    state.pivot_count = counted
    state.recompute_basics()
    if set(state.rows) != target:
        raise RestorationError("restoration produced a different basis")
    state.restorations += 1
    return len(plan)


class RoundoffMonitor:
    """Periodic roundoff check: measure every ``cadence`` pivots, restore above ``threshold``."""

    def __init__(self, threshold: float = ROUNDOFF_THRESHOLD, cadence: int = ROUNDOFF_CADENCE):
        if threshold <= 0 or cadence <= 0:
            raise ValueError("threshold and cadence must be positive")
        self.threshold = threshold
        self.cadence = cadence
        self.last_check = 0
        self.restorations = 0
        self.history: list[tuple[float, float | None]] = []

    def check_and_maybe_restore(self, state: SimplexState) -> CheckOutcome:
        since = state.pivot_count - self.last_check
        if since < self.cadence:
            return CheckOutcome.SKIPPED
        self.last_check = state.pivot_count
        report = measure_roundoff(state, since)
        if report.cumulative_error <= self.threshold:
            self.history.append((report.cumulative_error, None))
            return CheckOutcome.CHECKED
        restore_tableau(state)
        after = measure_roundoff(state).cumulative_error
        self.history.append((report.cumulative_error, after))
        self.restorations += 1
        logger.info("tableau restored: roundoff %.3g -> %.3g", report.cumulative_error, after)
        return CheckOutcome.RESTORED


def check_and_maybe_restore(state: SimplexState, threshold: float = ROUNDOFF_THRESHOLD,
                            cadence: int = ROUNDOFF_CADENCE, monitor: RoundoffMonitor | None = None) -> CheckOutcome:
    monitor = monitor or RoundoffMonitor(threshold, cadence)
    return monitor.check_and_maybe_restore(state)
