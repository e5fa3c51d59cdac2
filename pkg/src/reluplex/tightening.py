"""Row-based bound tightening and ReLU phase elimination.

For a row ``x_i = sum_j c_j x_j`` the smallest value the right-hand side can
take is ``sum_{c_j>0} c_j l(x_j) + sum_{c_j<0} c_j u(x_j)``; whenever that is
above ``l(x_i)`` the lower bound moves up (and symmetrically for the upper
bound).  With ``bidirectional`` tightening the same equation is also solved
for every non-basic variable of the row.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from reluplex.relu import Phase, ReluPair
from reluplex.splitting import LOWER, UPPER, DerivedBound

if TYPE_CHECKING:
    from reluplex.engine import Reluplex

INF = math.inf


def tighten_row(solver: Reluplex, basic: int, bidirectional: bool | None = None) -> list[DerivedBound]:
    state = solver.state
    if basic not in state.rows:
        raise ValueError(f"variable {basic} is not basic")
    if bidirectional is None:
        bidirectional = solver.config.bidirectional_tightening
    lower, upper = state.lower, state.upper

    # the row as sum(a_m x_m) = 0, with a = -1 for the basic variable
    terms = [(basic, -1.0)]
    terms.extend(state.rows[basic].items())

    # per term: smallest / largest value of a_m * x_m
    lo_parts = []
    hi_parts = []
    lo_sum = hi_sum = 0.0
    lo_inf = hi_inf = 0
    for var, a in terms:
        if a > 0:
            lo, hi = a * lower[var], a * upper[var]
        else:
            lo, hi = a * upper[var], a * lower[var]
        lo_parts.append(lo)
        hi_parts.append(hi)
        if lo == -INF:
            lo_inf += 1
        else:
            lo_sum += lo
        if hi == INF:
            hi_inf += 1
        else:
            hi_sum += hi

    derived = []
    targets = range(len(terms)) if bidirectional else range(1)
    for k in targets:
        var, a = terms[k]
        # bounds of the rest of the row, excluding term k
        if lo_parts[k] == -INF:
            rest_lo = lo_sum if lo_inf == 1 else -INF
        else:
            rest_lo = lo_sum - lo_parts[k] if lo_inf == 0 else -INF
        if hi_parts[k] == INF:
            rest_hi = hi_sum if hi_inf == 1 else INF
        else:
            rest_hi = hi_sum - hi_parts[k] if hi_inf == 0 else INF
        # a * x = -rest
        if a > 0:
            new_lo, new_hi = -rest_hi / a, -rest_lo / a
        else:
            new_lo, new_hi = -rest_lo / a, -rest_hi / a

        if new_lo > -INF and new_lo > lower[var]:
            sources = _row_sources(terms, k, want_lower=(a > 0) is False)
            entry = solver.tighten_lower(var, new_lo, sources, source_row=basic)
            if entry is not None:
                derived.append(entry)
        if new_hi < INF and new_hi < upper[var]:
            sources = _row_sources(terms, k, want_lower=(a > 0) is True)
            entry = solver.tighten_upper(var, new_hi, sources, source_row=basic)
            if entry is not None:
                derived.append(entry)
    return derived


def _row_sources(terms, k, want_lower):
    """Bounds used to bound term ``k``: for a lower bound on x_k with a_k > 0 the
    rest of the row is maximised, which reads upper bounds of positive terms."""
    out = []
    for m, (var, a) in enumerate(terms):
        if m == k:
            continue
        # want_lower=True means the rest is minimised
        use_lower = (a > 0) == want_lower
        out.append((var, LOWER if use_lower else UPPER))
    return out


def eliminate_relu_phases(solver: Reluplex) -> list[tuple[ReluPair, Phase]]:
    """Fix pairs whose bounds already decide the phase; sync pair bounds otherwise."""
    state = solver.state
    lower, upper = state.lower, state.upper
    fixed = []
    for pair in solver.pairs:
        b, f = pair.backward, pair.forward
        if pair.phase is Phase.ACTIVE:
            # f = b
            solver.tighten_lower(f, lower[b], [(b, LOWER)])
            solver.tighten_lower(b, lower[f], [(f, LOWER)])
            solver.tighten_upper(f, upper[b], [(b, UPPER)])
            solver.tighten_upper(b, upper[f], [(f, UPPER)])
            continue
        if pair.phase is Phase.INACTIVE:
            continue
        if lower[f] > 0 and upper[b] < 0:
            raise solver.conflict(b, lower[f], upper[b], [(f, LOWER), (b, UPPER)])
        if lower[b] >= 0:
            solver.fix_phase(pair, Phase.ACTIVE, [(b, LOWER)])
            fixed.append((pair, Phase.ACTIVE))
        elif lower[f] > 0:
            solver.fix_phase(pair, Phase.ACTIVE, [(f, LOWER)])
            fixed.append((pair, Phase.ACTIVE))
        elif upper[b] <= 0:
            solver.fix_phase(pair, Phase.INACTIVE, [(b, UPPER)])
            fixed.append((pair, Phase.INACTIVE))
        elif upper[f] <= 0:
            solver.fix_phase(pair, Phase.INACTIVE, [(f, UPPER)])
            fixed.append((pair, Phase.INACTIVE))
        else:
            # undecided: b <= f and f <= max(0, b)
            solver.tighten_upper(f, upper[b], [(b, UPPER)])
            solver.tighten_upper(b, upper[f], [(f, UPPER)])
    return fixed


@dataclass
class PassOutcome:
    derived: list[DerivedBound] = field(default_factory=list)
    phases: list[tuple[ReluPair, Phase]] = field(default_factory=list)
    sweeps: int = 0

    @property
    def changed(self) -> bool:
        return bool(self.derived or self.phases)


def tighten_pass(solver: Reluplex, entering: int | None = None, max_sweeps: int | None = None) -> PassOutcome:
    """Tighten the row of ``entering`` only, or sweep the whole tableau to a fixpoint.

    Contradictions surface as :class:`BoundConflict`.
    """
    outcome = PassOutcome()
    if entering is not None:
        if entering in solver.state.rows:
            outcome.derived.extend(tighten_row(solver, entering))
        outcome.phases.extend(eliminate_relu_phases(solver))
        outcome.sweeps = 1
        return outcome

    sweeps = solver.config.fixpoint_sweeps if max_sweeps is None else max_sweeps
    for _ in range(sweeps):
        before = len(outcome.derived) + len(outcome.phases)
        for basic in list(solver.state.rows):
            outcome.derived.extend(tighten_row(solver, basic))
        outcome.phases.extend(eliminate_relu_phases(solver))
        outcome.sweeps += 1
        if len(outcome.derived) + len(outcome.phases) == before:
            break
    return outcome


def under_approximate(solver: Reluplex, epsilon: float) -> list[tuple[ReluPair, Phase]]:
    """Shrink every backward variable's range by ``epsilon`` per finite side.

    Pairs whose backward lower bound sits in ``[-epsilon, 0)`` are pushed to
    ``l = 0`` (active); pairs whose forward upper bound is in ``(0, epsilon]``
    are pushed to ``u = 0`` (inactive).  Any SAT answer found afterwards is
    still a solution of the original problem; UNSAT answers are not final.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    state = solver.state
    lower, upper = state.lower, state.upper
    fixed = []
    solver.under_approximated = True
    for pair in solver.pairs:
        if pair.fixed:
            continue
        b, f = pair.backward, pair.forward
        if -epsilon <= lower[b] < 0:
            solver.restrict_lower(b, 0.0)
        elif 0 < upper[f] <= epsilon:
            solver.restrict_upper(f, 0.0)
        else:
            lo, hi = lower[b], upper[b]
            if hi - lo > 2 * epsilon:
                if lo > -INF:
                    solver.restrict_lower(b, lo + epsilon)
                if hi < INF:
                    solver.restrict_upper(b, hi - epsilon)
            continue
        phase = Phase.ACTIVE if lower[b] >= 0 else Phase.INACTIVE
        solver.fix_phase(pair, phase, [])
        fixed.append((pair, phase))
    return fixed
