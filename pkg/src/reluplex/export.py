"""Encodings of a network query for external solvers: SMT-LIB (QF_LRA) and big-M mixed-integer LP."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from typing import Sequence

from reluplex.frontend import Encoding, Query, encode
from reluplex.network import Network, interval_bounds
from reluplex.simplex import LinearAtom, Relation

logger = logging.getLogger(__name__)

DEFAULT_BIG_M = 1e6


class BigMError(ValueError):
    pass


def smt_number(x: float) -> str:
    """Exact decimal rendering of a double; negatives as ``(- d)``."""
    if not math.isfinite(x):
        raise ValueError(f"cannot write non-finite value {x} to SMT-LIB")
    # Decimal(x) is exact; normalize() would round to the context precision
    text = format(Decimal(x), "f")
    if "." in text:
        text = text.rstrip("0")
    if text.endswith(".") or "." not in text:
        text = text.rstrip(".") + ".0"
    if text.startswith("-"):
        return f"(- {text[1:]})"
    return text


def _smt_sum(coeffs: dict[int, float], names: Sequence[str]) -> str:
    terms = []
    for var, c in coeffs.items():
        terms.append(names[var] if c == 1.0 else f"(* {smt_number(c)} {names[var]})")
    if not terms:
        return "0.0"
    return terms[0] if len(terms) == 1 else "(+ " + " ".join(terms) + ")"


def _smt_relation(rel: Relation) -> str:
    return {Relation.EQ: "=", Relation.LE: "<=", Relation.GE: ">="}[rel]


def to_smtlib(net: Network, query: Query) -> str:
    """One ``declare-fun`` per node value, one equality per layer row, one ``ite`` per ReLU."""
    enc = encode(net, query)
    names = _safe_names(enc.names)
    lines = ["(set-logic QF_LRA)"]
    lines.extend(f"(declare-fun {name} () Real)" for name in names)
    for atom in enc.atoms:
        coeffs = {int(k): c for k, c in atom.coefficients.items()}
        lines.append(f"(assert ({_smt_relation(atom.relation)} {_smt_sum(coeffs, names)} {smt_number(atom.constant)}))")
    for var in range(enc.num_vars):
        lo, hi = enc.bounds.get(var, (-math.inf, math.inf))
        if math.isfinite(lo):
            lines.append(f"(assert (>= {names[var]} {smt_number(lo)}))")
        if math.isfinite(hi):
            lines.append(f"(assert (<= {names[var]} {smt_number(hi)}))")
    for b, f in enc.relu_pairs:
        lines.append(f"(assert (= {names[f]} (ite (>= {names[b]} 0.0) {names[b]} 0.0)))")
    lines.append("(check-sat)")
    lines.append("(get-model)")
    return "\n".join(lines) + "\n"


def _safe_names(names: Sequence[str]) -> list[str]:
    return [n.replace(" ", "_") for n in names]


def reachable_backward_bound(net: Network, query: Query) -> float | None:
    """Largest ``|backward|`` any ReLU can take over the input box, or None when unbounded."""
    if len(query.input_box) != net.num_inputs:
        raise ValueError("query does not match the network's input dimension")
    biggest = 0.0
    for i, (lo, hi) in enumerate(interval_bounds(net, query.normalized_box), start=1):
        if not net.relu_layer(i):
            continue
        for a, b in zip(lo, hi):
            if not (math.isfinite(a) and math.isfinite(b)):
                return None
            biggest = max(biggest, abs(a), abs(b))
    return biggest


def choose_big_m(net: Network, query: Query, big_m: float | None = None, margin: float = 2.0) -> tuple[float, bool]:
    """Return ``(M, validated)``.

    With finite interval bounds, a given ``M`` must exceed the reachable
    magnitude; without one, ``margin`` times that magnitude (at least 1) is
    used.  With infinite bounds a user ``M`` is accepted but not validated,
    and ``None`` is refused.
    """
    reach = reachable_backward_bound(net, query)
    if reach is None:
        if big_m is None:
            raise BigMError("ReLU inputs are unbounded over the input box; an explicit big-M value is required")
        return float(big_m), False
    if big_m is None:
        return max(1.0, margin * reach), True
    if not big_m > reach:
        raise BigMError(f"big-M {big_m} does not exceed the reachable |backward| bound {reach:.6g}")
    return float(big_m), True


def _lp_number(x: float) -> str:
    return repr(float(x))


def _lp_expr(coeffs: dict[str, float]) -> str:
    parts = []
    for name, c in coeffs.items():
        sign = "-" if c < 0 else "+"
        mag = abs(c)
        term = name if mag == 1.0 else f"{_lp_number(mag)} {name}"
        parts.append(f"{sign} {term}")
    text = " ".join(parts)
    return text[2:] if text.startswith("+ ") else text


@dataclass
class LpExport:
    text: str
    big_m: float
    validated: bool
    num_rows: int


def to_bigm_lp(net: Network, query: Query, big_m: float | None = None) -> LpExport:
    """CPLEX LP text with two booleans and six rows per ReLU::

        b_on + b_off = 1
        y >= 0
        x - y - M b_off <= 0
        x - y + M b_off >= 0
        y - M b_on <= 0
        x - M b_on <= 0
    """
    m, validated = choose_big_m(net, query, big_m)
    enc = encode(net, query)
    names = _safe_names(enc.names)
    rows: list[str] = []

    def add(coeffs: dict[str, float], rel: str, rhs: float) -> None:
        rows.append(f" c{len(rows) + 1}: {_lp_expr(coeffs)} {rel} {_lp_number(rhs)}")

    for atom in enc.atoms:
        coeffs = {names[int(k)]: c for k, c in atom.coefficients.items()}
        add(coeffs, {Relation.EQ: "=", Relation.LE: "<=", Relation.GE: ">="}[atom.relation], atom.constant)
    base_rows = len(rows)
    binaries = []
    for k, (b, f) in enumerate(enc.relu_pairs):
        x, y = names[b], names[f]
        on, off = f"b_on_{k}", f"b_off_{k}"
        binaries.extend([on, off])
        add({on: 1.0, off: 1.0}, "=", 1.0)
        add({y: 1.0}, ">=", 0.0)
        add({x: 1.0, y: -1.0, off: -m}, "<=", 0.0)
        add({x: 1.0, y: -1.0, off: m}, ">=", 0.0)
        add({y: 1.0, on: -m}, "<=", 0.0)
        add({x: 1.0, on: -m}, "<=", 0.0)
    bounds = []
    for var, name in enumerate(names):
        lo, hi = enc.bounds.get(var, (-math.inf, math.inf))
        if lo == -math.inf and hi == math.inf:
            bounds.append(f" {name} free")
            continue
        lo_s = "-inf" if lo == -math.inf else _lp_number(lo)
        hi_s = "+inf" if hi == math.inf else _lp_number(hi)
        bounds.append(f" {lo_s} <= {name} <= {hi_s}")
    text = "\n".join([
        f"\\ big-M = {_lp_number(m)} ({'validated against interval bounds' if validated else 'NOT validated'})",
        "Minimize",
        " obj: 0 " + (names[0] if names else ""),
        "Subject To",
        *rows,
        "Bounds",
        *bounds,
        "Binary",
        *(f" {b}" for b in binaries),
        "End",
    ]) + "\n"
    return LpExport(text, m, validated, len(rows) - base_rows)


def write_export(net: Network, query: Query, fmt: str, big_m: float | None = None) -> tuple[str, float | None, bool]:
    if fmt == "smtlib":
        return to_smtlib(net, query), None, True
    if fmt in ("bigm-lp", "lp", "bigM-lp"):
        lp = to_bigm_lp(net, query, big_m)
        return lp.text, lp.big_m, lp.validated
    raise ValueError(f"unknown export format {fmt!r}; use 'smtlib' or 'bigm-lp'")


# -- evaluation of exported text (used to check witnesses against the exports) --

def _parse_sexpr(text: str):
    tokens = text.replace("(", " ( ").replace(")", " ) ").split()
    pos = 0

    def read():
        nonlocal pos
        tok = tokens[pos]
        pos += 1
        if tok == "(":
            out = []
            while tokens[pos] != ")":
                out.append(read())
            pos += 1
            return out
        return tok

    forms = []
    while pos < len(tokens):
        forms.append(read())
    return forms


def _eval_smt(expr, env: dict[str, Fraction]):
    if isinstance(expr, str):
        if expr in env:
            return env[expr]
        if expr == "true":
            return True
        if expr == "false":
            return False
        return Fraction(expr)
    op, *args = expr
    vals = [_eval_smt(a, env) for a in args]
    if op == "+":
        return sum(vals, Fraction(0))
    if op == "-":
        return -vals[0] if len(vals) == 1 else vals[0] - sum(vals[1:], Fraction(0))
    if op == "*":
        out = Fraction(1)
        for v in vals:
            out *= v
        return out
    if op == "ite":
        return vals[1] if vals[0] else vals[2]
    if op in ("=", "<=", ">="):
        return {"=": vals[0] == vals[1], "<=": vals[0] <= vals[1], ">=": vals[0] >= vals[1]}[op]
    raise ValueError(f"unsupported SMT-LIB operator {op!r}")


def check_smtlib_assignment(text: str, values: dict[str, float], tol: float = 1e-6) -> list[str]:
    """Assertions of ``text`` violated by ``values`` (relations compared with tolerance ``tol``)."""
    env = {k: Fraction(v) for k, v in values.items()}
    slack = Fraction(tol)
    failures = []
    for form in _parse_sexpr(text):
        if not (isinstance(form, list) and form and form[0] == "assert"):
            continue
        body = form[1]
        op, lhs, rhs = body
        left, right = _eval_smt(lhs, env), _eval_smt(rhs, env)
        ok = {"=": abs(left - right) <= slack, "<=": left <= right + slack, ">=": left >= right - slack}[op]
        if not ok:
            failures.append(str(body))
    return failures


def check_lp_assignment(text: str, values: dict[str, float], tol: float = 1e-6) -> list[str]:
    """Constraint rows of an LP export violated by ``values`` (binaries included in ``values``)."""
    failures = []
    section = None
    for line in text.splitlines():
        stripped = line.strip()
        if stripped in ("Minimize", "Subject To", "Bounds", "Binary", "End"):
            section = stripped
            continue
        if section != "Subject To" or not stripped:
            continue
        label, body = stripped.split(":", 1)
        for rel in ("<=", ">=", "="):
            if f" {rel} " in body:
                lhs, rhs = body.rsplit(f" {rel} ", 1)
                break
        tokens = lhs.split()
        total = 0.0
        sign, coeff = 1.0, 1.0
        for tok in tokens:
            if tok in "+-":
                sign = -1.0 if tok == "-" else 1.0
                coeff = 1.0
                continue
            try:
                coeff = float(tok)
                continue
            except ValueError:
                total += sign * coeff * values[tok]
                sign, coeff = 1.0, 1.0
        rhs_v = float(rhs)
        scale = tol * max(1.0, abs(rhs_v), abs(total))
        ok = {"<=": total <= rhs_v + scale, ">=": total >= rhs_v - scale, "=": abs(total - rhs_v) <= scale}[rel]
        if not ok:
            failures.append(f"{label}: {total} {rel} {rhs_v}")
    return failures


def witness_values(enc: Encoding, assignment: Sequence[float], big_m_binaries: bool = True) -> dict[str, float]:
    """Name-keyed values for the export checkers, with ReLU indicator values filled in."""
    names = _safe_names(enc.names)
    values = {name: float(assignment[v]) for v, name in enumerate(names)}
    if big_m_binaries:
        for k, (b, _) in enumerate(enc.relu_pairs):
            active = assignment[b] > 0
            values[f"b_on_{k}"] = 1.0 if active else 0.0
            values[f"b_off_{k}"] = 0.0 if active else 1.0
    return values
