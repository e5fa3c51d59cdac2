"""Properties over networks: query model, encoding into solver atoms, robustness queries, witnesses."""
from __future__ import annotations

import json
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from reluplex.config import SolverConfig
from reluplex.engine import Reluplex, SolveResult, SolveStats, Verdict
from reluplex.network import Network, forward
from reluplex.numerics import WITNESS_TOLERANCE
from reluplex.simplex import LinearAtom, Relation

INF = math.inf

# margin used to express strict comparisons with non-strict atoms; it sits above
# the 1e-6 witness tolerance so an accepted witness really clears the bound
STRICT_MARGIN = 1e-5


def input_name(i: int) -> str:
    return f"x{i}"


def output_name(j: int) -> str:
    return f"y{j}"


@dataclass
class Query:
    """Input box plus linear constraints over ``x{i}`` / ``y{j}``.

    ``disjuncts`` holds alternative constraint groups; the query is satisfied
    when the base constraints and at least one group hold together.
    ``normalization`` (``{"mean": [...], "range": [...]}``) maps raw-unit box
    values to network units via ``(raw - mean) / range``.
    """

    input_box: list[tuple[float, float]]
    constraints: list[LinearAtom] = field(default_factory=list)
    disjuncts: list[list[LinearAtom]] = field(default_factory=list)
    normalization: dict[str, list[float]] | None = None
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.input_box = [(float(lo), float(hi)) for lo, hi in self.input_box]
        for i, (lo, hi) in enumerate(self.input_box):
            if lo > hi:
                raise ValueError(f"input box for x{i} is empty: [{lo}, {hi}]")
        if self.normalization is not None:
            n = len(self.input_box)
            mean = self.normalization.get("mean", [0.0] * n)
            scale = self.normalization.get("range", [1.0] * n)
            if len(mean) != n or len(scale) != n:
                raise ValueError("normalization vectors must match the input dimension")
            if any(s <= 0 for s in scale):
                raise ValueError("normalization ranges must be positive")
            self.normalization = {"mean": [float(m) for m in mean], "range": [float(s) for s in scale]}

    @property
    def normalized_box(self) -> list[tuple[float, float]]:
        if self.normalization is None:
            return list(self.input_box)
        mean, scale = self.normalization["mean"], self.normalization["range"]
        return [((lo - m) / s, (hi - m) / s) for (lo, hi), m, s in zip(self.input_box, mean, scale)]

    def expand(self) -> list["Query"]:
        """One conjunctive query per disjunct group (or just this query)."""
        if not self.disjuncts:
            return [self]
        return [replace(self, constraints=[*self.constraints, *group], disjuncts=[],
                        metadata={**self.metadata, "disjunct": k})
                for k, group in enumerate(self.disjuncts)]

    def to_dict(self) -> dict:
        out: dict[str, Any] = {
            "inputs": [[_json_float(lo), _json_float(hi)] for lo, hi in self.input_box],
            "constraints": [atom_to_dict(a) for a in self.constraints],
        }
        if self.disjuncts:
            out["disjuncts"] = [[atom_to_dict(a) for a in g] for g in self.disjuncts]
        if self.normalization is not None:
            out["normalization"] = self.normalization
        if self.metadata:
            out["metadata"] = self.metadata
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Query":
        unknown = set(data) - {"inputs", "constraints", "disjuncts", "normalization", "metadata"}
        if unknown:
            raise ValueError(f"unknown property keys: {sorted(unknown)}")
        if "inputs" not in data:
            raise ValueError("property needs an 'inputs' box")
        box = [(_parse_float(lo, -INF), _parse_float(hi, INF)) for lo, hi in data["inputs"]]
        constraints = [parse_atom(a) for a in data.get("constraints", [])]
        disjuncts = [[parse_atom(a) for a in group] for group in data.get("disjuncts", [])]
        return cls(box, constraints, disjuncts, data.get("normalization"), dict(data.get("metadata", {})))


def _json_float(x: float):
    return x if math.isfinite(x) else None


def _parse_float(x, default: float) -> float:
    if x is None:
        return default
    return float(x)


_TERM = re.compile(r"\s*([+-]?)\s*(\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)?\s*\*?\s*([A-Za-z_]\w*)\s*")


def parse_atom(spec: str | Mapping[str, Any]) -> LinearAtom:
    """Parse ``{"terms": {...}, "relation": "<=", "constant": 3}`` or ``"y0 - 2*y1 <= 3"``."""
    if isinstance(spec, Mapping):
        return LinearAtom.of({str(k): float(v) for k, v in spec["terms"].items()}, spec["relation"], spec["constant"])
    match = re.fullmatch(r"(.+?)(<=|>=|==|=)(.+)", spec.strip())
    if not match:
        raise ValueError(f"cannot parse constraint {spec!r}; expected 'expr <= c', 'expr >= c' or 'expr = c'")
    lhs, rel, rhs = match.groups()
    terms = []
    pos = 0
    lhs = lhs.strip()
    while pos < len(lhs):
        m = _TERM.match(lhs, pos)
        if not m or m.end() == pos:
            raise ValueError(f"cannot parse term at {lhs[pos:]!r} in {spec!r}")
        sign = -1.0 if m.group(1) == "-" else 1.0
        if pos > 0 and not m.group(1):
            raise ValueError(f"missing operator before {lhs[pos:]!r} in {spec!r}")
        coeff = float(m.group(2)) if m.group(2) else 1.0
        terms.append((m.group(3), sign * coeff))
        pos = m.end()
    return LinearAtom(tuple(terms), rel, float(rhs))


def atom_to_dict(atom: LinearAtom) -> dict:
    return {"terms": {str(k): c for k, c in atom.coefficients.items()}, "relation": atom.relation.value,
            "constant": atom.constant}


def load_query(path: str | Path) -> Query:
    return Query.from_dict(json.loads(Path(path).read_text()))


def dump_query(query: Query, path: str | Path) -> None:
    Path(path).write_text(json.dumps(query.to_dict(), indent=2) + "\n")


# -- encoding -----------------------------------------------------------------

@dataclass
class Encoding:
    atoms: list[LinearAtom]
    relu_pairs: list[tuple[int, int]]
    # node name -> solver variable; hidden nodes map to (backward, forward)
    var_map: dict[str, Any]
    bounds: dict[int, tuple[float, float]]
    names: list[str]
    num_vars: int
    inputs: list[int]
    outputs: list[int]

    def solver(self, config: SolverConfig | None = None) -> Reluplex:
        return Reluplex.from_atoms(self.atoms, self.relu_pairs, self.num_vars, self.bounds, config, self.names)


def encode(net: Network, query: Query) -> Encoding:
    """Network rows, then query atoms; single-variable atoms become bounds.

    Variables are numbered layer by layer: inputs, then a (backward, forward)
    pair per ReLU node, then plain output nodes.
    """
    if query.disjuncts:
        raise ValueError("query has disjunct groups; encode each of query.expand() separately")
    if len(query.input_box) != net.num_inputs:
        raise ValueError(f"query has {len(query.input_box)} input bounds, network has {net.num_inputs} inputs")
    names: list[str] = []
    var_map: dict[str, Any] = {}
    bounds: dict[int, tuple[float, float]] = {}
    pairs: list[tuple[int, int]] = []
    atoms: list[LinearAtom] = []

    def new(name: str) -> int:
        names.append(name)
        return len(names) - 1

    inputs = [new(f"v1{i + 1}") for i in range(net.num_inputs)]
    for i, (var, box) in enumerate(zip(inputs, query.normalized_box)):
        var_map[input_name(i)] = var
        bounds[var] = box
    prev = inputs
    outputs: list[int] = []
    layer_count = len(net.weights)
    for layer, (w, b) in enumerate(zip(net.weights, net.biases), start=1):
        current = []
        for node in range(w.shape[0]):
            label = f"v{layer + 1}{node + 1}"
            if net.relu_layer(layer):
                back = new(label + "b")
                fwd = new(label + "f")
                pairs.append((back, fwd))
                bounds[fwd] = (0.0, INF)
                var_map[label] = (back, fwd)
                target, out = back, fwd
            else:
                target = out = new(label)
            # aux = node - sum(w * prev) pinned to the bias
            coeffs = {target: 1.0}
            for src, weight in zip(prev, w[node]):
                if weight != 0.0:
                    coeffs[src] = coeffs.get(src, 0.0) - float(weight)
            atoms.append(LinearAtom.of(coeffs, Relation.EQ, float(b[node])))
            current.append(out)
        prev = current
        if layer == layer_count:
            outputs = current
    for j, var in enumerate(outputs):
        var_map[output_name(j)] = var

    def resolve(key) -> int:
        var = var_map.get(str(key))
        if var is None or isinstance(var, tuple):
            raise ValueError(f"constraint refers to unknown variable {key!r}; use x<i> for inputs, y<j> for outputs")
        return var

    for atom in query.constraints:
        coeffs: dict[int, float] = {}
        for key, c in atom.coefficients.items():
            var = resolve(key)
            coeffs[var] = coeffs.get(var, 0.0) + c
        coeffs = {v: c for v, c in coeffs.items() if c != 0.0}
        if len(coeffs) == 1:
            (var, c), = coeffs.items()
            lo, hi = atom.bounds()
            lo, hi = (lo / c, hi / c) if c > 0 else (hi / c, lo / c)
            old_lo, old_hi = bounds.get(var, (-INF, INF))
            bounds[var] = (max(old_lo, lo), min(old_hi, hi))
        else:
            atoms.append(LinearAtom.of(coeffs, atom.relation, atom.constant))
    return Encoding(atoms, pairs, var_map, bounds, names, len(names), inputs, outputs)


# -- witnesses ------------------------------------------------------------------

@dataclass
class Witness:
    inputs: list[float]
    outputs: list[float]
    hidden: list[tuple[float, float]]
    verified: bool
    replay_error: float

    def to_dict(self) -> dict:
        return {"inputs": self.inputs, "outputs": self.outputs, "hidden": [list(p) for p in self.hidden],
                "verified": self.verified, "replay_error": self.replay_error}


def decode_witness(encoding: Encoding, assignment: Sequence[float], net: Network | None = None,
                   tol: float = WITNESS_TOLERANCE) -> Witness:
    """Read network values out of a solver assignment; replay through ``net`` when given."""
    inputs = [float(assignment[v]) for v in encoding.inputs]
    outputs = [float(assignment[v]) for v in encoding.outputs]
    hidden = [(float(assignment[b]), float(assignment[f])) for b, f in encoding.relu_pairs]
    error = 0.0
    if net is not None:
        replay = forward(net, inputs)
        error = float(np.max(np.abs(replay.outputs - np.asarray(outputs)), initial=0.0))
        flat = [(pre, post) for pre_v, post_v in replay.hidden for pre, post in zip(pre_v, post_v)]
        for (b, f), (pre, post) in zip(hidden, flat):
            error = max(error, abs(b - pre), abs(f - post))
    return Witness(inputs, outputs, hidden, error <= tol, error)


# -- solving --------------------------------------------------------------------

@dataclass
class QueryResult:
    verdict: Verdict
    results: list[SolveResult]
    witness: Witness | None = None
    # index of the satisfied disjunct
    disjunct: int | None = None

    @property
    def stats(self) -> SolveStats:
        """Stats of the deciding sub-query (the SAT one, else summed maxima)."""
        if self.disjunct is not None:
            return self.results[self.disjunct].stats
        total = SolveStats()
        for r in self.results:
            for key, value in r.stats.to_dict().items():
                if key == "max_stack_depth":
                    total.max_stack_depth = max(total.max_stack_depth, value)
                else:
                    setattr(total, key, getattr(total, key) + value)
        return total


def solve_conjunctive(net: Network, query: Query, config: SolverConfig | None = None) -> tuple[SolveResult, Witness | None]:
    encoding = encode(net, query)
    result = encoding.solver(config).solve()
    witness = None
    if result.verdict is Verdict.SAT:
        witness = decode_witness(encoding, result.assignment, net)
    return result, witness


def _solve_job(args):
    net, query, config_dict = args
    return solve_conjunctive(net, query, SolverConfig.from_dict(config_dict))


def combine(verdicts: Iterable[Verdict]) -> Verdict:
    """Any SAT makes the disjunction SAT; all UNSAT makes it UNSAT."""
    verdicts = list(verdicts)
    if Verdict.SAT in verdicts:
        return Verdict.SAT
    if Verdict.TIMEOUT in verdicts:
        return Verdict.TIMEOUT
    if Verdict.UNKNOWN in verdicts:
        return Verdict.UNKNOWN
    return Verdict.UNSAT


def solve_queries(net: Network, queries: Sequence[Query], config: SolverConfig | None = None,
                  jobs: int = 1) -> QueryResult:
    """Solve independent conjunctive queries and join them with any-SAT / all-UNSAT."""
    config = config or SolverConfig()
    if jobs > 1 and len(queries) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_solve_job, [(net, q, config.to_dict()) for q in queries]))
    else:
        outcomes = []
        for q in queries:
            outcomes.append(solve_conjunctive(net, q, config))
            # sequential runs can stop at the first SAT
            if outcomes[-1][0].verdict is Verdict.SAT:
                break
    results = [r for r, _ in outcomes]
    verdict = combine(r.verdict for r in results)
    for k, (r, w) in enumerate(outcomes):
        if r.verdict is Verdict.SAT:
            return QueryResult(verdict, results, w, k)
    return QueryResult(verdict, results)


def solve_query(net: Network, query: Query, config: SolverConfig | None = None, jobs: int = 1) -> QueryResult:
    return solve_queries(net, query.expand(), config, jobs)


# -- robustness -----------------------------------------------------------------

def label_of(scores: Sequence[float], convention: str = "min") -> int:
    if convention not in ("min", "max"):
        raise ValueError("label convention must be 'min' or 'max'")
    scores = np.asarray(scores)
    return int(np.argmin(scores) if convention == "min" else np.argmax(scores))


def local_robustness_query(net: Network, x: Sequence[float], delta: float,
                           domain: Sequence[tuple[float, float]] | None = None,
                           convention: str = "min") -> list[Query]:
    """One query per competing output asking for an input in the infinity-norm ball
    whose score for that output is at least as good as the original label's."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    x = [float(v) for v in x]
    if len(x) != net.num_inputs:
        raise ValueError(f"point has {len(x)} coordinates, network has {net.num_inputs} inputs")
    box = [(v - delta, v + delta) for v in x]
    if domain is not None:
        box = [(max(lo, dlo), min(hi, dhi)) for (lo, hi), (dlo, dhi) in zip(box, domain)]
    label = label_of(forward(net, x).outputs, convention)
    rel = Relation.LE if convention == "min" else Relation.GE
    queries = []
    for j in range(net.num_outputs):
        if j == label:
            continue
        atom = LinearAtom.of({output_name(j): 1.0, output_name(label): -1.0}, rel, 0.0)
        queries.append(Query(box, [atom], metadata={"label": label, "competitor": j, "delta": delta}))
    return queries


@dataclass
class RobustnessResult:
    delta: float
    verdict: Verdict
    witness: Witness | None
    result: QueryResult | None

    @property
    def robust(self) -> bool:
        return self.verdict is Verdict.UNSAT


def check_local_robustness(net: Network, x: Sequence[float], delta: float, config: SolverConfig | None = None,
                           domain=None, convention: str = "min", jobs: int = 1) -> RobustnessResult:
    queries = local_robustness_query(net, x, delta, domain, convention)
    if not queries:
        return RobustnessResult(delta, Verdict.UNSAT, None, None)
    result = solve_queries(net, queries, config, jobs)
    return RobustnessResult(delta, result.verdict, result.witness, result)


@dataclass
class SearchResult:
    lower: float
    upper: float
    steps: list[tuple[float, Verdict]]
    # no adversarial input up to delta_hi
    robust_up_to_hi: bool = False
    # delta_lo is already SAT
    sat_at_lo: bool = False
    aborted: bool = False


def robustness_binary_search(net: Network, x: Sequence[float], delta_lo: float, delta_hi: float,
                             precision: float, config: SolverConfig | None = None, domain=None,
                             convention: str = "min") -> SearchResult:
    """Bracket the largest delta with no adversarial input as ``[last UNSAT, first SAT]``."""
    if not 0 < delta_lo < delta_hi:
        raise ValueError("need 0 < delta_lo < delta_hi")
    if precision <= 0:
        raise ValueError("precision must be positive")
    if precision >= delta_hi - delta_lo:
        return SearchResult(delta_lo, delta_hi, [])

    steps: list[tuple[float, Verdict]] = []

    def probe(delta: float) -> Verdict:
        verdict = check_local_robustness(net, x, delta, config, domain, convention).verdict
        steps.append((delta, verdict))
        return verdict

    hi_verdict = probe(delta_hi)
    if hi_verdict is Verdict.TIMEOUT:
        return SearchResult(delta_lo, delta_hi, steps, aborted=True)
    if hi_verdict is Verdict.UNSAT:
        return SearchResult(delta_hi, delta_hi, steps, robust_up_to_hi=True)
    lo_verdict = probe(delta_lo)
    if lo_verdict is Verdict.TIMEOUT:
        return SearchResult(delta_lo, delta_hi, steps, aborted=True)
    if lo_verdict is Verdict.SAT:
        return SearchResult(delta_lo, delta_lo, steps, sat_at_lo=True)
    lo, hi = delta_lo, delta_hi
    while hi - lo > precision:
        mid = 0.5 * (lo + hi)
        verdict = probe(mid)
        if verdict is Verdict.TIMEOUT:
            return SearchResult(lo, hi, steps, aborted=True)
        if verdict is Verdict.SAT:
            hi = mid
        else:
            lo = mid
    return SearchResult(lo, hi, steps)


def doubled_network(net: Network) -> Network:
    """Two copies of ``net`` side by side with disjoint inputs and outputs."""
    weights = []
    biases = []
    for w, b in zip(net.weights, net.biases):
        z = np.zeros_like(w)
        weights.append(np.block([[w, z], [z, w]]))
        biases.append(np.concatenate([b, b]))
    return Network(tuple(weights), tuple(biases), output_relu=net.output_relu)


def global_robustness_query(net: Network, delta: float, epsilon: float,
                            domain: Sequence[tuple[float, float]] | None = None) -> tuple[Network, Query]:
    """Query over the doubled network: inputs within ``delta`` but some output differing by more than ``epsilon``.

    Each output and direction is one disjunct group; ``epsilon`` is made
    strict by adding :data:`STRICT_MARGIN`.
    """
    if delta < 0 or epsilon < 0:
        raise ValueError("delta and epsilon must be non-negative")
    m, k = net.num_inputs, net.num_outputs
    domain = list(domain) if domain is not None else [(-INF, INF)] * m
    if len(domain) != m:
        raise ValueError("domain must give one interval per input")
    double = doubled_network(net)
    constraints = []
    for i in range(m):
        diff = {input_name(i): 1.0, input_name(m + i): -1.0}
        constraints.append(LinearAtom.of(diff, Relation.LE, delta))
        constraints.append(LinearAtom.of(diff, Relation.GE, -delta))
    groups = []
    for a in range(k):
        for sign in (1.0, -1.0):
            atom = LinearAtom.of({output_name(a): sign, output_name(k + a): -sign}, Relation.GE,
                                 epsilon + STRICT_MARGIN)
            groups.append([atom])
    query = Query(domain + domain, constraints, groups, metadata={"delta": delta, "epsilon": epsilon})
    return double, query
