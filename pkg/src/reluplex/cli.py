"""Command line: solve, robustness, reduce, export.

Exit codes: 0 UNSAT (the property holds when the query encodes its
violation), 1 SAT, 2 TIMEOUT, 3 UNKNOWN, 64 usage error, 65 malformed input
data, 66 missing input file, 74 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

from reluplex import __version__
from reluplex.config import RunConfig
from reluplex.engine import SolveStats, Verdict
from reluplex.export import BigMError, DEFAULT_BIG_M, write_export
from reluplex.frontend import (
    Query,
    check_local_robustness,
    dump_query,
    load_query,
    robustness_binary_search,
    solve_query,
)
from reluplex.network import NetworkFormatError, dump_network, load_network
from reluplex.reduction import DimacsError, load_dimacs, reduce

logger = logging.getLogger("reluplex")

REPORT_SCHEMA = "reluplex-report/1"

EXIT_UNSAT = 0
EXIT_SAT = 1
EXIT_TIMEOUT = 2
EXIT_UNKNOWN = 3
EXIT_USAGE = 64
EXIT_DATAERR = 65
EXIT_NOINPUT = 66
EXIT_IOERR = 74


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse's default exit status 2 would collide with TIMEOUT
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def verdict_exit_code(verdict: Verdict, negate: bool = False) -> int:
    if verdict is Verdict.SAT:
        return EXIT_UNSAT if negate else EXIT_SAT
    if verdict is Verdict.UNSAT:
        return EXIT_SAT if negate else EXIT_UNSAT
    if verdict is Verdict.TIMEOUT:
        return EXIT_TIMEOUT
    return EXIT_UNKNOWN


def _floats(text: str) -> list[float]:
    try:
        values = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values or not all(math.isfinite(v) for v in values):
        raise argparse.ArgumentTypeError(f"expected finite comma-separated numbers, got {text!r}")
    return values


def _domain(text: str) -> list[tuple[float, float]]:
    out = []
    for part in text.split(","):
        try:
            lo, hi = part.split(":")
            out.append((float(lo), float(hi)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"domain entries look like lo:hi, got {part!r}") from None
    return out


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("solver settings")
    g.add_argument("--config", type=Path, help="JSON file with solver settings (flags override it)")
    g.add_argument("--timeout", type=float, dest="timeout_seconds", help="seconds per sub-query")
    g.add_argument("--max-pivots", type=int)
    g.add_argument("--split-threshold", type=int)
    g.add_argument("--tighten-cadence", type=int)
    g.add_argument("--roundoff-threshold", type=float)
    g.add_argument("--roundoff-cadence", type=int)
    g.add_argument("--under-approx-epsilon", type=float)
    g.add_argument("--no-backjumping", dest="backjumping", action="store_false", default=None)
    g.add_argument("--seed", type=int)
    g.add_argument("--trace", type=Path, help="write the split trace as JSON lines")
    g.add_argument("--jobs", type=int, default=1, help="parallel sub-queries")
    g.add_argument("--output-relu", action="store_true", help="apply ReLU on the output layer too")


def _config(args) -> RunConfig:
    data = {}
    if args.config is not None:
        data.update(json.loads(_read(args.config)))
    for key in ("timeout_seconds", "max_pivots", "split_threshold", "tighten_cadence", "roundoff_threshold",
                "roundoff_cadence", "under_approx_epsilon", "backjumping", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    if getattr(args, "trace", None) is not None:
        data["trace"] = True
    try:
        return RunConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _read(path: Path) -> str:
    return Path(path).read_text()


def _stats_dict(stats: SolveStats) -> dict:
    d = stats.to_dict()
    d["wall_time"] = round(d["wall_time"], 6)
    return d


def _emit(args, report: dict, lines: list[str]) -> None:
    if args.json:
        print(json.dumps({"schema": REPORT_SCHEMA, **report}, indent=2))
    else:
        print("\n".join(lines))


def _write_trace(path: Path | None, results) -> None:
    if path is None:
        return
    with open(path, "w") as fh:
        for k, r in enumerate(results):
            for record in r.trace or []:
                fh.write(json.dumps({"subquery": k, **record}) + "\n")


def cmd_solve(args) -> int:
    config = _config(args)
    net = load_network(args.network, output_relu=args.output_relu)
    query = load_query(args.property)
    result = solve_query(net, query, config, jobs=args.jobs)
    _write_trace(args.trace, result.results)
    stats = result.stats
    report = {
        "command": "solve",
        "verdict": result.verdict.value,
        "floating_point": True,
        "subqueries": [r.verdict.value for r in result.results],
        "stats": _stats_dict(stats),
    }
    lines = [
        f"verdict: {result.verdict.value}",
        f"time: {stats.wall_time:.4f}s  max stack depth: {stats.max_stack_depth}  splits: {stats.total_splits}  "
        f"pivots: {stats.pivots}  restorations: {stats.tableau_restorations}",
    ]
    if result.witness is not None:
        w = result.witness
        report["witness"] = w.to_dict()
        lines.append(f"witness inputs: {w.inputs}")
        lines.append(f"witness outputs: {w.outputs}")
        if not w.verified:
            lines.append(f"WARNING: witness replay differs by {w.replay_error:.3g}; marked unverified")
        if args.witness_out is not None:
            Path(args.witness_out).write_text(json.dumps(w.to_dict(), indent=2) + "\n")
    _emit(args, report, lines)
    return verdict_exit_code(result.verdict, args.negate_query)


def cmd_robustness(args) -> int:
    config = _config(args)
    net = load_network(args.network, output_relu=args.output_relu)
    point = args.point
    if len(point) != net.num_inputs:
        raise UsageError(f"point has {len(point)} coordinates, network has {net.num_inputs} inputs")
    if args.domain is not None and len(args.domain) != net.num_inputs:
        raise UsageError("domain must give one lo:hi interval per input")
    convention = "max" if args.label == "max" else "min"

    if args.search is not None:
        lo, hi = args.search
        try:
            res = robustness_binary_search(net, point, lo, hi, args.precision, config, args.domain, convention)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        report = {"command": "robustness", "mode": "search", "lower": res.lower, "upper": res.upper,
                  "steps": [[d, v.value] for d, v in res.steps], "aborted": res.aborted,
                  "robust_up_to_hi": res.robust_up_to_hi, "sat_at_lo": res.sat_at_lo}
        lines = [f"delta {d:.6g}: {v.value}" for d, v in res.steps]
        if res.robust_up_to_hi:
            lines.append(f"no adversarial input found up to delta = {hi:g}")
            code = EXIT_UNSAT
        elif res.sat_at_lo:
            lines.append(f"adversarial input already at delta = {lo:g}")
            code = EXIT_SAT
        else:
            lines.append(f"optimal delta in [{res.lower:.6g}, {res.upper:.6g}]"
                         + (" (search aborted on timeout)" if res.aborted else ""))
            code = EXIT_TIMEOUT if res.aborted else EXIT_SAT
        _emit(args, report, lines)
        return code

    deltas = args.delta or [0.1, 0.075, 0.05, 0.025, 0.01]
    rows = []
    verdicts = []
    for delta in deltas:
        if delta <= 0:
            raise UsageError("delta values must be positive")
        r = check_local_robustness(net, point, delta, config, args.domain, convention, args.jobs)
        verdicts.append(r.verdict)
        row = {"delta": delta, "verdict": r.verdict.value}
        if r.witness is not None:
            row["witness"] = r.witness.to_dict()
        rows.append(row)
    report = {"command": "robustness", "mode": "grid", "point": point, "results": rows}
    lines = [f"delta {row['delta']:g}: {row['verdict']}" for row in rows]
    _emit(args, report, lines)
    if Verdict.SAT in verdicts:
        return EXIT_SAT
    if Verdict.TIMEOUT in verdicts:
        return EXIT_TIMEOUT
    if Verdict.UNKNOWN in verdicts:
        return EXIT_UNKNOWN
    return EXIT_UNSAT


def cmd_reduce(args) -> int:
    formula = load_dimacs(args.cnf)
    try:
        inst = reduce(formula, args.epsilon)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = args.prefix or Path(args.cnf).stem
    net_path = out / f"{stem}.nnet.txt"
    prop_path = out / f"{stem}.property.json"
    dump_network(inst.network, net_path)
    dump_query(inst.query, prop_path)
    report = {"command": "reduce", "clauses": formula.num_clauses, "variables": formula.num_vars,
              "relus": inst.network.num_relus, "epsilon": inst.epsilon,
              "network": str(net_path), "property": str(prop_path)}
    lines = [f"clauses: {formula.num_clauses}  variables: {formula.num_vars}  ReLUs: {inst.network.num_relus}  "
             f"epsilon: {inst.epsilon:g}", f"wrote {net_path}", f"wrote {prop_path}"]
    _emit(args, report, lines)
    return 0


def cmd_export(args) -> int:
    net = load_network(args.network, output_relu=args.output_relu)
    query = load_query(args.property)
    queries = query.expand()
    if len(queries) > 1 and args.output is None:
        raise UsageError("query has several disjunct groups; give --output to write one file per group")
    outputs = []
    for k, q in enumerate(queries):
        big_m = args.big_m
        try:
            text, used_m, validated = write_export(net, q, args.format, big_m)
        except BigMError as exc:
            if args.big_m is not None or args.strict_big_m:
                raise UsageError(str(exc)) from None
            logger.warning("!!! %s; falling back to big-M = %g, which is NOT validated and may cut off "
                           "solutions !!!", exc, DEFAULT_BIG_M)
            text, used_m, validated = write_export(net, q, args.format, DEFAULT_BIG_M)
        if args.output is None:
            sys.stdout.write(text)
        else:
            path = Path(args.output)
            if len(queries) > 1:
                path = path.with_name(f"{path.stem}.{k}{path.suffix}")
            path.write_text(text)
            outputs.append({"path": str(path), "big_m": used_m, "validated": validated})
    if args.output is not None:
        report = {"command": "export", "format": args.format, "files": outputs}
        _emit(args, report, [f"wrote {o['path']}" + (f" (big-M {o['big_m']:g})" if o["big_m"] else "")
                             for o in outputs])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="reluplex", description="Decide linear properties of feed-forward ReLU networks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve a property query on a network")
    p.add_argument("network", type=Path)
    p.add_argument("property", type=Path)
    p.add_argument("--json", action="store_true")
    p.add_argument("--witness-out", type=Path)
    p.add_argument("--negate-query", action="store_true",
                   help="the property file states the property itself: SAT means it holds (exit 0)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("robustness", help="local robustness around a point")
    p.add_argument("network", type=Path)
    p.add_argument("--point", type=_floats, required=True)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--delta", type=_floats, help="comma-separated delta grid")
    mode.add_argument("--search", type=float, nargs=2, metavar=("LO", "HI"), help="binary search bracket")
    p.add_argument("--precision", type=float, default=1e-3)
    p.add_argument("--domain", type=_domain, help="global input domain as lo:hi,lo:hi,...")
    p.add_argument("--label", choices=("min", "max"), default="min",
                   help="the label is the output with the minimal (default) or maximal score")
    p.add_argument("--json", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("reduce", help="reduce a 3-CNF formula to a network query")
    p.add_argument("cnf", type=Path)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--out-dir", type=Path, default=Path("."))
    p.add_argument("--prefix")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("export", help="write SMT-LIB or big-M LP encodings")
    p.add_argument("network", type=Path)
    p.add_argument("property", type=Path)
    p.add_argument("--format", choices=("smtlib", "bigm-lp"), required=True)
    p.add_argument("--big-m", type=float)
    p.add_argument("--strict-big-m", action="store_true",
                   help="refuse instead of falling back to a default big-M for unbounded ReLU inputs")
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--output-relu", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"reluplex: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"reluplex: {exc.filename}: no such file", file=sys.stderr)
        return EXIT_NOINPUT
    except (NetworkFormatError, DimacsError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"reluplex: invalid input: {exc}", file=sys.stderr)
        return EXIT_DATAERR
    except OSError as exc:
        print(f"reluplex: {exc}", file=sys.stderr)
        return EXIT_IOERR


if __name__ == "__main__":
    sys.exit(main())
