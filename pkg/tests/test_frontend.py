import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st_

from oracles import eager_oracle
from reluplex import LinearAtom, SolverConfig, Verdict
from reluplex.frontend import (
    Query,
    check_local_robustness,
    combine,
    decode_witness,
    dump_query,
    encode,
    global_robustness_query,
    label_of,
    load_query,
    local_robustness_query,
    parse_atom,
    robustness_binary_search,
    solve_queries,
    solve_query,
)
from reluplex.network import Network, abs_network
from reluplex.simplex import Relation

INF = math.inf


def absnet_query(lo=0.5, hi=1.0):
    return Query([(0.0, 1.0)], [LinearAtom.of({"y0": 1.0}, ">=", lo), LinearAtom.of({"y0": 1.0}, "<=", hi)])


def step_net() -> Network:
    """Two outputs ``s0 = x`` and ``s1 = -x``; the minimal-score label flips at x = 0."""
    w1 = np.array([[1.0], [-1.0]])
    w2 = np.array([[1.0, -1.0], [-1.0, 1.0]])
    return Network((w1, w2), (np.zeros(2), np.zeros(2)))


class TestAtoms:
    def test_string_form(self):
        atom = parse_atom("y0 - 2*y1 <= 3")
        assert atom.coefficients == {"y0": 1.0, "y1": -2.0}
        assert atom.relation is Relation.LE and atom.constant == 3.0

    def test_dict_form(self):
        atom = parse_atom({"terms": {"x0": 1.5}, "relation": ">=", "constant": -1})
        assert atom.coefficients == {"x0": 1.5} and atom.relation is Relation.GE

    @pytest.mark.parametrize("text", ["y0 < 3", "y0 y1 <= 2", "<= 3", "2 * <= 1"])
    def test_rejects(self, text):
        with pytest.raises(ValueError):
            parse_atom(text)

    @settings(max_examples=50, deadline=None)
    @given(st_.dictionaries(st_.sampled_from(["x0", "x1", "y0", "y1"]),
                            st_.floats(-100, 100, allow_nan=False).filter(lambda c: abs(c) > 1e-6), min_size=1),
           st_.sampled_from(["<=", ">=", "="]), st_.floats(-1e3, 1e3, allow_nan=False))
    def test_text_round_trip(self, terms, rel, constant):
        text = " + ".join(f"{c!r}*{k}" for k, c in terms.items()).replace("+ -", "- ") + f" {rel} {constant!r}"
        atom = parse_atom(text)
        assert atom.coefficients == pytest.approx(terms)
        assert atom.constant == constant


class TestQueryFiles:
    def test_round_trip(self, tmp_path):
        q = Query([(-INF, 1.0), (0.0, 2.0)], [parse_atom("y0 <= 1")], [[parse_atom("y0 >= 3")]],
                  {"mean": [0.0, 1.0], "range": [2.0, 1.0]}, {"name": "p"})
        path = tmp_path / "q.json"
        dump_query(q, path)
        assert json.loads(path.read_text())["inputs"][0] == [None, 1.0]
        again = load_query(path)
        assert again.input_box == q.input_box
        assert again.disjuncts[0][0].constant == 3.0
        assert again.normalized_box == [(-INF, 0.5), (-1.0, 1.0)]

    def test_validation(self):
        with pytest.raises(ValueError):
            Query([(1.0, 0.0)])
        with pytest.raises(ValueError):
            Query.from_dict({"inputs": [[0, 1]], "bogus": 1})
        with pytest.raises(ValueError):
            Query([(0.0, 1.0)], normalization={"mean": [0.0], "range": [0.0]})

    def test_expand(self):
        q = Query([(0.0, 1.0)], [parse_atom("y0 <= 1")], [[parse_atom("y0 >= 0")], [parse_atom("y0 <= -1")]])
        parts = q.expand()
        assert len(parts) == 2 and all(len(p.constraints) == 2 for p in parts)


class TestEncode:
    def test_absnet_initial_configuration(self):
        enc = encode(abs_network(), absnet_query())
        assert enc.names == ["v11", "v21b", "v21f", "v22b", "v22f", "v31"]
        assert len(enc.atoms) == 3
        assert enc.relu_pairs == [(1, 2), (3, 4)]
        assert enc.bounds[0] == (0.0, 1.0)
        assert enc.bounds[5] == (0.5, 1.0)
        assert enc.bounds[2] == (0.0, INF) and enc.bounds[4] == (0.0, INF)
        st = enc.solver().state
        assert st.rows[6] == {1: 1.0, 0: -1.0}
        assert st.rows[7] == {3: 1.0, 0: 1.0}
        assert st.rows[8] == {5: 1.0, 2: -1.0, 4: -1.0}
        assert all((st.lower[a], st.upper[a]) == (0.0, 0.0) for a in (6, 7, 8))

    def test_no_hidden_layer(self):
        net = Network(([[1.0, 2.0]],), ([0.5],))
        enc = encode(net, Query([(0.0, 1.0)] * 2, [parse_atom("y0 >= 3")]))
        assert enc.relu_pairs == [] and len(enc.atoms) == 1
        result = solve_query(net, Query([(0.0, 1.0)] * 2, [parse_atom("y0 >= 3")]))
        assert result.verdict is Verdict.SAT
        assert result.witness.verified
        assert result.witness.outputs[0] >= 3 - 1e-9

    def test_raw_unit_constraints_stay_in_box_and_atom(self):
        net = Network((np.eye(2), np.array([[1.0, 1.0]])), (np.zeros(2), np.zeros(1)))
        q = Query([(55947.691, 60760.0), (1145.0, 1200.0)], [parse_atom("y0 <= 1500")],
                  normalization={"mean": [55000.0, 1100.0], "range": [1000.0, 100.0]})
        enc = encode(net, q)
        assert enc.bounds[0] == pytest.approx((0.947691, 5.76))
        assert enc.bounds[enc.outputs[0]] == (-INF, 1500.0)

    def test_rejects_unknown_names_and_disjuncts(self):
        with pytest.raises(ValueError, match="unknown variable"):
            encode(abs_network(), Query([(0.0, 1.0)], [parse_atom("y0 + z3 <= 1")]))
        with pytest.raises(ValueError):
            encode(abs_network(), Query([(0.0, 1.0)], [], [[parse_atom("y0 <= 1")]]))
        with pytest.raises(ValueError):
            encode(abs_network(), Query([(0.0, 1.0)] * 2))


class TestWitness:
    def test_walkthrough_witness(self):
        result = solve_query(abs_network(), absnet_query())
        w = result.witness
        assert w.inputs == pytest.approx([0.5]) and w.outputs == pytest.approx([0.5])
        assert w.verified and w.replay_error == 0.0

    def test_corrupted_assignment_is_unverified(self):
        net = abs_network()
        enc = encode(net, absnet_query())
        result = enc.solver().solve()
        bad = list(result.assignment)
        bad[enc.outputs[0]] += 0.1
        w = decode_witness(enc, bad, net)
        assert not w.verified and w.replay_error == pytest.approx(0.1)


class TestSolveQueries:
    def test_combine(self):
        assert combine([Verdict.UNSAT, Verdict.SAT]) is Verdict.SAT
        assert combine([Verdict.UNSAT, Verdict.TIMEOUT]) is Verdict.TIMEOUT
        assert combine([Verdict.UNSAT, Verdict.UNKNOWN]) is Verdict.UNKNOWN
        assert combine([Verdict.UNSAT, Verdict.UNSAT]) is Verdict.UNSAT

    def test_disjunction(self):
        q = Query([(0.0, 1.0)], [], [[parse_atom("y0 >= 2")], [parse_atom("y0 <= 0.25")]])
        result = solve_query(abs_network(), q)
        assert result.verdict is Verdict.SAT and result.disjunct == 1
        assert result.witness.outputs[0] <= 0.25 + 1e-9

    def test_parallel_matches_sequential(self):
        net = abs_network()
        queries = [absnet_query(2.0, 3.0), absnet_query(-2.0, -1.0), absnet_query()]
        seq = solve_queries(net, queries)
        par = solve_queries(net, queries, jobs=2)
        assert seq.verdict is par.verdict is Verdict.SAT
        assert [r.verdict for r in par.results] == [Verdict.UNSAT, Verdict.UNSAT, Verdict.SAT]


class TestLocalRobustness:
    def test_label_conventions(self):
        assert label_of([3.0, 1.0, 2.0]) == 1
        assert label_of([3.0, 1.0, 2.0], "max") == 0
        with pytest.raises(ValueError):
            label_of([1.0], "median")

    def test_queries_per_competitor(self):
        net = step_net()
        qs = local_robustness_query(net, [0.5], 0.1)
        # label is output 1 (score -0.5); one query for output 0
        assert len(qs) == 1
        assert qs[0].input_box == [(0.4, 0.6)]
        assert qs[0].constraints[0].coefficients == {"y0": 1.0, "y1": -1.0}
        with pytest.raises(ValueError):
            local_robustness_query(net, [0.5], 0.0)

    def test_domain_intersection(self):
        qs = local_robustness_query(step_net(), [0.5], 1.0, domain=[(0.0, 1.0)])
        assert qs[0].input_box == [(0.0, 1.0)]

    def test_tiny_delta_is_robust(self):
        assert check_local_robustness(step_net(), [0.5], 1e-9).verdict is Verdict.UNSAT

    def test_boundary_at_zero(self):
        net = step_net()
        assert check_local_robustness(net, [0.5], 1.0).verdict is Verdict.SAT
        assert check_local_robustness(net, [0.5], 0.25).verdict is Verdict.UNSAT
        for delta in (1.0, 0.25):
            xs = np.arange(0.5 - delta, 0.5 + delta + 1e-12, 1e-3)
            assert np.any(xs <= 0.0) == (delta == 1.0)

    def test_max_convention(self):
        # with the max convention the label at 0.5 is output 0
        assert check_local_robustness(step_net(), [0.5], 1.0, convention="max").verdict is Verdict.SAT
        assert check_local_robustness(step_net(), [0.5], 0.25, convention="max").verdict is Verdict.UNSAT


class TestBinarySearch:
    def test_brackets_boundary(self):
        res = robustness_binary_search(step_net(), [0.5], 0.025, 1.0, 1e-3)
        assert res.lower <= 0.5 <= res.upper and res.upper - res.lower <= 1e-3
        verdicts = dict(res.steps)
        assert verdicts[1.0] is Verdict.SAT and verdicts[0.025] is Verdict.UNSAT

    def test_unsat_bracket(self):
        res = robustness_binary_search(step_net(), [0.5], 0.025, 0.05, 1e-4)
        assert res.robust_up_to_hi and res.lower == res.upper == 0.05

    def test_sat_at_lower_end(self):
        res = robustness_binary_search(step_net(), [0.5], 0.6, 1.0, 1e-4)
        assert res.sat_at_lo

    def test_precision_wider_than_bracket(self):
        res = robustness_binary_search(step_net(), [0.5], 0.025, 0.05, 0.1)
        assert (res.lower, res.upper, res.steps) == (0.025, 0.05, [])

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            robustness_binary_search(step_net(), [0.5], 0.5, 0.1, 1e-3)
        with pytest.raises(ValueError):
            robustness_binary_search(step_net(), [0.5], 0.1, 0.5, 0.0)


class TestGlobalRobustness:
    def test_identity_is_globally_robust(self):
        double, q = global_robustness_query(abs_network(), 0.1, 0.2, domain=[(0.0, 1.0)])
        assert double.num_relus == 4 and len(q.disjuncts) == 2
        assert solve_query(double, q).verdict is Verdict.UNSAT
        assert not eager_oracle(double, q).sat

    def test_zero_epsilon_is_sat(self):
        double, q = global_robustness_query(abs_network(), 0.1, 0.0, domain=[(0.0, 1.0)])
        result = solve_query(double, q)
        assert result.verdict is Verdict.SAT
        w = result.witness
        assert abs(w.inputs[0] - w.inputs[1]) <= 0.1 + 1e-9
        assert abs(w.outputs[0] - w.outputs[1]) > 0

    def test_zero_delta_is_unsat(self):
        double, q = global_robustness_query(abs_network(), 0.0, 0.05, domain=[(0.0, 1.0)])
        assert solve_query(double, q).verdict is Verdict.UNSAT

    def test_validation(self):
        with pytest.raises(ValueError):
            global_robustness_query(abs_network(), -0.1, 0.1)
        with pytest.raises(ValueError):
            global_robustness_query(abs_network(), 0.1, 0.1, domain=[(0.0, 1.0)] * 2)


def test_config_round_trip_and_validation():
    cfg = SolverConfig(split_threshold=7, backjumping=False)
    assert SolverConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        SolverConfig.from_dict({"nope": 1})
    with pytest.raises(ValueError):
        SolverConfig(split_threshold=0)
