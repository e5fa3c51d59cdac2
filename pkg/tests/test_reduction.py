import random

import numpy as np
import pytest

from reluplex import Verdict
from reluplex.frontend import Query, parse_atom, solve_query
from reluplex.network import forward
from reluplex.reduction import (
    CnfFormula,
    DimacsError,
    ReductionSoundnessError,
    brute_force_sat,
    check_epsilon,
    decode_boolean_witness,
    default_epsilon,
    discreteness_gadget_network,
    disjunction_gadget_network,
    hinge_sum_gadget_network,
    negation_gadget_network,
    parse_dimacs,
    random_3sat,
    reduce,
)


class TestDimacs:
    def test_parse(self):
        f = parse_dimacs("c comment\np cnf 3 2\n1 -2 3 0\n-1 0\n%\n0\n")
        assert f.num_vars == 3
        assert f.clauses == ((1, -2, 3), (-1, -1, -1))

    def test_clause_across_lines(self):
        assert parse_dimacs("p cnf 2 1\n1\n-2 0\n").clauses == ((1, -2, -2),)

    @pytest.mark.parametrize("text, message", [
        ("p cnf 2 1\n0\n", "empty clause"),
        ("p cnf 4 1\n1 2 3 4 0\n", "only 3-CNF"),
        ("p cnf 2 2\n1 0\n", "declares 2"),
        ("p cnf 2 1\n1 3 0\n", "exceeds"),
        ("1 2 0\n", "before"),
        ("p cnf 2 1\n1 2\n", "not terminated"),
        ("p cnf 2 1\n1 x 0\n", "non-integer"),
        ("", "missing"),
    ])
    def test_errors(self, text, message):
        with pytest.raises(DimacsError, match=message):
            parse_dimacs(text)

    def test_round_trip(self):
        f = random_3sat(5, 7, random.Random(1))
        assert parse_dimacs(f.to_dimacs()) == f


class TestBruteForce:
    def test_no_clauses(self):
        assert brute_force_sat(CnfFormula(2, ())) == (False, False)

    def test_contradiction(self):
        assert brute_force_sat(CnfFormula(1, ((1,), (-1,)))) is None

    def test_limit(self):
        with pytest.raises(ValueError):
            brute_force_sat(CnfFormula(25, ()))


class TestEpsilon:
    def test_default_is_admissible(self):
        for n in (1, 5, 50, 500):
            check_epsilon(default_epsilon(n), n)

    @pytest.mark.parametrize("eps, n", [(0.5, 10), (0.0, 3), (1 / 13, 10)])
    def test_refused(self, eps, n):
        with pytest.raises(ValueError, match="1/\\(n\\+3\\)"):
            check_epsilon(eps, n)


class TestReduce:
    def test_shape(self):
        inst = reduce(CnfFormula(2, ((1, -2, 2),)))
        net = inst.network
        assert net.num_inputs == 3 and net.num_outputs == 3
        # one clause unit, two per variable, one pass-through
        assert net.num_relus == 1 + 4 + 1
        assert inst.query.input_box[inst.one_input] == (1.0, 1.0)

    def test_outputs_on_boolean_points(self):
        f = CnfFormula(2, ((1, 2), (-1, -2)))
        inst = reduce(f)
        for bits in [(0, 0), (0, 1), (1, 0), (1, 1)]:
            y = forward(inst.network, [*bits, 1.0]).outputs
            satisfied = sum(any((l > 0) == bool(bits[abs(l) - 1]) for l in c) for c in f.clauses)
            assert y[0] == satisfied
            np.testing.assert_array_equal(y[1:], [0.0, 0.0])

    def test_single_literal_clause(self):
        inst = reduce(CnfFormula(1, ((1, 1, 1),)))
        result = solve_query(inst.network, inst.query)
        assert result.verdict is Verdict.SAT
        assert result.witness.inputs[0] >= 1 - inst.epsilon - 1e-9
        assert decode_boolean_witness(result.witness, inst.epsilon, inst.formula) == (True,)

    def test_contradiction_is_unsat(self):
        inst = reduce(CnfFormula(1, ((1,), (-1,))))
        assert solve_query(inst.network, inst.query).verdict is Verdict.UNSAT

    def test_random_formulas_match_brute_force(self):
        rng = random.Random(11)
        for _ in range(15):
            f = random_3sat(8, 12, rng)
            inst = reduce(f, 0.01)
            result = solve_query(inst.network, inst.query)
            expected = brute_force_sat(f) is not None
            assert result.verdict is (Verdict.SAT if expected else Verdict.UNSAT)
            if expected:
                assert f.satisfied_by(decode_boolean_witness(result.witness, 0.01, f))


class TestDecode:
    def test_rounding(self):
        assert decode_boolean_witness([0.003, 0.995], 0.01) == (False, True)

    def test_middle_value_raises(self):
        with pytest.raises(ReductionSoundnessError, match="not within"):
            decode_boolean_witness([0.5], 0.01)

    def test_falsifying_assignment_raises(self):
        with pytest.raises(ReductionSoundnessError, match="falsifies"):
            decode_boolean_witness([0.0], 0.01, CnfFormula(1, ((1,),)))


class TestGadgets:
    def test_disjunction(self):
        net = disjunction_gadget_network()
        assert forward(net, [0.0, 0.0, 0.0, 1.0]).outputs[0] == 0.0
        assert forward(net, [0.0, 1.0, 1.0, 1.0]).outputs[0] == 1.0
        assert forward(net, [0.25, 0.25, 0.0, 1.0]).outputs[0] == 0.5

    def test_negation(self):
        assert forward(negation_gadget_network(), [0.25, 1.0]).outputs[0] == 0.75

    def test_discreteness_is_min_distance_to_an_end(self):
        net = discreteness_gadget_network()
        for x in np.linspace(0, 1, 41):
            assert forward(net, [x, 1.0]).outputs[0] == pytest.approx(min(x, 1 - x))

    def test_hinge_sum_admits_the_middle(self):
        eps = 0.1
        box = [(0.0, 1.0), (1.0, 1.0)]
        middle = [parse_atom("x0 >= 0.4"), parse_atom("x0 <= 0.6")]
        hinge = Query(box, [parse_atom("y0 <= 0.1"), *middle])
        result = solve_query(hinge_sum_gadget_network(eps), hinge)
        assert result.verdict is Verdict.SAT
        assert 0.4 - 1e-9 <= result.witness.inputs[0] <= 0.6 + 1e-9
        exact = Query(box, [parse_atom("y0 <= 0.1"), *middle])
        assert solve_query(discreteness_gadget_network(), exact).verdict is Verdict.UNSAT
