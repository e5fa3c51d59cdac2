import math

import pytest

from reluplex import LinearAtom, Phase, Reluplex, RepairAction, SolverConfig, Verdict, solve_atoms
from reluplex.frontend import Query, encode
from reluplex.network import abs_network

V11, V21B, V21F, V22B, V22F, V31 = range(6)
A1, A2, A3 = 6, 7, 8
INF = math.inf


def absnet_solver(out_lo=0.5, out_hi=1.0, **config) -> Reluplex:
    atoms = [
        LinearAtom.of({V11: -1.0, V21B: 1.0}, "=", 0.0),
        LinearAtom.of({V11: 1.0, V22B: 1.0}, "=", 0.0),
        LinearAtom.of({V21F: -1.0, V22F: -1.0, V31: 1.0}, "=", 0.0),
    ]
    bounds = {V11: (0.0, 1.0), V31: (out_lo, out_hi)}
    return Reluplex.from_atoms(atoms, [(V21B, V21F), (V22B, V22F)], 6, bounds, SolverConfig(**config),
                               ["v11", "v21b", "v21f", "v22b", "v22f", "v31"])


def test_forward_lower_bound_forced_non_negative():
    s = Reluplex.from_atoms([LinearAtom.of({0: 1.0, 1: 1.0}, "<=", 5.0)], [(0, 1)], 2, {1: (-3.0, 4.0)})
    assert s.state.lower[1] == 0.0 and s.state.upper[1] == 4.0


class TestReluRules:
    def test_walkthrough_violation_reported(self):
        s = absnet_solver()
        st = s.state
        st.update(V31, 0.5)
        st.pivot(A3, V21F)
        st.assign(A3, 0.0)
        assert st.value[V21F] == 0.5 and st.value[V21B] == 0.0
        assert [p.backward for p in s.relu_violations()] == [V21B]

    @pytest.mark.parametrize("b, f, reported", [(-2.0, 0.0, False), (3.0, 3.0, False), (-1.0, 2.0, True)])
    def test_violation_semantics(self, b, f, reported):
        s = Reluplex.from_atoms([LinearAtom.of({0: 1.0, 1: 1.0}, "<=", 100.0)], [(0, 1)], 2)
        s.state.assign(0, b)
        s.state.assign(1, f)
        s.state.recompute_basics()
        assert bool(s.relu_violations()) is reported

    def test_update_b_walkthrough(self):
        s = absnet_solver()
        st = s.state
        st.update(V31, 0.5)
        st.pivot(A3, V21F)
        st.assign(A3, 0.0)
        action = s.repair_relu(s.pairs[0])
        assert action is RepairAction.UPDATED_B
        assert st.value[V21B] == 0.5 and st.value[A1] == 0.5
        assert s.pairs[0].repair_count == 1

    def test_update_f(self):
        # b = z + a is basic, f is non-basic
        s = Reluplex.from_atoms([LinearAtom.of({0: 1.0, 2: -1.0}, "=", 0.0)], [(0, 1)], 3)
        st = s.state
        st.pivot(3, 0)
        st.assign(2, -1.0)
        st.assign(1, 2.0)
        assert st.value[0] == -1.0
        assert s.repair_relu(s.pairs[0]) is RepairAction.UPDATED_F
        assert st.value[1] == 0.0

    def test_threshold_requests_split(self):
        s = absnet_solver()
        s.pairs[0].repair_count = 5
        assert s.repair_relu(s.pairs[0]) is RepairAction.NEEDS_SPLIT

    def test_pivot_when_both_basic(self):
        s = Reluplex.from_atoms([LinearAtom.of({0: 1.0, 2: -1.0}, "=", 0.0),
                                 LinearAtom.of({1: 1.0, 3: -1.0}, "=", 0.0)], [(0, 1)], 4)
        st = s.state
        st.pivot(4, 0)
        st.pivot(5, 1)
        st.assign(2, 1.0)
        assert st.is_basic(0) and st.is_basic(1)
        assert s.repair_relu(s.pairs[0]) is RepairAction.PIVOTED_THEN_UPDATED
        assert not (st.is_basic(0) and st.is_basic(1))
        assert st.value[1] == pytest.approx(max(0.0, st.value[0]))


class TestSplitRelu:
    def _solver(self, lo, hi):
        return Reluplex.from_atoms([LinearAtom.of({0: 1.0, 1: 1.0}, "<=", 100.0)], [(0, 1)], 2, {0: (lo, hi)})

    def test_cases(self):
        active, inactive = self._solver(-5.0, 5.0).split_relu(self._solver(-5.0, 5.0).pairs[0])
        assert (active.kind.value, active.value) == ("lower", 0.0)
        assert (inactive.kind.value, inactive.value) == ("upper", 0.0)

    def test_half_infinite(self):
        s = self._solver(-1.0, INF)
        assert s.split_relu(s.pairs[0])[0].value == 0.0

    def test_rejects_decided_range(self):
        s = self._solver(1.0, 5.0)
        with pytest.raises(ValueError):
            s.split_relu(s.pairs[0])
        s = self._solver(-5.0, 5.0)
        s.pairs[0].phase = Phase.ACTIVE
        with pytest.raises(ValueError):
            s.split_relu(s.pairs[0])


class TestSolve:
    def test_absnet_sat_without_splits(self):
        result = absnet_solver().solve()
        assert result.verdict is Verdict.SAT
        assert result.stats.total_splits == 0
        a = result.assignment
        assert 0.5 <= a[V31] <= 1.0
        assert a[V31] == pytest.approx(a[V11], abs=1e-9)
        assert result.verified and result.floating_point

    def test_walkthrough_values_without_tightening(self):
        # the plain rule sequence ends at the documented assignment
        s = absnet_solver(tighten_after_pivot=False)
        s.config.fixpoint_sweeps = 1
        result = s.solve()
        assert result.verdict is Verdict.SAT
        assert result.assignment[V11] == pytest.approx(0.5)
        assert result.assignment[V31] == pytest.approx(0.5)

    def test_absnet_unsat(self):
        result = absnet_solver(2.0, 3.0).solve()
        assert result.verdict is Verdict.UNSAT
        assert result.assignment is None

    def test_no_relus(self):
        result = solve_atoms([LinearAtom.of({0: 1.0, 1: 1.0}, "=", 3.0), LinearAtom.of({0: 1.0}, ">=", 2.0)],
                             [], 2, {1: (0.0, 5.0)})
        assert result.verdict is Verdict.SAT
        x, y = result.assignment[:2]
        assert x + y == pytest.approx(3.0) and x >= 2.0 - 1e-9

    def test_crossed_bounds(self):
        result = solve_atoms([LinearAtom.of({0: 1.0, 1: 1.0}, "<=", 3.0)], [], 2, {0: (2.0, 1.0)})
        assert result.verdict is Verdict.UNSAT

    def test_timeout_and_pivot_budget(self):
        assert absnet_solver().solve(timeout=0.0).verdict is Verdict.TIMEOUT
        assert absnet_solver().solve(max_pivots=0).verdict is Verdict.TIMEOUT

    def test_split_path(self):
        # |x| >= 0.5 on x in [-1, 1]: needs both phases explored in general
        net = abs_network()
        query = Query([(-1.0, 1.0)], [LinearAtom.of({"y0": 1.0}, ">=", 0.9)])
        enc = encode(net, query)
        result = enc.solver(SolverConfig(split_threshold=1, trace=True)).solve()
        assert result.verdict is Verdict.SAT
        assert abs(result.assignment[enc.inputs[0]]) >= 0.9 - 1e-9

    def test_under_approximation_is_never_a_final_unsat(self):
        # |x| >= 0.95 holds only near the ends of [-1, 1]; shrinking by 0.1 cuts those off
        enc = encode(abs_network(), Query([(-1.0, 1.0)], [LinearAtom.of({"y0": 1.0}, ">=", 0.95)]))
        result = enc.solver(SolverConfig(under_approx_epsilon=0.1)).solve()
        assert result.verdict is Verdict.UNKNOWN
        assert result.under_approximate
        assert enc.solver().solve().verdict is Verdict.SAT

    def test_under_approximate_sat_is_sat(self):
        enc = encode(abs_network(), Query([(-1.0, 1.0)], [LinearAtom.of({"y0": 1.0}, ">=", 0.5)]))
        result = enc.solver(SolverConfig(under_approx_epsilon=0.1)).solve()
        assert result.verdict is Verdict.SAT and result.verified

    def test_refuted_before_shrinking_stays_unsat(self):
        assert absnet_solver(2.0, 3.0, under_approx_epsilon=1e-8).solve().verdict is Verdict.UNSAT

    def test_stats_snapshot_is_a_copy(self):
        s = absnet_solver()
        result = s.solve()
        result.stats.pivots = -1
        assert s.stats.pivots != -1
        assert set(result.stats.to_dict()) >= {"max_stack_depth", "total_splits", "pivots", "wall_time"}
