import itertools

import numpy as np
import pytest
from scipy.optimize import linprog

import modfleet as mf
from modfleet.errors import Infeasible
from modfleet.minflow import FlowProblem, solve_min_cost_flow


def lp_oracle(fp: FlowProblem):
    """Independent optimum via scipy's LP solver."""
    arcs = list(fp.arcs)
    c = [a[2] for a in arcs]
    a_eq = np.zeros((fp.n, len(arcs)))
    for k, (i, j, _, _) in enumerate(arcs):
        a_eq[i, k] += 1
        a_eq[j, k] -= 1
    bounds = [(0, a[3]) for a in arcs]
    res = linprog(c, A_eq=a_eq, b_eq=fp.divergence, bounds=bounds, method="highs")
    return res


class TestSolveMinCostFlow:
    def test_zero_divergence(self):
        fp = FlowProblem(2, [0.0, 0.0], ((0, 1, 1.0, None), (1, 0, 1.0, None)))
        res = solve_min_cost_flow(fp)
        assert res.flows == {}
        assert res.cost == 0.0

    def test_single_path(self):
        fp = FlowProblem(2, [1.0, -1.0], ((0, 1, 1.0, None), (1, 0, 1.0, None)))
        res = solve_min_cost_flow(fp)
        assert res.flows == {(0, 1): 1.0}
        assert res.cost == pytest.approx(1.0)

    def test_capacities_force_detour(self):
        # direct arc too small, remainder must take the expensive route
        fp = FlowProblem(
            3,
            [2.0, 0.0, -2.0],
            ((0, 2, 1.0, 1.0), (0, 1, 1.0, None), (1, 2, 1.0, None)),
        )
        res = solve_min_cost_flow(fp)
        assert res.flows[(0, 2)] == pytest.approx(1.0)
        assert res.flows[(0, 1)] == pytest.approx(1.0)
        assert res.cost == pytest.approx(3.0)

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_lp_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = 4
        div = rng.uniform(-2, 2, n)
        div -= div.mean()
        arcs = []
        for i, j in itertools.permutations(range(n), 2):
            cap = float(rng.uniform(0.5, 3.0)) if rng.random() < 0.5 else None
            arcs.append((i, j, float(rng.uniform(0.1, 2.0)), cap))
        fp = FlowProblem(n, div, tuple(arcs))
        oracle = lp_oracle(fp)
        if not oracle.success:
            with pytest.raises(Infeasible):
                solve_min_cost_flow(fp)
            return
        res = solve_min_cost_flow(fp)
        assert res.cost == pytest.approx(oracle.fun, abs=1e-8)

    def test_infeasible_has_cut(self):
        fp = FlowProblem(2, [2.0, -2.0], ((0, 1, 1.0, 1.0),))
        with pytest.raises(Infeasible) as exc:
            solve_min_cost_flow(fp)
        assert 0 in exc.value.cut
        assert 1 not in exc.value.cut

    def test_flow_conservation(self):
        rng = np.random.default_rng(42)
        n = 5
        div = rng.uniform(-1, 1, n)
        div -= div.mean()
        arcs = tuple(
            (i, j, float(rng.uniform(0.5, 2)), None)
            for i, j in itertools.permutations(range(n), 2)
        )
        res = solve_min_cost_flow(FlowProblem(n, div, arcs))
        flow = res.flow_matrix(n)
        out_minus_in = flow.sum(axis=1) - flow.sum(axis=0)
        assert np.max(np.abs(out_minus_in - div)) < 1e-9

    def test_deterministic(self):
        fp = mf.generate_scenario(6, seed=3)
        from modfleet.rebalance_lp import delegation_flow_problem

        a = solve_min_cost_flow(delegation_flow_problem(fp)).flows
        b = solve_min_cost_flow(delegation_flow_problem(fp)).flows
        assert a == b


class TestFlowProblemValidation:
    def test_unbalanced_rejected(self):
        with pytest.raises(ValueError):
            FlowProblem(2, [1.0, 0.0], ((0, 1, 1.0, None),))

    def test_nonpositive_cost_rejected(self):
        with pytest.raises(ValueError):
            FlowProblem(2, [0.0, 0.0], ((0, 1, 0.0, None),))
