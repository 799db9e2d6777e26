import json

import numpy as np
import pytest

import modfleet as mf
from modfleet.errors import BadTopology, InfeasibleSplit
from modfleet.scenario import scenario_from_dict, scenario_to_dict, uniform_offdiag


def two_station(lam=(1.0, 1.0)):
    return mf.Scenario(lam, [[0, 1], [1, 0]], [[1.0, 1.0], [1.0, 1.0]])


class TestValidateScenario:
    def test_minimal_valid(self):
        assert mf.validate_scenario(two_station()) == []

    def test_row_sum_violation(self):
        s = mf.Scenario([1.0, 1.0], [[0, 0.9], [1, 0]], [[1.0, 1.0], [1.0, 1.0]])
        violations = mf.validate_scenario(s)
        assert len(violations) == 1
        assert "row-sum" in violations[0]

    def test_irreducibility_violation(self):
        # station 2 unreachable: support is 0->1, 1->0 plus 2->0 only
        p = [[0, 1, 0], [1, 0, 0], [1, 0, 0]]
        t = np.ones((3, 3))
        s = mf.Scenario([1, 1, 1], p, t)
        assert any("irreducible" in v for v in mf.validate_scenario(s))

    def test_negative_rate_and_travel_time(self):
        s = mf.Scenario([1.0, -1.0], [[0, 1], [1, 0]], [[1.0, -2.0], [1.0, 1.0]])
        violations = mf.validate_scenario(s)
        assert any("lambda[1]" in v for v in violations)
        assert any("T[0][1]" in v for v in violations)


class TestSplitDemand:
    def test_zero_controls(self):
        s = two_station()
        sp = mf.split_demand(s, mf.RebalanceParams.zero(2))
        assert np.allclose(sp.q, 1.0)
        assert np.allclose(sp.p1, s.p)
        assert np.allclose(sp.lam2, 0.0)
        assert sp.degenerate_system2 == (0, 1)
        assert sp.degenerate_system1 == ()

    def test_hand_worked_two_station(self):
        # lam=(2,1), delegate 1 unit at station 0 via eta_01=1, one virtual at 1
        s = two_station(lam=(2.0, 1.0))
        rp = mf.RebalanceParams(
            lam_del=[1.0, 0.0], psi=[0.0, 1.0],
            eta=[[0, 1], [1, 0]], xi=[[0, 1], [1, 0]],
        )
        sp = mf.split_demand(s, rp)
        assert np.allclose(sp.q, [0.5, 1.0])
        assert np.allclose(sp.p1, s.p)
        assert np.allclose(sp.lam2, [1.0, 1.0])
        assert np.allclose(sp.p_frac, [0.0, 1.0])
        assert np.allclose(sp.p2, [[0, 1], [1, 0]])

    def test_infeasible_delegation(self):
        s = two_station()
        rp = mf.RebalanceParams(
            lam_del=[1.5, 0.0], psi=[0, 0],
            eta=[[0, 1], [1, 0]], xi=[[0, 1], [1, 0]],
        )
        with pytest.raises(InfeasibleSplit):
            mf.split_demand(s, rp)

    def test_reconstruction_identity(self):
        s = mf.generate_scenario(6, seed=11)
        sol = mf.solve_mrp(s)
        sp = mf.split_demand(s, sol.params)
        recon = sp.q[:, None] * sp.p1 + (1 - sp.q)[:, None] * sol.params.eta
        mask = sp.q > 0
        assert np.max(np.abs(recon[mask] - s.p[mask])) < 1e-9


class TestBuildNetwork:
    def test_two_station_structure(self):
        s = two_station()
        net = mf.build_network(s.lam, s.p, s.T, 2)
        assert net.n_nodes == 4
        assert net.nodes[:2] == (("SS", 0), ("SS", 1))
        assert net.nodes[2:] == (("IS", 0, 1), ("IS", 1, 0))
        # SS0 -> IS(0,1) with prob 1, IS(0,1) -> SS1 with prob 1
        assert net.r[0, 2] == 1.0
        assert net.r[2, 1] == 1.0
        assert np.allclose(net.r.sum(axis=1), 1.0)

    def test_full_routing_counts(self):
        s = mf.generate_scenario(3, seed=0)
        net = mf.build_network(s.lam, s.p, s.T, 4)
        assert net.n_nodes == 9  # 3 + 3*2

    def test_pruning(self):
        # arc 0->1 carries zero probability, so its road node is pruned
        p = np.array([[0.0, 0.0], [1.0, 0.0]])
        net = mf.build_network([1.0, 1.0], p, np.ones((2, 2)), 1)
        assert net.n_nodes == 3
        assert net.nodes[2] == ("IS", 1, 0)

    def test_bad_topology(self):
        with pytest.raises(BadTopology):
            mf.build_network([1, 1], [[0, 1], [1, 0]], [[1, 0], [1, 1]], 1)

    def test_deterministic(self):
        s = mf.generate_scenario(5, seed=2)
        a = mf.build_network(s.lam, s.p, s.T, 7)
        b = mf.build_network(s.lam, s.p, s.T, 7)
        assert a.nodes == b.nodes
        assert np.array_equal(a.r, b.r)


class TestRebalanceParams:
    def test_zero_params_valid(self):
        assert mf.RebalanceParams.zero(4).violations() == []

    def test_coupling_violation_reported(self):
        s = two_station()
        rp = mf.RebalanceParams(
            lam_del=[0.5, 0.0], psi=[0, 0],
            eta=[[0, 1], [1, 0]], xi=[[0, 1], [1, 0]],
        )
        assert rp.violations(s) == []
        rp2 = mf.RebalanceParams(
            lam_del=[1.5, 0.0], psi=[0, 0],
            eta=[[0, 1], [1, 0]], xi=[[0, 1], [1, 0]],
        )
        assert any("exceeds demand" in v for v in rp2.violations(s))

    def test_uniform_offdiag(self):
        u = uniform_offdiag(4)
        assert np.allclose(u.sum(axis=1), 1.0)
        assert np.all(np.diag(u) == 0)


class TestScenarioIo:
    def test_round_trip(self, tmp_path):
        s = mf.generate_scenario(4, seed=5)
        path = tmp_path / "scen.json"
        mf.save_scenario(s, path)
        s2 = mf.load_scenario(path)
        assert np.array_equal(s.lam, s2.lam)
        assert np.array_equal(s.p, s2.p)
        assert np.array_equal(s.T, s2.T)
        assert np.array_equal(s.coords, s2.coords)

    def test_dict_has_units(self):
        doc = scenario_to_dict(two_station())
        assert doc["units"]["time"] == "unit"
        assert scenario_from_dict(doc).n == 2


class TestGenerateScenario:
    def test_minimal(self):
        assert mf.validate_scenario(mf.generate_scenario(2, seed=0)) == []

    def test_seed_determinism(self):
        a = mf.generate_scenario(8, seed=7)
        b = mf.generate_scenario(8, seed=7)
        assert np.array_equal(a.lam, b.lam)
        assert np.array_equal(a.p, b.p)

    def test_twenty_station_valid(self):
        assert mf.validate_scenario(mf.generate_scenario(20, seed=7)) == []
