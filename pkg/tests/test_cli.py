import json

import numpy as np
import pytest

from modfleet.cli import dispatch, params_from_dict, params_to_dict
from modfleet.scenario import RebalanceParams, load_scenario

HEADER = "pickup_ts,pickup_x,pickup_y,dropoff_x,dropoff_y,duration_s\n"


@pytest.fixture()
def scenario_file(tmp_path):
    out = tmp_path / "gen"
    assert dispatch(["gen", "-n", "4", "--seed", "3",
                     "--out", str(out)]) == 0
    return out / "scenario.json"


class TestDispatch:
    def test_help(self):
        assert dispatch(["--help"]) == 0

    def test_unknown_subcommand(self):
        assert dispatch(["frobnicate"]) == 2

    def test_missing_required_flag(self):
        assert dispatch(["gen"]) == 2

    def test_module_error_maps_to_exit_1(self, tmp_path):
        f = tmp_path / "empty.csv"
        f.write_text("")
        assert dispatch(["ingest", "--trips", str(f),
                         "--window-start", "0", "--window-end", "10",
                         "-n", "2", "--out", str(tmp_path / "o")]) == 1


class TestGen:
    def test_scenario_valid_and_manifest_written(self, tmp_path):
        out = tmp_path / "g"
        assert dispatch(["gen", "-n", "5", "--seed", "1",
                         "--out", str(out)]) == 0
        s = load_scenario(out / "scenario.json")
        assert s.n == 5
        doc = json.loads((out / "manifest.json").read_text())
        assert doc["subcommand"] == "gen"
        assert doc["seed"] == 1
        assert len(doc["config_hash"]) == 64

    def test_same_seed_identical_output(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        dispatch(["gen", "-n", "6", "--seed", "9", "--out", str(a)])
        dispatch(["gen", "-n", "6", "--seed", "9", "--out", str(b)])
        assert (a / "scenario.json").read_bytes() == \
            (b / "scenario.json").read_bytes()


class TestParamsRoundTrip:
    def test_round_trip(self):
        rp = RebalanceParams.zero(3)
        got = params_from_dict(params_to_dict(rp))
        assert np.array_equal(got.eta, rp.eta)
        assert np.array_equal(got.lam_del, rp.lam_del)


class TestAnalyze:
    def test_csv_columns_and_values(self, scenario_file, tmp_path):
        out = tmp_path / "an"
        assert dispatch(["analyze", "--scenario", str(scenario_file),
                         "--m-v", "40", "--m-d", "10",
                         "--out", str(out)]) == 0
        lines = (out / "availability.csv").read_text().splitlines()
        assert lines[0].split(",")[:3] == ["station", "lambda", "q"]
        assert len(lines) == 5   # header + 4 stations
        a_pass = [float(r.split(",")[5]) for r in lines[1:]]
        assert all(0 <= a <= 1 for a in a_pass)


class TestRebalanceAndSimulate:
    def test_lp_params_then_loss_sim(self, scenario_file, tmp_path):
        lp_out = tmp_path / "lp"
        assert dispatch(["rebalance", "lp", "--scenario",
                         str(scenario_file), "--out", str(lp_out)]) == 0
        params = json.loads((lp_out / "params.json").read_text())
        rp = params_from_dict(params)
        assert rp.violations() == []
        sim_out = tmp_path / "sim"
        assert dispatch(["simulate", "--scenario", str(scenario_file),
                         "--mode", "loss", "--m-v", "60", "--m-d", "15",
                         "--params", str(lp_out / "params.json"),
                         "--horizon", "1200", "--replicas", "2",
                         "--out", str(sim_out)]) == 0
        lines = (sim_out / "availability.csv").read_text().splitlines()
        assert lines[0] == "station,analytic_A,empirical_A,std"
        assert len(lines) == 5

    def test_nlp_single_point(self, scenario_file, tmp_path):
        out = tmp_path / "nlp"
        assert dispatch(["rebalance", "nlp", "--scenario",
                         str(scenario_file), "--m-v", "60", "--m-d", "15",
                         "-c", "2.0", "--out", str(out)]) == 0
        assert (out / "params.json").exists()
        lines = (out / "solution.csv").read_text().splitlines()
        assert lines[0].startswith("c,A_star,rebalancing_cost")

    def test_queueing_sim_outputs(self, scenario_file, tmp_path):
        out = tmp_path / "q"
        assert dispatch(["simulate", "--scenario", str(scenario_file),
                         "--mode", "queueing", "--m-v", "120", "--m-d", "40",
                         "--horizon", "300", "--replicas", "1",
                         "--rebalance-period", "10", "-w", "5",
                         "--out", str(out)]) == 0
        lines = (out / "waits.csv").read_text().splitlines()
        assert lines[0] == "time,station,mean_wait,std_wait"
        assert len(lines) == 1 + 300 * 4
        assert (out / "stability.csv").exists()


class TestSize:
    def test_fleets_and_costs(self, scenario_file, tmp_path):
        out = tmp_path / "sz"
        assert dispatch(["size", "--scenario", str(scenario_file),
                         "--ratio", "3", "--ratio", "4",
                         "--threshold", "0.5", "--cost-ratio", "1",
                         "--out", str(out)]) == 0
        fleets = (out / "fleets.csv").read_text().splitlines()
        assert fleets[0] == "ratio,threshold,m_v,m_d,min_availability"
        assert len(fleets) == 3
        costs = (out / "costs.csv").read_text().splitlines()
        assert len(costs) == 3


class TestAssign:
    def test_assignment_output(self, scenario_file, tmp_path):
        state = {"v_e": [1, 0, 0, 0], "d_u": [0, 0, 0, 0],
                 "c_u": [[0, 1, 0, 0], [0] * 4, [0] * 4, [0] * 4],
                 "v_t": [[0] * 4] * 4, "v_a": [[0] * 4] * 4}
        p = tmp_path / "state.json"
        p.write_text(json.dumps(state))
        out = tmp_path / "as"
        assert dispatch(["assign", "--scenario", str(scenario_file),
                         "--state", str(p), "--m-v", "20", "--m-d", "4",
                         "-w", "10", "--out", str(out)]) == 0
        lines = (out / "assignments.csv").read_text().splitlines()
        assert "self_drive,0,1,1" in lines

    def test_bad_state_exit_2(self, scenario_file, tmp_path):
        p = tmp_path / "state.json"
        p.write_text(json.dumps({"v_e": [1]}))
        assert dispatch(["assign", "--scenario", str(scenario_file),
                         "--state", str(p), "--m-v", "20", "--m-d", "4",
                         "--out", str(tmp_path / "o")]) == 2


class TestDeterminism:
    def test_rerun_byte_identical_csvs(self, scenario_file, tmp_path):
        runs = []
        for tag in ("r1", "r2"):
            out = tmp_path / tag
            assert dispatch(["simulate", "--scenario", str(scenario_file),
                             "--mode", "loss", "--m-v", "40", "--m-d", "10",
                             "--horizon", "900", "--replicas", "2",
                             "--seed", "4", "--out", str(out)]) == 0
            runs.append((out / "availability.csv").read_bytes())
        assert runs[0] == runs[1]

    def test_jobs_flag_does_not_change_results(self, scenario_file,
                                               tmp_path):
        outs = []
        for tag, jobs in (("j1", "1"), ("j2", "2")):
            out = tmp_path / tag
            assert dispatch(["simulate", "--scenario", str(scenario_file),
                             "--mode", "loss", "--m-v", "40", "--m-d", "10",
                             "--horizon", "600", "--replicas", "2",
                             "--seed", "4", "--jobs", jobs,
                             "--out", str(out)]) == 0
            outs.append((out / "availability.csv").read_bytes())
        assert outs[0] == outs[1]
