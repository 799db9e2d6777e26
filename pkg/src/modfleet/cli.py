"""Command-line entry point wiring every module.

Subcommands: gen, ingest, analyze, rebalance (lp | nlp), size, simulate,
assign. Each run writes delimited CSV outputs plus a run manifest (JSON)
recording the subcommand, a hash of its configuration, the seed, package
versions, wall time, and the produced files. All randomness flows from
--seed (default 0, never from entropy), so reruns with the same arguments
reproduce byte-identical CSVs. --plot renders matplotlib figures next to
the CSVs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import click
import numpy as np
import scipy

from . import __version__
from .assignment import StationState, build_problem, solve_assignment
from .errors import ModfleetError, UsageError
from .ingest import ingest as ingest_pipeline
from .rebalance_lp import passenger_availability, solve_mrp
from .rebalance_nlp import MmrpConfig, pareto_sweep, solve_mmrp
from .scenario import (
    FleetConfig,
    RebalanceParams,
    Scenario,
    generate_scenario,
    load_scenario,
    save_scenario,
)
from .simulator import SimConfig, run_loss_sim, run_queueing_sim
from .sizing import SizingConfig, cost_curves, size_sweep


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return str(x)


def _write_csv(path, fieldnames, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(fieldnames)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in fieldnames])
    return str(path)


def _manifest(out_dir, subcommand, config, seed, outputs, t0):
    doc = {
        "subcommand": subcommand,
        "config_hash": hashlib.sha256(
            json.dumps(config, sort_keys=True).encode()).hexdigest(),
        "config": config,
        "seed": seed,
        "versions": {
            "modfleet": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "wall_time_s": round(time.time() - t0, 3),
        "outputs": [str(p) for p in outputs],
    }
    path = Path(out_dir) / "manifest.json"
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
    return doc


def _out_dir(out):
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def params_to_dict(rp: RebalanceParams):
    return {
        "lambda_del": rp.lam_del.tolist(),
        "psi": rp.psi.tolist(),
        "eta": rp.eta.tolist(),
        "xi": rp.xi.tolist(),
    }


def params_from_dict(doc) -> RebalanceParams:
    return RebalanceParams(
        np.asarray(doc["lambda_del"], dtype=float),
        np.asarray(doc["psi"], dtype=float),
        np.asarray(doc["eta"], dtype=float),
        np.asarray(doc["xi"], dtype=float),
    )


def _load_params(path, n) -> RebalanceParams:
    if path is None:
        return RebalanceParams.zero(n)
    with open(path) as f:
        return params_from_dict(json.load(f))


scenario_opt = click.option("--scenario", "scenario_path", required=True,
                            type=click.Path(exists=True),
                            help="Scenario JSON file.")
out_opt = click.option("--out", required=True,
                       help="Output directory (created if missing).")
seed_opt = click.option("--seed", default=0, show_default=True,
                        help="RNG seed; all randomness derives from it.")
jobs_opt = click.option("--jobs", default=1, show_default=True,
                        help="Worker count for replicas/sweeps.")
plot_opt = click.option("--plot", is_flag=True,
                        help="Also render matplotlib figures.")


@click.group()
@click.version_option(version=__version__)
def main():
    """Two-system mobility-on-demand fleet toolkit."""


@main.command()
@click.option("-n", "--stations", "n", required=True, type=int)
@seed_opt
@click.option("--style", default="default", show_default=True,
              type=click.Choice(["default", "grid"]))
@click.option("--speed", default=0.2, show_default=True)
@out_opt
def gen(n, seed, style, speed, out):
    """Generate a seeded synthetic scenario."""
    t0 = time.time()
    d = _out_dir(out)
    s = generate_scenario(n, seed=seed, style=style, speed=speed)
    path = d / "scenario.json"
    save_scenario(s, path)
    _manifest(d, "gen", {"n": n, "style": style, "speed": speed,
                         "seed": seed}, seed, [path], t0)


@main.command("ingest")
@click.option("--trips", required=True, type=click.Path(exists=True),
              help="Trip CSV file.")
@click.option("--window-start", required=True)
@click.option("--window-end", required=True)
@click.option("-n", "--stations", "n", required=True, type=int)
@seed_opt
@out_opt
def ingest_cmd(trips, window_start, window_end, n, seed, out):
    """Estimate a scenario from trip records."""
    t0 = time.time()
    d = _out_dir(out)
    res, parsed = ingest_pipeline(trips, (window_start, window_end), n,
                                  seed=seed)
    path = d / "scenario.json"
    save_scenario(res.scenario, path)
    notes = d / "notes.txt"
    notes.write_text("".join(
        f"{line}\n" for line in
        [f"trips used: {len(parsed.trips)}",
         f"rows skipped: {parsed.skipped}", *res.notes]))
    _manifest(d, "ingest",
              {"trips": str(trips), "window": [window_start, window_end],
               "n": n, "seed": seed}, seed, [path, notes], t0)


@main.command()
@scenario_opt
@click.option("--m-v", required=True, type=int, help="Total vehicles.")
@click.option("--m-d", required=True, type=int, help="Drivers.")
@click.option("--params", "params_path", type=click.Path(exists=True),
              help="Rebalance-parameter JSON (default: no rebalancing).")
@out_opt
@plot_opt
def analyze(scenario_path, m_v, m_d, params_path, out, plot):
    """Per-station availability for a fleet under given controls."""
    t0 = time.time()
    d = _out_dir(out)
    s = load_scenario(scenario_path)
    rp = _load_params(params_path, s.n)
    pm = passenger_availability(s, FleetConfig(m_v, m_d), rp)
    rows = [{"station": i, "lambda": s.lam[i], "q": pm.q[i],
             "A1": pm.A1[i], "A2": pm.A2[i], "A_pass": pm.A_pass[i],
             "Lambda_tot": pm.Lambda_tot[i],
             "Lambda_pass": pm.Lambda_pass[i]}
            for i in range(s.n)]
    outputs = [_write_csv(d / "availability.csv", list(rows[0]), rows)]
    if plot:
        from . import report
        outputs.append(report.plot_availability(rows, d / "availability.png"))
    _manifest(d, "analyze",
              {"scenario": str(scenario_path), "m_v": m_v, "m_d": m_d,
               "params": params_path and str(params_path)}, 0, outputs, t0)


@main.group()
def rebalance():
    """Open-loop rebalancing optimization."""


@rebalance.command("lp")
@scenario_opt
@out_opt
def rebalance_lp_cmd(scenario_path, out):
    """Availability-balancing controls from two min-cost flows."""
    t0 = time.time()
    d = _out_dir(out)
    s = load_scenario(scenario_path)
    sol = solve_mrp(s)
    params_path = d / "params.json"
    with open(params_path, "w") as f:
        json.dump(params_to_dict(sol.params), f, indent=2)
        f.write("\n")
    rows = [{"kind": kind, "i": i, "j": j, "rate": mat[i, j]}
            for kind, mat in (("delegated", sol.beta), ("virtual", sol.alpha))
            for i in range(s.n) for j in range(s.n) if mat[i, j] > 0]
    outputs = [str(params_path),
               _write_csv(d / "flows.csv", ["kind", "i", "j", "rate"], rows)]
    _manifest(d, "rebalance lp",
              {"scenario": str(scenario_path),
               "beta_cost": sol.beta_cost, "alpha_cost": sol.alpha_cost},
              0, outputs, t0)


@rebalance.command("nlp")
@scenario_opt
@click.option("--m-v", required=True, type=int)
@click.option("--m-d", required=True, type=int)
@click.option("-c", "weights", multiple=True, type=float, required=True,
              help="Availability weight(s); repeat for a sweep.")
@out_opt
@plot_opt
def rebalance_nlp_cmd(scenario_path, m_v, m_d, weights, out, plot):
    """Availability-maximizing controls via network analysis in the loop."""
    t0 = time.time()
    d = _out_dir(out)
    s = load_scenario(scenario_path)
    if len(weights) == 1:
        res = solve_mmrp(s, MmrpConfig(c=weights[0], m_v=m_v, m_d=m_d))
        params_path = d / "params.json"
        with open(params_path, "w") as f:
            json.dump(params_to_dict(res.params), f, indent=2)
            f.write("\n")
        rows = [{"c": weights[0], "A_star": res.A_star,
                 "rebalancing_cost": res.rebalancing_cost,
                 "objective": res.objective, "converged": res.converged,
                 "iterations": res.iterations}]
        outputs = [str(params_path),
                   _write_csv(d / "solution.csv", list(rows[0]), rows)]
    else:
        rows = pareto_sweep(s, m_v, m_d, sorted(weights))
        for r in rows:
            r.pop("seconds", None)
            r.pop("params", None)
        outputs = [_write_csv(d / "pareto.csv", list(rows[0]), rows)]
        if plot:
            from . import report
            outputs.append(report.plot_pareto(rows, d / "pareto.png"))
    _manifest(d, "rebalance nlp",
              {"scenario": str(scenario_path), "m_v": m_v, "m_d": m_d,
               "c": sorted(weights)}, 0, outputs, t0)


@main.command()
@scenario_opt
@click.option("--ratio", "ratios", multiple=True, type=float,
              default=(2.0, 3.0, 4.0, 5.0, 6.0), show_default=True)
@click.option("--threshold", "thresholds", multiple=True, type=float,
              default=(0.85, 0.9, 0.95), show_default=True)
@click.option("--cost-ratio", "cost_ratios", multiple=True, type=float,
              default=(1.0, 2.0, 5.0), show_default=True)
@click.option("--max-m-d", default=4096, show_default=True)
@out_opt
@plot_opt
def size(scenario_path, ratios, thresholds, cost_ratios, max_m_d, out, plot):
    """Smallest fleets meeting availability thresholds, plus cost curves."""
    t0 = time.time()
    d = _out_dir(out)
    s = load_scenario(scenario_path)
    cfg = SizingConfig(ratios=tuple(sorted(ratios)),
                       thresholds=tuple(sorted(thresholds)),
                       cost_ratios=tuple(sorted(cost_ratios)),
                       max_m_d=max_m_d)
    res = size_sweep(s, cfg)
    fleet_rows = [{"ratio": ratio, "threshold": thr, "m_v": mv, "m_d": md,
                   "min_availability": a}
                  for (ratio, thr), (mv, md, a) in sorted(res.fleets.items())]
    cost_rows = cost_curves(res.fleets, cfg.cost_ratios)
    outputs = [
        _write_csv(d / "fleets.csv", list(fleet_rows[0]), fleet_rows),
        _write_csv(d / "costs.csv", list(cost_rows[0]), cost_rows),
    ]
    if plot:
        from . import report
        outputs.append(report.plot_cost_curves(cost_rows, d / "costs.png"))
    _manifest(d, "size",
              {"scenario": str(scenario_path), "ratios": sorted(ratios),
               "thresholds": sorted(thresholds),
               "cost_ratios": sorted(cost_ratios), "max_m_d": max_m_d},
              0, outputs, t0)


@main.command()
@scenario_opt
@click.option("--mode", required=True, type=click.Choice(["loss", "queueing"]))
@click.option("--m-v", required=True, type=int)
@click.option("--m-d", required=True, type=int)
@click.option("--params", "params_path", type=click.Path(exists=True),
              help="Loss mode: rebalance-parameter JSON "
                   "(default: solve the linear program).")
@click.option("--horizon", default=30000, show_default=True)
@click.option("--warmup", default=None, type=int,
              help="Discarded steps (default horizon/3).")
@click.option("--replicas", default=10, show_default=True)
@click.option("--dt", default=1.0, show_default=True)
@click.option("--rebalance-period", default=60, show_default=True)
@click.option("-w", "--weight", "w", default=1.0, show_default=True,
              help="Queueing mode: assignment reward weight.")
@seed_opt
@jobs_opt
@out_opt
@plot_opt
def simulate(scenario_path, mode, m_v, m_d, params_path, horizon, warmup,
             replicas, dt, rebalance_period, w, seed, jobs, out, plot):
    """Time-stepped simulation in loss or queueing mode."""
    t0 = time.time()
    d = _out_dir(out)
    s = load_scenario(scenario_path)
    fc = FleetConfig(m_v, m_d)
    config = {"scenario": str(scenario_path), "mode": mode, "m_v": m_v,
              "m_d": m_d, "params": params_path and str(params_path),
              "horizon": horizon, "warmup": warmup, "replicas": replicas,
              "dt": dt, "rebalance_period": rebalance_period, "w": w,
              "seed": seed}
    if mode == "loss":
        rp = (_load_params(params_path, s.n) if params_path
              else solve_mrp(s).params)
        cfg = SimConfig(s, fc, mode="loss", rebalance=rp, horizon=horizon,
                        warmup=warmup, replicas=replicas, dt=dt, seed=seed)
        m = run_loss_sim(cfg, jobs=jobs)
        analytic = passenger_availability(s, fc, rp).A_pass
        rows = [{"station": i, "analytic_A": analytic[i],
                 "empirical_A": m.availability[i],
                 "std": m.availability_std[i]} for i in range(s.n)]
        outputs = [_write_csv(d / "availability.csv", list(rows[0]), rows)]
        if plot:
            from . import report
            outputs.append(report.plot_loss_sim(rows,
                                                d / "availability.png"))
    else:
        cfg = SimConfig(s, fc, mode="queueing", horizon=horizon,
                        warmup=warmup, replicas=replicas, dt=dt, seed=seed,
                        rebalance_period=rebalance_period, w=w)
        m = run_queueing_sim(cfg, jobs=jobs)
        mean = m.wait_series.mean(axis=0)
        std = m.wait_series.std(axis=0, ddof=1) if replicas > 1 \
            else np.zeros_like(mean)
        rows = [{"time": t, "station": i, "mean_wait": mean[t, i],
                 "std_wait": std[t, i]}
                for t in range(horizon) for i in range(s.n)]
        outputs = [_write_csv(d / "waits.csv", list(rows[0]), rows)]
        slope_rows = [{"replica": r, "worst_station_slope": sl}
                      for r, sl in enumerate(m.wait_slopes)]
        outputs.append(_write_csv(d / "stability.csv",
                                  list(slope_rows[0]), slope_rows))
        if plot:
            from . import report
            outputs.append(report.plot_wait_series(rows, d / "waits.png"))
    _manifest(d, "simulate", config, seed, outputs, t0)


@main.command()
@scenario_opt
@click.option("--state", "state_path", required=True,
              type=click.Path(exists=True),
              help="Station-state JSON: v_e, d_u, c_u, v_t, v_a.")
@click.option("--m-v", required=True, type=int)
@click.option("--m-d", required=True, type=int)
@click.option("-w", "--weight", "w", default=1.0, show_default=True)
@out_opt
def assign(scenario_path, state_path, m_v, m_d, w, out):
    """Solve one real-time customer-assignment program."""
    t0 = time.time()
    d = _out_dir(out)
    s = load_scenario(scenario_path)
    with open(state_path) as f:
        doc = json.load(f)
    try:
        st = StationState(np.asarray(doc["v_e"]), np.asarray(doc["d_u"]),
                          np.asarray(doc["c_u"]), np.asarray(doc["v_t"]),
                          np.asarray(doc["v_a"]))
    except (KeyError, ValueError) as e:
        raise UsageError(f"bad station state: {e}") from e
    ap = build_problem(st, m_v, m_d, s.lam, w)
    sol = solve_assignment(ap)
    rows = [{"kind": kind, "i": i, "j": j, "count": int(mat[i, j])}
            for kind, mat in (("self_drive", sol.n_v), ("taxi", sol.n_d))
            for i in range(s.n) for j in range(s.n) if mat[i, j] > 0]
    outputs = [_write_csv(d / "assignments.csv",
                          ["kind", "i", "j", "count"], rows)]
    _manifest(d, "assign",
              {"scenario": str(scenario_path), "state": str(state_path),
               "m_v": m_v, "m_d": m_d, "w": w, "objective": sol.objective,
               "gap": sol.gap}, 0, outputs, t0)


def dispatch(argv=None):
    """Entry point returning an exit code instead of raising SystemExit."""
    try:
        main.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.UsageError as e:
        click.echo(f"error: {e.format_message()}", err=True)
        return 2
    except click.exceptions.Abort:
        return 1
    except click.exceptions.ClickException as e:
        e.show()
        return e.exit_code
    except UsageError as e:
        click.echo(f"error: {e}", err=True)
        return 2
    except ModfleetError as e:
        click.echo(f"error: {e}", err=True)
        return 1
    except SystemExit as e:   # --help and --version exit normally
        return int(e.code or 0)


if __name__ == "__main__":
    sys.exit(dispatch())
