"""Figure rendering for CLI outputs.

Each function takes the rows already written to a delimited output file and
renders a matplotlib figure next to it. Rendering uses the Agg backend so
runs never require a display.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def plot_availability(rows, path):
    """Bar chart of per-station availability (analyze output)."""
    stations = [r["station"] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.35
    x = np.arange(len(stations))
    ax.bar(x - width / 2, [r["A_pass"] for r in rows], width,
           label="passenger")
    ax.bar(x + width / 2, [r["A1"] for r in rows], width,
           label="self-drive system")
    ax.set_xticks(x)
    ax.set_xticklabels(stations)
    ax.set_xlabel("station")
    ax.set_ylabel("availability")
    ax.set_ylim(0, 1.05)
    ax.legend()
    return _save(fig, path)


def plot_pareto(rows, path):
    """Availability vs rebalancing cost across the weight sweep."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([r["rebalancing_cost"] for r in rows],
            [r["A_star"] for r in rows], "o-")
    for r in rows:
        ax.annotate(f'c={r["c"]:g}',
                    (r["rebalancing_cost"], r["A_star"]),
                    textcoords="offset points", xytext=(4, 4), fontsize=8)
    ax.set_xlabel("rebalancing cost")
    ax.set_ylabel("worst-station availability")
    return _save(fig, path)


def plot_cost_curves(rows, path):
    """Total cost vs vehicle-to-driver ratio, one line per threshold
    and driver-cost ratio."""
    fig, ax = plt.subplots(figsize=(6, 4))
    keys = sorted({(r["threshold"], r["cost_ratio"]) for r in rows})
    for thr, cr in keys:
        pts = sorted((r["ratio"], r["c_total"]) for r in rows
                     if r["threshold"] == thr and r["cost_ratio"] == cr)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-",
                label=f"A≥{thr:g}, driver cost {cr:g}x")
    ax.set_xlabel("vehicle-to-driver ratio")
    ax.set_ylabel("total fleet cost")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_loss_sim(rows, path):
    """Empirical vs analytic availability per station (loss mode)."""
    stations = [r["station"] for r in rows]
    emp = np.array([r["empirical_A"] for r in rows])
    std = np.array([r["std"] for r in rows])
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.errorbar(stations, emp, yerr=std, fmt="o", capsize=3,
                label="simulated")
    ax.plot(stations, [r["analytic_A"] for r in rows], "x",
            markersize=9, label="analytic")
    ax.set_xlabel("station")
    ax.set_ylabel("passenger availability")
    ax.set_ylim(0, 1.05)
    ax.legend()
    return _save(fig, path)


def plot_wait_series(rows, path):
    """Mean wait over time per station (queueing mode)."""
    stations = sorted({r["station"] for r in rows})
    fig, ax = plt.subplots(figsize=(7, 4))
    for st in stations:
        pts = [(r["time"], r["mean_wait"]) for r in rows
               if r["station"] == st]
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts],
                label=f"station {st}", linewidth=0.9)
    ax.set_xlabel("time step")
    ax.set_ylabel("mean wait")
    ax.legend(fontsize=8, ncol=2)
    return _save(fig, path)
