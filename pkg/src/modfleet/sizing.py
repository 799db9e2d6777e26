"""Fleet sizing: smallest fleet meeting an availability threshold at a fixed
vehicle-to-driver ratio, and total-cost curves across ratios.

The rebalancing parameters from the linear program do not depend on fleet
size, so they are computed once per scenario and the search only re-runs the
availability evaluation. The driver count m_d is the free integer; the
vehicle count follows as round(ratio * m_d).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotReachedWithinBounds
from .rebalance_lp import passenger_availability, solve_mrp
from .scenario import FleetConfig, RebalanceParams, Scenario


@dataclass(frozen=True)
class SizingConfig:
    ratios: tuple = (2.0, 3.0, 4.0, 5.0, 6.0)
    thresholds: tuple = (0.85, 0.90, 0.95)
    cost_ratios: tuple = (1.0, 2.0, 5.0)   # driver cost over vehicle cost
    max_m_d: int = 4096

    def __post_init__(self):
        if any(r <= 1 for r in self.ratios):
            raise ValueError("vehicle-to-driver ratios must exceed 1")
        if any(not 0 < t < 1 for t in self.thresholds):
            raise ValueError("thresholds must lie in (0, 1)")
        if any(c < 1 for c in self.cost_ratios):
            raise ValueError("driver-to-vehicle cost ratios must be >= 1")
        if self.max_m_d < 1:
            raise ValueError("max_m_d must be positive")


@dataclass
class SizingResult:
    """Per-cell minimal fleets plus derived cost rows.

    fleets maps (ratio, threshold) -> (m_v, m_d, min_availability);
    costs is a list of dicts with threshold, cost_ratio, ratio, m_v, m_d,
    c_total, optimal.
    """

    fleets: dict
    costs: list = field(default_factory=list)
    notes: tuple = ("driver count is the free integer; m_v = round(ratio * m_d)",)


def _fleet_for(ratio, m_d):
    m_v = int(round(ratio * m_d))
    return FleetConfig(max(m_v, m_d + 1), m_d)


def min_fleet_for_threshold(s: Scenario, rp: RebalanceParams, ratio,
                            threshold, max_m_d=4096):
    """Smallest (m_v, m_d) at the given ratio whose worst-station passenger
    availability reaches the threshold.

    Doubling finds an upper bracket, bisection narrows it, and a +-2 linear
    scan confirms the crossing (availability growth in fleet size is an
    empirical regularity, not a proven monotonicity).
    """
    if not 0 <= threshold < 1:
        raise ValueError("threshold must lie in [0, 1)")

    cache = {}

    def min_avail(m_d):
        if m_d not in cache:
            pm = passenger_availability(s, _fleet_for(ratio, m_d), rp)
            cache[m_d] = float(pm.A_pass.min())
        return cache[m_d]

    hi = 1
    while min_avail(hi) < threshold:
        hi *= 2
        if hi > max_m_d:
            raise NotReachedWithinBounds(
                f"threshold {threshold} not reached by m_d <= {max_m_d}"
                f" at ratio {ratio}"
            )
    lo = hi // 2  # fails (or is 0 when m_d = 1 already passes)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if min_avail(mid) >= threshold:
            hi = mid
        else:
            lo = mid
    for m_d in range(max(1, hi - 2), hi):
        if min_avail(m_d) >= threshold:
            hi = m_d
            break
    for m_d in range(hi, min(hi + 3, max_m_d + 1)):
        if min_avail(m_d) >= threshold:
            fc = _fleet_for(ratio, m_d)
            return fc.m_v, fc.m_d
    raise NotReachedWithinBounds(
        f"availability dips back below {threshold} near m_d = {hi}"
    )


def cost_curves(fleets: dict, cost_ratios) -> list:
    """Total-cost rows (in vehicle-cost units) for each sized cell.

    c_total = m_v + cost_ratio * m_d. The cheapest ratio per
    (threshold, cost_ratio) pair is flagged optimal; ties go to the smaller
    ratio.
    """
    thresholds = sorted({t for (_, t) in fleets})
    rows = []
    for t in thresholds:
        cells = sorted((r, mv, md) for (r, tt), (mv, md, _) in fleets.items()
                       if tt == t)
        for c_r in cost_ratios:
            totals = [(mv + c_r * md, r, mv, md) for r, mv, md in cells]
            best = min(totals)[0]
            for c_total, r, mv, md in totals:
                rows.append({
                    "threshold": t, "cost_ratio": c_r, "ratio": r,
                    "m_v": mv, "m_d": md, "c_total": c_total,
                    "optimal": c_total == best,
                })
    # keep only the smallest ratio flagged when several ratios tie
    seen = set()
    for row in rows:
        key = (row["threshold"], row["cost_ratio"])
        if row["optimal"]:
            if key in seen:
                row["optimal"] = False
            else:
                seen.add(key)
    return rows


def size_sweep(s: Scenario, cfg: SizingConfig) -> SizingResult:
    """Sizes every (ratio, threshold) cell and derives the cost table."""
    rp = solve_mrp(s).params
    fleets = {}
    for ratio in cfg.ratios:
        for t in cfg.thresholds:
            m_v, m_d = min_fleet_for_threshold(s, rp, ratio, t,
                                               max_m_d=cfg.max_m_d)
            pm = passenger_availability(s, FleetConfig(m_v, m_d), rp)
            fleets[(ratio, t)] = (m_v, m_d, float(pm.A_pass.min()))
    return SizingResult(fleets=fleets,
                        costs=cost_curves(fleets, cfg.cost_ratios))


def optimal_ratios(result: SizingResult) -> dict:
    """(threshold, cost_ratio) -> optimal ratio, read off the cost rows."""
    return {(r["threshold"], r["cost_ratio"]): r["ratio"]
            for r in result.costs if r["optimal"]}
