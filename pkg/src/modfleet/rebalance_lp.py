"""Open-loop rebalancing via two decoupled minimum-cost flow problems, plus
passenger-level availability of the coupled two-system fleet.

The delegation flows (capacitated by customer demand on each arc) balance the
customer-driven system; the virtual-customer flows (uncapacitated) balance the
taxi system. Both reduce to min-cost flow instances over the travel-time
costs, and the per-system relative utilizations come out constant across
stations at any feasible point of the flow constraints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateStation
from .jackson import mva_availability
from .minflow import FlowProblem, FlowResult, solve_min_cost_flow
from .scenario import (
    FleetConfig,
    RebalanceParams,
    Scenario,
    split_demand,
    uniform_offdiag,
)


@dataclass(frozen=True)
class MrpSolution:
    """Optimal open-loop controls and the underlying flow solutions."""

    params: RebalanceParams
    beta: np.ndarray        # delegated-customer flow rates (capacitated problem)
    alpha: np.ndarray       # virtual-customer flow rates (uncapacitated problem)
    beta_cost: float
    alpha_cost: float
    beta_potentials: np.ndarray
    alpha_potentials: np.ndarray


def demand_imbalance(s: Scenario):
    """Net outflow surplus per station: lambda_i - sum_j lambda_j p_ji."""
    return s.lam - s.p.T @ s.lam


def delegation_flow_problem(s: Scenario) -> FlowProblem:
    """Capacitated instance: move delegated customers, capped by arc demand."""
    arcs = [
        (i, j, float(s.T[i, j]), float(s.lam[i] * s.p[i, j]))
        for i in range(s.n)
        for j in range(s.n)
        if i != j and s.lam[i] * s.p[i, j] > 0
    ]
    return FlowProblem(s.n, demand_imbalance(s), tuple(arcs))


def virtual_flow_problem(s: Scenario) -> FlowProblem:
    """Uncapacitated instance: route virtual customers against the imbalance."""
    arcs = [
        (i, j, float(s.T[i, j]), None)
        for i in range(s.n)
        for j in range(s.n)
        if i != j
    ]
    return FlowProblem(s.n, -demand_imbalance(s), tuple(arcs))


def _rates_and_routing(flow_matrix):
    """Row sums as rates; rows scaled to probabilities, uniform when zero."""
    n = flow_matrix.shape[0]
    rates = flow_matrix.sum(axis=1)
    routing = uniform_offdiag(n)
    for i in range(n):
        if rates[i] > 0:
            routing[i] = flow_matrix[i] / rates[i]
            routing[i, i] = 0.0
    return rates, routing


def solve_mrp(s: Scenario) -> MrpSolution:
    """Optimal open-loop rebalancing parameters for a scenario.

    Both flow problems are feasible for any valid scenario (the capacitated
    one because total demand upper-bounds the imbalance on every cut), so no
    infeasibility is expected here.
    """
    beta_res: FlowResult = solve_min_cost_flow(delegation_flow_problem(s))
    alpha_res: FlowResult = solve_min_cost_flow(virtual_flow_problem(s))
    beta = beta_res.flow_matrix(s.n)
    alpha = alpha_res.flow_matrix(s.n)
    lam_del, eta = _rates_and_routing(beta)
    psi, xi = _rates_and_routing(alpha)
    params = RebalanceParams(lam_del, psi, eta, xi)
    return MrpSolution(
        params,
        beta,
        alpha,
        beta_res.cost,
        alpha_res.cost,
        beta_res.potentials,
        alpha_res.potentials,
    )


@dataclass(frozen=True)
class PassengerMetrics:
    """Station-level service metrics for real passengers across both systems."""

    Lambda_tot: np.ndarray
    Lambda_pass: np.ndarray
    A_pass: np.ndarray
    A1: np.ndarray
    A2: np.ndarray
    q: np.ndarray


def passenger_availability(
    s: Scenario, fc: FleetConfig, rp: RebalanceParams
) -> PassengerMetrics:
    """Availability seen by real passengers under the given open-loop controls.

    System 1 is analyzed at population m_v - m_d and System 2 at m_d; the
    passenger availability mixes the two by each station's delegation split.
    """
    sp = split_demand(s, rp)
    n = s.n
    m1 = fc.m_v - fc.m_d
    m2 = fc.m_d

    if sp.degenerate_system1 and len(sp.degenerate_system1) < n:
        raise DegenerateStation(1, sp.degenerate_system1)
    if sp.degenerate_system2 and len(sp.degenerate_system2) < n:
        raise DegenerateStation(2, sp.degenerate_system2)

    if len(sp.degenerate_system1) == n:
        a1 = np.zeros(n)
    elif m1 >= 1:
        a1, _ = mva_availability(sp.lam1, sp.p1, s.T, m1)
    else:
        a1 = np.zeros(n)

    if len(sp.degenerate_system2) == n or m2 < 1:
        a2 = np.zeros(n)
        lam2_node = np.zeros(n)
    else:
        a2, _ = mva_availability(sp.lam2, sp.p2, s.T, m2)
        lam2_node = a2 * sp.lam2

    lam1_node = a1 * sp.lam1
    real_frac = np.divide(
        rp.lam_del, sp.lam2, out=np.zeros(n), where=sp.lam2 > 0
    )
    lam_tot = lam1_node + lam2_node
    lam_pass = lam1_node + real_frac * lam2_node
    a_pass = lam_pass / s.lam
    return PassengerMetrics(lam_tot, lam_pass, a_pass, a1, a2, sp.q)


def availability_sweep(s: Scenario, rp: RebalanceParams, fleets, ratio):
    """A_pass per station for several fleet sizes at a fixed vehicle-to-driver ratio.

    fleets are m_v values; m_d = round(m_v / ratio).
    """
    rows = []
    for m_v in fleets:
        m_d = int(round(m_v / ratio))
        pm = passenger_availability(s, FleetConfig(int(m_v), m_d), rp)
        rows.append((int(m_v), m_d, pm))
    return rows
