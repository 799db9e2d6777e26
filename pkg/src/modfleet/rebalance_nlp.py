"""Exact availability balancing: nonlinear rebalancing with MVA in the loop.

The decision variables are the per-arc delegated-customer rates b[i][j]
(= lam_del_i * eta_ij) and virtual-customer rates v[i][j] (= psi_i * xi_ij).
In these variables the row-stochasticity, nonnegativity, and demand-coupling
constraints of the rebalancing program collapse to a box, and the
customer-system balance condition becomes linear (it is equivalent to the
flow-balance constraint of the linear program, so a zero linear residual
makes the utilizations exactly equal). What remains nonlinear is the
passenger-availability equality across stations, evaluated through exact MVA
of both systems.

Solved by penalty continuation: a geometric ladder of penalty weights on
the availability-equality residual, each rung a bound-constrained L-BFGS-B
subproblem with exact gradients for the linear terms and central finite
differences through MVA for the availability terms. After each rung the
flow-balance residual is removed exactly by a closed-form minimum-norm
correction of the delegated flows. The starting point is built exactly
feasible: a transportation solution delegating the same fraction of every
station's demand balances the customer system, and the linear program's
virtual flows balance the taxi system, so availability starts constant.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import Infeasible, InfeasibleStart, NoProgress
from .jackson import mva_availability
from .minflow import FlowProblem, solve_min_cost_flow
from .rebalance_lp import demand_imbalance, solve_mrp
from .scenario import FleetConfig, RebalanceParams, Scenario, uniform_offdiag

_RATE_FLOOR = 1e-9
_PENALTY = 1e12


@dataclass(frozen=True)
class MmrpConfig:
    """Weight, fleet, and solver knobs for the exact rebalancing program."""

    c: float
    m_v: int
    m_d: int
    initial: RebalanceParams | None = None   # defaults to the linear solution
    max_outer: int = 12
    max_inner: int = 250
    eps_feas: float = 1e-6
    eps_A: float = 1e-3
    fd_step: float = 1e-6

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("availability weight c must be nonnegative")
        if self.eps_feas <= 0 or self.eps_A <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class MmrpResult:
    params: RebalanceParams
    A_star: float
    A_pass: np.ndarray
    objective: float
    rebalancing_cost: float
    residuals: dict
    iterations: int
    converged: bool
    notes: tuple = ()
    trace: list = field(default_factory=list)


def _stationary_fast(p):
    """Stationary vector without the reducibility pre-check (hot path)."""
    n = p.shape[0]
    a = p.T - np.eye(n)
    a[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    pi = np.linalg.solve(a, rhs)
    if not np.all(np.isfinite(pi)) or pi.min() <= 1e-12:
        raise np.linalg.LinAlgError("chain effectively reducible")
    return pi / pi.max()


class _Evaluator:
    """Caches the pieces of the penalized objective.

    The customer-driven system depends only on the delegated flows b, so its
    MVA is cached by the bytes of b and reused across all virtual-flow
    perturbations of a finite-difference gradient.
    """

    def __init__(self, s: Scenario, m_v, m_d, c):
        self.s = s
        self.n = s.n
        self.m1 = m_v - m_d
        self.m2 = m_d
        self.c = c
        self.cap = s.lam[:, None] * s.p      # upper bounds on b
        self.imb = demand_imbalance(s)
        self._uniform = uniform_offdiag(s.n)
        self._sys1_cache = {}

    def system1(self, b):
        key = b.tobytes()
        hit = self._sys1_cache.get(key, False)
        if hit is not False:
            return hit
        s = self.s
        lam1 = s.lam - b.sum(axis=1)
        if np.any(lam1 < _RATE_FLOOR):
            out = None
        else:
            p1 = np.clip(s.lam[:, None] * s.p - b, 0.0, None)
            p1 /= p1.sum(axis=1, keepdims=True)
            try:
                pi1 = _stationary_fast(p1)
                a1, _ = mva_availability(lam1, p1, s.T, self.m1, pi=pi1)
            except np.linalg.LinAlgError:
                out = None
            else:
                out = (a1, lam1 / s.lam)
        if len(self._sys1_cache) > 16:
            self._sys1_cache.clear()
        self._sys1_cache[key] = out
        return out

    def availability(self, b, v):
        """(a_pass, a2) at the point, or None when unanalyzable."""
        sys1 = self.system1(b)
        if sys1 is None:
            return None
        a1, q = sys1
        flow2 = b + v
        lam2 = flow2.sum(axis=1)
        low = lam2 < _RATE_FLOOR
        lam2 = np.maximum(lam2, _RATE_FLOOR)
        p2 = flow2 / lam2[:, None]
        if low.any():
            p2[low] = self._uniform[low]
        try:
            pi2 = _stationary_fast(p2)
            a2, _ = mva_availability(lam2, p2, self.s.T, self.m2, pi=pi2)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(a2)):
            return None
        return a1 * q + a2 * (1.0 - q), a2

    def nonlinear(self, b, v, mu_a, rho_a):
        """Availability-dependent part of the merit function."""
        avail = self.availability(b, v)
        if avail is None:
            return _PENALTY, None
        a_pass, a2 = avail
        r_a = a_pass[1:] - a_pass[0]
        value = -self.c * a2.sum() + mu_a @ r_a + 0.5 * rho_a * (r_a @ r_a)
        return value, a_pass

    def linear_residual(self, b):
        return (b.sum(axis=1) - b.sum(axis=0)) - self.imb

    def merit(self, b, v, mu_l, rho_l, mu_a, rho_a):
        r_l = self.linear_residual(b)
        lin = float(np.sum(self.s.T * v)) + mu_l @ r_l + 0.5 * rho_l * (r_l @ r_l)
        nl, a_pass = self.nonlinear(b, v, mu_a, rho_a)
        return lin + nl, r_l, a_pass

    def linear_gradient(self, b, mu_l, rho_l):
        dual = mu_l + rho_l * self.linear_residual(b)
        gb = dual[:, None] - dual[None, :]
        np.fill_diagonal(gb, 0.0)
        gv = self.s.T * (~np.eye(self.n, dtype=bool))
        return gb, gv

    def fd_gradient(self, b, v, mu_a, rho_a, step):
        """Central finite differences of the MVA-dependent merit terms."""
        n = self.n
        b = b.copy()
        v = v.copy()
        gb = np.zeros((n, n))
        gv = np.zeros((n, n))
        for mat, grad, cap in ((b, gb, self.cap), (v, gv, None)):
            for i in range(n):
                for j in range(n):
                    if i == j or (cap is not None and cap[i, j] <= 0):
                        continue
                    h = step * max(1.0, abs(mat[i, j]))
                    lo = max(mat[i, j] - h, 0.0)
                    hi = mat[i, j] + h
                    if cap is not None:
                        hi = min(hi, cap[i, j])
                    if hi - lo < 1e-15:
                        continue
                    orig = mat[i, j]
                    mat[i, j] = hi
                    f_hi, _ = self.nonlinear(b, v, mu_a, rho_a)
                    mat[i, j] = lo
                    f_lo, _ = self.nonlinear(b, v, mu_a, rho_a)
                    mat[i, j] = orig
                    if f_hi >= _PENALTY or f_lo >= _PENALTY:
                        continue
                    grad[i, j] = (f_hi - f_lo) / (hi - lo)
        return gb, gv


def merit_gradient(ev: _Evaluator, b, v, mu_l, rho_l, mu_a, rho_a, step):
    """Full gradient of the penalized objective at (b, v)."""
    gb_l, gv_l = ev.linear_gradient(b, mu_l, rho_l)
    gb_n, gv_n = ev.fd_gradient(b, v, mu_a, rho_a, step)
    return gb_l + gb_n, gv_l + gv_n


def _repair_balance(b, imb, cap):
    """Remove the balance residual exactly by the minimum-norm correction.

    The correction delta_ij = (r_i - r_j) / (2N) is the least-squares
    preimage of the residual under the divergence map; a couple of clipped
    passes suffice at the tiny residuals seen after an outer iteration.
    """
    n = b.shape[0]
    for _ in range(200):
        r = (b.sum(axis=1) - b.sum(axis=0)) - imb
        if np.abs(r).max() < 1e-13:
            break
        delta = (r[:, None] - r[None, :]) / (2.0 * n)
        np.fill_diagonal(delta, 0.0)
        b = np.clip(b - delta, 0.0, cap)
    return b


def _common_fraction_flows(s: Scenario, frac, cap, imb):
    """Delegated flows shipping the same fraction of every station's demand.

    Solved as a bipartite transportation problem: station i supplies
    frac * lam_i, station j absorbs frac * lam_j - imb_j, arcs bounded by the
    demand coupling caps and priced at travel time. Such flows satisfy the
    balance constraint by construction. Returns None when no such flow
    exists (the fraction is too small to carry the imbalance).
    """
    n = s.n
    supply = frac * s.lam
    demand = supply - imb
    if demand.min() < 0:
        return None
    div = np.concatenate([supply, -demand])
    arcs = tuple(
        (i, n + j, float(s.T[i, j]), float(cap[i, j]))
        for i in range(n) for j in range(n)
        if i != j and cap[i, j] > 0
    )
    try:
        res = solve_min_cost_flow(FlowProblem(2 * n, div, arcs))
    except Infeasible:
        return None
    b = np.zeros((n, n))
    for (i, j), f in res.flows.items():
        b[i, j - n] = f
    return np.minimum(b, cap)


def _feasible_starts(s: Scenario, ev: _Evaluator, alpha):
    """Exactly availability-balanced candidate starting points.

    Yields (b, v) pairs over a grid of common delegation fractions; each has
    constant passenger availability because both systems are balanced.
    """
    lo, hi = 0.0, 1.0
    if _common_fraction_flows(s, 1.0, ev.cap, ev.imb) is None:
        return
    for _ in range(20):  # largest infeasible fraction, to bracket the grid
        mid = 0.5 * (lo + hi)
        if _common_fraction_flows(s, mid, ev.cap, ev.imb) is None:
            lo = mid
        else:
            hi = mid
    for frac in np.linspace(hi, 1.0, 5):
        b = _common_fraction_flows(s, float(frac), ev.cap, ev.imb)
        if b is None:
            continue
        lam1 = s.lam - b.sum(axis=1)
        if lam1.min() < 1e-6:
            continue
        yield b, alpha.copy()


def _params_from_flows(b, v):
    n = b.shape[0]
    lam_del = b.sum(axis=1)
    psi = v.sum(axis=1)
    eta = uniform_offdiag(n)
    xi = uniform_offdiag(n)
    pos = lam_del > 0
    eta[pos] = b[pos] / lam_del[pos, None]
    pos = psi > 0
    xi[pos] = v[pos] / psi[pos, None]
    np.fill_diagonal(eta, 0.0)
    np.fill_diagonal(xi, 0.0)
    return RebalanceParams(lam_del, psi, eta, xi)


def verify_point(s: Scenario, fc: FleetConfig, rp: RebalanceParams):
    """Independent feasibility check through the scenario/analysis modules."""
    from .jackson import stationary_ss
    from .rebalance_lp import passenger_availability
    from .scenario import split_demand

    sp = split_demand(s, rp)
    pi1 = stationary_ss(sp.p1)
    g1 = pi1 / sp.lam1
    pm = passenger_availability(s, fc, rp)
    return {
        "gamma1_spread_rel": float((g1.max() - g1.min()) / g1.max()),
        "a_pass_spread": float(pm.A_pass.max() - pm.A_pass.min()),
        "coupling_violation": float(
            np.max(rp.lam_del[:, None] * rp.eta - s.lam[:, None] * s.p)
        ),
        "a_pass": pm.A_pass,
    }


def solve_mmrp(s: Scenario, cfg: MmrpConfig) -> MmrpResult:
    """Balance passenger availability exactly, trading rebalancing cost
    against taxi-system availability with weight c.

    Starts from the linear-program solution unless an initial point is given.
    Returns the best iterate whose equality residuals meet the tolerances;
    raises NoProgress (with the best iterate attached) if none does.
    """
    n = s.n
    ev = _Evaluator(s, cfg.m_v, cfg.m_d, cfg.c)
    if cfg.initial is None:
        mrp = solve_mrp(s)
        b = mrp.beta.copy()
        v = mrp.alpha.copy()
        # prefer an exactly availability-balanced start: it pins the search
        # to a basin where the equality constraint stays attainable
        best_start = None
        for b_c, v_c in _feasible_starts(s, ev, mrp.alpha):
            avail = ev.availability(b_c, v_c)
            if avail is None:
                continue
            score = float(np.sum(s.T * v_c)) - cfg.c * float(avail[1].sum())
            if best_start is None or score < best_start[0]:
                best_start = (score, b_c, v_c)
        if best_start is not None:
            b, v = best_start[1], best_start[2]
    else:
        rp0 = cfg.initial
        b = rp0.lam_del[:, None] * rp0.eta
        v = rp0.psi[:, None] * rp0.xi
        if np.any(b < -1e-9) or np.any(v < -1e-9) or np.any(b > ev.cap + 1e-9):
            raise InfeasibleStart("initial flows violate their bounds")
        b = np.clip(b, 0.0, ev.cap)
        v = np.clip(v, 0.0, None)

    shape = (n, n)
    size = n * n

    def pack(b, v):
        return np.concatenate([b.ravel(), v.ravel()])

    def unpack(x):
        return x[:size].reshape(shape).copy(), x[size:].reshape(shape).copy()

    bounds = [(0.0, ev.cap.flat[k]) for k in range(size)]
    bounds += [(0.0, None) if k // n != k % n else (0.0, 0.0) for k in range(size)]

    # Penalty continuation: the equality residuals are driven down a
    # geometric ladder of penalty weights, warm starting each rung from the
    # previous optimum. Multiplier estimates are kept at zero; the ladder
    # reaches weights where the residual bias is far below the tolerances.
    mu_l = np.zeros(n)
    mu_a = np.zeros(n - 1)
    best = None  # (score, b, v, a_pass)
    trace = []
    n_outer = 0
    a_pass = None
    rho = 100.0

    # a feasible starting point is already an acceptable answer; later
    # iterates must beat its score without giving up its balanced
    # availability level (for c > 0 the answer never trades A* away)
    start_a_star = -np.inf
    start_avail = ev.availability(b, v)
    if start_avail is not None:
        a0, _ = start_avail
        r_l0 = ev.linear_residual(b)
        if (np.abs(r_l0).max() <= cfg.eps_feas
                and np.ptp(a0) <= cfg.eps_A):
            score0 = (float(np.sum(s.T * v))
                      - cfg.c * float(start_avail[1].sum()))
            best = (score0, b.copy(), v.copy(), a0.copy())
            start_a_star = float(a0.mean())

    # The balance penalty stays moderate: balance is restored exactly by the
    # closed-form repair after each rung, and a large weight on it would make
    # coordinated (circulation-like) moves of the delegated flows needlessly
    # ill-conditioned.
    rho_l = 1000.0

    # continuation stall detection: when the availability residual stops
    # shrinking as rho climbs, further rungs cannot yield acceptable
    # (feasible) iterates, so with a feasible incumbent in hand we stop
    best_feas_a = np.inf
    stalled = 0

    for outer in range(cfg.max_outer):
        n_outer = outer + 1
        rho_a = rho

        def fun(x):
            bb, vv = unpack(x)
            f, _, _ = ev.merit(bb, vv, mu_l, rho_l, mu_a, rho_a)
            gb, gv = merit_gradient(ev, bb, vv, mu_l, rho_l, mu_a, rho_a,
                                    cfg.fd_step)
            np.fill_diagonal(gb, 0.0)
            np.fill_diagonal(gv, 0.0)
            return f, pack(gb, gv)

        res = minimize(fun, pack(b, v), jac=True, method="L-BFGS-B",
                       bounds=bounds,
                       options={"maxiter": cfg.max_inner, "maxcor": 30,
                                "ftol": 1e-12, "gtol": 1e-9})
        b, v = unpack(res.x)
        b = _repair_balance(b, ev.imb, ev.cap)

        _, r_l, a_pass = ev.merit(b, v, mu_l, rho_l, mu_a, rho_a)
        if a_pass is None:
            break
        r_a = a_pass[1:] - a_pass[0]
        feas_l = np.abs(r_l).max()
        feas_a = np.abs(r_a).max() if n > 1 else 0.0
        row = {"outer": outer, "rho": rho, "feas_lin": float(feas_l),
               "feas_A": float(feas_a), "inner_iters": res.nit,
               "score": None, "accepted": False}
        trace.append(row)
        if feas_l <= cfg.eps_feas and feas_a <= cfg.eps_A:
            cost = float(np.sum(s.T * v))
            avail = ev.availability(b, v)
            score = cost - cfg.c * float(avail[1].sum())
            row["score"] = score
            dominant = (cfg.c == 0
                        or a_pass.mean() >= start_a_star - cfg.eps_A)
            if best is None or (score < best[0] - 1e-12 and dominant):
                best = (score, b.copy(), v.copy(), a_pass.copy())
                row["accepted"] = True
            if feas_a <= 0.1 * cfg.eps_A:
                break
        if feas_a <= cfg.eps_A or feas_a < 0.9 * best_feas_a:
            stalled = 0
        else:
            stalled += 1
            if best is not None and stalled >= 2:
                break
        best_feas_a = min(best_feas_a, feas_a)
        if rho >= 1e9:
            break
        rho *= 10.0

    if best is None:
        rp = _params_from_flows(b, v)
        fallback = MmrpResult(
            params=rp,
            A_star=float(a_pass.mean()) if a_pass is not None else float("nan"),
            A_pass=a_pass if a_pass is not None else np.full(n, np.nan),
            objective=float("nan"),
            rebalancing_cost=float(np.sum(s.T * v)),
            residuals=verify_point(s, FleetConfig(cfg.m_v, cfg.m_d), rp),
            iterations=n_outer,
            converged=False,
            trace=trace,
        )
        raise NoProgress("no iterate met the equality tolerances", best=fallback)

    _, b, v, a_pass = best
    rp = _params_from_flows(b, v)
    residuals = verify_point(s, FleetConfig(cfg.m_v, cfg.m_d), rp)
    cost = float(np.sum(s.T * v))
    avail = ev.availability(b, v)
    return MmrpResult(
        params=rp,
        A_star=float(a_pass.mean()),
        A_pass=a_pass,
        objective=cost - cfg.c * float(avail[1].sum()),
        rebalancing_cost=cost,
        residuals=residuals,
        iterations=n_outer,
        converged=True,
        notes=(
            "taxi-system availability evaluated at the driver population m_d",
        ),
        trace=trace,
    )


def pareto_sweep(s: Scenario, m_v, m_d, c_list, warm_start=True):
    """Sweep the availability weight; returns one summary dict per c.

    With warm_start each solve starts from the previous optimum, which keeps
    the balanced availability nondecreasing along an ascending sweep.
    """
    out = []
    prev = None
    for c in c_list:
        cfg = MmrpConfig(c=c, m_v=m_v, m_d=m_d,
                         initial=prev if warm_start else None)
        t0 = time.perf_counter()
        try:
            res = solve_mmrp(s, cfg)
        except NoProgress as e:
            res = e.best
        else:
            if warm_start:
                prev = res.params
        out.append({"c": c, "rebalancing_cost": res.rebalancing_cost,
                    "A_star": res.A_star, "iterations": res.iterations,
                    "converged": res.converged,
                    "seconds": time.perf_counter() - t0,
                    "params": res.params})
    return out
