"""Time-stepped simulation of the two-system fleet.

Loss mode mirrors the analytic model: Poisson customer arrivals, Bernoulli
delegation to the taxi system, Poisson virtual customers, exponential travel
times with mean T_ij, and customers lost immediately when no vehicle is
parked at their station. Its empirical availabilities are comparable to the
closed-network predictions.

Queueing mode runs the closed-loop policy: nobody is lost, customers wait in
per-OD queues, an integer program assigns excess vehicles and taxis whenever
any station has an empty departure queue and unassigned customers, and a
min-cost-flow dispatch rebalances idle driver-vehicle pairs every
rebalance_period steps.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .assignment import StationState, build_problem, solve_assignment
from .minflow import FlowProblem, solve_min_cost_flow
from .scenario import FleetConfig, RebalanceParams, Scenario


@dataclass(frozen=True)
class SimConfig:
    scenario: Scenario
    fleet: FleetConfig
    mode: str = "loss"
    rebalance: RebalanceParams | None = None   # loss-mode open-loop control
    w: float = 1.0                             # queueing-mode IP weight
    rebalance_period: int = 60
    dt: float = 1.0
    horizon: int = 30_000
    warmup: int | None = None                  # defaults to horizon // 3
    replicas: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("loss", "queueing"):
            raise ValueError("mode must be 'loss' or 'queueing'")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.warmup is None:
            object.__setattr__(self, "warmup", self.horizon // 3)
        if not 0 <= self.warmup < self.horizon:
            raise ValueError("warmup must lie in [0, horizon)")
        if self.mode == "loss" and self.rebalance is None:
            raise ValueError("loss mode needs rebalancing parameters")
        if self.replicas < 1:
            raise ValueError("need at least one replica")


@dataclass
class SimMetrics:
    """Aggregated post-warmup statistics across replicas."""

    availability: np.ndarray | None = None        # per station, combined
    availability_std: np.ndarray | None = None
    availability_sys1: np.ndarray | None = None
    availability_sys2: np.ndarray | None = None
    arrivals: float = 0.0
    served: float = 0.0
    lost: float = 0.0
    wait_series: np.ndarray | None = None         # (replicas, steps, n)
    wait_slopes: np.ndarray | None = None         # worst station, per replica
    rebalance_trips: float = 0.0
    conservation_ok: bool = True
    per_replica: list = field(default_factory=list)


def proportional_placement(weights, total):
    """Integer split of `total` proportional to weights (largest remainder)."""
    weights = np.asarray(weights, dtype=float)
    raw = total * weights / weights.sum()
    base = np.floor(raw).astype(int)
    short = total - base.sum()
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:short]] += 1
    return base


def _delegation_probability(s: Scenario, rp: RebalanceParams):
    """P(customer i->j is delegated to the taxi system)."""
    flow = s.lam[:, None] * s.p
    deleg = rp.lam_del[:, None] * rp.eta
    q = np.zeros_like(flow)
    np.divide(deleg, flow, out=q, where=flow > 0)
    return np.clip(q, 0.0, 1.0)


def _schedule(ring, slot, counts, mean_steps, rng):
    """Drop served trips into the arrival ring buffer.

    counts: per-destination trip counts from one station; travel times are
    exponential with the given per-destination means (in steps).
    """
    size = ring.shape[0]
    dests = np.repeat(np.arange(len(counts)), counts)
    if dests.size == 0:
        return
    tau = rng.exponential(mean_steps[dests])
    ahead = np.clip(np.ceil(tau).astype(int), 1, size - 1)
    np.add.at(ring, ((slot + ahead) % size, dests), 1)


def _run_loss_replica(cfg: SimConfig, seed):
    s = cfg.scenario
    n = s.n
    rng = np.random.default_rng(seed)
    rp = cfg.rebalance
    m1 = cfg.fleet.m_v - cfg.fleet.m_d
    m2 = cfg.fleet.m_d

    q = _delegation_probability(s, rp)
    mean_steps = s.T / cfg.dt
    ring_size = int(np.ceil(mean_steps.max())) * 16 + 2
    mean_flat = mean_steps.ravel()
    flat_idx = np.arange(n * n)

    n1 = proportional_placement(s.lam, m1)
    n2 = proportional_placement(np.maximum(rp.lam_del + rp.psi, 1e-9), m2)
    ring1 = np.zeros((ring_size, n), dtype=int)
    ring2 = np.zeros((ring_size, n), dtype=int)

    # pregenerated demand: real OD counts, their delegated split, virtual
    real = np.empty((cfg.horizon, n, n), dtype=np.int64)
    for i in range(n):
        counts = rng.poisson(s.lam[i] * cfg.dt, cfg.horizon)
        real[:, i, :] = rng.multinomial(counts, s.p[i])
    deleg = rng.binomial(real, q[None, :, :])
    virt = np.empty((cfg.horizon, n, n), dtype=np.int64)
    for i in range(n):
        vc = rng.poisson(rp.psi[i] * cfg.dt, cfg.horizon)
        virt[:, i, :] = rng.multinomial(vc, rp.xi[i]) if rp.psi[i] > 0 else 0

    arr1 = np.zeros(n)
    srv1 = np.zeros(n)
    arr2 = np.zeros(n)
    srv2 = np.zeros(n)

    for t in range(cfg.horizon):
        slot = t % ring_size
        n1 += ring1[slot]
        ring1[slot] = 0
        n2 += ring2[slot]
        ring2[slot] = 0

        d1 = real[t] - deleg[t]
        d2 = deleg[t] + virt[t]
        collect = t >= cfg.warmup
        for demand, parked, ring, arr, srv in (
            (d1, n1, ring1, arr1, srv1),
            (d2, n2, ring2, arr2, srv2),
        ):
            row_tot = demand.sum(axis=1)
            served = demand
            if (row_tot > parked).any():
                served = demand.copy()
                for i in np.nonzero(row_tot > parked)[0]:
                    k = int(parked[i])
                    served[i] = (rng.multivariate_hypergeometric(demand[i], k)
                                 if k else 0)
            n_served = served.sum(axis=1)
            parked -= n_served
            if collect:
                arr += row_tot
                srv += n_served
            trips = np.repeat(flat_idx, served.ravel())
            if trips.size:
                tau = rng.exponential(mean_flat[trips])
                ahead = np.minimum(np.maximum(
                    np.ceil(tau).astype(int), 1), ring_size - 1)
                np.add.at(ring, ((slot + ahead) % ring_size, trips % n), 1)

        if t % 1000 == 0 or t == cfg.horizon - 1:
            if n1.sum() + ring1.sum() != m1 or n2.sum() + ring2.sum() != m2:
                raise AssertionError("vehicle conservation violated")

    # delegated customers count toward their origin's taxi-system tally;
    # virtual customers are control traffic, not passengers, but in loss
    # mode the taxi system serves them identically so the split-weighted
    # combination below matches the passenger-availability identity
    real_tot = real[cfg.warmup:].sum(axis=(0, 2)).astype(float)
    deleg_tot = deleg[cfg.warmup:].sum(axis=(0, 2)).astype(float)
    a1 = np.divide(srv1, arr1, out=np.ones(n), where=arr1 > 0)
    a2 = np.divide(srv2, arr2, out=np.ones(n), where=arr2 > 0)
    frac1 = np.divide(real_tot - deleg_tot, real_tot,
                      out=np.ones(n), where=real_tot > 0)
    a_pass = a1 * frac1 + a2 * (1.0 - frac1)
    return {
        "A_pass": a_pass, "A1": a1, "A2": a2,
        "arrivals": float(real_tot.sum()),
        "served": float((srv1 + srv2).sum()),
        "lost": float((arr1 - srv1 + arr2 - srv2).sum()),
    }


def _replica_map(fn, cfg, jobs):
    """Run replicas with seed + index, optionally across processes.

    Results are ordered by replica index either way, so the aggregate
    metrics do not depend on the worker count.
    """
    seeds = [cfg.seed + r for r in range(cfg.replicas)]
    if jobs <= 1 or cfg.replicas == 1:
        return [fn(cfg, s) for s in seeds]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=min(jobs, cfg.replicas)) as pool:
        return list(pool.map(fn, [cfg] * cfg.replicas, seeds))


def run_loss_sim(cfg: SimConfig, jobs=1) -> SimMetrics:
    """Open-loop passenger-loss simulation; availabilities per station."""
    if cfg.mode != "loss":
        raise ValueError("config is not in loss mode")
    reps = _replica_map(_run_loss_replica, cfg, jobs)
    stack = np.stack([r["A_pass"] for r in reps])
    return SimMetrics(
        availability=stack.mean(axis=0),
        availability_std=stack.std(axis=0, ddof=1) if len(reps) > 1
        else np.zeros(stack.shape[1]),
        availability_sys1=np.mean([r["A1"] for r in reps], axis=0),
        availability_sys2=np.mean([r["A2"] for r in reps], axis=0),
        arrivals=float(np.mean([r["arrivals"] for r in reps])),
        served=float(np.mean([r["served"] for r in reps])),
        lost=float(np.mean([r["lost"] for r in reps])),
        per_replica=reps,
    )


def rebalance_drivers_step(v, d, v_des, T):
    """Integral dispatch of idle driver-vehicle pairs toward the desired
    vehicle distribution, as a min-cost flow with travel-time costs.

    Returns an integer matrix of orders (origin x destination). Movable
    surplus at a station is limited by its idle drivers; shortfalls elsewhere
    absorb them. Empty when already balanced.
    """
    n = len(v)
    surplus = np.minimum(np.maximum(v - np.ceil(v_des), 0), d).astype(int)
    deficit = np.maximum(np.floor(v_des) - v, 0).astype(int)
    move = int(min(surplus.sum(), deficit.sum()))
    if move == 0:
        return np.zeros((n, n), dtype=int)
    # scale the larger side down to match, largest holdings first
    if surplus.sum() > move:
        keep = proportional_placement(np.maximum(surplus, 1e-9), move)
        surplus = np.minimum(surplus, keep)
        while surplus.sum() > move:   # rounding guard
            i = int(np.argmax(surplus))
            surplus[i] -= 1
    if deficit.sum() > move:
        keep = proportional_placement(np.maximum(deficit, 1e-9), move)
        deficit = np.minimum(deficit, keep)
        while deficit.sum() > move:
            i = int(np.argmax(deficit))
            deficit[i] -= 1
    # bipartite supply/demand nodes: direct trips only, so every order
    # originates at a station that actually holds the dispatched drivers
    div = np.concatenate([surplus, -deficit]).astype(float)
    arcs = tuple((i, n + j, float(max(T[i, j], 1e-9)), None)
                 for i in range(n) for j in range(n)
                 if i != j and surplus[i] > 0 and deficit[j] > 0)
    res = solve_min_cost_flow(FlowProblem(2 * n, div, arcs))
    orders = np.zeros((n, n), dtype=int)
    for (i, j), f in res.flows.items():
        orders[i, j - n] = int(round(f))
    return orders


def _trend_slope(series):
    """Least-squares slope of a 1-D series."""
    t = np.arange(len(series), dtype=float)
    t -= t.mean()
    denom = float(t @ t)
    if denom == 0:
        return 0.0
    return float(t @ (series - series.mean()) / denom)


def _run_queueing_replica(cfg: SimConfig, seed):
    s = cfg.scenario
    n = s.n
    rng = np.random.default_rng(seed)
    m_v, m_d = cfg.fleet.m_v, cfg.fleet.m_d

    v = proportional_placement(s.lam, m_v)    # parked vehicles
    d = proportional_placement(s.lam, m_d)    # parked drivers
    d = np.minimum(d, v)
    spare = m_d - d.sum()
    while spare > 0:   # keep every driver seated where a vehicle exists
        i = int(np.argmax(v - d))
        d[i] += 1
        spare -= 1

    mean_steps = s.T / cfg.dt
    ring_size = int(np.ceil(mean_steps.max())) * 16 + 2
    ring_v = np.zeros((ring_size, n), dtype=int)     # vehicle only
    ring_vd = np.zeros((ring_size, n), dtype=int)    # vehicle + driver

    v_des = (m_v - m_d) * s.lam / s.lam.sum()
    queues = [[deque() for _ in range(n)] for _ in range(n)]  # arrival steps
    q_count = np.zeros((n, n), dtype=int)
    q_agesum = np.zeros(n)   # sum of arrival steps of queued customers
    wait_series = np.zeros((cfg.horizon, n))
    served = 0
    arrived = 0
    reb_trips = 0
    zero_mat = np.zeros((n, n), dtype=int)

    for t in range(cfg.horizon):
        slot = t % ring_size
        v += ring_v[slot]
        ring_v[slot] = 0
        v += ring_vd[slot]
        d += ring_vd[slot]
        ring_vd[slot] = 0

        counts = rng.poisson(s.lam * cfg.dt)
        for i in np.nonzero(counts)[0]:
            dests = rng.multinomial(counts[i], s.p[i])
            for j in np.nonzero(dests)[0]:
                queues[i][j].extend([t] * dests[j])
                q_count[i, j] += dests[j]
            q_agesum[i] += t * counts[i]
            arrived += counts[i]

        # departure queues drain instantly, so any waiting customer means
        # some station has an empty departure queue with unassigned demand
        if q_count.any() and (np.maximum(v - d, 0).any() or d.any()):
            state = StationState(np.maximum(v - d, 0), d.copy(),
                                 q_count.copy(), zero_mat, zero_mat)
            ap = build_problem(state, m_v, m_d, s.lam, cfg.w)
            sol = solve_assignment(ap)
            for i, j in zip(*np.nonzero(sol.n_v + sol.n_d)):
                k = int(sol.n_v[i, j] + sol.n_d[i, j])
                for _ in range(k):
                    q_agesum[i] -= queues[i][j].popleft()
                q_count[i, j] -= k
                served += k
            for i in range(n):
                kv = int(sol.n_v[i].sum())
                kd = int(sol.n_d[i].sum())
                v[i] -= kv + kd
                d[i] -= kd
                if kv:
                    _schedule(ring_v, slot, sol.n_v[i], mean_steps[i], rng)
                if kd:
                    _schedule(ring_vd, slot, sol.n_d[i], mean_steps[i], rng)

        if cfg.rebalance_period and t % cfg.rebalance_period == 0 and t > 0:
            orders = rebalance_drivers_step(v, d, v_des, s.T)
            for i, j in zip(*np.nonzero(orders)):
                k = int(orders[i, j])
                v[i] -= k
                d[i] -= k
                reb_trips += k
                _schedule(ring_vd, slot, k * (np.arange(n) == j),
                          mean_steps[i], rng)

        if (v < 0).any() or (d < 0).any() or (v < d).any():
            raise AssertionError("fleet invariant violated by dispatch")
        if t % 500 == 0 or t == cfg.horizon - 1:
            if v.sum() + ring_v.sum() + ring_vd.sum() != m_v:
                raise AssertionError("vehicle conservation violated")
            if d.sum() + ring_vd.sum() != m_d:
                raise AssertionError("driver conservation violated")

        cnt = q_count.sum(axis=1)
        wait_series[t] = np.divide(t * cnt - q_agesum, cnt,
                                   out=np.zeros(n), where=cnt > 0) * cfg.dt

    waiting = int(q_count.sum())
    if served + waiting != arrived:
        raise AssertionError("customer conservation violated")
    return {"wait_series": wait_series, "served": served,
            "arrived": arrived, "rebalance_trips": reb_trips}


def run_queueing_sim(cfg: SimConfig, jobs=1) -> SimMetrics:
    """Closed-loop simulation; per-station wait series and stability stats."""
    if cfg.mode != "queueing":
        raise ValueError("config is not in queueing mode")
    reps = _replica_map(_run_queueing_replica, cfg, jobs)
    series = np.stack([r["wait_series"] for r in reps])
    post = series[:, cfg.warmup:, :]
    worst = int(np.argmax(post.mean(axis=(0, 1))))
    final_third = post[:, -post.shape[1] // 3:, worst]
    slopes = np.array([_trend_slope(final_third[r])
                       for r in range(len(reps))])
    return SimMetrics(
        wait_series=series,
        wait_slopes=slopes,
        arrivals=float(np.mean([r["arrived"] for r in reps])),
        served=float(np.mean([r["served"] for r in reps])),
        rebalance_trips=float(np.mean([r["rebalance_trips"] for r in reps])),
        per_replica=reps,
    )
