"""Demand scenarios, fleet configuration, demand splitting, and network construction.

A scenario describes customer demand over N stations. The fleet is split into
a customer-driven system (System 1) and a taxi system (System 2); demand is
split accordingly and each system is modeled as a closed Jackson network of
single-server station nodes and infinite-server road nodes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import BadTopology, DegenerateStation, InfeasibleSplit, IoError

ROW_SUM_TOL = 1e-9
COUPLING_TOL = 1e-9


def _readonly(a, dtype=float):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Scenario:
    """Customer demand model: arrival rates, routing, and mean travel times."""

    lam: np.ndarray      # per-station arrival rate, length N
    p: np.ndarray        # N x N routing probabilities, p[i][i] == 0
    T: np.ndarray        # N x N mean travel times
    coords: np.ndarray | None = None   # optional per-station (x, y)
    time_unit: str = "unit"

    def __post_init__(self):
        object.__setattr__(self, "lam", _readonly(self.lam))
        object.__setattr__(self, "p", _readonly(self.p))
        object.__setattr__(self, "T", _readonly(self.T))
        if self.coords is not None:
            object.__setattr__(self, "coords", _readonly(self.coords))

    @property
    def n(self):
        return len(self.lam)


@dataclass(frozen=True)
class FleetConfig:
    """Fleet composition: m_v vehicles total, m_d of them paired with drivers."""

    m_v: int
    m_d: int

    def __post_init__(self):
        if not (self.m_v > self.m_d >= 0):
            raise ValueError(f"need m_v > m_d >= 0, got m_v={self.m_v}, m_d={self.m_d}")


@dataclass(frozen=True)
class RebalanceParams:
    """Open-loop controls: delegation rates/routing and virtual-customer rates/routing."""

    lam_del: np.ndarray  # per-station delegated rate, length N
    psi: np.ndarray      # per-station virtual-customer rate, length N
    eta: np.ndarray      # N x N taxi routing for delegated customers
    xi: np.ndarray       # N x N routing for virtual customers

    def __post_init__(self):
        object.__setattr__(self, "lam_del", _readonly(self.lam_del))
        object.__setattr__(self, "psi", _readonly(self.psi))
        object.__setattr__(self, "eta", _readonly(self.eta))
        object.__setattr__(self, "xi", _readonly(self.xi))

    @classmethod
    def zero(cls, n):
        """No delegation, no virtual customers; routing rows uniform off-diagonal."""
        u = uniform_offdiag(n)
        return cls(np.zeros(n), np.zeros(n), u, u)

    def violations(self, scenario=None):
        """Invariant check; returns a list of human-readable violations."""
        out = []
        n = len(self.lam_del)
        for name, mat in (("eta", self.eta), ("xi", self.xi)):
            if np.any(np.diag(mat) != 0):
                out.append(f"{name} has nonzero diagonal")
            if np.any(mat < 0):
                out.append(f"{name} has negative entries")
            bad = np.where(np.abs(mat.sum(axis=1) - 1.0) > 1e-12)[0]
            for i in bad:
                out.append(f"{name} row {i} sums to {mat[i].sum():.15g}")
        if np.any(self.lam_del < 0):
            out.append("lam_del has negative entries")
        if np.any(self.psi < 0):
            out.append("psi has negative entries")
        if scenario is not None:
            coupling = self.lam_del[:, None] * self.eta
            demand = scenario.lam[:, None] * scenario.p
            bad = np.argwhere(coupling > demand + COUPLING_TOL)
            for i, j in bad:
                out.append(
                    f"delegated flow {i}->{j} ({coupling[i, j]:.6g}) exceeds demand "
                    f"({demand[i, j]:.6g})"
                )
        return out


def uniform_offdiag(n):
    """Row-stochastic matrix, uniform over the other stations, zero diagonal."""
    if n < 2:
        raise ValueError("need at least 2 stations")
    u = np.full((n, n), 1.0 / (n - 1))
    np.fill_diagonal(u, 0.0)
    return u


@dataclass(frozen=True)
class SplitParams:
    """Derived per-system demand after delegating customers between the systems."""

    q: np.ndarray        # fraction of demand kept in System 1
    p1: np.ndarray       # System 1 routing
    lam1: np.ndarray     # System 1 arrival rates
    lam2: np.ndarray     # System 2 arrival rates (delegated + virtual)
    p_frac: np.ndarray   # virtual fraction of System 2 arrivals
    p2: np.ndarray       # System 2 routing
    degenerate_system1: tuple = ()   # stations with all demand delegated
    degenerate_system2: tuple = ()   # stations with no System 2 demand

    def __post_init__(self):
        for name in ("q", "p1", "lam1", "lam2", "p_frac", "p2"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))


def validate_scenario(s: Scenario):
    """Check all scenario invariants; returns a list of violations (empty if valid)."""
    out = []
    n = s.n
    if s.p.shape != (n, n):
        return [f"p has shape {s.p.shape}, expected {(n, n)}"]
    if s.T.shape != (n, n):
        return [f"T has shape {s.T.shape}, expected {(n, n)}"]
    for i in np.where(~(s.lam > 0))[0]:
        out.append(f"lambda[{i}] = {s.lam[i]:.6g} is not positive")
    for i, j in np.argwhere(s.p < 0):
        out.append(f"p[{i}][{j}] = {s.p[i, j]:.6g} is negative")
    for i in np.where(np.diag(s.p) != 0)[0]:
        out.append(f"p[{i}][{i}] = {s.p[i, i]:.6g} must be zero")
    for i in np.where(np.abs(s.p.sum(axis=1) - 1.0) > 1e-12)[0]:
        out.append(f"p row {i} sums to {s.p[i].sum():.15g} (row-sum violation)")
    offdiag = ~np.eye(n, dtype=bool)
    for i, j in np.argwhere((s.T <= 0) & offdiag):
        out.append(f"T[{i}][{j}] = {s.T[i, j]:.6g} is not positive")
    if not _irreducible(s.p):
        out.append("routing chain p is not irreducible")
    return out


def _irreducible(p):
    n = p.shape[0]
    if n == 1:
        return True
    graph = csr_matrix((p > 0).astype(int))
    n_comp, _ = connected_components(graph, directed=True, connection="strong")
    return n_comp == 1


def split_demand(s: Scenario, rp: RebalanceParams) -> SplitParams:
    """Split demand between the two systems following the delegation law.

    System 1 keeps rate lam - lam_del with routing solved from the
    reconstruction identity p = q * p1 + (1 - q) * eta; System 2 serves the
    delegated customers plus virtual customers. Stations whose demand is fully
    delegated (or that see no System 2 demand) are flagged, not rejected.
    """
    n = s.n
    lam_del, psi = rp.lam_del, rp.psi
    if np.any(lam_del > s.lam + COUPLING_TOL):
        raise InfeasibleSplit("lam_del exceeds lam at some station")

    coupling = lam_del[:, None] * rp.eta - s.lam[:, None] * s.p
    if np.any(coupling > COUPLING_TOL):
        i, j = np.argwhere(coupling > COUPLING_TOL)[0]
        raise InfeasibleSplit(
            f"delegated flow {i}->{j} exceeds customer demand; p1 would be negative"
        )

    lam1 = np.maximum(s.lam - lam_del, 0.0)
    q = lam1 / s.lam
    deg1 = tuple(int(i) for i in np.where(q <= 0)[0])

    p1 = np.empty((n, n))
    for i in range(n):
        if q[i] > 0:
            row = (s.lam[i] * s.p[i] - lam_del[i] * rp.eta[i]) / lam1[i]
            if np.any(row < -COUPLING_TOL / max(lam1[i], 1e-300)):
                raise InfeasibleSplit(f"p1 row {i} has negative entries")
            row = np.clip(row, 0.0, None)
            row[i] = 0.0
            p1[i] = row / row.sum()
        else:
            p1[i] = uniform_offdiag(n)[i]

    lam2 = lam_del + psi
    deg2 = tuple(int(i) for i in np.where(lam2 <= 0)[0])
    p_frac = np.divide(psi, lam2, out=np.zeros(n), where=lam2 > 0)
    p2 = p_frac[:, None] * rp.xi + (1.0 - p_frac)[:, None] * rp.eta
    for i in deg2:
        p2[i] = uniform_offdiag(n)[i]

    return SplitParams(q, p1, lam1, lam2, p_frac, p2,
                       degenerate_system1=deg1, degenerate_system2=deg2)


SS = "SS"
IS = "IS"


@dataclass(frozen=True)
class JacksonNetwork:
    """Closed Jackson network: N station (single-server) nodes plus one
    infinite-server node per road segment with positive routing probability.

    Node order is stations by id, then road nodes lexicographic by
    (parent, child). Service rates: constant ``ss_rates[i]`` at station nodes,
    ``n / T[parent][child]`` at road nodes holding n vehicles.
    """

    n_stations: int
    nodes: tuple             # (SS, i) or (IS, parent, child)
    r: np.ndarray            # routing matrix over nodes
    ss_rates: np.ndarray     # station service rates (arrival rates seen by vehicles)
    routing: np.ndarray      # station-level routing matrix
    T: np.ndarray            # station-level mean travel times
    m: int                   # population (vehicles circulating)

    def __post_init__(self):
        object.__setattr__(self, "r", _readonly(self.r))
        object.__setattr__(self, "ss_rates", _readonly(self.ss_rates))
        object.__setattr__(self, "routing", _readonly(self.routing))
        object.__setattr__(self, "T", _readonly(self.T))

    @property
    def n_nodes(self):
        return len(self.nodes)

    def mu1(self):
        """Service rate of each node at occupancy 1."""
        out = np.empty(self.n_nodes)
        out[:self.n_stations] = self.ss_rates
        for k, node in enumerate(self.nodes[self.n_stations:], start=self.n_stations):
            _, i, j = node
            out[k] = 1.0 / self.T[i, j]
        return out

    def is_arcs(self):
        """(parent, child) pairs of the road nodes, in node order."""
        return [(i, j) for kind, i, j in self.nodes[self.n_stations:]]


def build_network(rates, routing, T, m) -> JacksonNetwork:
    """Assemble the closed Jackson network for one system.

    Road nodes with zero routing inflow are pruned; metrics on the remaining
    nodes are unchanged. Output is deterministic in its node ordering.
    """
    rates = np.asarray(rates, dtype=float)
    routing = np.asarray(routing, dtype=float)
    T = np.asarray(T, dtype=float)
    n = len(rates)
    if routing.shape != (n, n) or T.shape != (n, n):
        raise ValueError("routing and T must be N x N")
    used = np.argwhere(routing > 0)
    for i, j in used:
        if T[i, j] <= 0:
            raise BadTopology(f"arc {i}->{j} used with T={T[i, j]:.6g}")

    nodes = [(SS, int(i)) for i in range(n)]
    nodes += [(IS, int(i), int(j)) for i, j in sorted(map(tuple, used))]
    k = len(nodes)
    r = np.zeros((k, k))
    for idx, (_, i, j) in enumerate(nodes[n:], start=n):
        r[i, idx] = routing[i, j]
        r[idx, j] = 1.0
    return JacksonNetwork(n, tuple(nodes), r, rates, routing, T, int(m))


def build_system_networks(s: Scenario, fc: FleetConfig, sp: SplitParams):
    """Networks for System 1 (population m_v - m_d) and System 2 (population m_d).

    Raises DegenerateStation if a system has zero demand at some but not all
    stations (its relative utilization there would be unbounded).
    """
    if sp.degenerate_system1 and len(sp.degenerate_system1) < s.n:
        raise DegenerateStation(1, sp.degenerate_system1)
    if sp.degenerate_system2 and len(sp.degenerate_system2) < s.n:
        raise DegenerateStation(2, sp.degenerate_system2)
    net1 = None
    net2 = None
    if not sp.degenerate_system1:
        net1 = build_network(sp.lam1, sp.p1, s.T, fc.m_v - fc.m_d)
    if not sp.degenerate_system2:
        net2 = build_network(sp.lam2, sp.p2, s.T, fc.m_d)
    return net1, net2


# ---------------------------------------------------------------------------
# Scenario file format (JSON)
# ---------------------------------------------------------------------------

def scenario_to_dict(s: Scenario):
    doc = {
        "n": s.n,
        "lambda": s.lam.tolist(),
        "p": s.p.tolist(),
        "t": s.T.tolist(),
        "units": {"time": s.time_unit, "rate": f"1/{s.time_unit}"},
    }
    if s.coords is not None:
        doc["coords"] = s.coords.tolist()
    return doc


def scenario_from_dict(doc) -> Scenario:
    n = int(doc["n"])
    lam = np.asarray(doc["lambda"], dtype=float)
    p = np.asarray(doc["p"], dtype=float)
    T = np.asarray(doc["t"], dtype=float)
    if len(lam) != n:
        raise ValueError(f"lambda has length {len(lam)}, expected n={n}")
    coords = None
    if doc.get("coords") is not None:
        coords = np.asarray(doc["coords"], dtype=float)
    time_unit = doc.get("units", {}).get("time", "unit")
    return Scenario(lam, p, T, coords=coords, time_unit=time_unit)


def load_scenario(path) -> Scenario:
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as e:
        raise IoError(str(e)) from e
    return scenario_from_dict(doc)


def save_scenario(s: Scenario, path):
    with open(path, "w") as f:
        json.dump(scenario_to_dict(s), f, indent=2)
        f.write("\n")


def generate_scenario(n, seed=0, style="default", speed=0.2) -> Scenario:
    """Seeded synthetic scenario: stations uniform in the unit square,
    rates uniform in [0.5, 2], routing from a softmax of negative distances
    with a random per-destination skew, travel times distance/speed.

    style="grid" places the stations on a 5x5 grid instead (row-major from
    the origin, spacing 1), for the classic small benchmark layout.
    """
    if n < 2:
        raise ValueError("need at least 2 stations")
    rng = np.random.default_rng(seed)
    if style == "grid":
        if n > 25:
            raise ValueError("grid style supports at most 25 stations")
        cells = rng.choice(25, size=n, replace=False)
        coords = np.column_stack([cells % 5, cells // 5]).astype(float)
    else:
        coords = rng.uniform(0.0, 1.0, size=(n, 2))
    lam = rng.uniform(0.5, 2.0, size=n)
    dist = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=2)
    skew = rng.normal(0.0, 1.0, size=n)
    reach = 0.3 if style != "grid" else 1.5  # softmax distance scale
    logits = -dist / reach + skew[None, :]
    np.fill_diagonal(logits, -np.inf)
    w = np.exp(logits - logits.max(axis=1, keepdims=True))
    p = w / w.sum(axis=1, keepdims=True)
    T = dist / speed
    np.fill_diagonal(T, 1.0)  # unused; keeps the matrix strictly positive
    return Scenario(lam, p, T, coords=coords)
