"""Minimum-cost flow by successive shortest augmenting paths with node potentials.

Handles real-valued supplies and capacities. Networks here are small and
dense (stations of one city), so a simple Dijkstra-based implementation with
a returned optimality certificate is the right tool.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import Infeasible

EPS = 1e-12


@dataclass(frozen=True)
class FlowProblem:
    """Balanced transshipment problem on station nodes.

    arcs: (i, j, cost, cap) tuples; cap None means uncapacitated.
    """

    n: int
    divergence: np.ndarray   # supply (+) / demand (-) per node, sums to zero
    arcs: tuple

    def __post_init__(self):
        div = np.asarray(self.divergence, dtype=float)
        if abs(div.sum()) > 1e-9:
            raise ValueError(f"divergences sum to {div.sum():.3g}, not zero")
        for i, j, cost, cap in self.arcs:
            if cost <= 0:
                raise ValueError(f"arc {i}->{j} has non-positive cost {cost}")
            if cap is not None and cap < 0:
                raise ValueError(f"arc {i}->{j} has negative capacity {cap}")
        object.__setattr__(self, "divergence", div)


@dataclass
class FlowResult:
    flows: dict              # (i, j) -> flow on that arc
    cost: float
    potentials: np.ndarray   # dual certificate over the problem's nodes

    def flow_matrix(self, n):
        out = np.zeros((n, n))
        for (i, j), f in self.flows.items():
            out[i, j] = f
        return out


class _Edge:
    __slots__ = ("to", "cap", "cost", "flow", "rev", "key")

    def __init__(self, to, cap, cost, rev, key):
        self.to = to
        self.cap = cap
        self.cost = cost
        self.flow = 0.0
        self.rev = rev
        self.key = key   # original (i, j) for forward arcs, None for residuals

    @property
    def residual(self):
        return self.cap - self.flow


def _add_edge(adj, u, v, cap, cost, key):
    adj[u].append(_Edge(v, cap, cost, len(adj[v]), key))
    adj[v].append(_Edge(u, 0.0, -cost, len(adj[u]) - 1, None))


def solve_min_cost_flow(fp: FlowProblem) -> FlowResult:
    """Optimal flow for a balanced min-cost flow problem.

    Raises Infeasible (with the violated cut as certificate) when the
    capacities cannot carry the required divergence. The returned potentials
    satisfy complementary slackness on every residual arc.
    """
    n = fp.n
    src, dst = n, n + 1
    adj = [[] for _ in range(n + 2)]
    inf_cap = float(np.abs(fp.divergence).sum()) + 1.0
    for i, j, cost, cap in sorted(fp.arcs, key=lambda a: (a[0], a[1])):
        _add_edge(adj, i, j, inf_cap if cap is None else float(cap), float(cost), (i, j))
    total = 0.0
    for i, b in enumerate(fp.divergence):
        if b > EPS:
            _add_edge(adj, src, i, float(b), 0.0, None)
            total += b
        elif b < -EPS:
            _add_edge(adj, i, dst, float(-b), 0.0, None)

    h = np.zeros(n + 2)
    pushed = 0.0
    while pushed < total - 1e-12:
        dist, prev = _dijkstra(adj, src, h)
        if not np.isfinite(dist[dst]):
            cut = [v for v in range(n) if np.isfinite(dist[v])]
            raise Infeasible(
                f"only {pushed:.6g} of {total:.6g} supply can be routed", cut=cut
            )
        finite = np.isfinite(dist)
        h[finite] += dist[finite]
        # bottleneck along the shortest path
        push = total - pushed
        v = dst
        while v != src:
            u, e = prev[v]
            push = min(push, e.residual)
            v = u
        v = dst
        while v != src:
            u, e = prev[v]
            e.flow += push
            adj[v][e.rev].flow -= push
            v = u
        pushed += push

    flows = {}
    cost = 0.0
    for u in range(n):
        for e in adj[u]:
            if e.key is not None and e.flow > EPS:
                flows[e.key] = flows.get(e.key, 0.0) + e.flow
                cost += e.flow * e.cost
    result = FlowResult(flows, cost, h[:n].copy())
    _check_certificate(adj, h, n)
    return result


def _dijkstra(adj, src, h):
    n = len(adj)
    dist = np.full(n, np.inf)
    dist[src] = 0.0
    prev = [None] * n
    heap = [(0.0, src)]
    done = [False] * n
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for e in adj[u]:
            if e.residual <= EPS:
                continue
            nd = d + e.cost + h[u] - h[e.to]
            if nd < dist[e.to] - 1e-15:
                dist[e.to] = nd
                prev[e.to] = (u, e)
                heapq.heappush(heap, (nd, e.to))
    return dist, prev


def _check_certificate(adj, h, n):
    """Complementary slackness: no residual arc with negative reduced cost."""
    for u in range(len(adj)):
        for e in adj[u]:
            if e.residual > 1e-9 and e.cost + h[u] - h[e.to] < -1e-7:
                raise AssertionError(
                    f"optimality certificate violated on arc {u}->{e.to}"
                )
