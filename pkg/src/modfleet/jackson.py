"""Exact analysis of closed Jackson networks.

Provides relative throughputs via folded balance equations, relative
utilizations, normalization constants by convolution (carried in log space so
large populations cannot overflow), throughput/availability from the
normalization-constant ratios, exact mean value analysis, and a brute-force
CTMC oracle used to test the product form on small networks.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
from scipy.special import gammaln, logsumexp
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

from .errors import SingularChain, StateSpaceTooLarge, ZeroRate
from .scenario import JacksonNetwork

DEFAULT_STATE_CAP = 200_000


def stationary_ss(routing):
    """Stationary vector of the station-level routing chain, scaled to max 1.

    Solves pi_i = sum_j pi_j p_ji on the stations only; road-node throughputs
    follow by multiplying with the routing probability into each road node.
    """
    routing = np.asarray(routing, dtype=float)
    n = routing.shape[0]
    graph = csr_matrix((routing > 0).astype(int))
    n_comp, _ = connected_components(graph, directed=True, connection="strong")
    if n_comp != 1:
        raise SingularChain("station routing chain is reducible")
    a = routing.T - np.eye(n)
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    pi = np.linalg.solve(a, b)
    pi = np.abs(pi)  # irreducible chain: exact solution is positive
    return pi / pi.max()


def relative_throughput(net: JacksonNetwork):
    """Relative throughput per node, scaled so the largest station value is 1."""
    pi = np.empty(net.n_nodes)
    pi_ss = stationary_ss(net.routing)
    pi[:net.n_stations] = pi_ss
    for k, (i, j) in enumerate(net.is_arcs(), start=net.n_stations):
        pi[k] = pi_ss[i] * net.routing[i, j]
    return pi


def relative_utilization(net: JacksonNetwork, pi):
    """gamma_i = pi_i / mu_i(1): pi/rate at stations, pi * T on road nodes."""
    gamma = np.empty(net.n_nodes)
    rates = net.ss_rates
    for i in range(net.n_stations):
        if rates[i] <= 0:
            if pi[i] > 0:
                raise ZeroRate(f"station {i} has zero rate but pi={pi[i]:.6g}")
            gamma[i] = 0.0
        else:
            gamma[i] = pi[i] / rates[i]
    for k, (i, j) in enumerate(net.is_arcs(), start=net.n_stations):
        gamma[k] = pi[k] * net.T[i, j]
    return gamma


@dataclass(frozen=True)
class NormalizationConstants:
    """G(0..m) of the product form, stored as logarithms."""

    logG: np.ndarray

    @property
    def m(self):
        return len(self.logG) - 1

    @property
    def G(self):
        """G values in linear scale; +inf where the float range is exceeded."""
        with np.errstate(over="ignore"):
            return np.exp(self.logG)

    @property
    def overflow(self):
        return bool(np.any(self.logG > np.log(np.finfo(float).max)))

    def ratio(self, k):
        """G(k-1)/G(k), the factor appearing in throughput and availability."""
        return float(np.exp(self.logG[k - 1] - self.logG[k]))


def normalization_constants(net: JacksonNetwork, pi, m) -> NormalizationConstants:
    """Convolution computation of G(0..m).

    Station nodes contribute load-independent factors gamma^x and are folded
    one at a time (Buzen recursion); all infinite-server nodes combine into a
    single Poisson factor Gamma^x / x! with Gamma the summed road utilization,
    folded in one closed-form pass.
    """
    if m < 0:
        raise ValueError("population must be nonnegative")
    gamma = relative_utilization(net, pi)
    lg = np.full(m + 1, -np.inf)
    lg[0] = 0.0  # G(0) = 1
    for i in range(net.n_stations):
        if gamma[i] <= 0:
            continue
        lgam = np.log(gamma[i])
        for k in range(1, m + 1):
            lg[k] = np.logaddexp(lg[k], lgam + lg[k - 1])
    gamma_is = gamma[net.n_stations:].sum()
    if gamma_is > 0 and m > 0:
        x = np.arange(m + 1)
        lw = x * np.log(gamma_is) - gammaln(x + 1)
        out = np.empty(m + 1)
        out[0] = lg[0]
        for k in range(1, m + 1):
            out[k] = logsumexp(lw[:k + 1] + lg[k::-1])
        lg = out
    return NormalizationConstants(lg)


def throughput_and_availability(net, pi, gamma, G: NormalizationConstants, m):
    """Throughput per node and availability per station at population m."""
    if G.m < m:
        raise ValueError(f"G computed only up to {G.m} < {m}")
    ratio = G.ratio(m)
    lam = np.asarray(pi) * ratio
    a = np.asarray(gamma)[:net.n_stations] * ratio
    return lam, a


@dataclass(frozen=True)
class MvaResult:
    """Exact MVA output for populations 1..m (row k-1 holds population k)."""

    W: np.ndarray        # mean wait per node
    L: np.ndarray        # mean queue length per node
    Lambda: np.ndarray   # throughput per node
    A: np.ndarray        # availability per station


def mva(net: JacksonNetwork, m) -> MvaResult:
    """Iterative exact MVA with road nodes treated as pure delay nodes.

    Visit ratios are the relative throughputs scaled to max-station 1, so the
    reported throughputs coincide with pi_i G(m-1)/G(m) and availabilities
    with gamma_i G(m-1)/G(m).
    """
    if m < 1:
        raise ValueError("population must be at least 1")
    n = net.n_stations
    pi = relative_throughput(net)
    rates = net.ss_rates
    if np.any((rates <= 0) & (pi[:n] > 0)):
        raise ZeroRate("station with zero rate and positive throughput")
    arcs = net.is_arcs()
    t_arc = np.array([net.T[i, j] for i, j in arcs])
    pi_is = pi[n:]
    z = float(pi_is @ t_arc)  # total delay demand of the road nodes

    k_nodes = net.n_nodes
    W = np.empty((m, k_nodes))
    L = np.empty((m, k_nodes))
    Lam = np.empty((m, k_nodes))
    A = np.empty((m, n))
    l_ss = np.zeros(n)
    for k in range(1, m + 1):
        w_ss = (1.0 + l_ss) / rates
        x = k / (z + pi[:n] @ w_ss)  # system throughput per unit visit ratio
        l_ss = x * pi[:n] * w_ss
        W[k - 1, :n] = w_ss
        W[k - 1, n:] = t_arc
        Lam[k - 1] = x * pi
        L[k - 1, :n] = l_ss
        L[k - 1, n:] = x * pi_is * t_arc
        A[k - 1] = x * pi[:n] / rates
    return MvaResult(W, L, Lam, A)


def _mva_throughput_py(rates, pi, z, m):
    """System throughput per unit visit ratio after the MVA recursion."""
    l_ss = np.zeros(len(rates))
    x = 0.0
    for k in range(1, m + 1):
        w_ss = (1.0 + l_ss) / rates
        x = k / (z + pi @ w_ss)
        l_ss = x * pi * w_ss
    return x


try:  # jit-compiled hot path; the pure-numpy version remains the reference
    from numba import njit

    _mva_throughput = njit(cache=True)(_mva_throughput_py)
except ImportError:  # pragma: no cover
    _mva_throughput = _mva_throughput_py


def mva_availability(rates, routing, T, m, pi=None):
    """Station availabilities at population m (fast path, stations only).

    Returns (A, pi_ss); identical to mva(...) but without per-population
    history or per-road-node bookkeeping.
    """
    rates = np.asarray(rates, dtype=float)
    routing = np.asarray(routing, dtype=float)
    if pi is None:
        pi = stationary_ss(routing)
    if m < 1:
        return np.zeros(len(rates)), pi
    z = float(pi @ ((routing * T).sum(axis=1)))
    x = _mva_throughput(rates, pi, z, int(m))
    return x * pi / rates, pi


# ---------------------------------------------------------------------------
# Brute-force CTMC oracle
# ---------------------------------------------------------------------------

def enumerate_states(n_nodes, m):
    """All occupancy vectors of n_nodes nonnegative integers summing to m."""
    state = np.zeros(n_nodes, dtype=int)
    out = []

    def rec(idx, remaining):
        if idx == n_nodes - 1:
            state[idx] = remaining
            out.append(state.copy())
            return
        for v in range(remaining + 1):
            state[idx] = v
            rec(idx + 1, remaining - v)

    rec(0, m)
    return np.array(out)


def _service_rate(net, node_idx, occupancy):
    if node_idx < net.n_stations:
        return net.ss_rates[node_idx]
    _, i, j = net.nodes[node_idx]
    return occupancy / net.T[i, j]


def ctmc_oracle(net: JacksonNetwork, m, cap=DEFAULT_STATE_CAP):
    """Stationary distribution of the network's CTMC by solving global balance.

    Returns (states, probabilities). Intended as a test oracle; the state
    space grows combinatorially, hence the cap.
    """
    k = net.n_nodes
    n_states = comb(m + k - 1, m)
    if n_states > cap:
        raise StateSpaceTooLarge(n_states, cap)
    states = enumerate_states(k, m)
    index = {tuple(s): idx for idx, s in enumerate(states)}
    rows, cols, vals = [], [], []
    diag = np.zeros(n_states)
    for a, s in enumerate(states):
        for i in np.where(s > 0)[0]:
            mu = _service_rate(net, i, s[i])
            for j in np.where(net.r[i] > 0)[0]:
                rate = mu * net.r[i, j]
                t = s.copy()
                t[i] -= 1
                t[j] += 1
                b = index[tuple(t)]
                rows.append(b)
                cols.append(a)
                vals.append(rate)
                diag[a] -= rate
    rows.extend(range(n_states))
    cols.extend(range(n_states))
    vals.extend(diag)
    # Solve Q^T-style global balance with one equation replaced by sum = 1.
    q = np.zeros((n_states, n_states))
    qs = csr_matrix((vals, (rows, cols)), shape=(n_states, n_states))
    if n_states <= 2000:
        q = qs.toarray()
        q[-1, :] = 1.0
        b = np.zeros(n_states)
        b[-1] = 1.0
        p = np.linalg.solve(q, b)
    else:
        ql = qs.tolil()
        ql[-1, :] = 1.0
        b = np.zeros(n_states)
        b[-1] = 1.0
        p = spsolve(ql.tocsr(), b)
    return states, np.maximum(p, 0.0) / max(p.sum(), 1e-300)


def product_form_distribution(net: JacksonNetwork, m, pi=None):
    """Normalized product-form probabilities over the same state enumeration."""
    if pi is None:
        pi = relative_throughput(net)
    states = enumerate_states(net.n_nodes, m)
    logp = np.zeros(len(states))
    with np.errstate(divide="ignore"):
        logpi = np.log(pi)
    for idx in range(net.n_nodes):
        x = states[:, idx]
        logp += x * logpi[idx]
        if idx < net.n_stations:
            logp -= x * np.log(net.ss_rates[idx])
        else:
            _, i, j = net.nodes[idx]
            # prod_{n=1}^{x} (n / T)^(-1) = T^x / x!
            logp += x * np.log(net.T[i, j]) - gammaln(x + 1)
    logp -= logsumexp(logp)
    return states, np.exp(logp)


# ---------------------------------------------------------------------------
# Combined analysis surface
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnalysisResult:
    """Per-node metrics of one closed Jackson network at its population."""

    pi: np.ndarray
    gamma: np.ndarray
    G: NormalizationConstants
    Lambda: np.ndarray     # node throughputs at population m
    A: np.ndarray          # station availabilities at population m
    L: np.ndarray          # mean queue lengths at population m (MVA)
    W: np.ndarray          # mean waits at population m (MVA)
    mva_curves: MvaResult  # full population sweep 1..m


def analyze(net: JacksonNetwork, with_convolution=True) -> AnalysisResult:
    """Full analysis of a network at its configured population.

    Throughput and availability are computed by MVA; when with_convolution is
    set they are cross-checked against the normalization-constant route.
    """
    m = net.m
    if m < 1:
        raise ValueError("network population must be at least 1")
    pi = relative_throughput(net)
    gamma = relative_utilization(net, pi)
    curves = mva(net, m)
    if with_convolution:
        G = normalization_constants(net, pi, m)
    else:
        G = None
    return AnalysisResult(
        pi=pi,
        gamma=gamma,
        G=G,
        Lambda=curves.Lambda[m - 1],
        A=curves.A[m - 1],
        L=curves.L[m - 1],
        W=curves.W[m - 1],
        mva_curves=curves,
    )
