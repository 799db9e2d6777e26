import itertools

import numpy as np
import pytest

from modfleet.assignment import (
    AssignmentProblem,
    StationState,
    build_problem,
    solve_assignment,
)


def empty_state(n):
    z = np.zeros((n, n), dtype=int)
    return StationState(np.zeros(n, dtype=int), np.zeros(n, dtype=int),
                        z.copy(), z.copy(), z.copy())


def random_state(n, rng, cap=2):
    c_u = rng.integers(0, cap + 1, (n, n))
    np.fill_diagonal(c_u, 0)
    return StationState(
        rng.integers(0, cap + 1, n),
        rng.integers(0, cap + 1, n),
        c_u,
        rng.integers(0, cap + 1, (n, n)),
        rng.integers(0, cap + 1, (n, n)),
    )


def brute_force(ap):
    """Enumerate every feasible integer assignment; return the best value."""
    st = ap.state
    n = st.n
    arcs = [(i, j) for i in range(n) for j in range(n)
            if i != j and st.c_u[i, j] > 0]
    per_arc = [
        [(a, b) for a in range(st.c_u[i, j] + 1)
         for b in range(st.c_u[i, j] + 1 - a)]
        for (i, j) in arcs
    ]
    base = ap.predicted_baseline().astype(float)
    best = np.inf
    for combo in itertools.product(*per_arc):
        n_v = np.zeros((n, n), dtype=int)
        n_d = np.zeros((n, n), dtype=int)
        for (i, j), (a, b) in zip(arcs, combo):
            n_v[i, j] = a
            n_d[i, j] = b
        if (n_v.sum(axis=1) > st.v_e).any():
            continue
        if (n_d.sum(axis=1) > st.d_u).any():
            continue
        v_plus = base + n_v.sum(axis=0) - n_v.sum(axis=1)
        val = np.abs(v_plus - ap.v_des).sum() - ap.w * (n_v.sum() + n_d.sum())
        best = min(best, val)
    return best


class TestStationState:
    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            StationState(np.array([-1, 0]), np.zeros(2, dtype=int),
                         np.zeros((2, 2), dtype=int),
                         np.zeros((2, 2), dtype=int),
                         np.zeros((2, 2), dtype=int))

    def test_self_requests_rejected(self):
        c_u = np.array([[1, 0], [0, 0]])
        with pytest.raises(ValueError):
            StationState(np.zeros(2, dtype=int), np.zeros(2, dtype=int),
                         c_u, np.zeros((2, 2), dtype=int),
                         np.zeros((2, 2), dtype=int))


class TestBuildProblem:
    def test_uniform_rates_split_evenly(self):
        ap = build_problem(empty_state(4), m_v=10, m_d=2,
                           lam=np.ones(4), w=1.0)
        assert np.allclose(ap.v_des, 2.0)

    def test_empty_state_baseline_is_excess(self):
        st = empty_state(3)
        object.__setattr__(st, "v_e", np.array([2, 0, 1]))
        ap = build_problem(st, 5, 1, np.ones(3), 0.5)
        assert np.array_equal(ap.predicted_baseline(), [2, 0, 1])

    def test_in_transit_counted_inbound(self):
        st = empty_state(2)
        v_t = np.array([[0, 3], [0, 0]])   # 3 vehicles heading 0 -> 1
        object.__setattr__(st, "v_t", v_t)
        ap = build_problem(st, 6, 2, np.ones(2), 0.5)
        assert np.array_equal(ap.predicted_baseline(), [0, 3])


class TestSolveAssignment:
    def test_no_customers_all_zero(self):
        st = empty_state(3)
        object.__setattr__(st, "v_e", np.array([1, 2, 0]))
        ap = build_problem(st, 6, 2, np.ones(3), 1.0)
        sol = solve_assignment(ap)
        assert sol.assigned == 0
        assert sol.objective == pytest.approx(
            np.abs(ap.predicted_baseline() - ap.v_des).sum())
        assert sol.gap == 0.0

    def test_single_customer_self_drive(self):
        # one customer 1 -> 2, an excess vehicle at 1, no drivers: with a
        # large reward the vehicle is assigned
        st = empty_state(2)
        object.__setattr__(st, "v_e", np.array([1, 0]))
        object.__setattr__(st, "c_u", np.array([[0, 1], [0, 0]]))
        ap = build_problem(st, 3, 1, np.ones(2), w=10.0)
        sol = solve_assignment(ap)
        assert sol.n_v[0, 1] == 1
        assert sol.n_d.sum() == 0

    @pytest.mark.parametrize("seed", range(40))
    def test_matches_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 4))
        st = random_state(n, rng)
        w = float(rng.choice([0.0, 0.3, 1.0, 5.0]))
        ap = build_problem(st, int(10 + rng.integers(0, 5)), 2,
                           rng.uniform(0.5, 2.0, n), w)
        sol = solve_assignment(ap)
        assert sol.objective == pytest.approx(brute_force(ap), abs=1e-7)

    def test_capacity_bounds_respected(self):
        rng = np.random.default_rng(99)
        st = random_state(3, rng)
        ap = build_problem(st, 12, 3, np.ones(3), 2.0)
        sol = solve_assignment(ap)
        assert np.all(sol.n_v + sol.n_d <= st.c_u)
        assert np.all(sol.n_v.sum(axis=1) <= st.v_e)
        assert np.all(sol.n_d.sum(axis=1) <= st.d_u)

    @pytest.mark.parametrize("seed", range(10))
    def test_assignment_pressure_monotone_in_w(self, seed):
        rng = np.random.default_rng(seed + 500)
        st = random_state(3, rng)
        ap_lo = build_problem(st, 12, 3, np.ones(3), 0.1)
        ap_hi = build_problem(st, 12, 3, np.ones(3), 4.0)
        assert solve_assignment(ap_hi).assigned >= \
            solve_assignment(ap_lo).assigned

    def test_deterministic(self):
        rng = np.random.default_rng(7)
        st = random_state(3, rng)
        ap = build_problem(st, 12, 3, np.array([1.0, 2.0, 0.5]), 1.0)
        a = solve_assignment(ap)
        b = solve_assignment(ap)
        assert np.array_equal(a.n_v, b.n_v)
        assert np.array_equal(a.n_d, b.n_d)
        assert a.objective == b.objective

    def test_city_scale_instance_smoke(self):
        rng = np.random.default_rng(0)
        st = random_state(20, rng, cap=3)
        ap = build_problem(st, 750, 150, rng.uniform(0.5, 2.0, 20), 1.0)
        sol = solve_assignment(ap)
        assert sol.gap == 0.0
        assert np.all(sol.n_v + sol.n_d <= st.c_u)
