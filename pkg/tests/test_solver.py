"""SQP controller tests: stage cost, OCP assembly, analytic and relaxation
oracles, solution invariants."""

from types import SimpleNamespace

import numpy as np
import pytest

from lmpcq.dynamics import QuadParams, hover_state, rk4_step
from lmpcq.errors import DegenerateSegmentError
from lmpcq.safety_set import LocalConvexSet, combine_states
from lmpcq.solver import (LmpcConfig, build_problem, corridor_rows, sigma_cost,
                          solve, warm_start_shift, _sigma_grad_gn)
from lmpcq.task import Track

import oracles

P = QuadParams()
RNG = np.random.default_rng(31)


def member(z, vz, J):
    x = hover_state([0.0, 0.0, z])
    x[5] = vz
    return x, J


def vertical_setup(targets, N=6):
    """OCP pieces for a pure climb: z-only transfer, attitude pinned level."""
    track = Track([[0.0, 0.0, 1.0], [0.0, 0.0, 2.0]], delta=0.8)
    states = np.array([member(z, vz, J)[0] for z, vz, J in targets])
    costs = np.array([float(J) for _, _, J in targets])
    lset = LocalConvexSet(states, costs, [(0, t) for t in range(len(targets))])
    cfg = LmpcConfig(N=N, stage_cost="none")
    x0 = hover_state([0.0, 0.0, 1.0])
    return build_problem(x0, lset, track, cfg), lset, cfg, x0


def assert_solution_invariants(prob, sol):
    X, U, lam = sol.X, sol.U, sol.lam
    for k in range(prob.N):
        defect = X[k + 1] - rk4_step(X[k], U[k], prob.dt, prob.params)
        assert np.max(np.abs(defect)) < 1e-6, f"defect at stage {k}"
    assert lam.min() >= -1e-8
    assert abs(lam.sum() - 1.0) <= 1e-8
    assert np.all(U >= prob.params.u_min - 1e-12)
    assert np.all(U <= prob.params.u_max + 1e-12)
    ap = np.einsum("kij,kj->ki", prob.corridor_A, X[1:, 0:3])
    assert np.max(ap - prob.corridor_hi) < 1e-6
    assert np.max(prob.corridor_lo - ap) < 1e-6
    lam_c = np.clip(lam, 0.0, None)
    xc = combine_states(prob.local_set, lam_c / lam_c.sum())
    assert np.max(np.abs(X[prob.N, 0:6] - xc[0:6])) < 1e-5
    assert oracles.geodesic_angle(X[prob.N, 6:10], xc[6:10]) < 1e-5


# --- corridor rows -----------------------------------------------------------

def test_corridor_rows_projector():
    seg = (np.zeros(3), np.array([1.0, 0.0, 0.0]))
    A, lo, hi = corridor_rows(np.array([0.5, 0.3, 0.0]), seg, 0.8)
    # projector off the x axis: A p recovers the normal component (0, 0.3, 0)
    assert np.allclose(A @ np.array([0.5, 0.3, 0.0]), [0.0, 0.3, 0.0])
    assert np.allclose(A, np.diag([0.0, 1.0, 1.0]))
    assert np.allclose(lo, [-0.8, -0.8, -0.8]) and np.allclose(hi, [0.8, 0.8, 0.8])


def test_corridor_rows_on_axis_interior():
    seg = (np.array([0.0, 0.0, 1.0]), np.array([3.0, 0.0, 1.0]))
    A, lo, hi = corridor_rows(np.array([1.0, 0.0, 1.0]), seg, 0.8)
    ap = A @ np.array([1.0, 0.0, 1.0])
    assert np.all(ap > lo + 0.79) and np.all(ap < hi - 0.79)


def test_corridor_rows_degenerate_segment():
    with pytest.raises(DegenerateSegmentError):
        corridor_rows(np.zeros(3), (np.ones(3), np.ones(3)), 0.8)


# --- sigma stage cost -----------------------------------------------------------

def test_sigma_values():
    g = np.zeros(3)
    assert sigma_cost(g, g) == 0.0
    assert sigma_cost(np.array([1.0, 0, 0]), g) == pytest.approx(1 / np.sqrt(2))
    assert sigma_cost(np.array([10.0, 0, 0]), g) == pytest.approx(
        100 / np.sqrt(1e4 + 1))
    assert sigma_cost(np.array([1e3, 0, 0]), g) == pytest.approx(1.0, abs=1e-6)


def test_sigma_bounds_and_monotonicity():
    g = np.zeros(3)
    prev = -1.0
    for d in np.linspace(0.0, 8.0, 200):
        v = sigma_cost(np.array([d, 0, 0]), g)
        assert 0.0 <= v < 1.0
        assert v >= prev
        prev = v


def test_sigma_gradient_matches_fd():
    goal = np.array([3.0, 3.0, 1.0])
    h = 1e-6
    for _ in range(100):
        p = goal + RNG.uniform(-3, 3, 3)
        grad, gn = _sigma_grad_gn(p, goal)
        fd = np.empty(3)
        for i in range(3):
            dp = np.zeros(3)
            dp[i] = h
            fd[i] = (sigma_cost(p + dp, goal) - sigma_cost(p - dp, goal)) / (2 * h)
        assert np.max(np.abs(grad - fd)) < 1e-6
        assert np.min(np.linalg.eigvalsh(gn)) >= -1e-12  # Gauss-Newton PSD


# --- problem assembly -------------------------------------------------------------

def test_build_problem_shapes():
    prob, lset, cfg, x0 = vertical_setup([(1.2, 0.2, 4.0)], N=4)
    assert prob.N == 4
    assert prob.local_set.size == 1
    assert prob.corridor_A.shape == (4, 3, 3)
    assert np.array_equal(prob.x0, x0)


def test_build_problem_rejects_empty_set():
    track = Track([[0, 0, 1], [0, 0, 2]], delta=0.8)
    empty = LocalConvexSet(np.zeros((0, 10)), np.zeros(0), [])
    with pytest.raises(ValueError):
        build_problem(hover_state([0, 0, 1]), empty, track, LmpcConfig())


# --- solve: analytic and structural oracles ------------------------------------------

def test_hover_at_goal_is_stationary():
    track = Track()  # default L-track, goal (3, 3, 1)
    xg = hover_state(track.goal)
    lset = LocalConvexSet(xg[None, :], np.array([0.0]), [(0, 0)])
    cfg = LmpcConfig(N=6)
    prob = build_problem(xg, lset, track, cfg)
    sol = solve(prob)
    assert sol.stats.status == "converged"
    hover = P.hover_input()
    assert np.max(np.abs(sol.U - hover)) < 1e-4
    assert np.allclose(sol.lam, [1.0], atol=1e-9)
    # all cost beyond the unavoidable hover-input penalty is ~0
    assert sol.cost == pytest.approx(cfg.N * float(hover @ (cfg.Ru * hover)),
                                     abs=1e-6)
    assert_solution_invariants(prob, sol)


def test_vertical_transfer_matches_least_norm_oracle():
    # with the terminal state pinned (P = 1) and no stage cost beyond the
    # input penalty, thrust follows the least-squares transfer profile
    zT, vT, N = 1.2, 0.2, 6
    prob, lset, cfg, x0 = vertical_setup([(zT, vT, 4.0)], N=N)
    f_ref = oracles.least_norm_thrust(1.0, 0.0, zT, vT, N, cfg.dt,
                                      P.mass, P.gravity)
    assert np.all(f_ref > P.f_min + 1.0) and np.all(f_ref < P.f_max - 1.0)
    sol = solve(prob)
    assert sol.stats.status == "converged"
    assert np.max(np.abs(sol.U[:, 0] - f_ref)) < 1e-4
    assert np.max(np.abs(sol.U[:, 1:4])) < 1e-6  # no reason to rotate
    assert np.max(np.abs(sol.X[N] - lset.states[0])) < 1e-5
    assert_solution_invariants(prob, sol)


def test_single_member_forces_lambda_one():
    prob, lset, _, _ = vertical_setup([(1.15, 0.1, 2.0)], N=5)
    sol = solve(prob)
    assert sol.lam.shape == (1,)
    assert sol.lam[0] == pytest.approx(1.0, abs=1e-9)
    assert np.max(np.abs(sol.X[prob.N] - lset.states[0])) < 1e-5


def test_relaxation_no_worse_than_any_vertex():
    # solving over the simplex cannot cost more than pinning the terminal
    # state to the best individual member
    targets = [(1.02, 0.05, 5.0), (1.05, 0.10, 4.0), (1.03, 0.00, 6.0)]
    for zT, vT, _ in targets:  # every pinned transfer must be inside the box
        f = oracles.least_norm_thrust(1.0, 0.0, zT, vT, 3, 0.1, P.mass, P.gravity)
        assert np.all(f > P.f_min + 1.0) and np.all(f < P.f_max - 1.0)
    prob, lset, cfg, x0 = vertical_setup(targets, N=3)
    relaxed = solve(prob)
    assert relaxed.stats.status == "converged"
    vertex_costs = []
    for k in range(len(targets)):
        pk, _, _, _ = vertical_setup([targets[k]], N=3)
        sk = solve(pk)
        assert sk.stats.status == "converged"
        vertex_costs.append(sk.cost)
    assert relaxed.cost <= min(vertex_costs) + 1e-6
    assert_solution_invariants(prob, relaxed)


def test_equal_costs_still_couple_terminal():
    targets = [(1.10, 0.0, 3.0), (1.18, 0.1, 3.0), (1.25, 0.0, 3.0)]
    prob, lset, _, _ = vertical_setup(targets, N=4)
    sol = solve(prob)
    assert sol.stats.status == "converged"
    assert_solution_invariants(prob, sol)  # includes the coupling check


# --- warm start -----------------------------------------------------------------

def test_warm_start_shift_properties():
    N = 10
    U = RNG.uniform([2, -1, -1, -1], [12, 1, 1, 1], size=(N, 4))
    X = np.empty((N + 1, 10))
    X[0] = hover_state([0, 0, 1])
    for k in range(N):
        X[k + 1] = rk4_step(X[k], U[k], 0.1, P)
    shifted = warm_start_shift(SimpleNamespace(X=X, U=U), 0.1, P, n_weights=5)
    assert np.array_equal(shifted.U[:-1], U[1:])
    assert np.array_equal(shifted.U[-1], U[-1])
    assert np.array_equal(shifted.X[:-1], X[1:])
    assert np.allclose(shifted.X[-1], rk4_step(X[N], U[N - 1], 0.1, P))
    assert np.allclose(shifted.lam, 0.2)  # uniform restart


# --- realistic mid-lap problem (uses the shared learning run) ---------------------

def _midlap_problem(default_run):
    store = default_run.store
    track = default_run.track
    cfg = default_run.config.lmpc
    rec = store.record(1)
    x = rec.states[8]
    seed = rec.states[min(8 + cfg.N, rec.steps)]
    lset = store.select_local_set(seed, cfg.n_neighbors, 0, iterations=[0, 1])
    return build_problem(x, lset, track, cfg), cfg


def test_midlap_solve_invariants(default_run):
    prob, cfg = _midlap_problem(default_run)
    sol = solve(prob)
    assert sol.stats.status == "converged"
    assert sol.stats.kkt_residual <= cfg.kkt_tol
    assert_solution_invariants(prob, sol)


def test_real_time_mode_iteration_cap(default_run):
    prob, cfg = _midlap_problem(default_run)
    sol = solve(prob, real_time=True)
    assert sol.stats.sqp_iters <= cfg.rti_sqp_iter
    assert sol.stats.solve_time > 0.0
    assert sol.stats.status in ("converged", "max_iter")


def test_warm_start_helps_midlap(default_run):
    # mirror the closed loop: solve at step t, shift, hand the guess to step t+1
    store = default_run.store
    track = default_run.track
    cfg = default_run.config.lmpc
    rec = store.record(1)
    prob, _ = _midlap_problem(default_run)
    cold = solve(prob)
    assert cold.stats.status == "converged"
    guess = warm_start_shift(cold, cfg.dt, cfg.params, prob.local_set.size)
    lset = store.select_local_set(cold.X[cfg.N], cfg.n_neighbors, 0,
                                  iterations=[0, 1])
    x_next = rk4_step(rec.states[8], cold.U[0], cfg.dt, cfg.params)
    nxt = build_problem(x_next, lset, track, cfg, stage_positions=cold.X)
    warm = solve(nxt, warm_start=guess)
    assert warm.stats.status == "converged"
    # the shifted guess lands on the same optimum as a cold start of the same
    # problem (iteration counts may jitter either way by a few)
    cold_next = solve(nxt)
    assert cold_next.stats.status == "converged"
    assert warm.cost == pytest.approx(cold_next.cost, rel=1e-5, abs=1e-6)
    assert warm.stats.sqp_iters <= cold_next.stats.sqp_iters + 5
