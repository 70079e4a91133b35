"""Acceptance gate: one test per shipped guarantee.

Run with ``pytest -v tests/test_acceptance.py`` to get a pass/fail line per
criterion.  Each test prints the measured numbers so a log of the run doubles
as a report.
"""

import numpy as np
import pytest

import oracles
from lmpcq import so3
from lmpcq.dynamics import QuadParams, rk4_step, rollout
from lmpcq.qp import solve_qp
from lmpcq.safety_set import compute_cost_to_go, terminal_cost
from lmpcq.solver import build_problem, solve
from lmpcq.task import Track

P = QuadParams()
RNG = np.random.default_rng(2024)


def _learned_stats(default_run):
    return [st for rep in default_run.reports[1:] for st in rep.stats]


# --- 1: lap-time learning ---------------------------------------------------------

def test_criterion_1_lap_time_learning(default_run):
    lt = default_run.lap_times
    best = min(lt[1:])
    print(f"bootstrap {lt[0]:.2f} s, first learned {lt[1]:.2f} s "
          f"({lt[1] / lt[0]:.1%}), best {best:.2f} s ({best / lt[0]:.1%})")
    assert lt[1] <= 0.50 * lt[0]
    assert best <= 0.33 * lt[0]


# --- 2: convergence band ----------------------------------------------------------

def test_criterion_2_convergence_band(default_run):
    tail = np.array(default_run.lap_times[3:7])
    mean = tail.mean()
    spread = np.abs(tail - mean) / mean
    print(f"iterations 3-6: {tail.tolist()} s, mean {mean:.3f} s, "
          f"max deviation {spread.max():.1%}")
    assert spread.max() <= 0.20


# --- 3: real-time budget ----------------------------------------------------------

def test_criterion_3_solve_latency(default_run):
    ms = 1e3 * np.array([st.solve_time for st in _learned_stats(default_run)])
    med, p95 = np.median(ms), np.percentile(ms, 95)
    print(f"{ms.size} solves: median {med:.2f} ms, p95 {p95:.2f} ms, "
          f"max {ms.max():.2f} ms")
    assert med <= 10.0
    assert p95 <= 25.0


# --- 4: geometry invariants -------------------------------------------------------

def test_criterion_4_geometry_invariants():
    n = 10_000
    dt = 0.1
    worst_orth = 0.0
    worst_drift = 0.0
    for _ in range(n):
        q = RNG.normal(size=4)
        q /= np.linalg.norm(q)
        x = np.concatenate([RNG.uniform(-5, 5, 3), RNG.uniform(-3, 3, 3), q])
        w = RNG.uniform(-1, 1, 3)
        w *= RNG.uniform(0, 3.0) / max(np.linalg.norm(w), 1e-12)
        u = np.array([RNG.uniform(P.f_min, P.f_max), *w])
        xn = rk4_step(x, u, dt, P)
        R = so3.quat_to_rotation(xn[6:10])
        worst_orth = max(worst_orth, np.max(np.abs(R.T @ R - np.eye(3))))
        worst_drift = max(worst_drift,
                          abs(np.linalg.norm(xn[6:10]) - np.linalg.norm(x[6:10])))
    # constant-rate flow against the closed-form quaternion exponential
    worst_geo = 0.0
    for _ in range(100):
        q = RNG.normal(size=4)
        q /= np.linalg.norm(q)
        x = np.concatenate([np.zeros(6), q])
        w = RNG.uniform(-1, 1, 3)
        w *= 3.0 / np.linalg.norm(w)
        u = np.array([P.hover_thrust, *w])
        X = rollout(x, np.tile(u, (10, 1)), dt, P)
        q_ref = so3.quat_multiply(q, so3.quat_exp(w * 1.0))
        worst_geo = max(worst_geo, oracles.geodesic_angle(X[10][6:10], q_ref))
    print(f"{n} random steps: ||R'R - I|| <= {worst_orth:.2e}, "
          f"norm drift <= {worst_drift:.2e}; constant-rate flow "
          f"geodesic error <= {worst_geo:.2e} rad over 1 s")
    assert worst_orth <= 1e-9
    assert worst_drift <= 1e-6
    assert worst_geo <= 1e-4


# --- 5: integrator order ----------------------------------------------------------

def test_criterion_5_integrator_order():
    x0 = np.concatenate([np.zeros(3), np.zeros(3), [1, 0, 0, 0]])
    T, base = 1.0, 0.05

    def integrate(dt):
        steps = int(round(T / dt))
        rep = int(round(base / dt))
        x = x0
        for k in range(steps):
            f = P.hover_thrust * (1.0 + 0.2 * np.sin(0.7 * (k // rep)))
            u = np.array([f, 0.9, -0.6, 0.4])
            x = rk4_step(x, u, dt, P)
        return x

    ref = integrate(base / 100)
    e1 = np.linalg.norm(integrate(base) - ref)
    e2 = np.linalg.norm(integrate(base / 2) - ref)
    print(f"error(dt)={e1:.3e}, error(dt/2)={e2:.3e}, ratio {e1 / e2:.2f}")
    assert 12.0 < e1 / e2 < 20.0


# --- 6: solver correctness --------------------------------------------------------

def test_criterion_6_solver_correctness(default_run):
    # random strictly convex QPs against exhaustive active-set enumeration
    rng = np.random.default_rng(311)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 11))
        M = rng.normal(size=(n, n))
        H = M @ M.T + 0.1 * np.eye(n)
        g = rng.normal(size=n)
        x_feas = rng.normal(size=n)
        m = int(rng.integers(1, 9))
        C = rng.normal(size=(m, n))
        cu = C @ x_feas + rng.uniform(0.1, 2.0, m)
        sol = solve_qp(H, g, C=C, cl=np.full(m, -np.inf), cu=cu)
        assert sol.status == "optimal"
        x_ref, _ = oracles.solve_qp_enumerate(H, g, None, None, C, cu)
        worst = max(worst, float(np.max(np.abs(sol.x - x_ref))))
    assert worst <= 1e-6

    # double-integrator transfer against the least-norm closed form
    zT, vT, N = 1.2, 0.2, 6
    track = Track([[0, 0, 1], [0, 0, 2]], delta=0.8)
    from lmpcq.safety_set import LocalConvexSet
    from lmpcq.solver import LmpcConfig
    from lmpcq.dynamics import hover_state
    xT = hover_state([0, 0, zT])
    xT[5] = vT
    lset = LocalConvexSet(xT[None, :], np.array([4.0]), [(0, 0)])
    cfg = LmpcConfig(N=N, stage_cost="none")
    prob = build_problem(hover_state([0, 0, 1]), lset, track, cfg)
    sol = solve(prob)
    assert sol.stats.status == "converged"
    f_ref = oracles.least_norm_thrust(1.0, 0.0, zT, vT, N, cfg.dt, P.mass, P.gravity)
    ocp_err = float(np.max(np.abs(sol.U[:, 0] - f_ref)))
    assert ocp_err <= 1e-4

    # converged receding-horizon solves: defects, simplex, boxes
    store = default_run.store
    cfg = default_run.config.lmpc
    rec = store.record(1)
    checked = 0
    for idx in (4, 8, 12):
        x = rec.states[idx]
        seed = rec.states[min(idx + cfg.N, rec.steps)]
        ls = store.select_local_set(seed, cfg.n_neighbors, 0, iterations=[0, 1])
        pb = build_problem(x, ls, default_run.track, cfg)
        s = solve(pb)
        if s.stats.status != "converged":
            continue
        checked += 1
        for k in range(cfg.N):
            defect = s.X[k + 1] - rk4_step(s.X[k], s.U[k], cfg.dt, cfg.params)
            assert np.max(np.abs(defect)) <= 1e-6
        assert np.all(s.lam >= -1e-8)
        assert abs(s.lam.sum() - 1.0) <= 1e-8
        assert np.all(s.U >= P.u_min) and np.all(s.U <= P.u_max)
    assert checked > 0
    print(f"200 QPs worst error {worst:.2e}; OCP vs closed form {ocp_err:.2e}; "
          f"{checked} converged receding-horizon solves clean")


# --- 7: safety-set correctness ----------------------------------------------------

def test_criterion_7_safety_set_correctness(default_run):
    store = default_run.store
    worst_tel = 0.0
    for j in store.iteration_ids:
        rec = store.record(j)
        expect = compute_cost_to_go(rec.states, rec.inputs, store.running_cost)
        worst_tel = max(worst_tel, float(np.max(np.abs(rec.costs - expect))))
    assert worst_tel <= 1e-9

    all_states = np.vstack([store.record(j).states for j in store.iteration_ids])
    ids = store.iteration_ids
    for trial in range(100):
        base = all_states[RNG.integers(0, all_states.shape[0])].copy()
        base[0:3] += RNG.normal(scale=0.3, size=3)
        base[3:6] += RNG.normal(scale=0.3, size=3)
        lset = store.select_local_set(base, 12, 0, iterations=ids)
        got = sorted(lset.sources)
        want = []
        for j in ids:
            rec = store.record(j)
            for t in oracles.knn_bruteforce(rec.states, base, 12):
                want.append((j, int(t)))
        assert got == sorted(want), f"k-NN mismatch on seed {trial}"

        lam = RNG.dirichlet(np.ones(lset.size))
        tc = terminal_cost(lset, lam)
        assert lset.costs.min() - 1e-12 <= tc <= lset.costs.max() + 1e-12
    print(f"telescoping residual <= {worst_tel:.2e} across "
          f"{len(store.iteration_ids)} records; 100 k-NN seeds match; "
          f"terminal cost stayed inside [min J, max J]")


# --- 8: constraint safety ---------------------------------------------------------

def test_criterion_8_constraint_safety(default_run):
    track = default_run.track
    store = default_run.store
    worst = 0.0
    for j in store.iteration_ids:
        rec = store.record(j)
        for x in rec.states:
            worst = max(worst, track.corridor_violation(x[0:3]))
        assert np.all(rec.inputs >= P.u_min)
        assert np.all(rec.inputs <= P.u_max)
    laps = default_run.lap_times
    running = [min(laps[: k + 1]) for k in range(len(laps))]
    assert all(a >= b for a, b in zip(running, running[1:]))
    print(f"max corridor excursion {worst:.2e} m across all records; "
          f"inputs inside boxes; best-so-far laps {running}")
    assert worst <= 1e-3
