"""Receding-horizon SQP solver with a learned convex terminal set.

Each control period solves

    min   sum_k [ sigma(|p_k - x_G|) + u_k' R_u u_k ]  +  J' lambda
    s.t.  x_{k+1} = f_RK4(x_k, u_k)
          x_N "=" barycentric state of the local safety set (lambda weights)
          sum(lambda) = 1,  lambda >= 0
          corridor rows per stage,  input boxes

by Gauss-Newton SQP.  The linearized dynamics are condensed: states are
eliminated through the prediction matrices x_j = Phi_j + sum_k M_jk u_k, so
the dense interior-point QP runs over (u, lambda) only — 4N+P variables
instead of 14N+P — which keeps per-step solve times in the low milliseconds.
The elimination is exact, so the SQP step equals the sparse one.

The position/velocity rows of the terminal coupling are linear in lambda;
the attitude row is enforced as a 3-D tangent-space error
``log(combination(lambda)^-1 * q_N) = 0`` and linearized by finite
differences each iteration (constraining the quaternion direction, not its
dynamics-invariant norm).
"""

import time
from dataclasses import dataclass, field

import numpy as np

from lmpcq import _kernels, so3
from lmpcq.dynamics import QuadParams, U_DIM, X_DIM, rk4_step
from lmpcq.errors import DegenerateSegmentError
from lmpcq.qp import QpSubproblem, qp_solve

KKT_TOL = 1e-6
MAX_SQP_ITER = 30
# SQP passes per control period in real-time mode.  Two linearize/QP rounds
# keep the median step comfortably inside a 100 Hz budget; the warm-started
# sequence supplies the remaining convergence across steps.
RTI_SQP_ITER = 2
HESS_REG = 1e-8
# diagonal input penalty (thrust, body rates); low thrust weight favors
# minimum-time behavior
DEFAULT_RU = np.array([1e-3, 1e-2, 1e-2, 1e-2])
# l1 penalty on terminal-coupling slack: an exact penalty, so the slack is
# zero whenever the blended terminal state is actually reachable, yet the QP
# stays feasible (and the controller keeps producing inputs) when the local
# set briefly outruns the vehicle
SOFT_PENALTY = 1e4

# l1 merit line search: backtracking by 0.5 down to step 1/32
_ALPHAS = tuple(0.5 ** i for i in range(6))


@dataclass
class LmpcConfig:
    """Controller configuration (solver + neighbor-selection parameters)."""

    N: int = 10
    dt: float = 0.1
    n_neighbors: int = 12
    p_lookback: int = 2  # how many most recent iterations feed the local set
    Ru: np.ndarray = field(default_factory=lambda: DEFAULT_RU.copy())
    stage_cost: str = "sigmoid"  # "sigmoid" | "none" (input penalty only)
    params: QuadParams = field(default_factory=QuadParams)
    kkt_tol: float = KKT_TOL
    rt_exit_tol: float = 1e-3  # good-enough KKT level to stop early in real time
    max_sqp_iter: int = MAX_SQP_ITER
    rti_sqp_iter: int = RTI_SQP_ITER
    reg: float = HESS_REG
    qp_tol: float = 1e-8
    qp_max_iter: int = 100

    def __post_init__(self):
        self.Ru = np.asarray(self.Ru, dtype=np.float64)
        if self.N < 1 or self.Ru.shape != (U_DIM,) or np.any(self.Ru < 0):
            raise ValueError("bad LMPC configuration")
        if self.stage_cost not in ("sigmoid", "none"):
            raise ValueError(f"unknown stage cost {self.stage_cost!r}")


@dataclass
class OcpProblem:
    """One control step's optimal control problem data."""

    x0: np.ndarray  # (10,)
    N: int
    dt: float
    local_set: object  # LocalConvexSet (states (P,10), costs (P,))
    corridor_A: np.ndarray  # (N, 3, 3) projector rows per stage 1..N
    corridor_lo: np.ndarray  # (N, 3)
    corridor_hi: np.ndarray  # (N, 3)
    goal: np.ndarray  # (3,)
    Ru: np.ndarray  # (4,) diagonal input penalty
    params: QuadParams
    stage_cost: str = "sigmoid"
    reg: float = HESS_REG
    kkt_tol: float = KKT_TOL
    rt_exit_tol: float = 1e-3
    qp_tol: float = 1e-8
    qp_max_iter: int = 100
    max_sqp_iter: int = MAX_SQP_ITER
    rti_sqp_iter: int = RTI_SQP_ITER

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=np.float64)
        if self.local_set.size < 1:
            raise ValueError("empty local convex set")
        if self.N < 1:
            raise ValueError("horizon must be >= 1")
        if np.any(self.params.u_min > self.params.u_max):
            raise ValueError("invalid input bounds")

    @property
    def P(self):
        return self.local_set.size


@dataclass
class WarmStart:
    X: np.ndarray  # (N+1, 10)
    U: np.ndarray  # (N, 4)
    lam: np.ndarray  # (P,)


@dataclass
class SolveStats:
    sqp_iters: int
    qp_iters: int
    kkt_residual: float
    solve_time: float
    status: str  # "converged" | "max_iter" | "infeasible"


@dataclass
class OcpSolution:
    X: np.ndarray
    U: np.ndarray
    lam: np.ndarray
    cost: float
    stats: SolveStats


def corridor_rows(p_ref, segment, delta):
    """Corridor constraint rows for one segment: A p in [b_min, b_max].

    A = I - r_hat r_hat' projects out the axis direction; the bounds put the
    off-axis position error A (p - r_w) in [-delta, delta] componentwise.
    The rows depend only on the segment geometry; ``p_ref`` identifies the
    stage position the caller assigned to this segment.
    """
    r0 = np.asarray(segment[0], dtype=np.float64)
    r1 = np.asarray(segment[1], dtype=np.float64)
    axis = r1 - r0
    L = float(np.linalg.norm(axis))
    if L <= 1e-9:
        raise DegenerateSegmentError(f"segment endpoints coincide: {r0} ~ {r1}")
    rhat = axis / L
    A = np.eye(3) - np.outer(rhat, rhat)
    offset = A @ r0
    delta = np.asarray(delta, dtype=np.float64) * np.ones(3)
    return A, offset - delta, offset + delta


def sigma_cost(p, goal):
    """Smooth minimum-time surrogate d^2 / sqrt(d^4 + 1), d = |p - goal|."""
    d2 = float(np.sum((np.asarray(p) - goal) ** 2))
    return d2 / np.sqrt(d2 * d2 + 1.0)


def _sigma_grad_gn(p, goal):
    """Gradient and Gauss-Newton Hessian of the sigma stage cost.

    sigma = rho^2 with rho = d / (d^4+1)^(1/4), so GN = 2 grad(rho) grad(rho)'
    is PSD by construction; near the goal it degrades gracefully to the true
    Hessian limit 2 I.
    """
    e = np.asarray(p) - goal
    d2 = float(e @ e)
    if d2 < 1e-18:
        return 2.0 * e, 2.0 * np.eye(3)
    w = d2 * d2 + 1.0
    grad = (2.0 / w ** 1.5) * e
    gn = (2.0 / (w ** 2.5 * d2)) * np.outer(e, e)
    return grad, gn


def build_problem(x_t, local_set, track, config, stage_positions=None):
    """Assemble the control step's OCP around the current state.

    Per-stage corridor rows use the segment active at the predicted stage
    position (``stage_positions``, e.g. from the shifted previous solution);
    without predictions every stage uses the segment active at ``x_t``.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    if local_set.size < 1:
        raise ValueError("empty local convex set")
    N = config.N
    A_rows = np.empty((N, 3, 3))
    lo = np.empty((N, 3))
    hi = np.empty((N, 3))
    for k in range(N):
        if stage_positions is not None:
            p_k = np.asarray(stage_positions[min(k + 1, len(stage_positions) - 1)][0:3])
        else:
            p_k = x_t[0:3]
        seg_idx = track.active_segment(p_k)
        A_rows[k], lo[k], hi[k] = corridor_rows(
            p_k, track.segments[seg_idx], track.delta_for(seg_idx)
        )
    return OcpProblem(
        x0=x_t,
        N=N,
        dt=config.dt,
        local_set=local_set,
        corridor_A=A_rows,
        corridor_lo=lo,
        corridor_hi=hi,
        goal=np.asarray(track.goal, dtype=np.float64),
        Ru=config.Ru,
        params=config.params,
        stage_cost=config.stage_cost,
        reg=config.reg,
        kkt_tol=config.kkt_tol,
        rt_exit_tol=config.rt_exit_tol,
        qp_tol=config.qp_tol,
        qp_max_iter=config.qp_max_iter,
        max_sqp_iter=config.max_sqp_iter,
        rti_sqp_iter=config.rti_sqp_iter,
    )


def warm_start_shift(prev, dt, params, n_weights):
    """Shift a previous solution one stage forward as the next initial guess.

    Stages 1..N move to 0..N-1, the last input is duplicated, the last state
    is forward-integrated with it, and lambda restarts uniform over the new
    local set.
    """
    X, U = prev.X, prev.U
    N = U.shape[0]
    Xs = np.empty_like(X)
    Us = np.empty_like(U)
    Xs[:N] = X[1:]
    Us[:N - 1] = U[1:]
    Us[N - 1] = U[N - 1]
    Xs[N] = rk4_step(X[N], U[N - 1], dt, params)
    return WarmStart(Xs, Us, np.full(n_weights, 1.0 / n_weights))


class _Workspace:
    """Per-problem constants reused across SQP iterations."""

    def __init__(self, prob):
        N, P = prob.N, prob.P
        # condensed decision: inputs, lambda, then +/- coupling slacks
        self.off_l = U_DIM * N
        self.off_s = self.off_l + P
        self.n_w = self.off_s + 18
        # variable bounds (constant)
        self.lb = np.empty(self.n_w)
        self.ub = np.empty(self.n_w)
        self.lb[:self.off_l] = np.tile(prob.params.u_min, N)
        self.ub[:self.off_l] = np.tile(prob.params.u_max, N)
        self.lb[self.off_l:] = 0.0
        self.ub[self.off_l:] = np.inf
        # input-block Hessian diagonal (constant)
        self.hu_diag = np.tile(2.0 * prob.Ru + prob.reg, N)
        # terminal set pieces
        self.Spv = prob.local_set.states[:, 0:6]  # (P, 6)
        self.member_logs = np.array(
            [so3.quat_log(qm) for qm in prob.local_set.states[:, 6:10]]
        )
        # prediction matrices (refilled each SQP iteration)
        self.G = np.zeros((X_DIM * N, U_DIM * N))
        self.Phi = np.empty(X_DIM * N)
        self.As = np.empty((N, X_DIM, X_DIM))
        self.Bs = np.empty((N, X_DIM, U_DIM))


def _coupling_residual(ws, lam, qN):
    """3-D attitude error between the terminal state and the lambda blend."""
    q_set = so3.quat_exp(ws.member_logs.T @ lam)
    return so3.quat_log(so3.quat_multiply(so3.quat_conjugate(q_set), qN))


def _evaluate(prob, ws, X, U, lam):
    """Cost, dynamics defects, coupling/simplex residuals, corridor violation."""
    N = prob.N
    params = prob.params
    cost = float(prob.local_set.costs @ lam)
    F = np.empty((N, X_DIM))
    for k in range(N):
        F[k] = rk4_step(X[k], U[k], prob.dt, params)
        cost += float(U[k] @ (prob.Ru * U[k]))
        if prob.stage_cost == "sigmoid":
            cost += sigma_cost(X[k, 0:3], prob.goal)
    defects = F - X[1:]
    pv_res = X[N, 0:6] - ws.Spv.T @ lam
    q_res = _coupling_residual(ws, lam, X[N, 6:10])
    simplex_res = float(lam.sum()) - 1.0
    ap = np.einsum("kij,kj->ki", prob.corridor_A, X[1:, 0:3])
    corr_viol = np.maximum(ap - prob.corridor_hi, 0.0) + np.maximum(prob.corridor_lo - ap, 0.0)
    return cost, F, defects, pv_res, q_res, simplex_res, corr_viol


def _primal_infeasibility(defects, pv_res, q_res, simplex_res, corr_viol):
    return max(
        float(np.abs(defects).max(initial=0.0)),
        float(np.abs(pv_res).max(initial=0.0)),
        float(np.abs(q_res).max(initial=0.0)),
        abs(simplex_res),
        float(corr_viol.max(initial=0.0)),
    )


def _merit(cost, defects, pv_res, q_res, simplex_res, corr_viol, mu):
    return cost + mu * (
        float(np.abs(defects).sum())
        + float(np.abs(pv_res).sum())
        + float(np.abs(q_res).sum())
        + abs(simplex_res)
        + float(corr_viol.sum())
    )


def _linearize_coupling(ws, lam, qN):
    """FD Jacobians of the attitude coupling w.r.t. q_N (3x4) and lambda (3xP)."""
    P = lam.shape[0]
    Rq = np.empty((3, 4))
    for j in range(4):
        h = 1e-6 * max(1.0, abs(qN[j]))
        qp_ = qN.copy()
        qm_ = qN.copy()
        qp_[j] += h
        qm_[j] -= h
        Rq[:, j] = (_coupling_residual(ws, lam, qp_) - _coupling_residual(ws, lam, qm_)) / (2.0 * h)
    # lambda direction: vectorized over 2P perturbed tangent vectors
    L = ws.member_logs.T  # (3, P)
    w0 = L @ lam
    hs = 1e-6 * np.maximum(1.0, np.abs(lam))
    W = np.concatenate([(w0[:, None] + L * hs).T, (w0[:, None] - L * hs).T])  # (2P, 3)
    qs = so3.quat_exp_many(W)
    qs[:, 1:] *= -1.0  # conjugate
    prods = _quat_multiply_many(qs, qN)
    logs = _quat_log_many(prods)
    Rl = (logs[:P] - logs[P:]).T / (2.0 * hs)
    return Rq, Rl


def _quat_multiply_many(Q, q):
    """Hamilton products row-wise: Q[i] * q for an (n,4) array."""
    w1, x1, y1, z1 = Q[:, 0], Q[:, 1], Q[:, 2], Q[:, 3]
    w2, x2, y2, z2 = q
    return np.stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ], axis=1)


def _quat_log_many(Q):
    """Vectorized quat_log over rows (normalizes and flips w < 0)."""
    norms = np.linalg.norm(Q, axis=1, keepdims=True)
    Qn = Q / norms
    flip = Qn[:, 0] < 0.0
    Qn[flip] *= -1.0
    s = np.linalg.norm(Qn[:, 1:], axis=1)
    w = Qn[:, 0]
    factor = np.empty_like(s)
    small = s < 1e-9
    factor[small] = 2.0 / w[small]
    ns = ~small
    factor[ns] = 2.0 * np.arctan2(s[ns], w[ns]) / s[ns]
    return Qn[:, 1:] * factor[:, None]


def _build_prediction(prob, ws, X, U, F):
    """Condensing pass: x_j = Phi_j + G_j u given linearization at (X, U)."""
    N = prob.N
    for k in range(N):
        ws.As[k], ws.Bs[k] = _kernels.linearize(
            X[k], U[k], prob.dt, prob.params.mass, prob.params.gravity
        )
    G, Phi = ws.G, ws.Phi
    G[:X_DIM, :U_DIM] = ws.Bs[0]
    Phi[:X_DIM] = F[0] - ws.Bs[0] @ U[0]
    for j in range(1, N):
        r, rp = X_DIM * j, X_DIM * (j - 1)
        cj = F[j] - ws.As[j] @ X[j] - ws.Bs[j] @ U[j]
        Phi[r:r + X_DIM] = ws.As[j] @ Phi[rp:rp + X_DIM] + cj
        G[r:r + X_DIM, :U_DIM * j] = ws.As[j] @ G[rp:rp + X_DIM, :U_DIM * j]
        G[r:r + X_DIM, U_DIM * j:U_DIM * (j + 1)] = ws.Bs[j]


def _recover_costates(prob, ws, X_bar, x_star, qx, sol, Rq):
    """Backward recursion for the eliminated shooting multipliers.

    Condensing removes the shooting rows from the QP, but their multipliers
    (the costates) set the scale of the l1 merit weight, so rebuild them from
    stationarity of the full problem (model Hessian taken at the iterate
    ``X_bar``, where the QP was linearized).
    """
    N = prob.N
    grad = qx + prob.reg * x_star
    if prob.stage_cost == "sigmoid":
        for k in range(1, N):
            r = X_DIM * (k - 1)
            _, gn = _sigma_grad_gn(X_bar[k, 0:3], prob.goal)
            grad[r:r + 3] += gn @ x_star[r:r + 3]
    nu = sol.z_lo - sol.z_hi  # corridor duals, 3 per stage
    y_pv = sol.y[0:6]
    y_q = sol.y[6:9]
    t_contrib = np.zeros(X_DIM)
    t_contrib[0:6] = y_pv
    t_contrib[6:10] = Rq.T @ y_q
    y_max = max(float(np.abs(sol.y).max(initial=0.0)), float(np.abs(nu).max(initial=0.0)))
    y_next = None
    for j in range(N, 0, -1):
        r = X_DIM * (j - 1)
        acc = -grad[r:r + X_DIM]
        acc[0:3] += prob.corridor_A[j - 1].T @ nu[3 * (j - 1):3 * j]
        if j == N:
            acc -= t_contrib
        else:
            acc += ws.As[j].T @ y_next
        y_next = acc
        y_max = max(y_max, float(np.abs(acc).max(initial=0.0)))
    return y_max


def solve(prob, warm_start=None, real_time=False):
    """SQP solve of one control step's OCP.

    Real-time mode caps the SQP iterations (real-time-iteration style) and
    stops once the KKT residual is good enough to act on; otherwise iterate
    until it drops below tolerance or the iteration cap.
    """
    t0 = time.perf_counter()
    N, P = prob.N, prob.P
    params = prob.params
    ws = _Workspace(prob)
    nuu = ws.off_l
    n_w = ws.n_w

    # --- initial iterate ---------------------------------------------------
    if warm_start is None:
        U = np.tile(params.hover_input(), (N, 1))
        X = np.empty((N + 1, X_DIM))
        X[0] = prob.x0
        for k in range(N):
            X[k + 1] = rk4_step(X[k], U[k], prob.dt, params)
        lam = np.full(P, 1.0 / P)
    else:
        X = np.array(warm_start.X, dtype=np.float64)
        U = np.array(warm_start.U, dtype=np.float64)
        lam = np.array(warm_start.lam, dtype=np.float64)
        if X.shape != (N + 1, X_DIM) or U.shape != (N, U_DIM) or lam.shape != (P,):
            raise ValueError("warm start dimensions do not match the problem")
        X[0] = prob.x0
    U = np.clip(U, params.u_min, params.u_max)
    lam = np.maximum(lam, 0.0)
    lam = lam / lam.sum() if lam.sum() > 0 else np.full(P, 1.0 / P)

    max_iters = prob.rti_sqp_iter if real_time else prob.max_sqp_iter

    status = "max_iter"
    qp_iters_total = 0
    kkt = np.inf
    prev_duals = None

    cost, F, defects, pv_res, q_res, simplex_res, corr_viol = _evaluate(prob, ws, X, U, lam)

    it = 0
    for it in range(1, max_iters + 1):
        _build_prediction(prob, ws, X, U, F)
        G, Phi = ws.G, ws.Phi
        x_bar = X[1:].reshape(-1)

        # gradient pieces of the quadratic model (absolute variables):
        # over states qx = g_x - Hx x_bar, over inputs -reg*U, over lambda J - reg*lam
        qx = -prob.reg * x_bar
        HxG = prob.reg * G
        HxPhi = prob.reg * Phi
        if prob.stage_cost == "sigmoid":
            for k in range(1, N):
                r = X_DIM * (k - 1)
                grad, gn = _sigma_grad_gn(X[k, 0:3], prob.goal)
                qx[r:r + 3] += grad - gn @ X[k, 0:3]
                HxG[r:r + 3] += gn @ G[r:r + 3]
                HxPhi[r:r + 3] += gn @ Phi[r:r + 3]

        Hc = np.zeros((n_w, n_w))
        Hc[:nuu, :nuu] = G.T @ HxG
        idx = np.diag_indices(nuu)
        Hc[idx] = Hc[idx] + ws.hu_diag
        lidx = np.arange(nuu, n_w)
        Hc[lidx, lidx] += prob.reg
        qc = np.empty(n_w)
        qc[:nuu] = G.T @ (HxPhi + qx) - prob.reg * U.reshape(-1)
        qc[nuu:ws.off_s] = prob.local_set.costs - prob.reg * lam
        qc[ws.off_s:] = SOFT_PENALTY

        # terminal coupling (elastic) + simplex equalities, condensed variables
        Rq, Rl = _linearize_coupling(ws, lam, X[N, 6:10])
        rN = X_DIM * (N - 1)
        GN = G[rN:rN + X_DIM]
        PhiN = Phi[rN:rN + X_DIM]
        Aeq = np.zeros((10, n_w))
        beq = np.empty(10)
        Aeq[0:6, :nuu] = GN[0:6]
        Aeq[0:6, nuu:ws.off_s] = -ws.Spv.T
        beq[0:6] = -PhiN[0:6]
        Aeq[6:9, :nuu] = Rq @ GN[6:10]
        Aeq[6:9, nuu:ws.off_s] = Rl
        beq[6:9] = Rq @ (X[N, 6:10] - PhiN[6:10]) + Rl @ lam - q_res
        Aeq[9, nuu:ws.off_s] = 1.0
        beq[9] = 1.0
        for i in range(9):
            Aeq[i, ws.off_s + i] = -1.0
            Aeq[i, ws.off_s + 9 + i] = 1.0

        # corridor rows pushed through the prediction matrices
        C = np.zeros((3 * N, n_w))
        cl = np.empty(3 * N)
        cu = np.empty(3 * N)
        for k in range(N):
            r = X_DIM * k
            rc = 3 * k
            Ak = prob.corridor_A[k]
            C[rc:rc + 3, :nuu] = Ak @ G[r:r + 3]
            apk = Ak @ Phi[r:r + 3]
            cl[rc:rc + 3] = prob.corridor_lo[k] - apk
            cu[rc:rc + 3] = prob.corridor_hi[k] - apk

        w_bar = np.concatenate([U.reshape(-1), lam, np.zeros(18)])
        qp = QpSubproblem(Hc, qc, Aeq, beq, C, cl, cu, ws.lb, ws.ub)
        sol = qp_solve(qp, x0=w_bar, tol=prob.qp_tol, max_iter=prob.qp_max_iter,
                       polish=False, warm=True, duals=prev_duals)
        qp_iters_total += sol.iterations
        prev_duals = (sol.z_lo, sol.z_hi, sol.w_lo, sol.w_hi)
        usable = sol.status == "optimal" or (
            sol.status == "max_iter"
            and np.all(np.isfinite(sol.x))
            and sol.res_primal <= 1e-5
        )
        if not usable:
            status = "infeasible"
            break

        u_star = sol.x[:nuu]
        lam_star = sol.x[nuu:ws.off_s]
        x_star = Phi + G @ u_star
        step_X = x_star - x_bar
        step_U = u_star - U.reshape(-1)
        step_lam = lam_star - lam
        step_norm = max(
            float(np.abs(step_X).max(initial=0.0)),
            float(np.abs(step_U).max(initial=0.0)),
            float(np.abs(step_lam).max(initial=0.0)),
        )
        mult_max = max(sol.max_multiplier,
                       _recover_costates(prob, ws, X, x_star, qx, sol, Rq))
        mu_merit = max(1.0, 10.0 * mult_max)

        # --- l1 merit line search -------------------------------------------
        phi0 = _merit(cost, defects, pv_res, q_res, simplex_res, corr_viol, mu_merit)
        best = None
        for alpha in _ALPHAS:
            Xt = np.empty_like(X)
            Xt[0] = prob.x0
            Xt[1:] = (x_bar + alpha * step_X).reshape(N, X_DIM)
            Ut = (U.reshape(-1) + alpha * step_U).reshape(N, U_DIM)
            lamt = lam + alpha * step_lam
            trial = _evaluate(prob, ws, Xt, Ut, lamt)
            phi = _merit(trial[0], trial[2], trial[3], trial[4], trial[5], trial[6], mu_merit)
            if best is None or phi < best[0]:
                best = (phi, alpha, Xt, Ut, lamt, trial)
            if phi < phi0:
                break
        _, alpha, X, U, lam, trial = best
        cost, F, defects, pv_res, q_res, simplex_res, corr_viol = trial

        primal = _primal_infeasibility(defects, pv_res, q_res, simplex_res, corr_viol)
        scale = 1.0 + max(float(np.abs(U).max(initial=0.0)), float(np.abs(X).max(initial=0.0)))
        kkt = max(primal, alpha * step_norm / scale)
        if kkt <= prob.kkt_tol:
            status = "converged"
            break
        if real_time and kkt <= prob.rt_exit_tol:
            break  # good enough to act on within the control period

    U = np.clip(U, params.u_min, params.u_max)
    stats = SolveStats(
        sqp_iters=it,
        qp_iters=qp_iters_total,
        kkt_residual=float(kkt),
        solve_time=time.perf_counter() - t0,
        status=status,
    )
    return OcpSolution(X=X, U=U, lam=lam, cost=float(cost), stats=stats)
