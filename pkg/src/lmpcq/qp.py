"""Dense convex QP solver: primal-dual interior point, predictor-corrector.

Solves
    minimize    0.5 x'Hx + g'x
    subject to  A x = b
                cl <= C x <= cu     (either side may be +-inf)
                lb <=   x <= ub     (variable bounds, +-inf allowed)

H must be symmetric positive semidefinite.  Each Newton step reduces to the
augmented system [[K, A'], [A, 0]] with K = H + C'DC + E (D, E barrier
diagonals), solved by Cholesky of K plus a Schur complement in the equality
multipliers, with an LU fallback and one step of iterative refinement when
the barrier makes K ill-conditioned.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100

# fraction-to-boundary factor for combined primal-dual steps
_TAU = 0.995


@dataclass
class QpSubproblem:
    H: np.ndarray
    g: np.ndarray
    A: np.ndarray = None
    b: np.ndarray = None
    C: np.ndarray = None
    cl: np.ndarray = None
    cu: np.ndarray = None
    lb: np.ndarray = None
    ub: np.ndarray = None

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=np.float64)
        self.g = np.asarray(self.g, dtype=np.float64)
        n = self.g.shape[0]
        if self.H.shape != (n, n):
            raise ValueError(f"H must be ({n},{n}), got {self.H.shape}")
        if (self.A is None) != (self.b is None):
            raise ValueError("A and b must be given together")
        if self.A is not None:
            self.A = np.asarray(self.A, dtype=np.float64)
            self.b = np.asarray(self.b, dtype=np.float64)
            if self.A.ndim != 2 or self.A.shape[1] != n or self.b.shape != (self.A.shape[0],):
                raise ValueError(f"bad equality shapes {self.A.shape}, {self.b.shape}")
        if self.C is not None:
            self.C = np.asarray(self.C, dtype=np.float64)
            mc = self.C.shape[0]
            self.cl = np.full(mc, -np.inf) if self.cl is None else np.asarray(self.cl, dtype=np.float64)
            self.cu = np.full(mc, np.inf) if self.cu is None else np.asarray(self.cu, dtype=np.float64)
            if self.C.shape[1] != n or self.cl.shape != (mc,) or self.cu.shape != (mc,):
                raise ValueError("bad inequality-row shapes")
            if np.any(self.cl > self.cu):
                raise ValueError("cl > cu on some row")
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=np.float64)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=np.float64)
        if self.lb.shape != (n,) or self.ub.shape != (n,) or np.any(self.lb > self.ub):
            raise ValueError("bad variable bounds")

    @property
    def n(self):
        return self.g.shape[0]


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray  # equality multipliers
    z_lo: np.ndarray  # row lower-side multipliers (>= 0)
    z_hi: np.ndarray  # row upper-side multipliers (>= 0)
    w_lo: np.ndarray  # bound lower-side multipliers (>= 0)
    w_hi: np.ndarray  # bound upper-side multipliers (>= 0)
    status: str  # "optimal" | "max_iter" | "infeasible"
    iterations: int
    mu: float
    res_primal: float
    res_dual: float

    @property
    def max_multiplier(self):
        parts = [self.y, self.z_lo, self.z_hi, self.w_lo, self.w_hi]
        vals = [float(np.abs(p).max()) for p in parts if p.size]
        return max(vals) if vals else 0.0


class _KktSolver:
    """Factorization of [[K, A'], [A, 0]]: Cholesky+Schur with LU fallback."""

    def __init__(self, K, A):
        self.K = K
        self.A = A
        self.me = 0 if A is None else A.shape[0]
        self.mode = "chol"
        try:
            self.cho = sla.cho_factor(K, lower=True, check_finite=False)
            if self.me:
                self.X = sla.cho_solve(self.cho, A.T, check_finite=False)
                S = A @ self.X
                self.cho_s = sla.cho_factor(S, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            self._lu_setup()

    def _lu_setup(self):
        self.mode = "lu"
        n = self.K.shape[0]
        full = np.zeros((n + self.me, n + self.me))
        full[:n, :n] = self.K
        if self.me:
            full[:n, n:] = self.A.T
            full[n:, :n] = self.A
        self.lu = sla.lu_factor(full, check_finite=False)

    def _solve_once(self, r1, r2):
        if self.mode == "lu":
            rhs = r1 if self.me == 0 else np.concatenate([r1, r2])
            sol = sla.lu_solve(self.lu, rhs, check_finite=False)
            n = self.K.shape[0]
            return (sol, np.zeros(0)) if self.me == 0 else (sol[:n], sol[n:])
        u = sla.cho_solve(self.cho, r1, check_finite=False)
        if self.me == 0:
            return u, np.zeros(0)
        dy = sla.cho_solve(self.cho_s, self.A @ u - r2, check_finite=False)
        return u - self.X @ dy, dy

    def solve(self, r1, r2):
        dx, dy = self._solve_once(r1, r2)
        # one refinement pass guards against barrier-induced ill-conditioning
        e1 = r1 - self.K @ dx
        if self.me:
            e1 -= self.A.T @ dy
            e2 = r2 - self.A @ dx
        else:
            e2 = np.zeros(0)
        scale = max(1.0, float(np.abs(r1).max(initial=0.0)), float(np.abs(r2).max(initial=0.0)))
        if max(np.abs(e1).max(initial=0.0), np.abs(e2).max(initial=0.0)) > 1e-11 * scale:
            cx, cy = self._solve_once(e1, e2)
            dx = dx + cx
            dy = dy + cy
        return dx, dy


def qp_solve(qp, x0=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, polish=True,
             warm=False, duals=None):
    """Predictor-corrector interior-point solve of a QpSubproblem.

    With ``warm=True`` and an ``x0`` the barrier slacks start from the actual
    constraint slacks (floored away from zero) instead of the unit cold
    start, and ``duals`` — a previous solution's (z_lo, z_hi, w_lo, w_hi) —
    seeds the multipliers.  Useful when re-solving a slightly perturbed
    problem, as in an SQP loop.
    """
    H, g = qp.H, qp.g
    n = qp.n
    A, b = qp.A, qp.b
    me = 0 if A is None else A.shape[0]
    C = qp.C if qp.C is not None else np.zeros((0, n))
    cl = qp.cl if qp.C is not None else np.zeros(0)
    cu = qp.cu if qp.C is not None else np.zeros(0)
    mc = C.shape[0]
    lb, ub = qp.lb, qp.ub

    has_cl = np.isfinite(cl)
    has_cu = np.isfinite(cu)
    has_lb = np.isfinite(lb)
    has_ub = np.isfinite(ub)
    m_total = int(has_cl.sum() + has_cu.sum() + has_lb.sum() + has_ub.sum())

    scale = 1.0 + max(
        float(np.abs(g).max(initial=0.0)),
        float(np.abs(b).max(initial=0.0)) if me else 0.0,
        float(np.abs(cl[has_cl]).max(initial=0.0)),
        float(np.abs(cu[has_cu]).max(initial=0.0)),
        float(np.abs(lb[has_lb]).max(initial=0.0)),
        float(np.abs(ub[has_ub]).max(initial=0.0)),
    )

    def finish(x, y, z_lo, z_hi, w_lo, w_hi, status, it, mu, rp, rd):
        return QpSolution(x, y, z_lo, z_hi, w_lo, w_hi, status, it, mu, rp, rd)

    if m_total == 0:
        # equality-constrained (or unconstrained) QP: single KKT solve
        try:
            kkt = _KktSolver(H + 1e-14 * np.eye(n), A)
            x, y = kkt.solve(-g, b if me else np.zeros(0))
        except (np.linalg.LinAlgError, ValueError):
            return finish(np.zeros(n), np.zeros(me), np.zeros(0), np.zeros(0),
                          np.zeros(0), np.zeros(0), "infeasible", 0, 0.0, np.inf, np.inf)
        rd = float(np.abs(H @ x + g + (A.T @ y if me else 0.0)).max(initial=0.0))
        rp = float(np.abs(A @ x - b).max(initial=0.0)) if me else 0.0
        ok = max(rd, rp) <= 1e-6 * scale
        return finish(x, y, np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0),
                      "optimal" if ok else "infeasible", 1, 0.0, rp, rd)

    # --- starting point ---------------------------------------------------
    if x0 is not None:
        x = np.array(x0, dtype=np.float64)
    else:
        x = np.zeros(n)
    y = np.zeros(me)

    if warm and x0 is not None:
        # slacks from the guess itself, kept safely interior
        floor = 1e-3
        cx = C @ x if mc else np.zeros(0)
        s_lo = np.where(has_cl, np.maximum(cx - cl, floor), 1.0)
        s_hi = np.where(has_cu, np.maximum(cu - cx, floor), 1.0)
        t_lo = np.where(has_lb, np.maximum(x - lb, floor), 1.0)
        t_hi = np.where(has_ub, np.maximum(ub - x, floor), 1.0)
        mu_w = 1e-2 * scale
        if duals is not None:
            dz_lo, dz_hi, dw_lo, dw_hi = duals
            z_lo = np.where(has_cl, np.maximum(dz_lo, mu_w / np.maximum(s_lo, 1.0)), 0.0)
            z_hi = np.where(has_cu, np.maximum(dz_hi, mu_w / np.maximum(s_hi, 1.0)), 0.0)
            w_lo = np.where(has_lb, np.maximum(dw_lo, mu_w / np.maximum(t_lo, 1.0)), 0.0)
            w_hi = np.where(has_ub, np.maximum(dw_hi, mu_w / np.maximum(t_hi, 1.0)), 0.0)
        else:
            z_lo = np.where(has_cl, mu_w / s_lo, 0.0)
            z_hi = np.where(has_cu, mu_w / s_hi, 0.0)
            w_lo = np.where(has_lb, mu_w / t_lo, 0.0)
            w_hi = np.where(has_ub, mu_w / t_hi, 0.0)
    else:
        both = has_lb & has_ub
        x[both] = np.clip(x[both], lb[both] + 0.1 * (ub[both] - lb[both]),
                          ub[both] - 0.1 * (ub[both] - lb[both]))
        lo_only = has_lb & ~has_ub
        hi_only = has_ub & ~has_lb
        x[lo_only] = np.maximum(x[lo_only], lb[lo_only] + 1.0)
        x[hi_only] = np.minimum(x[hi_only], ub[hi_only] - 1.0)
        cx = C @ x if mc else np.zeros(0)
        s_lo = np.where(has_cl, np.maximum(cx - cl, 1.0), 1.0)
        s_hi = np.where(has_cu, np.maximum(cu - cx, 1.0), 1.0)
        t_lo = np.where(has_lb, np.maximum(x - lb, 1.0), 1.0)
        t_hi = np.where(has_ub, np.maximum(ub - x, 1.0), 1.0)
        z_lo = np.where(has_cl, 1.0, 0.0)
        z_hi = np.where(has_cu, 1.0, 0.0)
        w_lo = np.where(has_lb, 1.0, 0.0)
        w_hi = np.where(has_ub, 1.0, 0.0)

    # absent sides carry unit slack / zero dual and never enter products below
    s_lo[~has_cl] = 1.0
    s_hi[~has_cu] = 1.0
    t_lo[~has_lb] = 1.0
    t_hi[~has_ub] = 1.0

    mu0 = None
    best_mu = np.inf
    status = "max_iter"
    it = 0

    for it in range(1, max_iter + 1):
        cx = C @ x if mc else np.zeros(0)
        r_d = H @ x + g
        if me:
            r_d += A.T @ y
        if mc:
            r_d -= C.T @ (z_lo - z_hi)
        r_d -= w_lo - w_hi
        r_A = (A @ x - b) if me else np.zeros(0)
        r_sl = np.where(has_cl, cx - s_lo - cl, 0.0)
        r_su = np.where(has_cu, cx + s_hi - cu, 0.0)
        r_tl = np.where(has_lb, x - t_lo - lb, 0.0)
        r_tu = np.where(has_ub, x + t_hi - ub, 0.0)

        gap = (np.sum(s_lo * z_lo * has_cl) + np.sum(s_hi * z_hi * has_cu)
               + np.sum(t_lo * w_lo * has_lb) + np.sum(t_hi * w_hi * has_ub))
        mu = gap / m_total
        if mu0 is None:
            mu0 = max(mu, 1.0)
        best_mu = min(best_mu, mu)

        res_p = max(np.abs(r_A).max(initial=0.0), np.abs(r_sl).max(initial=0.0),
                    np.abs(r_su).max(initial=0.0), np.abs(r_tl).max(initial=0.0),
                    np.abs(r_tu).max(initial=0.0))
        res_d = np.abs(r_d).max(initial=0.0)
        if mu <= tol * scale and res_p <= tol * scale and res_d <= tol * scale:
            status = "optimal"
            break
        if mu > 1e8 * mu0 or not np.isfinite(mu):
            status = "infeasible"
            break

        D_lo = np.where(has_cl, z_lo / s_lo, 0.0)
        D_hi = np.where(has_cu, z_hi / s_hi, 0.0)
        E_lo = np.where(has_lb, w_lo / t_lo, 0.0)
        E_hi = np.where(has_ub, w_hi / t_hi, 0.0)

        K = H.copy()
        K[np.diag_indices_from(K)] += E_lo + E_hi
        if mc:
            D = D_lo + D_hi
            K += (C.T * D) @ C
        try:
            kkt = _KktSolver(K, A)
        except (np.linalg.LinAlgError, ValueError):
            status = "infeasible"
            break

        def direction(rc_sl, rc_su, rc_tl, rc_tu):
            rhs1 = -r_d.copy()
            if mc:
                rhs1 += C.T @ np.where(has_cl, rc_sl / s_lo - D_lo * r_sl, 0.0)
                rhs1 -= C.T @ np.where(has_cu, rc_su / s_hi + D_hi * r_su, 0.0)
            rhs1 += np.where(has_lb, rc_tl / t_lo - E_lo * r_tl, 0.0)
            rhs1 -= np.where(has_ub, rc_tu / t_hi + E_hi * r_tu, 0.0)
            dx, dy = kkt.solve(rhs1, -r_A if me else np.zeros(0))
            cdx = C @ dx if mc else np.zeros(0)
            ds_lo = np.where(has_cl, cdx + r_sl, 0.0)
            dz_lo = np.where(has_cl, (rc_sl - z_lo * ds_lo) / s_lo, 0.0)
            ds_hi = np.where(has_cu, -cdx - r_su, 0.0)
            dz_hi = np.where(has_cu, (rc_su - z_hi * ds_hi) / s_hi, 0.0)
            dt_lo = np.where(has_lb, dx + r_tl, 0.0)
            dw_lo = np.where(has_lb, (rc_tl - w_lo * dt_lo) / t_lo, 0.0)
            dt_hi = np.where(has_ub, -dx - r_tu, 0.0)
            dw_hi = np.where(has_ub, (rc_tu - w_hi * dt_hi) / t_hi, 0.0)
            return dx, dy, ds_lo, dz_lo, ds_hi, dz_hi, dt_lo, dw_lo, dt_hi, dw_hi

        def max_step(ds_lo, dz_lo, ds_hi, dz_hi, dt_lo, dw_lo, dt_hi, dw_hi):
            alpha = 1.0
            for val, dval, mask in (
                (s_lo, ds_lo, has_cl), (z_lo, dz_lo, has_cl),
                (s_hi, ds_hi, has_cu), (z_hi, dz_hi, has_cu),
                (t_lo, dt_lo, has_lb), (w_lo, dw_lo, has_lb),
                (t_hi, dt_hi, has_ub), (w_hi, dw_hi, has_ub),
            ):
                neg = mask & (dval < 0.0)
                if neg.any():
                    alpha = min(alpha, float((-val[neg] / dval[neg]).min()))
            return alpha

        # predictor (affine scaling)
        aff = direction(-s_lo * z_lo, -s_hi * z_hi, -t_lo * w_lo, -t_hi * w_hi)
        a_aff = max_step(*aff[2:])
        gap_aff = (np.sum((s_lo + a_aff * aff[2]) * (z_lo + a_aff * aff[3]) * has_cl)
                   + np.sum((s_hi + a_aff * aff[4]) * (z_hi + a_aff * aff[5]) * has_cu)
                   + np.sum((t_lo + a_aff * aff[6]) * (w_lo + a_aff * aff[7]) * has_lb)
                   + np.sum((t_hi + a_aff * aff[8]) * (w_hi + a_aff * aff[9]) * has_ub))
        mu_aff = max(gap_aff / m_total, 0.0)
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

        # corrector (centering + second-order term)
        step = direction(
            sigma * mu - s_lo * z_lo - aff[2] * aff[3],
            sigma * mu - s_hi * z_hi - aff[4] * aff[5],
            sigma * mu - t_lo * w_lo - aff[6] * aff[7],
            sigma * mu - t_hi * w_hi - aff[8] * aff[9],
        )
        # step closer to the boundary as the gap closes (sharpens the tail)
        tau = max(_TAU, 1.0 - 10.0 * mu / mu0)
        alpha = tau * max_step(*step[2:])
        alpha = min(alpha, 1.0)

        x = x + alpha * step[0]
        if me:
            y = y + alpha * step[1]
        s_lo = s_lo + alpha * step[2]
        z_lo = z_lo + alpha * step[3]
        s_hi = s_hi + alpha * step[4]
        z_hi = z_hi + alpha * step[5]
        t_lo = t_lo + alpha * step[6]
        w_lo = w_lo + alpha * step[7]
        t_hi = t_hi + alpha * step[8]
        w_hi = w_hi + alpha * step[9]

    z_lo_out = np.where(has_cl, z_lo, 0.0)
    z_hi_out = np.where(has_cu, z_hi, 0.0)
    w_lo_out = np.where(has_lb, w_lo, 0.0)
    w_hi_out = np.where(has_ub, w_hi, 0.0)
    sol = finish(x, y, z_lo_out, z_hi_out, w_lo_out, w_hi_out, status, it,
                 float(mu), float(res_p), float(res_d))
    if polish and status == "optimal":
        _polish(qp, sol, scale)
    return sol


def _polish(qp, sol, scale):
    """Refine an optimal iterate by solving the active-set KKT system once.

    Slack/dual pairs are split by magnitude (dual > slack => active).  The
    polished point replaces the iterate only if it passes a full KKT check,
    so failure here is harmless.
    """
    H, g, A, b = qp.H, qp.g, qp.A, qp.b
    n = qp.n
    me = 0 if A is None else A.shape[0]
    rows, rhs, tags = [], [], []
    if qp.C is not None:
        cx = qp.C @ sol.x
        for i in range(qp.C.shape[0]):
            if np.isfinite(qp.cl[i]) and sol.z_lo[i] > cx[i] - qp.cl[i]:
                rows.append(qp.C[i])
                rhs.append(qp.cl[i])
                tags.append((sol.z_lo, i, -1.0))
            elif np.isfinite(qp.cu[i]) and sol.z_hi[i] > qp.cu[i] - cx[i]:
                rows.append(qp.C[i])
                rhs.append(qp.cu[i])
                tags.append((sol.z_hi, i, 1.0))
    for j in range(n):
        if np.isfinite(qp.lb[j]) and sol.w_lo[j] > sol.x[j] - qp.lb[j]:
            ej = np.zeros(n)
            ej[j] = 1.0
            rows.append(ej)
            rhs.append(qp.lb[j])
            tags.append((sol.w_lo, j, -1.0))
        elif np.isfinite(qp.ub[j]) and sol.w_hi[j] > qp.ub[j] - sol.x[j]:
            ej = np.zeros(n)
            ej[j] = 1.0
            rows.append(ej)
            rhs.append(qp.ub[j])
            tags.append((sol.w_hi, j, 1.0))
    ma = len(rows)
    k = n + me + ma
    KKT = np.zeros((k, k))
    KKT[:n, :n] = H
    if me:
        KKT[:n, n:n + me] = A.T
        KKT[n:n + me, :n] = A
    if ma:
        Act = np.vstack(rows)
        # stationarity: Hx + g + A'y + sign * Act' nu = 0 with nu >= 0
        KKT[:n, n + me:] = (Act * np.array([t[2] for t in tags])[:, None]).T
        KKT[n + me:, :n] = Act
    full_rhs = np.concatenate([-g, b if me else np.zeros(0), np.asarray(rhs)])
    try:
        sol_v = sla.lu_solve(sla.lu_factor(KKT, check_finite=False), full_rhs,
                             check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        return
    if not np.all(np.isfinite(sol_v)):
        return
    x = sol_v[:n]
    duals = sol_v[n + me:]
    tol = 1e-9 * scale
    if duals.size and float(duals.min(initial=0.0)) < -tol:
        return
    if np.any(x < qp.lb - tol) or np.any(x > qp.ub + tol):
        return
    if qp.C is not None:
        cx = qp.C @ x
        if np.any(cx < qp.cl - tol) or np.any(cx > qp.cu + tol):
            return
    sol.x = x
    if me:
        sol.y = sol_v[n:n + me]
    sol.z_lo = np.zeros_like(sol.z_lo)
    sol.z_hi = np.zeros_like(sol.z_hi)
    sol.w_lo = np.zeros_like(sol.w_lo)
    sol.w_hi = np.zeros_like(sol.w_hi)
    for (vec, idx, _sign), v in zip(tags, duals):
        vec[idx] = max(float(v), 0.0)


def solve_qp(H, g, A=None, b=None, C=None, cl=None, cu=None, lb=None, ub=None,
             **kwargs):
    """Convenience wrapper building a QpSubproblem and solving it."""
    return qp_solve(QpSubproblem(H, g, A, b, C, cl, cu, lb, ub), **kwargs)
