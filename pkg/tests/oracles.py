"""Independent reference implementations used to cross-check the package.

Everything here is deliberately written from first principles (enumeration,
sorting, closed forms) rather than reusing package internals, so agreement
is meaningful.
"""

import itertools

import numpy as np


def solve_qp_enumerate(H, g, A, b, C, d):
    """Global minimum of 1/2 x'Hx + g'x s.t. Ax = b, Cx <= d.

    Brute force over all active sets of the inequality rows; valid for
    strictly convex H.  Returns the best feasible KKT point.
    """
    n = g.size
    m = C.shape[0] if C is not None else 0
    best_x, best_val = None, np.inf
    for mask in itertools.product((False, True), repeat=m):
        rows = [A] if A is not None else []
        if any(mask):
            rows.append(C[np.asarray(mask)])
        if rows:
            E = np.vstack(rows)
            rhs = np.concatenate([b if A is not None else np.zeros(0),
                                  d[np.asarray(mask)] if any(mask) else np.zeros(0)])
            K = np.block([[H, E.T], [E, np.zeros((E.shape[0], E.shape[0]))]])
            kr = np.concatenate([-g, rhs])
            sol, *_ = np.linalg.lstsq(K, kr, rcond=None)
            if np.linalg.norm(K @ sol - kr) > 1e-8:
                continue  # inconsistent / rank-deficient active set
            x, nu = sol[:n], sol[n:]
            n_eq = A.shape[0] if A is not None else 0
            if np.any(nu[n_eq:] < -1e-9):
                continue  # active inequality with wrong-sign multiplier
        else:
            x = np.linalg.solve(H, -g)
        if C is not None and np.any(C @ x > d + 1e-9):
            continue
        if A is not None and np.linalg.norm(A @ x - b) > 1e-9:
            continue
        val = 0.5 * x @ H @ x + g @ x
        if val < best_val - 1e-12:
            best_val, best_x = val, x
    return best_x, best_val


def project_simplex(c):
    """Euclidean projection onto the probability simplex (sort algorithm)."""
    c = np.asarray(c, dtype=np.float64)
    u = np.sort(c)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, c.size + 1)
    rho = np.nonzero(u + (1.0 - css) / idx > 0)[0][-1]
    theta = (1.0 - css[rho]) / (rho + 1.0)
    return np.maximum(c + theta, 0.0)


def geodesic_angle(q1, q2):
    """Rotation angle between two (possibly non-unit) quaternions."""
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    c = abs(q1 @ q2) / (np.linalg.norm(q1) * np.linalg.norm(q2))
    return 2.0 * np.arccos(min(c, 1.0))


def knn_bruteforce(states, seed, n, w_vel=0.2, w_att=0.1):
    """Indices of the n nearest states under the weighted metric.

    d^2 = |dp|^2 + w_vel |dv|^2 + w_att angle^2, ties broken by smaller
    time index; result in time order (to match the package convention).
    """
    d2 = []
    for t in range(states.shape[0]):
        dp = states[t, 0:3] - seed[0:3]
        dv = states[t, 3:6] - seed[3:6]
        ang = geodesic_angle(seed[6:10], states[t, 6:10])
        d2.append(dp @ dp + w_vel * (dv @ dv) + w_att * ang * ang)
    order = sorted(range(states.shape[0]), key=lambda t: (d2[t], t))[:n]
    return sorted(order)


def least_norm_thrust(z0, v0, zT, vT, N, dt, m, g):
    """Minimum sum-of-squares thrust profile steering a vertical double
    integrator (a = f/m - g) from (z0, v0) to (zT, vT) in N steps.

    The zero-order-hold flow is polynomial, so this is exact for RK4 too.
    Returns the thrust sequence (length N).
    """
    # [z_N, v_N] = depends linearly on the per-step accelerations
    Ma = np.zeros((2, N))
    for k in range(N):
        Ma[0, k] = dt * dt * (0.5 + (N - 1 - k))  # position gain of a_k
        Ma[1, k] = dt
    drift = np.array([z0 + N * dt * v0, v0])
    Mf = Ma / m
    offset = drift - Ma @ (g * np.ones(N))
    target = np.array([zT, vT])
    # min f'f  s.t.  Mf f = target - offset
    f = Mf.T @ np.linalg.solve(Mf @ Mf.T, target - offset)
    return f


def rotation_matrix_from_quat(q):
    """Homogeneous quaternion-to-rotation map, written out directly."""
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ])
