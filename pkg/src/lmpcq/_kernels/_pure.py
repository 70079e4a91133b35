"""Pure-Python fallback for the numeric kernels.

Mirrors ``lmpcq._kernels._core`` (the compiled extension) operation by
operation; the dispatcher in ``lmpcq._kernels`` picks whichever backend is
available.  Scalar math is deliberate: at these sizes (10-state rigid body)
unpacking to floats is both faster than small-array numpy and keeps the code
in lockstep with the C loops.
"""

import numpy as np

from lmpcq.errors import DegenerateQuaternionError

BACKEND = "pure"

# squared-norm guard below which a quaternion no longer defines a rotation
EPS_QUAT_SQ = 1e-6


def _rot_cols(w, x, y, z):
    """Rows of the homogeneous rotation matrix Q(q), not yet divided by |q|^2."""
    return (
        w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), w * w - x * x - y * y + z * z,
    )


def rotmat(q):
    """Rotation matrix of a (possibly non-unit) quaternion: Q(q)/|q|^2."""
    w, x, y, z = q[0], q[1], q[2], q[3]
    n2 = w * w + x * x + y * y + z * z
    if n2 <= EPS_QUAT_SQ:
        raise DegenerateQuaternionError(f"quaternion norm^2 {n2:g} <= {EPS_QUAT_SQ:g}")
    m = _rot_cols(w, x, y, z)
    return np.array(m, dtype=np.float64).reshape(3, 3) / n2


def rotate(q, v):
    """Rotate a 3-vector by the quaternion's rotation matrix."""
    R = rotmat(q)
    return R @ np.asarray(v, dtype=np.float64)


def _rhs(x, u, m, g):
    """Scalar-tuple right-hand side of the rigid-body ODE."""
    vx, vy, vz = x[3], x[4], x[5]
    qw, qx, qy, qz = x[6], x[7], x[8], x[9]
    n2 = qw * qw + qx * qx + qy * qy + qz * qz
    if n2 <= EPS_QUAT_SQ:
        raise DegenerateQuaternionError(f"quaternion norm^2 {n2:g} <= {EPS_QUAT_SQ:g}")
    f, wx, wy, wz = u[0], u[1], u[2], u[3]
    # thrust direction = body z axis in world frame = third column of Q(q)/|q|^2
    s = f / (m * n2)
    ax = s * 2.0 * (qx * qz + qw * qy)
    ay = s * 2.0 * (qy * qz - qw * qx)
    az = s * (qw * qw - qx * qx - qy * qy + qz * qz) - g
    # qdot = 0.5 * Lambda(Omega) q
    dqw = 0.5 * (-wx * qx - wy * qy - wz * qz)
    dqx = 0.5 * (wx * qw + wz * qy - wy * qz)
    dqy = 0.5 * (wy * qw - wz * qx + wx * qz)
    dqz = 0.5 * (wz * qw + wy * qx - wx * qy)
    return (vx, vy, vz, ax, ay, az, dqw, dqx, dqy, dqz)


def dyn_rhs(x, u, m, g):
    """Continuous dynamics xdot = f(x, u) as a length-10 array."""
    return np.array(_rhs(x, u, m, g), dtype=np.float64)


def _rk4(x, u, dt, m, g):
    k1 = _rhs(x, u, m, g)
    x2 = tuple(x[i] + 0.5 * dt * k1[i] for i in range(10))
    k2 = _rhs(x2, u, m, g)
    x3 = tuple(x[i] + 0.5 * dt * k2[i] for i in range(10))
    k3 = _rhs(x3, u, m, g)
    x4 = tuple(x[i] + dt * k3[i] for i in range(10))
    k4 = _rhs(x4, u, m, g)
    c = dt / 6.0
    return tuple(x[i] + c * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) for i in range(10))


def rk4_step(x, u, dt, m, g):
    """One classic Runge-Kutta-4 step; the quaternion is not renormalized."""
    return np.array(_rk4(tuple(x), tuple(u), dt, m, g), dtype=np.float64)


def rollout(x0, U, dt, m, g):
    """Integrate a whole input sequence; returns (N+1, 10) states."""
    U = np.asarray(U, dtype=np.float64)
    N = U.shape[0]
    out = np.empty((N + 1, 10), dtype=np.float64)
    cur = tuple(float(c) for c in x0)
    out[0] = cur
    for k in range(N):
        cur = _rk4(cur, tuple(U[k]), dt, m, g)
        out[k + 1] = cur
    return out


def linearize(x, u, dt, m, g):
    """Central finite-difference Jacobians (A, B) of the RK4 step map."""
    x = tuple(float(c) for c in x)
    u = tuple(float(c) for c in u)
    A = np.empty((10, 10), dtype=np.float64)
    B = np.empty((10, 4), dtype=np.float64)
    for j in range(10):
        h = 1e-6 * max(1.0, abs(x[j]))
        xp = list(x)
        xp[j] = x[j] + h
        xm = list(x)
        xm[j] = x[j] - h
        fp = _rk4(tuple(xp), u, dt, m, g)
        fm = _rk4(tuple(xm), u, dt, m, g)
        for i in range(10):
            A[i, j] = (fp[i] - fm[i]) / (2.0 * h)
    for j in range(4):
        h = 1e-6 * max(1.0, abs(u[j]))
        up = list(u)
        up[j] = u[j] + h
        um = list(u)
        um[j] = u[j] - h
        fp = _rk4(x, tuple(up), dt, m, g)
        fm = _rk4(x, tuple(um), dt, m, g)
        for i in range(10):
            B[i, j] = (fp[i] - fm[i]) / (2.0 * h)
    return A, B


def substeps(x, u, dt, nsub, m, g):
    """Integrate one period dt with nsub uniform RK4 substeps (plant fidelity)."""
    h = dt / nsub
    cur = tuple(float(c) for c in x)
    uu = tuple(float(c) for c in u)
    for _ in range(nsub):
        cur = _rk4(cur, uu, h, m, g)
    return np.array(cur, dtype=np.float64)
