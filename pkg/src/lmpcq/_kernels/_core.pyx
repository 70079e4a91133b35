# Compiled numeric kernels: rigid-body dynamics, RK4 integration and its
# finite-difference linearization.  Must stay in lockstep with
# lmpcq._kernels._pure, which is the fallback backend and the reference for
# the parity tests.

import numpy as np

cimport numpy as cnp

from libc.math cimport fabs

from lmpcq.errors import DegenerateQuaternionError

BACKEND = "compiled"

EPS_QUAT_SQ = 1e-6

cdef double _EPS_Q2 = 1e-6


cdef inline int _rhs(const double* x, const double* u, double m, double g,
                     double* out) except -1:
    cdef double vx = x[3], vy = x[4], vz = x[5]
    cdef double qw = x[6], qx = x[7], qy = x[8], qz = x[9]
    cdef double n2 = qw * qw + qx * qx + qy * qy + qz * qz
    if n2 <= _EPS_Q2:
        raise DegenerateQuaternionError("quaternion norm^2 %g <= %g" % (n2, _EPS_Q2))
    cdef double f = u[0], wx = u[1], wy = u[2], wz = u[3]
    cdef double s = f / (m * n2)
    out[0] = vx
    out[1] = vy
    out[2] = vz
    out[3] = s * 2.0 * (qx * qz + qw * qy)
    out[4] = s * 2.0 * (qy * qz - qw * qx)
    out[5] = s * (qw * qw - qx * qx - qy * qy + qz * qz) - g
    out[6] = 0.5 * (-wx * qx - wy * qy - wz * qz)
    out[7] = 0.5 * (wx * qw + wz * qy - wy * qz)
    out[8] = 0.5 * (wy * qw - wz * qx + wx * qz)
    out[9] = 0.5 * (wz * qw + wy * qx - wx * qy)
    return 0


cdef inline int _rk4(const double* x, const double* u, double dt, double m,
                     double g, double* out) except -1:
    cdef double k1[10]
    cdef double k2[10]
    cdef double k3[10]
    cdef double k4[10]
    cdef double tmp[10]
    cdef double c = dt / 6.0
    cdef int i
    _rhs(x, u, m, g, k1)
    for i in range(10):
        tmp[i] = x[i] + 0.5 * dt * k1[i]
    _rhs(tmp, u, m, g, k2)
    for i in range(10):
        tmp[i] = x[i] + 0.5 * dt * k2[i]
    _rhs(tmp, u, m, g, k3)
    for i in range(10):
        tmp[i] = x[i] + dt * k3[i]
    _rhs(tmp, u, m, g, k4)
    for i in range(10):
        out[i] = x[i] + c * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return 0


def rotmat(q):
    """Rotation matrix of a (possibly non-unit) quaternion: Q(q)/|q|^2."""
    cdef double w = q[0], x = q[1], y = q[2], z = q[3]
    cdef double n2 = w * w + x * x + y * y + z * z
    if n2 <= _EPS_Q2:
        raise DegenerateQuaternionError("quaternion norm^2 %g <= %g" % (n2, _EPS_Q2))
    out = np.empty((3, 3), dtype=np.float64)
    cdef double[:, ::1] R = out
    R[0, 0] = (w * w + x * x - y * y - z * z) / n2
    R[0, 1] = 2.0 * (x * y - w * z) / n2
    R[0, 2] = 2.0 * (x * z + w * y) / n2
    R[1, 0] = 2.0 * (x * y + w * z) / n2
    R[1, 1] = (w * w - x * x + y * y - z * z) / n2
    R[1, 2] = 2.0 * (y * z - w * x) / n2
    R[2, 0] = 2.0 * (x * z - w * y) / n2
    R[2, 1] = 2.0 * (y * z + w * x) / n2
    R[2, 2] = (w * w - x * x - y * y + z * z) / n2
    return out


def rotate(q, v):
    """Rotate a 3-vector by the quaternion's rotation matrix."""
    R = rotmat(q)
    return R @ np.asarray(v, dtype=np.float64)


def dyn_rhs(x, u, m, g):
    """Continuous dynamics xdot = f(x, u) as a length-10 array."""
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    out = np.empty(10, dtype=np.float64)
    cdef double[::1] ov = out
    _rhs(&xv[0], &uv[0], m, g, &ov[0])
    return out


def rk4_step(x, u, dt, m, g):
    """One classic Runge-Kutta-4 step; the quaternion is not renormalized."""
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    out = np.empty(10, dtype=np.float64)
    cdef double[::1] ov = out
    _rk4(&xv[0], &uv[0], dt, m, g, &ov[0])
    return out


def rollout(x0, U, dt, m, g):
    """Integrate a whole input sequence; returns (N+1, 10) states."""
    cdef double[::1] xv = np.ascontiguousarray(x0, dtype=np.float64)
    cdef double[:, ::1] Uv = np.ascontiguousarray(U, dtype=np.float64)
    cdef int N = Uv.shape[0]
    out = np.empty((N + 1, 10), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef int i, k
    for i in range(10):
        ov[0, i] = xv[i]
    for k in range(N):
        _rk4(&ov[k, 0], &Uv[k, 0], dt, m, g, &ov[k + 1, 0])
    return out


def linearize(x, u, dt, m, g):
    """Central finite-difference Jacobians (A, B) of the RK4 step map."""
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64).copy()
    cdef double[::1] uv = np.ascontiguousarray(u, dtype=np.float64).copy()
    Aout = np.empty((10, 10), dtype=np.float64)
    Bout = np.empty((10, 4), dtype=np.float64)
    cdef double[:, ::1] A = Aout
    cdef double[:, ::1] B = Bout
    cdef double fp[10]
    cdef double fm[10]
    cdef double h, orig
    cdef int i, j
    for j in range(10):
        orig = xv[j]
        h = 1e-6 * (1.0 if fabs(orig) < 1.0 else fabs(orig))
        xv[j] = orig + h
        _rk4(&xv[0], &uv[0], dt, m, g, fp)
        xv[j] = orig - h
        _rk4(&xv[0], &uv[0], dt, m, g, fm)
        xv[j] = orig
        for i in range(10):
            A[i, j] = (fp[i] - fm[i]) / (2.0 * h)
    for j in range(4):
        orig = uv[j]
        h = 1e-6 * (1.0 if fabs(orig) < 1.0 else fabs(orig))
        uv[j] = orig + h
        _rk4(&xv[0], &uv[0], dt, m, g, fp)
        uv[j] = orig - h
        _rk4(&xv[0], &uv[0], dt, m, g, fm)
        uv[j] = orig
        for i in range(10):
            B[i, j] = (fp[i] - fm[i]) / (2.0 * h)
    return Aout, Bout


def substeps(x, u, dt, nsub, m, g):
    """Integrate one period dt with nsub uniform RK4 substeps (plant fidelity)."""
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef double h = dt / nsub
    cdef double cur[10]
    cdef double nxt[10]
    cdef int i, k
    for i in range(10):
        cur[i] = xv[i]
    for k in range(nsub):
        _rk4(cur, &uv[0], h, m, g, nxt)
        for i in range(10):
            cur[i] = nxt[i]
    out = np.empty(10, dtype=np.float64)
    cdef double[::1] ov = out
    for i in range(10):
        ov[i] = cur[i]
    return out
