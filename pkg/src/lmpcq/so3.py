"""Non-unit quaternion algebra for attitude on SO(3).

Conventions
-----------
* Quaternions are scalar-first ``[w, x, y, z]``, Hamilton product order.
* Body rates multiply from the right: ``qdot = 0.5 * Lambda(Omega) @ q``.
* Quaternions are NOT kept normalized.  The rotation map divides the
  homogeneous quadratic form by ``|q|^2``, which makes it invariant under
  ``q -> s*q`` and exactly orthogonal in real arithmetic, so integration may
  let the norm drift (within a guard band) without hurting the attitude.
* ``exp``/``log`` map rotation vectors (axis * angle, in radians) to unit
  quaternions and back; ``log`` normalizes first and flips antipodal
  representatives (w < 0) so that the angle stays within [0, pi].
"""

import numpy as np

from lmpcq import _kernels
from lmpcq.errors import DegenerateQuaternionError, SimplexViolationError

#: squared-norm threshold below which a quaternion is considered degenerate
EPS_QUAT_SQ = _kernels.EPS_QUAT_SQ

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def _as_quat(q):
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,):
        raise ValueError(f"expected quaternion of shape (4,), got {q.shape}")
    return q


def omega_matrix(omega):
    """4x4 skew-symmetric matrix Lambda(Omega) of body rates.

    ``quat_derivative(q, Omega) == 0.5 * omega_matrix(Omega) @ q``.
    """
    wx, wy, wz = np.asarray(omega, dtype=np.float64)
    return np.array([
        [0.0, -wx, -wy, -wz],
        [wx, 0.0, wz, -wy],
        [wy, -wz, 0.0, wx],
        [wz, wy, -wx, 0.0],
    ])


def quat_derivative(q, omega):
    """Quaternion kinematics qdot = 0.5 * Lambda(Omega) q."""
    q = _as_quat(q)
    n2 = float(q @ q)
    if n2 <= EPS_QUAT_SQ:
        raise DegenerateQuaternionError(f"quaternion norm^2 {n2:g} <= {EPS_QUAT_SQ:g}")
    return 0.5 * omega_matrix(omega) @ q


def quat_to_rotation(q):
    """Rotation matrix of a possibly non-unit quaternion.

    Uses the homogeneous quadratic form divided by ``|q|^2``; the result is
    orthogonal with det +1 up to rounding for any ``|q|^2`` above the
    degeneracy guard, and identical for ``q`` and ``s*q``.
    """
    return _kernels.rotmat(_as_quat(q))


def rotate_vector(q, v):
    """Apply the rotation of ``q`` to a 3-vector."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (3,):
        raise ValueError(f"expected 3-vector, got shape {v.shape}")
    return _kernels.rotate(_as_quat(q), v)


def quat_multiply(q1, q2):
    """Hamilton product q1 * q2."""
    w1, x1, y1, z1 = _as_quat(q1)
    w2, x2, y2, z2 = _as_quat(q2)
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_conjugate(q):
    """Conjugate [w, -x, -y, -z] (inverse rotation for any norm)."""
    q = _as_quat(q)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_exp(phi):
    """Unit quaternion of a rotation vector: (cos(|phi|/2), sin(|phi|/2)*phi_hat)."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (3,):
        raise ValueError(f"expected rotation vector of shape (3,), got {phi.shape}")
    theta = float(np.linalg.norm(phi))
    if theta < 1e-9:
        # series: sin(t/2)/t -> 1/2 as t -> 0
        return np.concatenate(([np.cos(0.5 * theta)], 0.5 * phi))
    vec = (np.sin(0.5 * theta) / theta) * phi
    return np.concatenate(([np.cos(0.5 * theta)], vec))


def quat_exp_many(phis):
    """Vectorized quat_exp over rows of an (n, 3) array; returns (n, 4)."""
    phis = np.asarray(phis, dtype=np.float64)
    theta = np.linalg.norm(phis, axis=1)
    out = np.empty((phis.shape[0], 4))
    out[:, 0] = np.cos(0.5 * theta)
    small = theta < 1e-9
    coeff = np.empty_like(theta)
    coeff[small] = 0.5
    ns = ~small
    coeff[ns] = np.sin(0.5 * theta[ns]) / theta[ns]
    out[:, 1:] = coeff[:, None] * phis
    return out


def quat_log(q):
    """Rotation vector of a quaternion, with ``|result| <= pi``.

    Normalizes internally and negates antipodal representatives (w < 0), so
    ``quat_log(-q) == quat_log(q)``.
    """
    q = _as_quat(q)
    n2 = float(q @ q)
    if n2 <= EPS_QUAT_SQ:
        raise DegenerateQuaternionError(f"quaternion norm^2 {n2:g} <= {EPS_QUAT_SQ:g}")
    q = q / np.sqrt(n2)
    if q[0] < 0.0:
        q = -q
    s = float(np.linalg.norm(q[1:]))
    if s < 1e-9:
        # series: 2*atan2(s, w)/s -> 2/w as s -> 0
        return (2.0 / q[0]) * q[1:]
    return (2.0 * np.arctan2(s, q[0]) / s) * q[1:]


def quat_geodesic(q1, q2):
    """Geodesic angle (rad) between the rotations of two quaternions."""
    return float(np.linalg.norm(quat_log(quat_multiply(quat_conjugate(q1), q2))))


def quat_geodesic_many(q, quats):
    """Geodesic angles between ``q`` and each row of an (n, 4) array."""
    q = _as_quat(q)
    n2 = float(q @ q)
    if n2 <= EPS_QUAT_SQ:
        raise DegenerateQuaternionError(f"quaternion norm^2 {n2:g} <= {EPS_QUAT_SQ:g}")
    quats = np.asarray(quats, dtype=np.float64)
    norms = np.linalg.norm(quats, axis=1)
    dots = np.abs(quats @ q) / (norms * np.sqrt(n2))
    return 2.0 * np.arccos(np.clip(dots, -1.0, 1.0))


def check_simplex(lam, tol=1e-8):
    """Validate barycentric weights: lam >= 0 and sum(lam) = 1, within tol."""
    lam = np.asarray(lam, dtype=np.float64)
    if lam.ndim != 1 or lam.size == 0:
        raise SimplexViolationError(f"weights must be a non-empty vector, got shape {lam.shape}")
    if float(lam.min()) < -tol or abs(float(lam.sum()) - 1.0) > tol:
        raise SimplexViolationError(
            f"weights violate the simplex: min {lam.min():g}, sum {lam.sum():.12g}"
        )
    return lam


def tangent_convex_combination(quats, lam):
    """Combine quaternions with simplex weights in a single tangent space.

    Computes ``exp(sum_l lam_l * log(q_l))``; exact for rotations sharing an
    axis, first-order-consistent otherwise.  Returns a unit quaternion.
    """
    lam = check_simplex(lam)
    quats = np.asarray(quats, dtype=np.float64)
    if quats.ndim != 2 or quats.shape[1] != 4 or quats.shape[0] != lam.size:
        raise ValueError(f"expected ({lam.size}, 4) quaternion array, got {quats.shape}")
    logs = np.array([quat_log(qr) for qr in quats])
    return quat_exp(logs.T @ lam)


def rescale_guard(q, band=(0.5, 2.0)):
    """Renormalize only when the norm leaves the guard band.

    Applied between closed-loop control steps (never inside an RK4 stage), so
    that benign integration drift is left untouched.
    """
    q = _as_quat(q)
    n = float(np.linalg.norm(q))
    if not n > 0.0:
        raise DegenerateQuaternionError("zero quaternion cannot be rescaled")
    if band[0] <= n <= band[1]:
        return q
    return q / n
