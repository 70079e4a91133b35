"""Quadrotor dynamics on SO(3) x R^3 with RK4 discretization.

State  x = [p (3), v (3), q (4)]  -- position, velocity (inertial frame),
non-unit attitude quaternion.  Input u = [f, Omega (3)] -- collective thrust
(N) and body rates (rad/s).

    pdot = v
    vdot = (f / m_Q) * R(q) e_z - g e_z
    qdot = 0.5 * Lambda(Omega) q

Gravity enters as an acceleration outside the 1/m_Q factor, so hover thrust
is exactly m_Q * g.  The quaternion is not renormalized inside integration;
the plant applies the rescale guard once per control period.
"""

from dataclasses import dataclass, field

import numpy as np

from lmpcq import _kernels, so3

X_DIM = 10
U_DIM = 4

#: plant integration substep length (s); 50 substeps per 0.1 s control period
PLANT_SUBSTEP = 0.002


@dataclass(frozen=True)
class QuadParams:
    """Physical parameters and input box bounds."""

    mass: float = 0.85
    gravity: float = 9.81
    f_min: float = 0.0
    f_max: float = 16.677  # thrust-to-weight ratio 2
    omega_max: float = 3.0  # symmetric per-axis body-rate bound (rad/s)

    def __post_init__(self):
        if self.mass <= 0.0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if self.f_min < 0.0 or self.f_max <= self.mass * self.gravity:
            raise ValueError("thrust bounds must allow hover: f_min >= 0, f_max > m*g")

    @property
    def hover_thrust(self):
        return self.mass * self.gravity

    @property
    def u_min(self):
        return np.array([self.f_min, -self.omega_max, -self.omega_max, -self.omega_max])

    @property
    def u_max(self):
        return np.array([self.f_max, self.omega_max, self.omega_max, self.omega_max])

    def hover_input(self):
        return np.array([self.hover_thrust, 0.0, 0.0, 0.0])


def hover_state(p, q=None):
    """State at rest at position p (identity attitude unless given)."""
    x = np.zeros(X_DIM)
    x[0:3] = np.asarray(p, dtype=np.float64)
    x[6:10] = so3.IDENTITY if q is None else np.asarray(q, dtype=np.float64)
    return x


def _check_x(x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (X_DIM,):
        raise ValueError(f"expected state of shape ({X_DIM},), got {x.shape}")
    return x


def _check_u(u):
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (U_DIM,):
        raise ValueError(f"expected input of shape ({U_DIM},), got {u.shape}")
    return u


def continuous_dynamics(x, u, params):
    """State rate xdot = f(x, u)."""
    return _kernels.dyn_rhs(_check_x(x), _check_u(u), params.mass, params.gravity)


def rk4_step(x, u, dt, params):
    """One RK4 step of length dt (no quaternion renormalization)."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    return _kernels.rk4_step(_check_x(x), _check_u(u), dt, params.mass, params.gravity)


def rollout(x0, U, dt, params):
    """Chained RK4 steps; returns an (N+1, 10) state array for (N, 4) inputs."""
    U = np.asarray(U, dtype=np.float64)
    if U.ndim != 2 or U.shape[1] != U_DIM or U.shape[0] < 1:
        raise ValueError(f"expected inputs of shape (N>=1, {U_DIM}), got {U.shape}")
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    return _kernels.rollout(_check_x(x0), U, dt, params.mass, params.gravity)


def linearize_discrete(x, u, dt, params):
    """Jacobians (A, B) of the RK4 step map, by central finite differences.

    Step size h = 1e-6 * max(1, |component|) per perturbed component.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    return _kernels.linearize(_check_x(x), _check_u(u), dt, params.mass, params.gravity)


@dataclass
class Plant:
    """Closed-loop plant: finer-step integrator plus optional disturbances.

    One step covers a controller period ``dt`` using RK4 substeps of
    ``PLANT_SUBSTEP`` seconds, optionally adds zero-mean Gaussian velocity
    noise, and applies the quaternion rescale guard.  Owns its RNG; a single
    instance must not be shared across concurrent simulations.
    """

    params: QuadParams = field(default_factory=QuadParams)
    noise_sigma: float = 0.0
    mass_scale: float = 1.0  # plant/model mismatch knob (e.g. 1.05 = +5% mass)
    seed: int = 0

    def __post_init__(self):
        self._rng = np.random.default_rng(self.seed)
        self._mass = self.params.mass * self.mass_scale

    def step(self, x, u, dt=0.1):
        x = _check_x(x)
        u = _check_u(u)
        nsub = max(1, round(dt / PLANT_SUBSTEP))
        nxt = _kernels.substeps(x, u, dt, nsub, self._mass, self.params.gravity)
        if self.noise_sigma > 0.0:
            nxt[3:6] += self._rng.normal(0.0, self.noise_sigma, size=3)
        nxt[6:10] = so3.rescale_guard(nxt[6:10])
        return nxt


def plant_step(x, u, params, dt=0.1, noise_sigma=0.0, rng=None):
    """Functional one-off plant step (prefer a Plant instance in loops)."""
    x = _check_x(x)
    u = _check_u(u)
    nsub = max(1, round(dt / PLANT_SUBSTEP))
    nxt = _kernels.substeps(x, u, dt, nsub, params.mass, params.gravity)
    if noise_sigma > 0.0:
        if rng is None:
            rng = np.random.default_rng()
        nxt[3:6] += rng.normal(0.0, noise_sigma, size=3)
    nxt[6:10] = so3.rescale_guard(nxt[6:10])
    return nxt
