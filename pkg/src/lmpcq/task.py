"""Minimum-time corridor task: track geometry, bootstrap pass, learning loop.

The task is a lap from the first waypoint to the last through a corridor of
half-width delta around the waypoint polyline.  Iteration 0 is a slow
proportional tracker that just completes the lap; every later iteration runs
the receding-horizon controller against the stored safety set and should cut
the lap time until it settles.
"""

import collections
import logging
from dataclasses import dataclass, field

import numpy as np

from lmpcq import so3
from lmpcq import solver as _solver
from lmpcq.dynamics import Plant, U_DIM, hover_state
from lmpcq.errors import DegenerateSegmentError
from lmpcq.safety_set import (
    SafetySetStore,
    TrajectoryRecord,
    compute_cost_to_go,
)
from lmpcq.solver import DEFAULT_RU, LmpcConfig, build_problem, solve, warm_start_shift

log = logging.getLogger("lmpcq.task")

DEFAULT_WAYPOINTS = ((0.0, 0.0, 1.0), (3.0, 0.0, 1.0), (3.0, 3.0, 1.0))

# Stall watchdog thresholds (see run_iteration).  Primary trigger: the
# predicted terminal state stops moving while still far from the goal.
# Backstop trigger: arc-progress gain over a sliding window of steps.
SEED_FREEZE_EPS = 0.02  # m; terminal-prediction movement below this counts as frozen
SEED_FREEZE_STEPS = 3   # consecutive frozen steps before re-anchoring
STALL_WINDOW = 8
STALL_ENTER = 0.05  # m gained over the window -> stuck below this
STALL_EXIT = 0.25   # m gained over the window -> recovered above this
STALL_GOAL_GUARD = 0.5  # m; no watchdog inside this radius of the goal


class Track:
    """Waypoint polyline with a rectangular corridor around each segment."""

    def __init__(self, waypoints=DEFAULT_WAYPOINTS, delta=0.8):
        self.waypoints = np.asarray(waypoints, dtype=np.float64)
        if self.waypoints.ndim != 2 or self.waypoints.shape[1] != 3:
            raise ValueError("waypoints must be (W, 3)")
        if self.waypoints.shape[0] < 2:
            raise ValueError("need at least two waypoints")
        self.segments = [
            (self.waypoints[i], self.waypoints[i + 1])
            for i in range(self.waypoints.shape[0] - 1)
        ]
        self.lengths = np.array(
            [np.linalg.norm(r1 - r0) for r0, r1 in self.segments]
        )
        if np.any(self.lengths <= 1e-9):
            raise DegenerateSegmentError("consecutive waypoints coincide")
        self.cum_lengths = np.concatenate([[0.0], np.cumsum(self.lengths)])
        delta = np.asarray(delta, dtype=np.float64)
        if delta.ndim == 0:
            delta = np.full(len(self.segments), float(delta))
        if delta.shape != (len(self.segments),) or np.any(delta <= 0):
            raise ValueError("delta must be positive, scalar or one per segment")
        self.delta = delta

    @property
    def start(self):
        return self.waypoints[0]

    @property
    def goal(self):
        return self.waypoints[-1]

    @property
    def total_length(self):
        return float(self.cum_lengths[-1])

    def delta_for(self, seg_idx):
        return float(self.delta[seg_idx])

    def active_segment(self, p):
        """Segment whose corridor the point is in, furthest along the track.

        Among segments whose clamped projection lies within delta of the
        point, pick the one with the greatest track progress (ties resolve
        to the later segment); if none contain the point, fall back to the
        nearest segment.
        """
        p = np.asarray(p, dtype=np.float64)
        best_inside = None
        best_outside = None
        for i, (r0, r1) in enumerate(self.segments):
            axis = r1 - r0
            t = float(np.clip((p - r0) @ axis / (axis @ axis), 0.0, 1.0))
            dist = float(np.linalg.norm(p - (r0 + t * axis)))
            progress = self.cum_lengths[i] + t * self.lengths[i]
            if dist <= self.delta[i] + 1e-12:
                key = (progress, i)
                if best_inside is None or key > best_inside[0]:
                    best_inside = (key, i)
            if best_outside is None or dist < best_outside[0]:
                best_outside = (dist, i)
        return best_inside[1] if best_inside is not None else best_outside[1]

    def progress(self, p):
        """Arc length along the polyline of the active-segment projection."""
        p = np.asarray(p, dtype=np.float64)
        i = self.active_segment(p)
        r0, r1 = self.segments[i]
        axis = r1 - r0
        t = float(np.clip((p - r0) @ axis / (axis @ axis), 0.0, 1.0))
        return float(self.cum_lengths[i] + t * self.lengths[i])

    def corridor_violation(self, p):
        """How far outside its active segment's corridor the point sits."""
        p = np.asarray(p, dtype=np.float64)
        i = self.active_segment(p)
        A, lo, hi = _solver.corridor_rows(p, self.segments[i], self.delta[i])
        ap = A @ p
        return float(np.maximum(np.maximum(ap - hi, lo - ap), 0.0).max())


def goal_reached(x, goal, eps_pos=0.1, eps_vel=0.1):
    """Inside the goal ball and (nearly) at rest."""
    x = np.asarray(x)
    return (np.linalg.norm(x[0:3] - goal) <= eps_pos
            and np.linalg.norm(x[3:6]) <= eps_vel)


def make_goal_indicator(goal, eps_pos=0.1, eps_vel=0.1, Ru=None):
    """Recorded running cost: goal indicator plus the input penalty.

    The indicator contributes 1 per step outside the goal region and 0
    inside, so the dominant part of the cost-to-go is the number of steps
    left to finish (lap time in controller periods).  The u'R_u u term makes
    stored costs comparable with what the controller optimizes.
    """
    goal = np.asarray(goal, dtype=np.float64)
    Ru = DEFAULT_RU.copy() if Ru is None else np.asarray(Ru, dtype=np.float64)

    def running_cost(x, u):
        u = np.asarray(u, dtype=np.float64)
        step = 0.0 if goal_reached(x, goal, eps_pos, eps_vel) else 1.0
        return step + float(u @ (Ru * u))

    return running_cost


def running_cost_sigmoid(x, u, goal, Ru=None):
    """The solver's smooth stage cost, exposed for analysis."""
    if Ru is None:
        Ru = DEFAULT_RU
    u = np.asarray(u, dtype=np.float64)
    return _solver.sigma_cost(np.asarray(x)[0:3], np.asarray(goal)) + float(u @ (Ru * u))


# ---------------------------------------------------------------------------
# iteration 0: slow proportional tracker along the polyline


def _trapezoid(L, v_c, a):
    """Rest-to-rest trapezoidal arc profile; returns (duration, s(t), sdot(t))."""
    if L < v_c * v_c / a:  # triangle: never reaches cruise speed
        v_c = np.sqrt(L * a)
    t_r = v_c / a
    t_c = (L - v_c * t_r) / v_c
    T = 2.0 * t_r + t_c

    def sample(t):
        if t <= 0.0:
            return 0.0, 0.0
        if t < t_r:
            return 0.5 * a * t * t, a * t
        if t < t_r + t_c:
            return 0.5 * a * t_r * t_r + v_c * (t - t_r), v_c
        if t < T:
            td = T - t
            return L - 0.5 * a * td * td, a * td
        return L, 0.0

    return T, sample


class _PolylineReference:
    """Time-parameterized rest-to-rest reference along the track."""

    def __init__(self, track, cruise_speed, accel):
        self.track = track
        self.profiles = []
        t0 = 0.0
        for (r0, r1), L in zip(track.segments, track.lengths):
            T, sample = _trapezoid(float(L), cruise_speed, accel)
            self.profiles.append((t0, T, sample, r0, (r1 - r0) / L))
            t0 += T
        self.duration = t0

    def __call__(self, t):
        for t0, T, sample, r0, direction in self.profiles:
            if t < t0 + T:
                s, sdot = sample(t - t0)
                return r0 + s * direction, sdot * direction
        return self.track.goal.copy(), np.zeros(3)


def _tracker_input(x, p_ref, v_ref, params, kp=2.0, kv=3.0, kr=8.0):
    """Cascaded proportional law: position -> acceleration -> tilt + thrust."""
    p, v, q = x[0:3], x[3:6], x[6:10]
    a_cmd = kp * (p_ref - p) + kv * (v_ref - v)
    t_des = params.mass * (a_cmd + np.array([0.0, 0.0, params.gravity]))
    R = so3.quat_to_rotation(q)
    body_z = R[:, 2]
    f = float(np.clip(t_des @ body_z, 0.05 * params.f_max, params.f_max))
    norm = np.linalg.norm(t_des)
    z_des = t_des / norm if norm > 1e-9 else np.array([0.0, 0.0, 1.0])
    omega_w = kr * np.cross(body_z, z_des)
    omega_b = R.T @ omega_w
    omega_b[2] = 0.0  # no yaw authority needed on this track
    omega_b = np.clip(omega_b, -params.omega_max, params.omega_max)
    return np.concatenate([[f], omega_b])


def bootstrap_initial_trajectory(track, plant, dt, eps_pos=0.1, eps_vel=0.1,
                                 cruise_speed=0.3, accel=0.3, max_steps=3000):
    """Fly the lap slowly with a proportional tracker; returns (states, inputs).

    The reference walks the polyline rest-to-rest per segment, so the
    vehicle stays deep inside the corridor and ends at rest in the goal
    region; the pace is deliberately conservative (a 3 m leg takes ~11 s).
    """
    ref = _PolylineReference(track, cruise_speed, accel)
    x = hover_state(track.start)
    states = [x.copy()]
    inputs = []
    goal = track.goal
    for t in range(max_steps):
        if goal_reached(x, goal, eps_pos, eps_vel):
            break
        p_ref, v_ref = ref(t * dt)
        u = _tracker_input(x, p_ref, v_ref, plant.params)
        inputs.append(u)
        x = plant.step(x, u, dt)
        states.append(x.copy())
        viol = track.corridor_violation(x[0:3])
        if viol > 0.0:
            raise RuntimeError(f"bootstrap left the corridor by {viol:.3g} m at step {t}")
    else:
        raise RuntimeError(f"bootstrap did not reach the goal in {max_steps} steps")
    return np.asarray(states), np.asarray(inputs)


# ---------------------------------------------------------------------------
# learning loop


@dataclass
class IterationReport:
    iteration_id: int
    completed: bool
    steps: int
    lap_time: float
    stats: list  # per-control-step SolveStats ([] for the bootstrap pass)
    record: TrajectoryRecord


@dataclass
class TaskConfig:
    waypoints: tuple = DEFAULT_WAYPOINTS
    delta: float = 0.8
    lmpc: LmpcConfig = field(default_factory=LmpcConfig)
    iterations: int = 6
    eps_pos: float = 0.1
    eps_vel: float = 0.1
    noise_sigma: float = 0.0
    seed: int = 0
    max_steps: int = 3000
    bootstrap_speed: float = 0.3
    bootstrap_accel: float = 0.3


@dataclass
class TaskResult:
    config: TaskConfig
    track: Track
    store: SafetySetStore
    reports: list

    @property
    def lap_times(self):
        return [r.lap_time for r in self.reports]


def run_iteration(store, track, config, plant, iteration_id,
                  eps_pos=0.1, eps_vel=0.1, max_steps=3000, x0=None):
    """One closed-loop lap under the receding-horizon controller.

    The local terminal set is drawn from the best stored iteration plus the
    most recent ``config.p_lookback`` ones, seeded at the previous step's
    predicted terminal state.  On a failed solve the previously planned input
    sequence keeps being consumed (hover as a last resort).
    """
    params = config.params
    goal = track.goal
    x = hover_state(track.start) if x0 is None else np.asarray(x0, dtype=np.float64)
    best = store.best_record()
    avail = set(store.iteration_ids)
    ids = {best.iteration_id}
    ids.update(j for j in range(iteration_id - config.p_lookback, iteration_id)
               if j >= 0 and j in avail)
    iter_ids = sorted(ids)

    states = [x.copy()]
    inputs = []
    stats = []
    prev_sol = None
    completed = False
    # Stall watchdog.  The relaxed terminal set can place a cheap blend of
    # far-apart stored states right at the edge of reachability, where
    # postponing the dash costs nothing and the closed loop parks mid-track
    # under a frozen prediction.  When the predicted terminal state stops
    # advancing far from the goal (or, as a backstop, arc progress
    # stagnates), re-anchor the seed the same way as on the first step --
    # N stored steps ahead of the vehicle's position along the best lap --
    # until the vehicle moves freely again.
    prog_hist = collections.deque(maxlen=STALL_WINDOW + 1)
    recovering = False
    recover_hold = 0
    freeze_count = 0
    prev_cand = None

    for t in range(max_steps):
        if goal_reached(x, goal, eps_pos, eps_vel):
            completed = True
            break
        prog_hist.append(track.progress(x[0:3]))
        window_gain = prog_hist[-1] - prog_hist[0]
        if prev_sol is None:
            cand = best.states[min(config.N, best.steps)]
        else:
            cand = prev_sol.X[config.N]
        if recovering:
            recover_hold -= 1
            if recover_hold <= 0 and window_gain >= STALL_EXIT:
                recovering = False
                freeze_count = 0
        else:
            if (prev_cand is not None
                    and np.linalg.norm(cand[0:3] - prev_cand[0:3]) < SEED_FREEZE_EPS
                    and np.linalg.norm(cand[0:3] - goal) > STALL_GOAL_GUARD):
                freeze_count += 1
            else:
                freeze_count = 0
            stuck = (len(prog_hist) > STALL_WINDOW
                     and window_gain < STALL_ENTER
                     and np.linalg.norm(x[0:3] - goal) > STALL_GOAL_GUARD)
            if freeze_count >= SEED_FREEZE_STEPS or stuck:
                recovering = True
                recover_hold = config.N
                log.warning(
                    "iteration %d step %d: %s, re-anchoring terminal seed",
                    iteration_id, t,
                    "terminal prediction frozen" if freeze_count else
                    "no progress over %d steps" % STALL_WINDOW)
        prev_cand = cand
        if recovering and prev_sol is not None:
            k = int(np.argmin(
                np.linalg.norm(best.states[:, 0:3] - x[0:3], axis=1)))
            seed = best.states[min(k + config.N, best.steps)]
        else:
            seed = cand
        lset = store.select_local_set(seed, config.n_neighbors, 0, iterations=iter_ids)
        prob = build_problem(
            x, lset, track, config,
            stage_positions=None if prev_sol is None else prev_sol.X,
        )
        if prev_sol is None:
            guess = None
        else:
            guess = warm_start_shift(prev_sol, config.dt, params, lset.size)
        sol = solve(prob, warm_start=guess, real_time=True)
        stats.append(sol.stats)
        if sol.stats.status == "infeasible":
            log.warning("iteration %d step %d: infeasible solve, reusing last plan",
                        iteration_id, t)
            if guess is not None:
                u = guess.U[0].copy()
                prev_sol = _solver.OcpSolution(
                    X=guess.X, U=guess.U, lam=guess.lam, cost=np.nan, stats=sol.stats
                )
            else:
                u = params.hover_input()
        else:
            u = sol.U[0].copy()
            prev_sol = sol
        inputs.append(u)
        x = plant.step(x, u, config.dt)
        states.append(x.copy())

    record = None
    if completed:
        states = np.asarray(states)
        inputs = (np.asarray(inputs) if inputs
                  else np.zeros((0, U_DIM)))
        costs = compute_cost_to_go(states, inputs, store.running_cost)
        record = TrajectoryRecord(iteration_id, states, inputs, costs,
                                  config.dt, completed=True)
        store.add_record(record)
        log.info("iteration %d: %d steps (%.2f s)", iteration_id,
                 record.steps, record.lap_time)
    return IterationReport(
        iteration_id=iteration_id,
        completed=completed,
        steps=len(inputs),
        lap_time=len(inputs) * config.dt,
        stats=stats,
        record=record,
    )


def run_task(cfg, progress=None):
    """Bootstrap then learn for ``cfg.iterations`` laps; returns a TaskResult."""
    track = Track(cfg.waypoints, cfg.delta)
    params = cfg.lmpc.params
    plant = Plant(params=params, noise_sigma=cfg.noise_sigma, seed=cfg.seed)
    indicator = make_goal_indicator(track.goal, cfg.eps_pos, cfg.eps_vel,
                                    Ru=cfg.lmpc.Ru)
    store = SafetySetStore(indicator, cfg.lmpc.dt)

    b_states, b_inputs = bootstrap_initial_trajectory(
        track, plant, cfg.lmpc.dt, cfg.eps_pos, cfg.eps_vel,
        cfg.bootstrap_speed, cfg.bootstrap_accel, cfg.max_steps,
    )
    costs = compute_cost_to_go(b_states, b_inputs, indicator)
    boot = TrajectoryRecord(0, b_states, b_inputs, costs, cfg.lmpc.dt, completed=True)
    store.add_record(boot)
    log.info("bootstrap: %d steps (%.2f s)", boot.steps, boot.lap_time)
    reports = [IterationReport(0, True, boot.steps, boot.lap_time, [], boot)]
    if progress is not None:
        progress(reports[0])

    for j in range(1, cfg.iterations + 1):
        rep = run_iteration(store, track, cfg.lmpc, plant, j,
                            cfg.eps_pos, cfg.eps_vel, cfg.max_steps)
        if not rep.completed:
            raise RuntimeError(f"iteration {j} did not finish within "
                               f"{cfg.max_steps} steps")
        reports.append(rep)
        if progress is not None:
            progress(rep)
    return TaskResult(config=cfg, track=track, store=store, reports=reports)
