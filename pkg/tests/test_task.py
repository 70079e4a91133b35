"""Track geometry, bootstrap lap, and the closed-loop learning task."""

import numpy as np
import pytest

from lmpcq.dynamics import Plant, QuadParams, hover_state
from lmpcq.errors import DegenerateSegmentError
from lmpcq.solver import DEFAULT_RU, OcpSolution, SolveStats, sigma_cost
from lmpcq.task import (
    Track,
    TaskConfig,
    bootstrap_initial_trajectory,
    goal_reached,
    make_goal_indicator,
    run_iteration,
    run_task,
    running_cost_sigmoid,
)

P = QuadParams()


# --- track geometry ---------------------------------------------------------------

def test_track_defaults():
    track = Track()
    assert np.array_equal(track.start, [0, 0, 1])
    assert np.array_equal(track.goal, [3, 3, 1])
    assert track.total_length == pytest.approx(6.0)
    assert len(track.segments) == 2
    assert track.delta_for(0) == 0.8 and track.delta_for(1) == 0.8


def test_track_validation():
    with pytest.raises(ValueError):
        Track([[0, 0, 1]])  # a single waypoint is not a track
    with pytest.raises(DegenerateSegmentError):
        Track([[0, 0, 1], [0, 0, 1], [1, 0, 1]])
    with pytest.raises(ValueError):
        Track([[0, 0, 1], [1, 0, 1]], delta=-0.1)
    with pytest.raises(ValueError):
        Track([[0, 0, 1], [1, 0, 1], [1, 1, 1]], delta=[0.5])  # needs 2


def test_track_per_segment_delta():
    track = Track(delta=[0.5, 0.9])
    assert track.delta_for(0) == 0.5
    assert track.delta_for(1) == 0.9


def test_active_segment_and_progress():
    track = Track()
    # mid first leg
    assert track.active_segment(np.array([1.5, 0.2, 1.0])) == 0
    assert track.progress(np.array([1.5, 0.2, 1.0])) == pytest.approx(1.5)
    # mid second leg
    assert track.active_segment(np.array([3.0, 1.5, 1.0])) == 1
    assert track.progress(np.array([3.0, 1.5, 1.0])) == pytest.approx(4.5)
    # the corner belongs to the later segment on a tie
    assert track.active_segment(np.array([3.0, 0.0, 1.0])) == 1
    # endpoints
    assert track.progress(track.start) == pytest.approx(0.0)
    assert track.progress(track.goal) == pytest.approx(6.0)
    # past the goal the projection clamps
    assert track.active_segment(np.array([3.0, 4.0, 1.0])) == 1
    assert track.progress(np.array([3.0, 4.0, 1.0])) == pytest.approx(6.0)


def test_corridor_violation_values():
    track = Track()
    assert track.corridor_violation(np.array([1.5, 0.2, 1.0])) == 0.0
    # 1.0 m lateral offset against a 0.8 m tube
    assert track.corridor_violation(np.array([1.5, 1.0, 1.0])) == pytest.approx(0.2)
    assert track.corridor_violation(np.array([3.0, 1.5, 1.0])) == 0.0


def test_corridor_interior_grid():
    track = Track()
    rng = np.random.default_rng(7)
    for _ in range(200):
        s = rng.uniform(0.0, 3.0)
        seg = rng.integers(0, 2)
        base = np.array([s, 0, 1.0]) if seg == 0 else np.array([3.0, s, 1.0])
        a, b = track.segments[seg]
        axis = (b - a) / np.linalg.norm(b - a)
        off = rng.uniform(-1, 1, 3)
        off -= (off @ axis) * axis
        n = np.linalg.norm(off)
        if n > 0:
            off *= rng.uniform(0, 0.79) / n
        assert track.corridor_violation(base + off) == 0.0


# --- goal test and recorded running cost --------------------------------------------

def test_goal_reached_tolerances():
    goal = np.array([3.0, 3.0, 1.0])
    at_rest = hover_state(goal)
    assert goal_reached(at_rest, goal)
    x = at_rest.copy()
    x[0] += 0.099
    assert goal_reached(x, goal)
    x[0] = goal[0] + 0.11
    assert not goal_reached(x, goal)
    x = at_rest.copy()
    x[3] = 0.11  # moving too fast even though centered
    assert not goal_reached(x, goal)
    assert goal_reached(x, goal, eps_vel=0.2)


def test_goal_indicator_costs():
    goal = np.array([3.0, 3.0, 1.0])
    cost = make_goal_indicator(goal, Ru=np.zeros(4))
    assert cost(hover_state(goal), np.zeros(4)) == 0.0
    assert cost(hover_state([0, 0, 1]), np.zeros(4)) == 1.0
    # the input penalty rides on top of the indicator
    cost = make_goal_indicator(goal)  # default Ru
    u = np.array([9.0, 0.5, -0.5, 1.0])
    expected = 1.0 + float(u @ (DEFAULT_RU * u))
    assert cost(hover_state([0, 0, 1]), u) == pytest.approx(expected)
    assert cost(hover_state(goal), u) == pytest.approx(expected - 1.0)


def test_running_cost_sigmoid_matches_parts():
    goal = np.array([3.0, 3.0, 1.0])
    x = hover_state([1.0, 0.0, 1.0])
    u = np.array([8.0, 0.1, 0.2, -0.3])
    want = sigma_cost(x[0:3], goal) + float(u @ (DEFAULT_RU * u))
    assert running_cost_sigmoid(x, u, goal) == pytest.approx(want)


# --- bootstrap pass ----------------------------------------------------------------

def test_bootstrap_completes_slow_lap():
    track = Track()
    plant = Plant(params=P)
    states, inputs = bootstrap_initial_trajectory(track, plant, 0.1)
    assert states.shape[0] == inputs.shape[0] + 1
    # conservative pace: two 3 m legs at 0.3 m/s plus ramps
    lap = inputs.shape[0] * 0.1
    assert 15.0 <= lap <= 30.0
    assert goal_reached(states[-1], track.goal)
    assert np.all(inputs >= P.u_min - 1e-12)
    assert np.all(inputs <= P.u_max + 1e-12)
    for x in states:
        assert track.corridor_violation(x[0:3]) == 0.0


def test_bootstrap_gives_up_when_capped():
    track = Track()
    plant = Plant(params=P)
    with pytest.raises(RuntimeError):
        bootstrap_initial_trajectory(track, plant, 0.1, max_steps=20)


# --- learning loop -----------------------------------------------------------------

def test_run_task_two_iterations_learns():
    res = run_task(TaskConfig(iterations=2))
    lt = res.lap_times
    assert len(lt) == 3
    assert len(res.store) == 3
    assert res.store.iteration_ids == [0, 1, 2]
    # the very first learned lap already beats the crawl by a wide margin
    assert lt[1] < 0.6 * lt[0]
    assert lt[2] <= lt[1]
    for rep in res.reports:
        assert rep.completed
        assert rep.lap_time == pytest.approx(rep.steps * res.config.lmpc.dt)
        assert rep.record is res.store.record(rep.iteration_id)
    # every learned step produced solver statistics
    assert len(res.reports[1].stats) == res.reports[1].steps
    assert res.reports[0].stats == []


def test_run_task_deterministic():
    a = run_task(TaskConfig(iterations=2, seed=3))
    b = run_task(TaskConfig(iterations=2, seed=3))
    assert a.lap_times == b.lap_times
    for j in a.store.iteration_ids:
        assert np.array_equal(a.store.record(j).states, b.store.record(j).states)
        assert np.array_equal(a.store.record(j).inputs, b.store.record(j).inputs)


def test_run_task_progress_callback():
    seen = []
    run_task(TaskConfig(iterations=1), progress=seen.append)
    assert [r.iteration_id for r in seen] == [0, 1]


def test_run_iteration_incomplete_leaves_store_alone(monkeypatch):
    cfg = TaskConfig(iterations=0)
    res = run_task(cfg)
    store, track = res.store, res.track

    bad = OcpSolution(
        X=np.zeros((cfg.lmpc.N + 1, 10)), U=np.zeros((cfg.lmpc.N, 4)),
        lam=np.ones(1), cost=np.nan,
        stats=SolveStats(sqp_iters=1, qp_iters=0, kkt_residual=np.inf,
                         solve_time=0.0, status="infeasible"),
    )
    monkeypatch.setattr("lmpcq.task.solve", lambda *a, **k: bad)
    plant = Plant(params=P)
    rep = run_iteration(store, track, cfg.lmpc, plant, 1, max_steps=40)
    assert not rep.completed
    assert rep.record is None
    assert rep.steps == 40
    assert rep.lap_time == pytest.approx(4.0)
    assert len(rep.stats) == 40
    assert len(store) == 1  # nothing was recorded


def test_run_task_raises_when_iteration_cannot_finish(monkeypatch):
    bad = OcpSolution(
        X=np.zeros((11, 10)), U=np.zeros((10, 4)), lam=np.ones(1), cost=np.nan,
        stats=SolveStats(sqp_iters=1, qp_iters=0, kkt_residual=np.inf,
                         solve_time=0.0, status="infeasible"),
    )
    monkeypatch.setattr("lmpcq.task.solve", lambda *a, **k: bad)
    with pytest.raises(RuntimeError, match="did not finish"):
        run_task(TaskConfig(iterations=1, max_steps=400))
