import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from armour.constraints import Obstacle
from armour.harness import problem_from_scene
from armour.planner import (
    PlanFailure,
    PlannerConfig,
    PlanningError,
    PlanSuccess,
    augmented_lagrangian,
    config_collision_free,
    prepare,
    receding_horizon,
    safety_audit,
    solve_opt,
    straight_line_hlp,
    waypoint_cost,
    world_link_points,
)
from armour.trajectory import InitialCondition, bernstein_coeffs, eval_desired

FREE = {"robot_file": "planar2", "q_start": [0.0, 0.0], "q_goal": [0.6, -0.4], "seed": 3, "obstacles": []}
# two slabs 1 cm above and below the outstretched arm: every motion band touches one
WALLED = dict(FREE, q_goal=[0.5, 0.0], obstacles=[
    {"center": [1.0, 0.1, 0.0], "half_widths": [0.95, 0.04, 0.3]},
    {"center": [1.0, -0.1, 0.0], "half_widths": [0.95, 0.04, 0.3]},
])

joint = st.floats(-3, 3, allow_nan=False)


def test_hlp_examples():
    g = np.array([0.4, -0.2])
    np.testing.assert_array_equal(straight_line_hlp(np.zeros(2), g, g, 0.1), g)
    np.testing.assert_array_equal(straight_line_hlp(np.zeros(2), g, np.array([0.35, -0.15]), 0.1), g)


@given(st.lists(joint, min_size=2, max_size=2), st.lists(joint, min_size=2, max_size=2), st.floats(0.01, 1.0))
def test_hlp_collinear_and_clamped(cur, goal, step):
    cur, goal = np.array(cur), np.array(goal)
    wp = straight_line_hlp(np.zeros(2), goal, cur, step)
    assert np.max(np.abs(wp - cur)) <= step + 1e-12
    d = goal - cur
    i = int(np.argmax(np.abs(d)))
    if d[i] != 0:
        lam = float((wp - cur)[i] / d[i])
        assert -1e-12 <= lam <= 1 + 1e-12
        np.testing.assert_allclose(wp, cur + lam * d, atol=1e-12)


def test_waypoint_cost_gradient():
    f = waypoint_cost((np.array([0.2, 0.3]), np.array([1.0, -1.0])), np.array([1.1, -0.8]))
    rng = np.random.default_rng(0)
    for k in rng.uniform(-1, 1, (10, 2)):
        v, g = f(k)
        fd = [(f(k + e)[0] - f(k - e)[0]) / 2e-6 for e in 1e-6 * np.eye(2)]
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)


def test_config_validation():
    with pytest.raises(PlanningError):
        PlannerConfig(t_p=1.0, t_f=1.0)
    with pytest.raises(PlanningError):
        PlannerConfig(n_t=0)
    blocked = dict(FREE, obstacles=[{"center": [0.5, 0.0, 0.0], "half_widths": [0.1, 0.1, 0.1]}])
    with pytest.raises(PlanningError, match="collision"):
        problem_from_scene(blocked)
    prob = problem_from_scene(FREE)
    with pytest.raises(PlanningError):
        dataclasses.replace(prob, q_goal=np.zeros(3))


def test_collision_free_check_is_conservative():
    model = problem_from_scene(FREE).model
    obs = Obstacle.box([1.0, 0.2, 0.0], [0.2, 0.1, 0.2])
    assert config_collision_free(model, np.zeros(2), [obs])
    assert not config_collision_free(model, np.zeros(2), [obs], margin=0.1)
    assert not config_collision_free(model, np.array([0.2, 0.0]), [obs])
    rng = np.random.default_rng(1)
    for q in rng.uniform(-np.pi, np.pi, (300, 2)):
        if config_collision_free(model, q, [obs]):
            for pts in world_link_points(model, q, per_axis=5):
                assert not obs.contains(pts).any()


def test_unobstructed_solve_reaches_waypoint():
    prob = problem_from_scene(FREE, {"n_t": 20})
    init = InitialCondition.at_rest(prob.q_start)
    wp = straight_line_hlp(prob.q_start, prob.q_goal, prob.q_start, prob.config.hlp_step)
    res, prep = solve_opt(prob, init, wp)
    assert isinstance(res, PlanSuccess) and res.success
    cost = waypoint_cost(prep.eta, wp)
    assert res.cost <= cost(np.zeros(2))[0]
    # the waypoint is one HLP step away, well inside the reachable final positions
    np.testing.assert_allclose(prep.eta[0] * res.k + prep.eta[1], wp, atol=1e-3)
    assert np.max(prep.constraints.evaluate(res.k, False)) <= 0
    assert res.solve_time <= prob.config.t_p + 0.05


def test_walled_scene_fails_within_budget():
    prob = problem_from_scene(WALLED)
    init = InitialCondition.at_rest(prob.q_start)
    res, prep = solve_opt(prob, init, prob.q_goal)
    assert isinstance(res, PlanFailure) and not res.success
    assert res.reason in ("timeout", "infeasible")
    assert res.solve_time <= prob.config.t_p + 0.05


def test_augmented_lagrangian_respects_constraints():
    prob = problem_from_scene(FREE, {"n_t": 10})
    init = InitialCondition.at_rest(prob.q_start)
    prep = prepare(prob, init)
    # a waypoint far outside the reachable set still yields a feasible, cost-decreasing k
    cost = waypoint_cost(prep.eta, np.array([3.0, -3.0]))
    res = augmented_lagrangian(prep.constraints, cost, 2, budget=0.5)
    assert res.success
    assert np.max(prep.constraints.evaluate(res.k, False)) <= 0
    assert np.all(np.abs(res.k) <= 1)
    assert res.cost < cost(np.zeros(2))[0]


def test_goal_equals_start_stops_immediately():
    prob = problem_from_scene(dict(FREE, q_goal=FREE["q_start"]), {"n_t": 20})
    log = receding_horizon(prob)
    assert log.status == "goal" and log.goal_reached
    assert len(log.plans) == 1
    assert np.max(np.abs(log.q - prob.q_start)) <= np.max(prob.ctrl.eps_p)


@pytest.fixture(scope="module")
def free_episode():
    prob = problem_from_scene(FREE, {"n_t": 20})
    return prob, receding_horizon(prob)


def test_unobstructed_episode_reaches_goal(free_episode):
    prob, log = free_episode
    assert log.goal_reached and log.status == "goal"
    assert len(log.plans) <= 30
    assert np.max(np.abs(log.q[-1] - prob.q_goal)) < 0.05
    assert log.r_norm.max() <= prob.ctrl.eps
    report = safety_audit(log, prob.model, prob.obstacles)
    assert report.safe


def test_audit_detects_teleport(free_episode):
    prob, log = free_episode
    obs = Obstacle.box([0.0, 1.5, 0.0], [0.2, 0.2, 0.2])
    assert safety_audit(log, prob.model, [obs]).safe
    bad = dataclasses.replace(log, q=log.q.copy())
    mid = len(bad.t) // 2
    bad.q[mid] = [np.pi / 2, 0.0]
    report = safety_audit(bad, prob.model, [obs])
    assert report.collisions > 0 and not report.safe
    worse = dataclasses.replace(log, r=log.r * 0 + 1.0)
    assert safety_audit(worse, prob.model, []).r_violations == len(log.t)


def test_braking_stop_is_safe_and_at_rest():
    prob = problem_from_scene(FREE, {"n_t": 20})
    prob = dataclasses.replace(prob, true_params=prob.params0,
                               config=dataclasses.replace(prob.config, max_iterations=1))
    log = receding_horizon(prob)
    assert log.status == "iteration_cap" and not log.goal_reached
    report = safety_audit(log, prob.model, prob.obstacles)
    assert report.safe
    assert report.final_speed < 1e-3
    assert log.t[-1] == pytest.approx(prob.config.t_f)


def test_episode_log_exports(free_episode, tmp_path):
    _, log = free_episode
    path = tmp_path / "track.csv"
    log.to_csv(path)
    rows = path.read_text().strip().splitlines()
    assert len(rows) == len(log.t) + 1
    d = log.to_dict()
    assert d["status"] == log.status and len(d["plans"]) == len(log.plans)


def test_plan_then_track_matches_direct_trajectory(free_episode):
    # each executed segment follows the stored trajectory's desired motion to within the tracking band
    prob, log = free_episode
    for seg in log.trajectories:
        beta = np.array(seg["beta"])
        init = InitialCondition(beta[:, 0], np.zeros(2), np.zeros(2))
        t0 = seg["t0"]
        sel = (log.t >= t0) & (log.t <= t0 + prob.config.t_p)
        if not sel.any():
            continue
        tr = dataclasses.replace(bernstein_coeffs(init, np.zeros(2), t_f=prob.config.t_f), beta=beta)
        q_d = eval_desired(tr, log.t[sel] - t0)[0]
        assert np.all(np.abs(q_d - log.q[sel]) <= prob.ctrl.eps_p + 1e-9)
