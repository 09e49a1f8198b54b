import numpy as np
import pytest

from armour.controller import (
    ControllerConfig,
    ControllerError,
    armour_beats_baseline_threshold,
    armour_bound_offset,
    baseline_bound,
    baseline_ratio,
    baseline_robust_input,
    disturbance_bound,
    h_lower,
    max_projection_product,
    nominal_input,
    robust_input,
    robust_input_bound,
    simulate_closed_loop,
    uniform_bounds,
    _interval_terms,
)
from armour.dynamics import TotalFeedbackState, rnea
from armour.planner import stack_params
from armour.robot import IntervalInertialParams, eigen_bounds, load_model
from armour.trajectory import InitialCondition, bernstein_coeffs

from oracles import planar2_terms, planar2_torque


@pytest.fixture(scope="module")
def planar():
    model, p0, ip = load_model("planar2")
    smin, smax = eigen_bounds(model, ip, n_samples=20_000)
    cfg = ControllerConfig(np.full(2, 5.0), 1e-2, 1.0, smin, smax)
    return model, p0, ip, cfg


def random_feedback_state(rng, cfg, r_max=None):
    q, qd, qdd = rng.uniform(-2, 2, 2), rng.uniform(-1, 1, 2), rng.uniform(-2, 2, 2)
    e, ed = rng.uniform(-0.02, 0.02, 2), rng.uniform(-0.05, 0.05, 2)
    if r_max is not None:
        r = ed + cfg.Kr * e
        scale = rng.uniform(0, 1) * r_max / max(np.linalg.norm(r), 1e-15)
        e, ed = e * scale, ed * scale
    return TotalFeedbackState(q - e, qd - ed, q, qd, qdd)


def test_paper_bound_values():
    cfg = ControllerConfig(np.full(7, 5.0), 1e-2, 1.0, 5.09562, 15.79636)
    eps, eps_p, eps_v = uniform_bounds(cfg)
    assert eps == pytest.approx(0.062649, abs=1e-4)
    np.testing.assert_allclose(eps_p, 0.01253, atol=1e-4)
    assert eps_v == pytest.approx(2 * eps)
    dumbbell = ControllerConfig(np.full(7, 5.0), 1e-2, 1.0, 8.29939, 18.2726)
    assert dumbbell.eps == pytest.approx(0.049090, abs=1e-4)
    assert baseline_ratio(8.2993, 18.2726) == pytest.approx(1.48380, abs=1e-4)


def test_config_validation():
    with pytest.raises(ControllerError):
        ControllerConfig(np.array([0.0]), 1e-2, 1.0, 1.0, 2.0)
    with pytest.raises(ControllerError):
        ControllerConfig(np.array([1.0]), 1e-2, 1.0, 3.0, 2.0)


def test_nominal_input_cases(planar):
    model, p0, _, cfg = planar
    rng = np.random.default_rng(0)
    q, qd, qdd = rng.uniform(-2, 2, (3, 2))
    perfect = TotalFeedbackState(q, qd, q, qd, qdd)
    np.testing.assert_allclose(nominal_input(model, perfect, p0, cfg.Kr), rnea(model, q, qd, qd, qdd, p0), atol=1e-12)
    z = np.zeros(2)
    rest = TotalFeedbackState(q, z, q, z, z)
    np.testing.assert_allclose(nominal_input(model, rest, p0, cfg.Kr), planar2_terms(q, z)[2], atol=1e-9)
    for _ in range(20):
        st = random_feedback_state(rng, cfg)
        _, _, qda, qdda, _ = st.errors(cfg.Kr)
        np.testing.assert_allclose(nominal_input(model, st, p0, cfg.Kr), planar2_torque(st.q, st.qd, qda, qdda),
                                   atol=1e-9)


def test_disturbance_bound_cases(planar):
    model, p0, ip, cfg = planar
    rng = np.random.default_rng(1)
    ip6 = IntervalInertialParams.from_fractions(p0, 0.06)
    deg = IntervalInertialParams.degenerate(p0)
    for _ in range(20):
        st = random_feedback_state(rng, cfg)
        _, _, qda, qdda, _ = st.errors(cfg.Kr)
        assert np.all(disturbance_bound(model, st, p0, deg, cfg.Kr)[1] < 1e-12)
        _, w3 = disturbance_bound(model, st, p0, ip, cfg.Kr)
        _, w6 = disturbance_bound(model, st, p0, ip6, cfg.Kr)
        assert np.all(w6 >= w3 - 1e-12)
        for _ in range(50):
            d = ip.sample(rng, endpoints=bool(rng.integers(2)))
            diff = rnea(model, st.q, st.qd, qda, qdda, d) - rnea(model, st.q, st.qd, qda, qdda, p0)
            assert np.all(np.abs(diff) <= w3 + 1e-9)


def test_h_lower_cases(planar):
    model, p0, ip, cfg = planar
    rng = np.random.default_rng(2)
    deg = IntervalInertialParams.degenerate(p0)
    q = rng.uniform(-2, 2, 2)
    z = np.zeros(2)
    assert h_lower(model, TotalFeedbackState(q, z, q, z, z), ip, cfg.V_M, cfg.Kr) == pytest.approx(cfg.V_M)
    for _ in range(20):
        st = random_feedback_state(rng, cfg)
        r = st.errors(cfg.Kr)[4]
        M = planar2_terms(st.q, z)[0]
        assert h_lower(model, st, deg, cfg.V_M, cfg.Kr) == pytest.approx(cfg.V_M - 0.5 * r @ M @ r, abs=1e-9)
        h = h_lower(model, st, ip, cfg.V_M, cfg.Kr)
        for _ in range(50):
            d = ip.sample(rng)
            Md = planar2_terms(st.q, z, m=tuple(d.mass), izz=tuple(d.inertia[:, 2, 2]))[0]
            assert 0.5 * r @ Md @ r + h <= cfg.V_M + 1e-9


def test_interval_terms_match_separate_calls(planar):
    model, p0, ip, cfg = planar
    rng = np.random.default_rng(3)
    for _ in range(10):
        st = random_feedback_state(rng, cfg)
        _, _, qda, qdda, r = st.errors(cfg.Kr)
        tau = rnea(model, st.q, st.qd, qda, qdda, p0)
        w, h = _interval_terms(model, st, tau, qda, qdda, r, ip, cfg.V_M)
        np.testing.assert_allclose(w, disturbance_bound(model, st, p0, ip, cfg.Kr)[1], atol=1e-13)
        assert h == pytest.approx(h_lower(model, st, ip, cfg.V_M, cfg.Kr), abs=1e-13)


def test_robust_input_zero_branches(planar):
    model, p0, ip, cfg = planar
    q = np.array([0.3, -0.4])
    z = np.zeros(2)
    out = robust_input(model, TotalFeedbackState(q, z, q, z, z), p0, ip, cfg)
    np.testing.assert_array_equal(out.v, 0.0)
    deg = IntervalInertialParams.degenerate(p0)
    st = TotalFeedbackState(q - 1e-3, z, q, z, z)
    out = robust_input(model, st, p0, deg, cfg)
    assert out.h_lower > 0 and out.gamma == 0.0
    np.testing.assert_array_equal(out.v, 0.0)


def test_robust_input_bound_on_ball(planar):
    model, p0, ip, cfg = planar
    rng = np.random.default_rng(4)
    for _ in range(1000):
        st = random_feedback_state(rng, cfg, r_max=cfg.eps)
        out = robust_input(model, st, p0, ip, cfg)
        assert np.all(np.abs(out.v) <= robust_input_bound(cfg, out.w_M) + 1e-9)


def test_baseline_threshold():
    cfg = ControllerConfig(np.full(2, 5.0), 1e-2, 1.0, 2.0, 9.0)
    thr = armour_beats_baseline_threshold(cfg)
    rng = np.random.default_rng(5)
    for _ in range(200):
        w = rng.uniform(0, 1, 2)
        w *= rng.uniform(0.2, 3.0) * thr / np.linalg.norm(w)
        ours = np.max(robust_input_bound(cfg, w))
        base = float(baseline_bound(cfg, w))
        # the per-joint bound is below the baseline's whenever |w_M| exceeds the threshold
        if np.linalg.norm(w) > thr * (1 + 1e-9):
            assert ours < base
    assert armour_bound_offset(cfg) == pytest.approx(cfg.eps * 7.0 / 2)


def test_baseline_validation(planar):
    model, p0, ip, cfg = planar
    q = np.zeros(2)
    st = TotalFeedbackState(q, q, q, q, q)
    with pytest.raises(ControllerError):
        baseline_robust_input(model, st, p0, ip, cfg, kappa=0.5)


def test_projection_product_identity():
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=3), rng.normal(size=3)
    a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
    assert max_projection_product(a, b, 100_000, rng) == pytest.approx((1 + a @ b) / 2, abs=1e-3)


def _random_trajs(rng, n_traj):
    trajs = []
    for _ in range(n_traj):
        init = InitialCondition(rng.uniform(-2, 2, 2), rng.uniform(-0.5, 0.5, 2), rng.uniform(-1, 1, 2))
        trajs.append(bernstein_coeffs(init, rng.uniform(-1, 1, 2), (np.pi / 24, init.q), t_f=1.0))
    return trajs


def test_matched_model_tracks_exactly(planar):
    model, p0, ip, cfg = planar
    rng = np.random.default_rng(7)
    log = simulate_closed_loop(model, p0, _random_trajs(rng, 3), cfg, p0, ip, dt=1e-3)
    assert log.r_norm.max() <= 1e-6


def test_endpoint_params_stay_in_bounds(planar):
    model, p0, ip, cfg = planar
    rng = np.random.default_rng(8)
    trajs = _random_trajs(rng, 4)
    true = stack_params([ip.sample(rng, endpoints=True) for _ in trajs])
    log = simulate_closed_loop(model, true, trajs, cfg, p0, ip, dt=1e-3)
    assert log.r_norm.max() <= cfg.eps
    assert np.all(np.abs(log.e) <= cfg.eps_p + 1e-12)
    assert np.all(np.abs(log.ed) <= cfg.eps_v)


def test_sim_log_csv(planar, tmp_path):
    model, p0, ip, cfg = planar
    rng = np.random.default_rng(9)
    log = simulate_closed_loop(model, p0, _random_trajs(rng, 1), cfg, p0, ip, dt=1e-2)
    path = tmp_path / "track.csv"
    log.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == len(log.t) + 1
    assert lines[0].split(",")[:3] == ["t", "q0", "q1"]


def test_bound_summary_alternative_readings():
    from armour.controller import bound_summary

    s = bound_summary(ControllerConfig(np.full(7, 5.0), 1e-2, 1.0, 5.09562, 15.79636))
    assert s["eps_v"] == pytest.approx(0.1253, abs=1e-4)
    np.testing.assert_allclose(s["eps_v_over_Kr"], 0.02506, atol=1e-4)
    # the dumbbell constants, with epsilon recomputed from sigma_m
    d = bound_summary(ControllerConfig(np.full(7, 5.0), 1e-2, 1.0, 8.2993, 18.2726))
    assert d["offset"] == pytest.approx(0.2448, abs=1e-4)
    assert d["offset_unhalved"] == pytest.approx(0.4895, abs=1e-4)
