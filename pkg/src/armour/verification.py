"""Sampling suites for the enclosure properties and constraint gradients.

Each suite draws concrete values (intervals members, indeterminate values,
states), computes the true quantity with plain real arithmetic and checks
that it lies in the corresponding set. For polynomial zonotopes the check
fixes the indeterminates the sample determines (trajectory parameter,
time, tracking error, ...) and bounds every generator that also involves
other indeterminates by its absolute value, which is exactly the bound the
planner relies on after slicing.
"""
from __future__ import annotations

import time

import numpy as np

from .constraints import build_constraints
from .controller import ControllerConfig, robust_input
from .dynamics import TotalFeedbackState, irnea, pzrnea, pz_inertial_params, real_rotations, rnea
from .interval import IntervalMatrix, iv_cross, iv_matmul
from .polyzono import (
    PolyZonotope,
    err_pos_id,
    interval_cos,
    interval_sin,
    err_vel_id,
    param_id,
    pz_cross,
    pz_reduce,
    pz_sincos,
    time_id,
)
from .harness import gen_scene, problem_from_scene
from .reachsets import ReachConfig, build_all, build_bundle
from .robot import InertialParams, IntervalInertialParams, eigen_bounds, fk_batch, load_model
from .trajectory import InitialCondition, bernstein_coeffs, default_eta, eval_desired, time_partition

TOL = 1e-9


def encloses(pz: PolyZonotope, known: dict, values, tol: float = TOL) -> np.ndarray:
    """Per-sample mask: ``values`` (S, *shape) lies in ``pz`` with ``known`` ids fixed.

    ``known`` maps id -> (S,) array. Generators touching other ids are
    relaxed to ``[-|g m|, |g m|]`` with ``m`` the known part of the monomial.
    """
    values = np.asarray(values, dtype=float)
    S = values.shape[0]
    vals = values.reshape(S, -1)
    if pz.G.shape[0] == 0:
        return np.all(np.abs(vals - pz.c) <= tol * (1 + np.abs(vals)), axis=1)
    is_known = np.array([int(i) in known for i in pz.ids], dtype=bool)
    X = np.ones((S, len(pz.ids)))
    for col, ident in enumerate(pz.ids):
        if is_known[col]:
            X[:, col] = known[int(ident)]
    mono = np.prod(X[:, None, :] ** pz.E[None, :, :], axis=2)  # (S, ng); unknown columns contribute 1
    free = np.any(pz.E[:, ~is_known] != 0, axis=1)
    centre = pz.c + mono[:, ~free] @ pz.G[~free]
    radius = np.abs(mono[:, free]) @ np.abs(pz.G[free])
    gap = np.abs(vals - centre) - radius
    return np.all(gap <= tol * (1 + np.abs(vals)), axis=1)


def _result(violations, samples, t0):
    return {"violations": int(violations), "samples": int(samples), "seconds": time.perf_counter() - t0}


# ---------------------------------------------------------------------------
# interval arithmetic


def interval_suite(n: int, rng: np.random.Generator) -> dict:
    t0 = time.perf_counter()
    boxes = max(1, n // 100)
    bad = 0
    for _ in range(boxes):
        ca, cb = rng.normal(size=(2, 3, 3))
        ra, rb = rng.uniform(0, 1, size=(2, 3, 3)) * (rng.random((2, 3, 3)) < 0.7)
        A = IntervalMatrix.from_center_radius(ca, ra)
        B = IntervalMatrix.from_center_radius(cb, rb)
        a = ca + ra * rng.uniform(-1, 1, size=(100, 3, 3))
        b = cb + rb * rng.uniform(-1, 1, size=(100, 3, 3))
        checks = [
            (A + B, a + b), (A - B, a - b), (A * B, a * b), (iv_matmul(A, B), a @ b),
            (iv_cross(A[0], B[0]), np.cross(a[:, 0], b[:, 0])),
        ]
        for box, pts in checks:
            bad += int(np.sum(~np.all(box.contains(pts, 1e-12).reshape(len(pts), -1), axis=1)))
        lo = rng.uniform(-7, 7, 100)
        hi = lo + rng.uniform(0, 4, 100)
        x = lo + (hi - lo) * rng.random(100)
        for fn, f in ((interval_sin, np.sin), (interval_cos, np.cos)):
            l, h = fn(lo, hi)
            bad += int(np.sum((f(x) < l - 1e-12) | (f(x) > h + 1e-12)))
    return _result(bad, boxes * 100, t0)


# ---------------------------------------------------------------------------
# polynomial zonotope operations


def _random_pz(rng, shape, ids, ng=5, deg=2):
    return PolyZonotope(rng.normal(size=shape), rng.normal(size=(ng,) + tuple(shape)) * 0.5,
                        rng.integers(0, deg + 1, size=(ng, len(ids))), ids)


def pz_suite(n: int, rng: np.random.Generator) -> dict:
    t0 = time.perf_counter()
    ids = [param_id(0), param_id(1), time_id(0)]
    sets = max(1, n // 200)
    bad = 0
    for _ in range(sets):
        p = _random_pz(rng, (3,), ids)
        q = _random_pz(rng, (3,), ids[1:])
        M = _random_pz(rng, (3, 3), ids[:2])
        x = rng.uniform(-1, 1, size=(200, 3))
        known = {i: x[:, c] for c, i in enumerate(ids)}
        # by id: the constructor drops ids whose exponent column is all zero
        pv, qv, Mv = p.evaluate(known), q.evaluate(known), M.evaluate(known)
        cases = [
            (p + q, pv + qv), (p - q, pv - qv), (p * q, pv * qv), (M @ p, np.einsum("sij,sj->si", Mv, pv)),
            (pz_cross(p, q), np.cross(pv, qv)), (pz_reduce(M @ p, 4), np.einsum("sij,sj->si", Mv, pv)),
        ]
        for pz, v in cases:
            bad += int(np.sum(~encloses(pz, known, v)))
        lo, hi = p.bounds()
        bad += int(np.sum(np.any((pv < lo - 1e-12) | (pv > hi + 1e-12), axis=1)))
        k = rng.uniform(-1, 1, 2)
        sl = p.slice({ids[0]: k[0], ids[1]: k[1]})
        fixed = {**known, ids[0]: np.full(200, k[0]), ids[1]: np.full(200, k[1])}
        bad += int(np.sum(~encloses(sl, known, p.evaluate(fixed))))
    return _result(bad, sets * 200 * 8, t0)


def taylor_suite(n: int, rng: np.random.Generator, degree: int = 6) -> dict:
    t0 = time.perf_counter()
    ids = [param_id(0), time_id(0)]
    sets = max(1, n // 500)
    bad = 0
    for _ in range(sets):
        p = PolyZonotope(rng.uniform(-3, 3), rng.normal(size=(4,)) * rng.uniform(0.05, 0.4),
                         rng.integers(0, 3, size=(4, 2)), ids)
        s, c = pz_sincos(p, degree)
        x = rng.uniform(-1, 1, size=(500, 2))
        known = {i: x[:, j] for j, i in enumerate(ids)}
        v = p.evaluate(x)
        bad += int(np.sum(~encloses(s, known, np.sin(v)))) + int(np.sum(~encloses(c, known, np.cos(v))))
    return _result(bad, sets * 1000, t0)


# ---------------------------------------------------------------------------
# dynamics


def _draw_params(rng, ip: IntervalInertialParams, S: int) -> InertialParams:
    """Independent uniform draws of every entry, inertia kept symmetric."""
    mass = ip.mass.lo + (ip.mass.hi - ip.mass.lo) * rng.random((S,) + ip.mass.shape)
    com = ip.com.lo + (ip.com.hi - ip.com.lo) * rng.random((S,) + ip.com.shape)
    u = rng.random((S,) + ip.inertia.shape)
    u = np.triu(u) + np.swapaxes(np.triu(u, 1), -1, -2)
    inertia = ip.inertia.lo + (ip.inertia.hi - ip.inertia.lo) * u
    return InertialParams(mass, com, inertia)


def irnea_suite(n: int, rng: np.random.Generator) -> dict:
    t0 = time.perf_counter()
    bad = 0
    per = max(1, n // 2)
    for name in ("planar2", "spatial3"):
        model, p0, _ = load_model(name)
        ip = IntervalInertialParams.from_fractions(p0, 0.2, 0.2, com_abs=0.01)
        dn = model.n_q
        for chunk in range(0, per, 500):
            S = min(500, per - chunk)
            q, qd, qa, qdda = rng.uniform(-2, 2, size=(4, dn))
            box = irnea(model, q, qd, qa, qdda, ip)
            tau = rnea(model, np.broadcast_to(q, (S, dn)), qd, qa, qdda, _draw_params(rng, ip, S))
            bad += int(np.sum(~np.all(box.contains(tau, 1e-10), axis=1)))
    return _result(bad, 2 * per, t0)


class _TubeSampler:
    """States inside one reach-set bundle with the matching indeterminate values."""

    def __init__(self, model, init, eta, grid, i, cfg, bundle):
        self.model, self.init, self.eta, self.grid, self.i, self.cfg, self.b = model, init, eta, grid, i, cfg, bundle

    def draw(self, rng, S, r_ball: bool = False):
        n = self.model.n_q
        cfg = self.cfg
        k = rng.uniform(-1, 1, size=(S, n))
        xt = rng.uniform(-1, 1, size=S)
        lo, hi = self.grid.interval(self.i)
        t = 0.5 * (lo + hi) + 0.5 * (hi - lo) * xt
        eps_p = np.broadcast_to(cfg.eps_p, (n,))
        if r_ball:
            # tracking errors with |r| <= eps; then |e_dot| <= eps_v follows
            r = rng.normal(size=(S, n))
            r *= (cfg.eps * rng.random(S) ** (1.0 / n) / np.linalg.norm(r, axis=1))[:, None]
            e = eps_p * rng.uniform(-1, 1, size=(S, n))
            ed = r - cfg.Kr * e
        else:
            e = eps_p * rng.uniform(-1, 1, size=(S, n))
            ed = cfg.eps_v * rng.uniform(-1, 1, size=(S, n))
        qd_des = np.zeros((3, S, n))
        for s in range(S):
            tr = bernstein_coeffs(self.init, k[s], self.eta, self.grid.t_f)
            qd_des[:, s] = eval_desired(tr, t[s])
        known = {time_id(self.i): xt}
        for j in range(n):
            known[param_id(j)] = k[:, j]
            known[err_pos_id(j)] = e[:, j] / eps_p[j]
            known[err_vel_id(j)] = ed[:, j] / cfg.eps_v
        return qd_des, e, ed, known


def _tubes(rng, n_bundles=3):
    """A few bundles on the 2-link and 3-link fixtures from random moving starts."""
    out = []
    for name in ("planar2", "spatial3"):
        model, p0, ip = load_model(name)
        sm, sM = eigen_bounds(model, ip, 5000)
        cfg = ControllerConfig(np.full(model.n_q, 5.0), 1e-3, 1.0, sm, sM)
        grid = time_partition(1.0, 40)
        for _ in range(n_bundles):
            n = model.n_q
            init = InitialCondition(rng.uniform(-1, 1, n), rng.uniform(-0.5, 0.5, n), rng.uniform(-1, 1, n))
            eta = default_eta(init, np.pi / 24)
            i = int(rng.integers(0, grid.n_t))
            b = build_bundle(model, init, eta, grid, i, cfg, p0, ip, ReachConfig(fk_budget=40, fo_budget=40, rnea_budget=40))
            out.append((model, p0, ip, cfg, _TubeSampler(model, init, eta, grid, i, cfg, b)))
    return out


def reach_suites(n: int, rng: np.random.Generator, tubes=None) -> dict:
    """PZFK, PZFO, PZRNEA and input reach set containment on shared bundles."""
    tubes = _tubes(rng) if tubes is None else tubes
    per = max(1, -(-n // len(tubes)))
    res = {}
    counts = {"pzfk": 0, "pzfo": 0, "pzrnea": 0, "input_reach_set": 0}
    times = dict.fromkeys(counts, 0.0)
    for model, p0, ip, cfg, tube in tubes:
        b = tube.b
        nq = model.n_q
        (q_d, qd_d, qdd_d), e, ed, known = tube.draw(rng, per)
        q, qd = q_d - e, qd_d - ed
        t0 = time.perf_counter()
        R, p = fk_batch(model, q)
        for j in range(nq):
            counts["pzfk"] += int(np.sum(~encloses(b.p[j], known, p[:, j])))
            counts["pzfk"] += int(np.sum(~encloses(b.R[j], known, R[:, j])))
        times["pzfk"] += time.perf_counter() - t0
        t0 = time.perf_counter()
        for j, link in enumerate(model.links):
            y = rng.uniform(-1, 1, size=(per, link.generators.shape[0]))
            local = link.center + y @ link.generators
            world = p[:, j] + np.einsum("sab,sb->sa", R[:, j], local)
            counts["pzfo"] += int(np.sum(~encloses(b.FO[j], known, world)))
        times["pzfo"] += time.perf_counter() - t0
        t0 = time.perf_counter()
        qa, qdda = qd_d + cfg.Kr * e, qdd_d + cfg.Kr * ed
        tau = rnea(model, q, qd, qa, qdda, p0)
        counts["pzrnea"] += int(np.sum(~encloses(b.tau, known, tau)))
        times["pzrnea"] += time.perf_counter() - t0
        t0 = time.perf_counter()
        (q_d, qd_d, qdd_d), e, ed, known = tube.draw(rng, per, r_ball=True)
        st = TotalFeedbackState(q_d - e, qd_d - ed, q_d, qd_d, qdd_d)
        u = robust_input(model, st, p0, ip, cfg).u
        counts["input_reach_set"] += int(np.sum(~encloses(b.U, known, u)))
        times["input_reach_set"] += time.perf_counter() - t0
    for key in counts:
        res[key] = {"violations": counts[key], "samples": per * len(tubes), "seconds": times[key]}
    return res


def pzrnea_degenerate_error(rng: np.random.Generator, trials: int = 20) -> float:
    """Largest ``|pzrnea - rnea|`` for point-valued inputs (no set arithmetic slack)."""
    worst = 0.0
    for name in ("planar2", "spatial3"):
        model, p0, _ = load_model(name)
        for _ in range(trials):
            q, qd, qa, qdda = rng.uniform(-2, 2, size=(4, model.n_q))
            rots = [PolyZonotope(Rj) for Rj in real_rotations(model, q)]
            pts = lambda v: [PolyZonotope(np.asarray(x)) for x in v]
            out = pzrnea(model, rots, pts(qd), pts(qa), pts(qdda), pz_inertial_params(p0))
            worst = max(worst, float(np.max(np.abs(out.c - rnea(model, q, qd, qa, qdda, p0)))))
    return worst


# ---------------------------------------------------------------------------
# constraint gradients


def gradient_suite(n_pairs: int, rng: np.random.Generator, h: float = 1e-6, rel_tol: float = 1e-5) -> dict:
    """Analytic constraint Jacobians vs central differences on random scenes.

    A row counts only when the two one-sided differences agree (no active
    face or sign switch inside ``[k - h, k + h]``); the error of a row is
    ``|g - g_fd| / max(|g_fd|, 1)``.
    """
    t0 = time.perf_counter()
    bad = rows = 0
    worst = 0.0
    scenes = max(1, n_pairs // 10)
    for s in range(scenes):
        scene = gen_scene(int(rng.integers(2, 6)), int(rng.integers(0, 2**31)))
        prob = problem_from_scene(scene)
        nq = prob.model.n_q
        init = InitialCondition(np.asarray(scene["q_start"]), rng.uniform(-0.3, 0.3, nq), np.zeros(nq))
        eta = default_eta(init, prob.config.eta1)
        grid = time_partition(prob.config.t_f, prob.config.n_t)
        bundles = build_all(prob.model, init, eta, grid, prob.ctrl, prob.params0, prob.iparams,
                            ReachConfig(fk_budget=40, fo_budget=40, rnea_budget=40))
        cons = build_constraints(prob.model, bundles, prob.obstacles, prefilter=False)
        for _ in range(n_pairs // scenes if s < scenes - 1 else n_pairs - (scenes - 1) * (n_pairs // scenes)):
            k = rng.uniform(-1 + 2 * h, 1 - 2 * h, nq)
            g = cons.evaluate(k)[1]
            h0 = cons.evaluate(k, with_grad=False)
            fd = np.zeros_like(g)
            smooth = np.ones(g.shape[0], dtype=bool)
            for d in range(nq):
                e = np.zeros(nq)
                e[d] = h
                hp, hm = cons.evaluate(k + e, with_grad=False), cons.evaluate(k - e, with_grad=False)
                fwd, bwd = (hp - h0) / h, (h0 - hm) / h
                smooth &= np.abs(fwd - bwd) <= 1e-3 * np.maximum(np.abs(fwd), 1.0)
                fd[:, d] = (hp - hm) / (2 * h)
            err = np.max(np.abs(g - fd), axis=1) / np.maximum(np.max(np.abs(fd), axis=1), 1.0)
            rows += int(smooth.sum())
            if smooth.any():
                worst = max(worst, float(err[smooth].max()))
            bad += int(np.sum(err[smooth] > rel_tol))
    out = _result(bad, rows, t0)
    out["worst_rel_error"] = worst
    return out


def run_all(n: int = 1000, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    report = {
        "interval_ops": interval_suite(n, rng),
        "pz_ops": pz_suite(n, rng),
        "taylor_sincos": taylor_suite(n, rng),
        "irnea": irnea_suite(n, rng),
    }
    report.update(reach_suites(n, rng))
    report["constraint_gradients"] = gradient_suite(max(10, n // 100), rng)
    return report
