"""Trajectory optimisation with a wall-clock budget, the straight-line
waypoint generator, the receding-horizon loop with braking fallback and an
independent post-hoc safety audit.

Episodes are step-wise objects so that a driver can batch the tracking
simulations of several episodes into one integration call; the next plan
only depends on the previous desired trajectory, never on the tracked
state, so planning before tracking gives the same result as running the
two concurrently.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import minimize

from .constraints import ConstraintSet, build_constraints
from .controller import ControllerConfig, SimLog, simulate_closed_loop
from .reachsets import ReachConfig, build_all
from .robot import InertialParams, IntervalInertialParams, RobotModel, fk_batch
from .trajectory import (
    BernsteinTrajectory,
    InitialCondition,
    bernstein_coeffs,
    default_eta,
    eval_desired,
    time_partition,
)


class PlanningError(ValueError):
    pass


class _Deadline(Exception):
    pass


@dataclass(frozen=True)
class PlannerConfig:
    t_p: float = 0.5
    t_f: float = 1.0
    n_t: int = 40
    eta1: float = np.pi / 48
    hlp_step: float = np.pi / 24
    goal_tol: float = 0.05
    max_iterations: int = 30
    # stop (braking) after this many plans without getting closer to the goal
    stall_patience: int = 8
    sim_dt: float = 1e-3
    reach: ReachConfig = ReachConfig()
    # constraints are tightened by this much inside the solver so the
    # returned point is strictly feasible for the unshifted ones
    solver_shift: float = 1e-5
    max_outer: int = 25

    def __post_init__(self):
        if not 0 < self.t_p < self.t_f:
            raise PlanningError("need 0 < t_p < t_f")
        if self.n_t < 1 or self.hlp_step <= 0 or self.eta1 <= 0:
            raise PlanningError("n_t, hlp_step and eta1 must be positive")


@dataclass
class PlanningProblem:
    model: RobotModel
    params0: InertialParams
    iparams: IntervalInertialParams
    true_params: InertialParams
    ctrl: ControllerConfig
    obstacles: list
    q_start: np.ndarray
    q_goal: np.ndarray
    config: PlannerConfig = PlannerConfig()

    def __post_init__(self):
        self.q_start = np.asarray(self.q_start, dtype=float)
        self.q_goal = np.asarray(self.q_goal, dtype=float)
        n = self.model.n_q
        if self.q_start.shape != (n,) or self.q_goal.shape != (n,):
            raise PlanningError(f"start and goal need {n} joint values")
        if not self.iparams.contains(self.true_params):
            raise PlanningError("true parameters lie outside the uncertainty box")
        if not config_collision_free(self.model, self.q_start, self.obstacles):
            raise PlanningError("start configuration is in collision")


# ---------------------------------------------------------------------------
# geometry helpers shared with scene generation and the audit


def link_sample_points(model: RobotModel, per_axis: int = 3) -> list:
    """Link-frame sample points of every link box: a ``per_axis``-cube grid
    over the generator coefficients, which includes the box vertices."""
    g = np.linspace(-1.0, 1.0, max(per_axis, 2))
    out = []
    for link in model.links:
        m = link.generators.shape[0]
        coeff = np.stack(np.meshgrid(*([g] * m), indexing="ij"), axis=-1).reshape(-1, m) if m else np.zeros((1, 0))
        out.append(link.center + coeff @ link.generators)
    return out


def world_link_points(model: RobotModel, q, per_axis: int = 3) -> list:
    """World sample points per link, each of shape ``q.shape[:-1] + (n_pts, 3)``."""
    R, p = fk_batch(model, q)
    pts = link_sample_points(model, per_axis)
    return [p[..., j, None, :] + np.einsum("...ab,nb->...na", R[..., j, :, :], pts[j]) for j in range(model.n_q)]


def config_collision_free(model: RobotModel, q, obstacles, margin: float = 0.0) -> bool:
    """Face-separation test of every link box against every obstacle at ``q``.

    A link is accepted when some obstacle face has the whole link box
    beyond it by more than ``margin``; this never accepts a colliding pose.
    """
    R, p = fk_batch(model, np.asarray(q, dtype=float))
    for j, link in enumerate(model.links):
        c = p[j] + R[j] @ link.center
        G = link.generators @ R[j].T
        for obs in obstacles:
            lo = obs.A @ c - np.abs(obs.A @ G.T).sum(axis=1) - obs.b
            if np.max(lo) <= margin:
                return False
    return True


# ---------------------------------------------------------------------------
# optimisation


@dataclass(frozen=True)
class PlanResult:
    solve_time: float
    iterations: int
    max_constraint: float

    @property
    def success(self) -> bool:
        return isinstance(self, PlanSuccess)


@dataclass(frozen=True)
class PlanSuccess(PlanResult):
    k: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cost: float = 0.0


@dataclass(frozen=True)
class PlanFailure(PlanResult):
    reason: str = "infeasible"  # "timeout", "infeasible" or "diverged"


class Optimizer(Protocol):
    def __call__(self, constraints: ConstraintSet, cost, n: int, budget: float) -> PlanResult: ...


def waypoint_cost(eta, waypoint):
    """``k -> (|q_d(t_f; k) - waypoint|^2, gradient)``; ``q_d(t_f; k) = eta1 k + eta2``."""
    eta1 = np.asarray(eta[0], dtype=float)
    eta2 = np.asarray(eta[1], dtype=float)
    wp = np.asarray(waypoint, dtype=float)

    def f(k):
        d = eta1 * k + eta2 - wp
        return float(d @ d), 2.0 * eta1 * d

    return f


def augmented_lagrangian(constraints: ConstraintSet, cost, n: int, budget: float, shift: float = 1e-5,
                         max_outer: int = 25, k0=None) -> PlanResult:
    """Minimise ``cost`` over ``[-1, 1]^n`` subject to ``constraints <= 0``.

    Powell-Hestenes-Rockafellar multipliers for the inequalities with a
    bound-constrained L-BFGS inner solve. The wall-clock ``budget`` (s) is
    checked inside every function evaluation. Only points with every
    constraint ``<= 0`` are returned; the best such point seen wins.
    """
    start = time.perf_counter()
    deadline = start + budget
    k = np.zeros(n) if k0 is None else np.clip(np.asarray(k0, float), -1, 1)
    m = constraints.n_constraints
    lam = np.zeros(m)
    rho = 10.0
    best = None

    def consider(x):
        nonlocal best
        h = constraints.evaluate(x, with_grad=False) if m else np.zeros(0)
        if m == 0 or np.max(h) <= 0.0:
            c = cost(x)[0]
            if best is None or c < best[1]:
                best = (x.copy(), c, float(np.max(h)) if m else -np.inf)
        return h

    def lagrangian(x):
        if time.perf_counter() > deadline:
            raise _Deadline
        f, g = cost(x)
        if m:
            h, J = constraints.evaluate(x)
            mult = np.maximum(0.0, lam + rho * (h + shift))
            f = f + (mult @ mult - lam @ lam) / (2.0 * rho)
            g = g + J.T @ mult
        return f, g

    h = consider(k)
    viol_prev = np.inf
    outer = 0
    timed_out = False
    try:
        for outer in range(1, max_outer + 1):
            res = minimize(lagrangian, k, jac=True, method="L-BFGS-B", bounds=[(-1.0, 1.0)] * n,
                           options={"maxiter": 200, "gtol": 1e-9, "ftol": 1e-12})
            if not np.all(np.isfinite(res.x)):
                return PlanFailure(time.perf_counter() - start, outer, float("inf"), reason="diverged")
            k = np.clip(res.x, -1.0, 1.0)
            h = consider(k)
            if m == 0:
                break
            viol = float(np.max(np.maximum(h + shift, 0.0)))
            lam = np.maximum(0.0, lam + rho * (h + shift))
            if viol == 0.0 and best is not None and np.allclose(best[0], k):
                break
            if viol > 0.25 * viol_prev:
                rho = min(rho * 10.0, 1e8)
            viol_prev = viol
    except _Deadline:
        timed_out = True
    elapsed = time.perf_counter() - start
    if best is not None:
        return PlanSuccess(elapsed, outer, best[2], k=best[0], cost=best[1])
    max_h = float(np.max(h)) if m else 0.0
    return PlanFailure(elapsed, outer, max_h, reason="timeout" if timed_out else "infeasible")


@dataclass
class PreparedPlan:
    init: InitialCondition
    eta: tuple
    bundles: list
    constraints: ConstraintSet
    build_time: float


def prepare(problem: PlanningProblem, init: InitialCondition) -> PreparedPlan:
    """Reach sets and constraints for every time step of one planning iteration."""
    cfg = problem.config
    t0 = time.perf_counter()
    eta = default_eta(init, cfg.eta1)
    grid = time_partition(cfg.t_f, cfg.n_t)
    bundles = build_all(problem.model, init, eta, grid, problem.ctrl, problem.params0, problem.iparams, cfg.reach)
    cons = build_constraints(problem.model, bundles, problem.obstacles)
    return PreparedPlan(init, eta, bundles, cons, time.perf_counter() - t0)


def solve_opt(problem: PlanningProblem, init: InitialCondition, waypoint, prepared: PreparedPlan | None = None,
              optimizer: Optimizer | None = None) -> tuple[PlanResult, PreparedPlan]:
    """One planning iteration; the solve (not the set construction) gets ``t_p`` seconds."""
    prepared = prepare(problem, init) if prepared is None else prepared
    cfg = problem.config
    cost = waypoint_cost(prepared.eta, waypoint)
    if optimizer is None:
        result = augmented_lagrangian(prepared.constraints, cost, init.n, cfg.t_p, cfg.solver_shift, cfg.max_outer)
    else:
        result = optimizer(prepared.constraints, cost, init.n, cfg.t_p)
    return result, prepared


def straight_line_hlp(q_start, q_goal, q_current, step: float = np.pi / 24) -> np.ndarray:
    """Next waypoint: ``q_current`` moved toward the goal along the joint-space
    segment so that no joint moves more than ``step``; clamped at the goal."""
    del q_start  # the segment is re-anchored at the current desired position
    q = np.asarray(q_current, dtype=float)
    d = np.asarray(q_goal, dtype=float) - q
    far = np.max(np.abs(d))
    if far <= step:
        return np.asarray(q_goal, dtype=float).copy()
    return q + (step / far) * d


# ---------------------------------------------------------------------------
# receding horizon


@dataclass
class TrackRequest:
    traj: BernsteinTrajectory
    t_end: float
    q0: np.ndarray
    qd0: np.ndarray


@dataclass
class PlanRecord:
    iteration: int
    success: bool
    reason: str
    k: list | None
    solve_time: float
    build_time: float
    n_constraints: int
    max_constraint: float
    waypoint: list


@dataclass
class EpisodeLog:
    """Executed trajectory (global time) plus per-iteration planning records."""

    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    e: np.ndarray
    ed: np.ndarray
    r: np.ndarray
    u: np.ndarray
    v: np.ndarray
    plans: list
    status: str  # "goal", "stopped", "stalled", "iteration_cap", "no_motion"
    goal_reached: bool
    eps: float
    trajectories: list = field(default_factory=list)

    @property
    def r_norm(self) -> np.ndarray:
        return np.linalg.norm(self.r, axis=-1)

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "goal_reached": self.goal_reached,
            "eps": self.eps,
            "plans": [vars(p) for p in self.plans],
            "trajectories": self.trajectories,
            "final_q": self.q[-1].tolist() if len(self.q) else None,
        }

    def to_csv(self, path) -> None:
        n = self.q.shape[-1]
        cols = ["t"] + [f"{k}{j}" for k in ("q", "qd", "e", "ed", "u", "v") for j in range(n)] + ["r_norm"]
        data = np.column_stack([self.t, self.q, self.qd, self.e, self.ed, self.u, self.v, self.r_norm])
        np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="")


class Episode:
    """State machine of one receding-horizon run (see :func:`run_episodes`)."""

    def __init__(self, problem: PlanningProblem):
        self.p = problem
        self.cfg = problem.config
        self.current: BernsteinTrajectory | None = None
        self.plans: list[PlanRecord] = []
        self.segments: list[tuple[float, SimLog]] = []
        self.trajs: list[dict] = []
        self.clock = 0.0
        self.q = problem.q_start.copy()
        self.qd = np.zeros_like(self.q)
        self.done = False
        self.status = "running"
        self._finishing = False
        self._pending_next: BernsteinTrajectory | None = None
        self._best_dist = np.inf
        self._since_best = 0

    def _plan(self, init: InitialCondition) -> BernsteinTrajectory | None:
        wp = straight_line_hlp(self.p.q_start, self.p.q_goal, init.q, self.cfg.hlp_step)
        result, prep = solve_opt(self.p, init, wp)
        self.plans.append(PlanRecord(
            len(self.plans), result.success, "ok" if result.success else result.reason,
            result.k.tolist() if result.success else None, result.solve_time, prep.build_time,
            prep.constraints.n_constraints, result.max_constraint, wp.tolist(),
        ))
        if not result.success:
            return None
        return bernstein_coeffs(init, result.k, prep.eta, self.cfg.t_f)

    def next_request(self) -> TrackRequest | None:
        """Plan as needed and return the next segment to track, or ``None`` when done."""
        if self.done:
            return None
        cfg = self.cfg
        if self.current is None:
            traj = self._plan(InitialCondition.at_rest(self.q))
            if traj is None:
                self._finish("no_motion")
                return None
            self.current = traj
        final = self.current.beta[:, -1]
        # the realised final position differs from the planned one by at most eps_p
        if np.max(np.abs(final - self.p.q_goal) + self.p.ctrl.eps_p) < cfg.goal_tol:
            self._finishing, self.status = True, "goal"
            return TrackRequest(self.current, cfg.t_f, self.q, self.qd)
        dist = float(np.max(np.abs(final - self.p.q_goal)))
        if dist < self._best_dist - 1e-3:
            self._best_dist, self._since_best = dist, 0
        else:
            self._since_best += 1
        if len(self.plans) >= cfg.max_iterations or self._since_best >= cfg.stall_patience:
            self._finishing = True
            self.status = "iteration_cap" if len(self.plans) >= cfg.max_iterations else "stalled"
            return TrackRequest(self.current, cfg.t_f, self.q, self.qd)
        q, qd, qdd = eval_desired(self.current, cfg.t_p)
        nxt = self._plan(InitialCondition(q, qd, qdd))
        if nxt is None:
            # braking fallback: follow the current trajectory to rest
            self._finishing, self.status = True, "stopped"
            return TrackRequest(self.current, cfg.t_f, self.q, self.qd)
        self._pending_next = nxt
        return TrackRequest(self.current, cfg.t_p, self.q, self.qd)

    def complete(self, log: SimLog) -> None:
        """Record a tracked segment (batch index already selected)."""
        self.segments.append((self.clock, log))
        self.trajs.append({"t0": self.clock, "beta": self.current.beta.tolist(), "k": self.current.k.tolist()})
        self.clock += float(log.t[-1])
        self.q, self.qd = log.q[-1, 0].copy(), log.qd[-1, 0].copy()
        if self._finishing:
            self._finish(self.status)
        else:
            self.current, self._pending_next = self._pending_next, None

    def _finish(self, status: str) -> None:
        self.done = True
        self.status = status

    def log(self) -> EpisodeLog:
        n = self.p.model.n_q
        keys = ("q", "qd", "e", "ed", "r", "u", "v")
        if not self.segments:
            t = np.zeros(1)
            arrays = {k: np.zeros((1, n)) for k in keys}
            arrays["q"] = self.q[None].copy()
        else:
            parts = {k: [] for k in keys}
            ts = []
            for idx, (t0, seg) in enumerate(self.segments):
                sl = slice(None) if idx == len(self.segments) - 1 else slice(0, -1)
                ts.append(t0 + seg.t[sl])
                for k in keys:
                    parts[k].append(getattr(seg, k)[sl, 0])
            t = np.concatenate(ts)
            arrays = {k: np.concatenate(v) for k, v in parts.items()}
        goal = bool(np.max(np.abs(arrays["q"][-1] - self.p.q_goal)) < self.cfg.goal_tol)
        return EpisodeLog(t, **arrays, plans=self.plans, status=self.status, goal_reached=goal,
                          eps=self.p.ctrl.eps, trajectories=self.trajs)


def stack_params(params: list[InertialParams]) -> InertialParams:
    """Stack per-trial parameter sets along a new leading batch axis."""
    return InertialParams(np.stack([p.mass for p in params]), np.stack([p.com for p in params]),
                          np.stack([p.inertia for p in params]))


def run_episodes(problems: list[PlanningProblem]) -> list[EpisodeLog]:
    """Run several receding-horizon episodes, batching their tracking phases.

    All problems must share the robot, controller, parameter box, ``t_f``
    and simulation step; each episode keeps its own true parameters.
    """
    episodes = [Episode(p) for p in problems]
    ref = problems[0]
    while True:
        reqs = [(ep, ep.next_request()) for ep in episodes if not ep.done]
        reqs = [(ep, r) for ep, r in reqs if r is not None]
        if not reqs:
            break
        for t_end in sorted({r.t_end for _, r in reqs}):
            group = [(ep, r) for ep, r in reqs if r.t_end == t_end]
            log = simulate_closed_loop(
                ref.model, stack_params([ep.p.true_params for ep, _ in group]), [r.traj for _, r in group],
                ref.ctrl, ref.params0, ref.iparams, dt=ref.config.sim_dt,
                q0=np.stack([r.q0 for _, r in group]), qd0=np.stack([r.qd0 for _, r in group]), t_end=t_end,
            )
            for b, (ep, _) in enumerate(group):
                ep.complete(_select(log, b))
    return [ep.log() for ep in episodes]


def _select(log: SimLog, b: int) -> SimLog:
    return SimLog(log.t, *(getattr(log, k)[:, b:b + 1] for k in ("q", "qd", "e", "ed", "r", "u", "v")),
                  meta=dict(log.meta))


def receding_horizon(problem: PlanningProblem) -> EpisodeLog:
    return run_episodes([problem])[0]


# ---------------------------------------------------------------------------
# audit


@dataclass
class AuditReport:
    collisions: int
    q_violations: int
    qd_violations: int
    u_violations: int
    r_violations: int
    n_time_samples: int
    min_clearance: float
    final_speed: float

    @property
    def violations(self) -> int:
        return self.collisions + self.q_violations + self.qd_violations + self.u_violations + self.r_violations

    @property
    def safe(self) -> bool:
        return self.violations == 0


def safety_audit(log: EpisodeLog, model: RobotModel, obstacles, eps: float | None = None,
                 n_samples: int = 10, points_per_axis: int = 3, tol: float = 1e-9) -> AuditReport:
    """Independent check of an executed trajectory.

    States are resampled ``n_samples`` times per simulation step with cubic
    Hermite interpolation of ``(q, qd)``; sampled link-volume points are
    tested against every obstacle, and joint limits, logged inputs and the
    logged ``|r|`` are compared with their bounds.
    """
    eps = log.eps if eps is None else eps
    t, q, qd = log.t, log.q, log.qd
    if len(t) > 1:
        keep = np.concatenate([[True], np.diff(t) > 0])
        t, q, qd = t[keep], q[keep], qd[keep]
        spline = CubicHermiteSpline(t, q, qd, axis=0)
        ts = np.linspace(t[0], t[-1], (len(t) - 1) * n_samples + 1)
        qs, qds = spline(ts), spline(ts, 1)
    else:
        ts, qs, qds = t, q, qd
    qlo, qhi = model.q_limits
    vlo, vhi = model.qd_limits
    ulo, uhi = model.u_limits
    q_bad = int(np.sum(np.any((qs < qlo - tol) | (qs > qhi + tol), axis=-1)))
    qd_bad = int(np.sum(np.any((qds < vlo - tol) | (qds > vhi + tol), axis=-1)))
    u_bad = int(np.sum(np.any((log.u < ulo - tol) | (log.u > uhi + tol), axis=-1)))
    r_bad = int(np.sum(log.r_norm > eps + tol))
    collisions = 0
    clearance = np.inf
    chunk = 4096
    for s in range(0, len(ts), chunk):
        pts = world_link_points(model, qs[s:s + chunk], points_per_axis)
        for P in pts:
            for obs in obstacles:
                sep = np.max(P @ obs.A.T - obs.b, axis=-1)  # (T, n_pts)
                collisions += int(np.sum(np.any(sep <= 0.0, axis=-1)))
                clearance = min(clearance, float(sep.min()))
    speed = float(np.max(np.abs(log.qd[-1]))) if len(log.qd) else 0.0
    return AuditReport(collisions, q_bad, qd_bad, u_bad, r_bad, len(ts), clearance, speed)
