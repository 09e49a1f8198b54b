"""Robust passivity-based tracking controller and closed-loop simulation.

The applied input is ``u = tau - v``: ``tau`` is the nominal
passivity-based input computed with the nominal parameters, and ``v`` is a
robust correction sized from an interval bound on the model mismatch so
that the modified error ``r = e_dot + Kr e`` never leaves the ball of
radius ``eps = sqrt(2 V_M / sigma_m)`` when it starts inside it.

All functions accept states batched over leading axes.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import TotalFeedbackState, irnea, mass_times_r, rnea
from .interval import IntervalMatrix
from .robot import InertialParams, IntervalInertialParams, RobotModel
from .trajectory import BernsteinTrajectory, eval_power

R_ZERO = 1e-12


class ControllerError(ValueError):
    pass


class SingularityError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ControllerConfig:
    Kr: np.ndarray
    V_M: float
    alpha_c: float
    sigma_m: float
    sigma_M: float

    def __post_init__(self):
        Kr = np.atleast_1d(np.asarray(self.Kr, dtype=float))
        object.__setattr__(self, "Kr", Kr)
        if np.any(Kr <= 0):
            raise ControllerError("Kr entries must be positive")
        if self.V_M <= 0 or self.alpha_c <= 0:
            raise ControllerError("V_M and alpha_c must be positive")
        if not 0 < self.sigma_m <= self.sigma_M:
            raise ControllerError("need 0 < sigma_m <= sigma_M")

    @property
    def eps(self) -> float:
        return float(np.sqrt(2.0 * self.V_M / self.sigma_m))

    @property
    def eps_p(self) -> np.ndarray:
        return self.eps / self.Kr

    @property
    def eps_v(self) -> float:
        return 2.0 * self.eps


def uniform_bounds(cfg: ControllerConfig):
    """``(eps, eps_p, eps_v)``: bounds on ``|r|``, ``|e_j|`` and ``|e_dot_j|``."""
    return cfg.eps, cfg.eps_p, cfg.eps_v


def nominal_input(model: RobotModel, state: TotalFeedbackState, params0: InertialParams, Kr) -> np.ndarray:
    _, _, qd_a, qdd_a, _ = state.errors(Kr)
    return rnea(model, state.q, state.qd, qd_a, qdd_a, params0)


def disturbance_bound(model, state, params0, iparams: IntervalInertialParams, Kr, tau=None):
    """Interval disturbance ``[w] = IRNEA([Delta]) - tau`` and its worst case
    magnitude ``w_M = max(|lo|, |hi|)``."""
    _, _, qd_a, qdd_a, _ = state.errors(Kr)
    if tau is None:
        tau = rnea(model, state.q, state.qd, qd_a, qdd_a, params0)
    full = irnea(model, state.q, state.qd, qd_a, qdd_a, iparams)
    w = IntervalMatrix._raw(full.lo - tau, full.hi - tau)
    w_M = np.maximum(np.abs(w.lo), np.abs(w.hi))
    return w, w_M


def _sup_quadratic(r, Mr: IntervalMatrix):
    """``sup`` of ``0.5 r^T [Mr]`` using endpoint products."""
    return 0.5 * np.maximum(r * Mr.lo, r * Mr.hi).sum(axis=-1)


def h_lower(model, state, iparams, V_M, Kr):
    """Lower bound ``V_M - sup([V])`` on the barrier value over the parameter box."""
    _, _, _, _, r = state.errors(Kr)
    Mr = mass_times_r(model, state.q, r, iparams)
    return V_M - _sup_quadratic(r, Mr)


def _interval_terms(model, state, tau, qd_a, qdd_a, r, iparams, V_M):
    """``(w_M, h_lower)`` from one IRNEA call.

    Same values as :func:`disturbance_bound` and :func:`h_lower`: the two
    evaluations are stacked on a leading axis, the second with zero rates
    and zero gravity so that it yields ``[M] r``.
    """
    q = np.asarray(state.q, float)
    zeros = np.zeros_like(q)
    stack = lambda a, b: np.stack(np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float)))
    gravity = np.stack([np.asarray(model.gravity, float), np.zeros(3)]).reshape((2,) + (1,) * (q.ndim - 1) + (3,))
    out = irnea(model, stack(q, q), stack(state.qd, zeros), stack(qd_a, zeros), stack(qdd_a, r), iparams,
                gravity=gravity)
    w_M = np.maximum(np.abs(out.lo[0] - tau), np.abs(out.hi[0] - tau))
    Mr = IntervalMatrix._raw(out.lo[1], out.hi[1])
    return w_M, V_M - _sup_quadratic(r, Mr)


@dataclass(frozen=True)
class ControlOutput:
    u: np.ndarray
    tau: np.ndarray
    v: np.ndarray
    gamma: np.ndarray
    w_M: np.ndarray
    h_lower: np.ndarray
    r: np.ndarray


def robust_input(model, state, params0, iparams, cfg: ControllerConfig) -> ControlOutput:
    """Nominal plus robust input for linear ``alpha(h) = alpha_c h``."""
    _, _, qd_a, qdd_a, r = state.errors(cfg.Kr)
    tau = rnea(model, state.q, state.qd, qd_a, qdd_a, params0)
    w_M, h = _interval_terms(model, state, tau, qd_a, qdd_a, r, iparams, cfg.V_M)
    rn = np.linalg.norm(r, axis=-1)
    safe = np.where(rn > R_ZERO, rn, 1.0)
    gamma = np.maximum(0.0, (-cfg.alpha_c * h + np.sum(np.abs(r) * w_M, axis=-1)) / safe)
    gamma = np.where(rn > R_ZERO, gamma, 0.0)
    v = -gamma[..., None] * r / safe[..., None]
    return ControlOutput(tau - v, tau, v, gamma, w_M, h, r)


def robust_input_bound(cfg: ControllerConfig, w_M) -> np.ndarray:
    """Per-joint bound on ``|v_j|`` valid whenever ``|r| <= eps``."""
    w_M = np.asarray(w_M, dtype=float)
    norm = np.linalg.norm(w_M, axis=-1, keepdims=True)
    return cfg.alpha_c * cfg.eps * (cfg.sigma_M - cfg.sigma_m) / 2.0 + (norm + w_M) / 2.0


def armour_bound_offset(cfg: ControllerConfig) -> float:
    """Constant term of the robust-input bound, ``alpha_c eps (sigma_M - sigma_m) / 2``."""
    return cfg.alpha_c * cfg.eps * (cfg.sigma_M - cfg.sigma_m) / 2.0


def bound_summary(cfg: ControllerConfig) -> dict:
    """Uniform bounds and robust-input offset, plus the alternative readings.

    ``eps_v_over_Kr`` is ``2 eps / K_r``; ``offset_unhalved`` drops the
    factor 1/2 on ``alpha_c eps (sigma_M - sigma_m)``. Neither is used by
    the controller or the constraints.
    """
    return {
        "eps": cfg.eps,
        "eps_p": cfg.eps_p.tolist(),
        "eps_v": cfg.eps_v,
        "eps_v_over_Kr": (2.0 * cfg.eps / cfg.Kr).tolist(),
        "offset": armour_bound_offset(cfg),
        "offset_unhalved": 2.0 * armour_bound_offset(cfg),
        "baseline_ratio": baseline_ratio(cfg.sigma_m, cfg.sigma_M),
    }


def baseline_gain(cfg: ControllerConfig) -> float:
    """Gain ``kappa`` that gives the comparison controller the same uniform bound."""
    return float(np.sqrt(cfg.sigma_M / (2.0 * cfg.V_M)))


def baseline_ratio(sigma_m: float, sigma_M: float) -> float:
    return float(np.sqrt(sigma_M / sigma_m))


def baseline_bound(cfg: ControllerConfig, w_M) -> np.ndarray:
    """Robust-input magnitude bound of the comparison controller, ``sqrt(sigma_M/sigma_m) |w_M|``."""
    return baseline_ratio(cfg.sigma_m, cfg.sigma_M) * np.linalg.norm(np.asarray(w_M, float), axis=-1)


def armour_beats_baseline_threshold(cfg: ControllerConfig) -> float:
    """``|w_M|`` above which the robust-input bound here is below the baseline's."""
    return armour_bound_offset(cfg) / (baseline_ratio(cfg.sigma_m, cfg.sigma_M) - 1.0)


def baseline_robust_input(model, state, params0, iparams, cfg: ControllerConfig, kappa=None, phi=1.0):
    """Comparison robust input ``v = -(kappa |w_M| + phi) r``."""
    kappa = baseline_gain(cfg) if kappa is None else np.asarray(kappa, dtype=float)
    if np.any(kappa < 1) or phi < 1:
        raise ControllerError("kappa and phi must be at least 1")
    _, _, qd_a, qdd_a, r = state.errors(cfg.Kr)
    tau = rnea(model, state.q, state.qd, qd_a, qdd_a, params0)
    _, w_M = disturbance_bound(model, state, params0, iparams, cfg.Kr, tau=tau)
    gain = kappa * np.linalg.norm(w_M, axis=-1) + phi
    v = -gain[..., None] * r
    return ControlOutput(tau - v, tau, v, gain, w_M, np.full(gain.shape, np.nan), r)


def max_projection_product(a, b, n_dirs: int = 100_000, rng=None) -> float:
    """Largest sampled ``(a.c)(b.c)`` over unit vectors ``c``."""
    rng = np.random.default_rng() if rng is None else rng
    c = rng.normal(size=(n_dirs, len(a)))
    c /= np.linalg.norm(c, axis=1, keepdims=True)
    return float(np.max((c @ a) * (c @ b)))


# ---------------------------------------------------------------------------
# simulation


@dataclass
class SimLog:
    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    e: np.ndarray
    ed: np.ndarray
    r: np.ndarray
    u: np.ndarray
    v: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def r_norm(self) -> np.ndarray:
        return np.linalg.norm(self.r, axis=-1)

    def to_csv(self, path, trial: int = 0):
        """Write one trial as CSV: t, q_j, qd_j, r_norm, u_j, v_j."""
        q, qd, u, v, rn = (x if x.ndim == 2 else x[:, trial] for x in (self.q, self.qd, self.u, self.v, self.r_norm))
        if rn.ndim == 2:
            rn = rn[:, trial]
        n = q.shape[-1]
        header = ["t"] + [f"q{j}" for j in range(n)] + [f"qd{j}" for j in range(n)] + ["r_norm"]
        header += [f"u{j}" for j in range(n)] + [f"v{j}" for j in range(n)]
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(len(self.t)):
                w.writerow([self.t[i], *q[i], *qd[i], rn[i], *u[i], *v[i]])


def simulate_closed_loop(
    model: RobotModel,
    true_params: InertialParams,
    traj: BernsteinTrajectory,
    cfg: ControllerConfig,
    params0: InertialParams,
    iparams: IntervalInertialParams,
    dt: float = 1e-3,
    q0=None,
    qd0=None,
    t_end: float | None = None,
    controller: str = "armour",
    baseline_phi: float = 1.0,
    baseline_kappa=None,
) -> SimLog:
    """RK4 integration of the true dynamics under the chosen controller.

    ``traj`` may be one trajectory or a list (simulated as a batch); the
    true and interval parameters may be batched the same way, and
    ``baseline_kappa`` may hold one gain per trial. The control is recomputed
    at every RK4 stage. Initial state defaults to the desired start.
    """
    trajs = traj if isinstance(traj, (list, tuple)) else [traj]
    B = len(trajs)
    t_end = trajs[0].t_f if t_end is None else t_end
    n_steps = int(round(t_end / dt))
    n = model.n_q

    P = np.stack([tr.power for tr in trajs])
    t_f = trajs[0].t_f
    if any(tr.t_f != t_f for tr in trajs):
        raise ControllerError("batched trajectories must share t_f")

    def desired(t):
        q, qd, qdd = eval_power(P, min(t, t_f), t_f)
        if t > t_f:
            # hold the final rest position after the horizon
            qd, qdd = np.zeros_like(qd), np.zeros_like(qdd)
        return q, qd, qdd

    qd_des0 = desired(0.0)
    q = qd_des0[0].copy() if q0 is None else np.broadcast_to(np.asarray(q0, float), (B, n)).copy()
    qd = qd_des0[1].copy() if qd0 is None else np.broadcast_to(np.asarray(qd0, float), (B, n)).copy()

    def control(t, q, qd):
        qdes, qddes, qdddes = desired(t)
        st = TotalFeedbackState(q, qd, qdes, qddes, qdddes)
        if controller == "armour":
            out = robust_input(model, st, params0, iparams, cfg)
        elif controller == "baseline":
            out = baseline_robust_input(model, st, params0, iparams, cfg, kappa=baseline_kappa, phi=baseline_phi)
        else:
            raise ControllerError(f"unknown controller {controller!r}")
        return out, st

    def accel(q, qd, u):
        # rows: bias (zero acceleration), then bias + M e_i
        acc = np.concatenate([np.zeros((1, n)), np.eye(n)]).reshape((n + 1,) + (1,) * (q.ndim - 1) + (n,))
        shape = (n + 1,) + q.shape
        out = rnea(model, np.broadcast_to(q, shape), np.broadcast_to(qd, shape), np.broadcast_to(qd, shape),
                   np.broadcast_to(acc, shape), true_params)
        bias = out[0]
        M = np.moveaxis(out[1:] - bias, 0, -1)
        try:
            return np.linalg.solve(M, (u - bias)[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise SingularityError("mass matrix solve failed") from exc

    T = np.arange(n_steps + 1) * dt
    logs = {k: np.zeros((n_steps + 1, B, n)) for k in ("q", "qd", "e", "ed", "r", "u", "v")}
    for i in range(n_steps + 1):
        t = T[i]
        out, st = control(t, q, qd)
        e, ed, _, _, r = st.errors(cfg.Kr)
        for key, val in (("q", q), ("qd", qd), ("e", e), ("ed", ed), ("r", r), ("u", out.u), ("v", out.v)):
            logs[key][i] = val
        if i == n_steps:
            break
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise SingularityError(f"state diverged at t={t:.4f}")
        k1q, k1v = qd, accel(q, qd, out.u)
        q2, v2 = q + 0.5 * dt * k1q, qd + 0.5 * dt * k1v
        k2q, k2v = v2, accel(q2, v2, control(t + 0.5 * dt, q2, v2)[0].u)
        q3, v3 = q + 0.5 * dt * k2q, qd + 0.5 * dt * k2v
        k3q, k3v = v3, accel(q3, v3, control(t + 0.5 * dt, q3, v3)[0].u)
        q4, v4 = q + dt * k3q, qd + dt * k3v
        k4q, k4v = v4, accel(q4, v4, control(t + dt, q4, v4)[0].u)
        q = q + dt / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
        qd = qd + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return SimLog(T, **logs, meta={"controller": controller, "dt": dt, "batch": B})
