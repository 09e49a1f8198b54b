"""Degree-5 Bernstein desired trajectories and their polynomial-zonotope
enclosures over time steps.

Time is rescaled to ``tau = t / t_f`` in [0, 1]; the public API takes
seconds. Five of the six coefficients are pinned by the initial condition
and the braking requirement (zero terminal velocity and acceleration); the
sixth, the final position, is ``eta1 * k + eta2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import comb

import numpy as np

from .polyzono import PolyZonotope, err_pos_id, err_vel_id, param_id, time_id

DEGREE = 5


class TrajectoryError(ValueError):
    pass


@dataclass(frozen=True)
class InitialCondition:
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray

    def __post_init__(self):
        for name in ("q", "qd", "qdd"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise TrajectoryError(f"initial condition {name} is not finite")
            object.__setattr__(self, name, arr)
        if not (self.q.shape == self.qd.shape == self.qdd.shape):
            raise TrajectoryError("initial condition vectors differ in length")

    @classmethod
    def at_rest(cls, q) -> "InitialCondition":
        q = np.asarray(q, dtype=float)
        return cls(q, np.zeros_like(q), np.zeros_like(q))

    @property
    def n(self) -> int:
        return self.q.shape[0]


def default_eta(init: InitialCondition, eta1=np.pi / 48):
    """``(eta1, eta2)`` with the final position centred on the start."""
    return np.broadcast_to(np.asarray(eta1, dtype=float), (init.n,)).copy(), init.q.copy()


def _pinned(init: InitialCondition, t_f: float):
    """Coefficients ``beta_0..beta_2`` (rescaled time) for each joint."""
    b0 = init.q
    b1 = (init.qd * t_f + 5.0 * b0) / 5.0
    b2 = (init.qdd * t_f**2 + 40.0 * b1 - 20.0 * b0) / 20.0
    return b0, b1, b2


def _bernstein_to_power(beta: np.ndarray) -> np.ndarray:
    """Power-basis coefficients (ascending in tau) from Bernstein coefficients."""
    n = DEGREE
    out = np.zeros(beta.shape[:-1] + (n + 1,))
    for l in range(n + 1):
        # C(n,l) tau^l (1-tau)^(n-l) = sum_m C(n,l) C(n-l,m) (-1)^m tau^(l+m)
        for m in range(n - l + 1):
            out[..., l + m] += beta[..., l] * comb(n, l) * comb(n - l, m) * (-1) ** m
    return out


@dataclass(frozen=True)
class BernsteinTrajectory:
    """One member of the family, with coefficients ``beta`` of shape (n, 6)."""

    beta: np.ndarray
    t_f: float
    eta1: np.ndarray
    eta2: np.ndarray
    k: np.ndarray

    @property
    def n(self) -> int:
        return self.beta.shape[0]

    @cached_property
    def power(self) -> np.ndarray:
        """Power-basis coefficients in rescaled time, shape (n, 6)."""
        return _bernstein_to_power(self.beta)


def bernstein_coeffs(init: InitialCondition, k, eta=None, t_f: float = 1.0) -> BernsteinTrajectory:
    """Trajectory with final position ``eta1 * k + eta2``."""
    k = np.asarray(k, dtype=float)
    if k.shape != (init.n,):
        raise TrajectoryError(f"k must have length {init.n}")
    if np.any(np.abs(k) > 1.0 + 1e-12):
        raise TrajectoryError(f"trajectory parameter outside [-1, 1]: {k}")
    if t_f <= 0:
        raise TrajectoryError("t_f must be positive")
    eta1, eta2 = default_eta(init) if eta is None else (np.asarray(eta[0], float), np.asarray(eta[1], float))
    eta1 = np.broadcast_to(eta1, (init.n,)).copy()
    eta2 = np.broadcast_to(eta2, (init.n,)).copy()
    b0, b1, b2 = _pinned(init, t_f)
    b5 = eta1 * k + eta2
    b4 = b5.copy()
    b3 = (40.0 * b4 - 20.0 * b5) / 20.0
    beta = np.stack([b0, b1, b2, b3, b4, b5], axis=-1)
    return BernsteinTrajectory(beta, float(t_f), eta1, eta2, k.copy())


def eval_desired(traj: BernsteinTrajectory, t):
    """``(q_d, qd_d, qdd_d)`` at times ``t`` (seconds); output shape ``t.shape + (n,)``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < -1e-12) or np.any(t > traj.t_f + 1e-12):
        raise TrajectoryError(f"time outside [0, {traj.t_f}]")
    return eval_power(traj.power, t, traj.t_f)


def eval_power(P, t, t_f):
    """Evaluate power-basis coefficients ``P`` (..., 6) at seconds ``t``."""
    tau = np.clip(np.asarray(t, dtype=float) / t_f, 0.0, 1.0)[..., None]
    dP = P[..., 1:] * np.arange(1, DEGREE + 1)
    ddP = dP[..., 1:] * np.arange(1, DEGREE)
    q = _polyval(P, tau)
    qd = _polyval(dP, tau) / t_f
    qdd = _polyval(ddP, tau) / t_f**2
    return q, qd, qdd


def _polyval(coef, tau):
    # Horner over the last axis of coef (..., n, d+1); tau broadcasts as (..., 1)
    out = np.zeros(np.broadcast_shapes(tau.shape, coef.shape[:-1]))
    for m in range(coef.shape[-1] - 1, -1, -1):
        out = out * tau + coef[..., m]
    return out


# ---------------------------------------------------------------------------
# time partition and PZ enclosures


@dataclass(frozen=True)
class TimeGrid:
    t_f: float
    n_t: int

    @property
    def dt(self) -> float:
        return self.t_f / self.n_t

    def interval(self, i: int):
        """``[i dt, (i+1) dt]`` for the 0-based step ``i``."""
        self._check(i)
        return i * self.dt, (i + 1) * self.dt

    def time_pz(self, i: int) -> PolyZonotope:
        """Time PZ of step ``i`` in seconds, on indeterminate ``time(i)``."""
        self._check(i)
        return PolyZonotope(np.asarray((i + 0.5) * self.dt), [[0.5 * self.dt]], [[1]], [time_id(i)])

    def _check(self, i):
        if not 0 <= i < self.n_t:
            raise IndexError(f"time step {i} outside 0..{self.n_t - 1}")


def time_partition(t_f: float, n_t: int) -> TimeGrid:
    if n_t < 1:
        raise TrajectoryError("n_t must be at least 1")
    if t_f <= 0:
        raise TrajectoryError("t_f must be positive")
    return TimeGrid(float(t_f), int(n_t))


def _poly_pz(coef, tau_pz: PolyZonotope) -> PolyZonotope:
    """Scalar PZ of a power-basis polynomial evaluated on a scalar PZ."""
    out = PolyZonotope(np.asarray(coef[-1]))
    for a in coef[-2::-1]:
        out = out * tau_pz + a
    return out


def desired_traj_pz(init: InitialCondition, eta, grid: TimeGrid, i: int):
    """Per-joint scalar PZs ``(Q_d, Qd_d, Qdd_d)`` over time step ``i``.

    The dependence on ``k_j`` enters only through the final-position
    coefficient, so each PZ is ``P(T_i) + eta1_j * K_j * S(T_i)`` with
    ``K_j`` the parameter indeterminate of joint ``j``.
    """
    t_f = grid.t_f
    tau = grid.time_pz(i) * (1.0 / t_f)
    eta1, eta2 = eta
    eta1 = np.broadcast_to(np.asarray(eta1, float), (init.n,))
    eta2 = np.broadcast_to(np.asarray(eta2, float), (init.n,))
    base = bernstein_coeffs(init, np.zeros(init.n), (np.zeros(init.n), eta2), t_f)
    Pk = _bernstein_to_power(np.array([0, 0, 0, 1.0, 1.0, 1.0]))  # b3 + b4 + b5
    P = base.power
    out = ([], [], [])
    for j in range(init.n):
        K = PolyZonotope(np.asarray(0.0), [[1.0]], [[1]], [param_id(j)])
        coef = P[j]
        for order, scale in enumerate((1.0, 1.0 / t_f, 1.0 / t_f**2)):
            c, ck = coef, Pk
            for _ in range(order):
                c = c[1:] * np.arange(1, len(c))
                ck = ck[1:] * np.arange(1, len(ck))
            pz = _poly_pz(c * scale, tau)
            if eta1[j] != 0.0:
                pz = pz + K * _poly_pz(ck * (scale * eta1[j]), tau)
            out[order].append(pz)
    return out


def buffer_error_pz(Q_d, Qd_d, Qdd_d, eps_p, eps_v, Kr):
    """Add the tracking-error enclosure to the desired trajectory PZs.

    ``E_p = eps_p * x_ep`` stands for the error ``e = q_d - q``, so the
    actual position is ``Q_d - E_p`` while the modified reference gets
    ``+ Kr E_p``; using the same indeterminate in both keeps the
    correlation between them. Returns ``(Q, Qd, Qd_a, Qdd_a)`` lists.
    """
    n = len(Q_d)
    eps_p = np.broadcast_to(np.asarray(eps_p, float), (n,))
    Kr = np.broadcast_to(np.asarray(Kr, float), (n,))
    if np.any(eps_p < 0) or eps_v < 0:
        raise TrajectoryError("error bounds must be nonnegative")
    Q, Qd, Qda, Qdda = [], [], [], []
    for j in range(n):
        Ep = PolyZonotope(np.asarray(0.0), [[eps_p[j]]], [[1]], [err_pos_id(j)])
        Ev = PolyZonotope(np.asarray(0.0), [[eps_v]], [[1]], [err_vel_id(j)])
        Q.append(Q_d[j] - Ep)
        Qd.append(Qd_d[j] - Ev)
        Qda.append(Qd_d[j] + Ep * Kr[j])
        Qdda.append(Qdd_d[j] + Ev * Kr[j])
    return Q, Qd, Qda, Qdda
