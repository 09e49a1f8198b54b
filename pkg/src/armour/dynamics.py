"""Modified recursive Newton-Euler inverse dynamics over reals, intervals and
polynomial zonotopes.

The recursion carries two angular velocities, ``w`` driven by the actual
joint velocity and ``w_a`` driven by the modified reference velocity, and
returns ``M(q) qdd_a + C(q, qd) qd_a + G(q)`` with a Coriolis factorisation
for which ``Mdot - 2C`` is skew-symmetric.

Frames follow the joint-at-origin convention of :mod:`armour.robot`: the
translation of joint ``j`` is fixed in frame ``j-1``, so the linear
acceleration of frame ``j`` is propagated with the angular quantities of
frame ``j-1``, and the backward pass uses the translation of joint ``j+1``
expressed in frame ``j``.

One recursion serves all three arithmetics; the helpers below dispatch on
the operand types.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .interval import IntervalMatrix, _elementwise_mul, iv_cross, iv_matvec, skew
from .polyzono import PolyZonotope, pz_cross, pz_from_interval, pz_reduce, pz_stack
from .robot import InertialParams, IntervalInertialParams, RobotModel, axis_rotation


@dataclass(frozen=True)
class TotalFeedbackState:
    """Actual and desired joint trajectories at one instant."""

    q: np.ndarray
    qd: np.ndarray
    q_d: np.ndarray
    qd_d: np.ndarray
    qdd_d: np.ndarray

    def errors(self, Kr):
        """``(e, e_dot, qd_a, qdd_a, r)`` for diagonal gains ``Kr``."""
        Kr = np.asarray(Kr, dtype=float)
        e = self.q_d - self.q
        ed = self.qd_d - self.qd
        qd_a = self.qd_d + Kr * e
        qdd_a = self.qdd_d + Kr * ed
        r = ed + Kr * e
        return e, ed, qd_a, qdd_a, r


# ---------------------------------------------------------------------------
# type dispatch


def _is_pz(*xs):
    return any(isinstance(x, PolyZonotope) for x in xs)


def _is_iv(*xs):
    return any(isinstance(x, IntervalMatrix) for x in xs)


def _mv(R, x):
    if type(R) is np.ndarray and type(x) is np.ndarray:
        return np.einsum("...ij,...j->...i", R, x)
    if _is_pz(R, x):
        return R @ x
    if _is_iv(R, x):
        return iv_matvec(R, x)
    return np.einsum("...ij,...j->...i", R, x)


def _tr(R):
    if isinstance(R, (PolyZonotope, IntervalMatrix)):
        return R.T
    return np.swapaxes(R, -1, -2)


_I1 = np.array([1, 2, 0])
_I2 = np.array([2, 0, 1])


def _cross(a, b):
    if type(a) is np.ndarray and type(b) is np.ndarray:
        return a[..., _I1] * b[..., _I2] - a[..., _I2] * b[..., _I1]
    if _is_pz(a, b):
        return pz_cross(a, b)
    if _is_iv(a, b):
        return iv_cross(a, b)
    return a[..., _I1] * b[..., _I2] - a[..., _I2] * b[..., _I1]


def _smul(s, v):
    """Scalar (possibly batched) times 3-vector."""
    if type(v) is np.ndarray and not isinstance(s, (PolyZonotope, IntervalMatrix)):
        return np.asarray(s, dtype=float)[..., None] * v
    if _is_pz(s, v):
        if isinstance(s, PolyZonotope):
            return s * v
        return v * np.asarray(s, dtype=float)
    if isinstance(s, IntervalMatrix):
        s = IntervalMatrix._raw(s.lo[..., None], s.hi[..., None])
        return _elementwise_mul(s, v)
    s = np.asarray(s, dtype=float)[..., None]
    if isinstance(v, IntervalMatrix):
        return _elementwise_mul(v, s)
    return s * v


def _dot(z, n):
    if isinstance(n, PolyZonotope):
        return z @ n
    if isinstance(n, IntervalMatrix):
        out = iv_matvec(z[None, :], n)
        return IntervalMatrix._raw(out.lo[..., 0], out.hi[..., 0])
    return np.einsum("i,...i->...", z, n)


def _at(x, j):
    """Joint ``j`` entry of a per-joint container (last-axis-first layout)."""
    if isinstance(x, (list, tuple)):
        return x[j]
    if isinstance(x, IntervalMatrix):
        return IntervalMatrix._raw(np.asarray(x.lo[..., j]), np.asarray(x.hi[..., j]))
    return np.asarray(x)[..., j]


# ---------------------------------------------------------------------------
# the recursion


def _newton_euler(model, rots, qd, qd_a, qdd_a, mass, com, inertia, gravity, reduce=None):
    """Shared modified Newton-Euler recursion.

    ``rots[j]`` is the rotation of frame ``j`` in frame ``j-1``; ``mass[j]``,
    ``com[j]`` and ``inertia[j]`` are per-link values of any supported type.
    """
    red = reduce if reduce is not None else (lambda x: x)
    n = model.n_q
    axes = model.axes
    trans = model.translations
    zero = np.zeros(3)
    w = wa = wd = zero
    a = np.asarray(gravity, dtype=float)
    F_list, N_list = [], []
    for j in range(n):
        z = axes[j]
        RT = _tr(rots[j])
        if j > 0:
            p = trans[j]
            # acceleration of this joint's origin, still in the parent frame
            a = a + _cross(wd, p) + _cross(w, red(_cross(wa, p)))
            a = red(a)
        a = red(_mv(RT, a))
        wa_rot = red(_mv(RT, wa))
        w = red(_mv(RT, w) + _smul(_at(qd, j), z))
        qd_z = _smul(_at(qd, j), z)
        wa = red(wa_rot + _smul(_at(qd_a, j), z))
        wd = red(_mv(RT, wd) + _cross(wa_rot, qd_z) + _smul(_at(qdd_a, j), z))
        c = com[j]
        ac = red(a + _cross(wd, c) + _cross(w, red(_cross(wa, c))))
        F = red(_smul(mass[j], ac))
        I = inertia[j]
        N = red(_mv(I, wd) + _cross(wa, red(_mv(I, w))))
        F_list.append(F)
        N_list.append(N)
    f = nn = None
    u = [None] * n
    for j in range(n - 1, -1, -1):
        F, N, c = F_list[j], N_list[j], com[j]
        if f is None:
            f_new = F
            n_new = red(_cross(c, F) + N)
        else:
            Rc = rots[j + 1]
            Rf = red(_mv(Rc, f))
            f_new = red(Rf + F)
            n_new = red(_mv(Rc, nn) + _cross(c, F) + _cross(trans[j + 1], Rf) + N)
        f, nn = f_new, n_new
        u[j] = _dot(axes[j], nn)
    return u


def _split_params(params, n):
    if isinstance(params, InertialParams):
        mass = [np.asarray(params.mass)[..., j] for j in range(n)]
        com = [np.asarray(params.com)[..., j, :] for j in range(n)]
        inertia = [np.asarray(params.inertia)[..., j, :, :] for j in range(n)]
        return mass, com, inertia
    if isinstance(params, IntervalInertialParams):
        def part(x, j, tail):
            sl = (Ellipsis, j) + (slice(None),) * tail
            return IntervalMatrix._raw(np.asarray(x.lo[sl]), np.asarray(x.hi[sl]))

        mass = [part(params.mass, j, 0) for j in range(n)]
        com = [part(params.com, j, 1) for j in range(n)]
        inertia = [part(params.inertia, j, 2) for j in range(n)]
        return mass, com, inertia
    if isinstance(params, PZInertialParams):
        return list(params.mass), list(params.com), list(params.inertia)
    raise TypeError(f"unsupported parameter type {type(params).__name__}")


def real_rotations(model, q):
    q = np.asarray(q, dtype=float)
    return [model.joints[j].rotation @ axis_rotation(model.joints[j].axis, q[..., j]) for j in range(model.n_q)]


def rnea(model: RobotModel, q, qd, qd_a, qdd_a, params: InertialParams, gravity=None) -> np.ndarray:
    """Real modified RNEA, batched over leading axes of the joint arrays."""
    gravity = model.gravity if gravity is None else gravity
    mass, com, inertia = _split_params(params, model.n_q)
    u = _newton_euler(model, real_rotations(model, q), np.asarray(qd, float), np.asarray(qd_a, float),
                      np.asarray(qdd_a, float), mass, com, inertia, gravity)
    return np.stack(np.broadcast_arrays(*u), axis=-1)


def irnea(model: RobotModel, q, qd, qd_a, qdd_a, params: IntervalInertialParams, gravity=None) -> IntervalMatrix:
    """Interval RNEA: kinematics stay real, inertial quantities are intervals."""
    gravity = model.gravity if gravity is None else gravity
    mass, com, inertia = _split_params(params, model.n_q)
    u = _newton_euler(model, real_rotations(model, q), np.asarray(qd, float), np.asarray(qd_a, float),
                      np.asarray(qdd_a, float), mass, com, inertia, gravity)
    lo = np.stack(np.broadcast_arrays(*[x.lo for x in u]), axis=-1)
    hi = np.stack(np.broadcast_arrays(*[x.hi for x in u]), axis=-1)
    return IntervalMatrix._raw(lo, hi)


def parameter_shift(params: IntervalInertialParams, params0: InertialParams) -> IntervalInertialParams:
    """``[Delta] - Delta_0`` for mass and inertia, keeping the point centre of mass.

    With a fixed centre of mass the torque is linear in mass and inertia, so
    ``rnea(s, Delta) - rnea(s, Delta_0) = rnea(s, Delta - Delta_0)`` with the
    shifted parameters; this avoids subtracting two separately reduced
    enclosures.
    """
    if not (np.all(params.com.rad == 0) and np.allclose(params.com.mid, params0.com, rtol=0, atol=1e-15)):
        raise ValueError("parameter shift needs the nominal point centre of mass")
    return IntervalInertialParams(
        IntervalMatrix(params.mass.lo - params0.mass, params.mass.hi - params0.mass),
        IntervalMatrix(params0.com),
        IntervalMatrix(params.inertia.lo - params0.inertia, params.inertia.hi - params0.inertia),
    )


def irnea_disturbance_enclosure(model: RobotModel, rotations, qd, qd_a, qdd_a, params: IntervalInertialParams,
                                params0: InertialParams, gravity=None) -> IntervalMatrix:
    """Enclosure of ``irnea(s, [Delta]) - rnea(s, Delta_0)`` over a set of states.

    With real kinematics each IRNEA operation is exact and linear in the
    parameter intervals, so at a single state the difference equals
    ``irnea(s, [Delta] - Delta_0)``. Running that with interval kinematics
    (``rotations`` and joint rates as :class:`IntervalMatrix`) encloses it
    for every state in the box by inclusion monotonicity.
    """
    gravity = model.gravity if gravity is None else gravity
    mass, com, inertia = _split_params(parameter_shift(params, params0), model.n_q)
    com = [c.lo for c in com]
    u = _newton_euler(model, list(rotations), qd, qd_a, qdd_a, mass, com, inertia, gravity)
    return IntervalMatrix(np.array([float(x.lo) for x in u]), np.array([float(x.hi) for x in u]))


def mass_times_r(model: RobotModel, q, r, params: IntervalInertialParams) -> IntervalMatrix:
    """Interval enclosure of ``M(q, Delta) r`` over the parameter box."""
    q = np.asarray(q, dtype=float)
    zeros = np.zeros_like(q)
    return irnea(model, q, zeros, zeros, np.asarray(r, float), params, gravity=np.zeros(3))


# ---------------------------------------------------------------------------
# polynomial zonotope version


@dataclass(frozen=True)
class PZInertialParams:
    """Per-link inertial parameters as PZs (shapes (), (3,), (3, 3))."""

    mass: tuple
    com: tuple
    inertia: tuple


def pz_inertial_params(params) -> PZInertialParams:
    """Convert nominal or interval parameters to PZs.

    Every uncertain scalar gets its own fresh id; the two off-diagonal
    entries of a symmetric inertia share one.
    """
    if isinstance(params, PZInertialParams):
        return params
    if isinstance(params, InertialParams):
        n = params.n
        return PZInertialParams(
            tuple(PolyZonotope(np.asarray(params.mass[j])) for j in range(n)),
            tuple(PolyZonotope(params.com[j]) for j in range(n)),
            tuple(PolyZonotope(params.inertia[j]) for j in range(n)),
        )
    if not isinstance(params, IntervalInertialParams):
        raise TypeError(f"unsupported parameter type {type(params).__name__}")
    n = params.n
    masses, coms, inertias = [], [], []
    for j in range(n):
        masses.append(pz_from_interval(IntervalMatrix(params.mass.lo[j:j + 1], params.mass.hi[j:j + 1])).reshape(()))
        coms.append(pz_from_interval(IntervalMatrix(params.com.lo[j], params.com.hi[j])))
        lo, hi = params.inertia.lo[j], params.inertia.hi[j]
        iu = np.triu_indices(3)
        upper = pz_from_interval(IntervalMatrix(lo[iu], hi[iu]))
        sel = np.zeros((9, 6))
        for k, (r, c) in enumerate(zip(*iu)):
            sel[3 * r + c, k] = 1.0
            sel[3 * c + r, k] = 1.0
        inertias.append((sel @ upper).reshape((3, 3)))
    return PZInertialParams(tuple(masses), tuple(coms), tuple(inertias))


def rotation_pz(model: RobotModel, j: int, cos_q: PolyZonotope, sin_q: PolyZonotope) -> PolyZonotope:
    """Rotation of frame ``j`` (0-based) from PZs of ``cos q_j`` and ``sin q_j``."""
    joint = model.joints[j]
    K = skew(joint.axis)
    K2 = K @ K
    R = sin_q * K + cos_q * (-K2) + (np.eye(3) + K2)
    return joint.rotation @ R


def pzrnea(
    model: RobotModel,
    rotations: Sequence[PolyZonotope],
    qd: Sequence[PolyZonotope],
    qd_a: Sequence[PolyZonotope],
    qdd_a: Sequence[PolyZonotope],
    params,
    gravity=None,
    max_generators: int = 100,
) -> PolyZonotope:
    """Modified RNEA in PZ arithmetic, reducing after every assignment.

    Returns the joint torques stacked into one ``(n_q,)`` PZ.
    """
    gravity = model.gravity if gravity is None else gravity
    pzp = pz_inertial_params(params)
    mass, com, inertia = list(pzp.mass), list(pzp.com), list(pzp.inertia)
    # constant parameters are cheaper as plain arrays
    mass = [m.c[0] if m.is_point() else m for m in mass]
    com = [c.center if c.is_point() else c for c in com]
    inertia = [I.center if I.is_point() else I for I in inertia]

    def red(x):
        return pz_reduce(x, max_generators) if isinstance(x, PolyZonotope) else x

    u = _newton_euler(model, list(rotations), list(qd), list(qd_a), list(qdd_a), mass, com, inertia,
                      gravity, reduce=red)
    return pz_stack([x if isinstance(x, PolyZonotope) else PolyZonotope(np.asarray(x)) for x in u])
