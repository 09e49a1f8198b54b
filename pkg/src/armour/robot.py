"""Serial revolute-chain robot model, loaded from a small JSON schema.

Frame ``j`` sits at joint ``j`` and rotates about its own axis; the fixed
translation ``p_j^{j-1}`` locates joint ``j`` in frame ``j-1``. Link ``j``
is rigidly attached to frame ``j``.

Schema::

    {
      "name": str,
      "n_q": int,
      "gravity": [gx, gy, gz],            # base acceleration a0 (m/s^2)
      "end_effector": [x, y, z],          # optional offset in the last frame
      "joints": [{"axis": [..], "translation": [..], "rotation": 3x3 (optional),
                  "q_lim": [lo, hi], "qd_lim": [lo, hi], "u_lim": [lo, hi]}],
      "links": [{"volume_center": [..], "volume_generators": [[..], ..]}],
      "inertia": [{"m": float, "c": [..], "I": 3x3}],
      "uncertainty": {"mass_frac": f, "inertia_frac": f, "com_abs": a}
                     or {"intervals": [{"m": [lo, hi], "c": [[lo, hi] x3], "I_lo": 3x3, "I_hi": 3x3}]}
    }
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .interval import IntervalMatrix, skew


class ModelError(ValueError):
    """Invalid robot description; the message names the offending field."""


@dataclass(frozen=True)
class Joint:
    axis: np.ndarray
    translation: np.ndarray
    rotation: np.ndarray
    q_lim: tuple
    qd_lim: tuple
    u_lim: tuple


@dataclass(frozen=True)
class LinkVolume:
    center: np.ndarray
    generators: np.ndarray  # (n_gen, 3)

    def vertices(self) -> np.ndarray:
        n = self.generators.shape[0]
        signs = np.array(np.meshgrid(*([[-1.0, 1.0]] * n))).reshape(n, -1).T
        return self.center + signs @ self.generators


@dataclass(frozen=True)
class RobotModel:
    name: str
    joints: tuple
    links: tuple
    gravity: np.ndarray
    end_effector: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def n_q(self) -> int:
        return len(self.joints)

    @property
    def axes(self) -> np.ndarray:
        return np.array([j.axis for j in self.joints])

    @property
    def translations(self) -> np.ndarray:
        return np.array([j.translation for j in self.joints])

    @property
    def fixed_rotations(self) -> np.ndarray:
        return np.array([j.rotation for j in self.joints])

    def _lims(self, name):
        arr = np.array([getattr(j, name) for j in self.joints], dtype=float)
        return arr[:, 0], arr[:, 1]

    @property
    def q_limits(self):
        return self._lims("q_lim")

    @property
    def qd_limits(self):
        return self._lims("qd_lim")

    @property
    def u_limits(self):
        return self._lims("u_lim")


@dataclass(frozen=True)
class InertialParams:
    mass: np.ndarray  # (n,)
    com: np.ndarray  # (n, 3)
    inertia: np.ndarray  # (n, 3, 3) about the center of mass, link-frame axes

    @property
    def n(self) -> int:
        return self.mass.shape[-1]


@dataclass(frozen=True)
class IntervalInertialParams:
    mass: IntervalMatrix  # (n,)
    com: IntervalMatrix  # (n, 3)
    inertia: IntervalMatrix  # (n, 3, 3)

    @property
    def n(self) -> int:
        return self.mass.shape[-1]

    @classmethod
    def degenerate(cls, p: InertialParams) -> "IntervalInertialParams":
        return cls(IntervalMatrix(p.mass), IntervalMatrix(p.com), IntervalMatrix(p.inertia))

    @classmethod
    def from_fractions(cls, p: InertialParams, mass_frac=0.0, inertia_frac=None, com_abs=0.0):
        """Nominal values scaled by ``1 +- frac``; the center of mass gets an
        absolute half-width ``com_abs`` (meters)."""
        inertia_frac = mass_frac if inertia_frac is None else inertia_frac
        if mass_frac < 0 or inertia_frac < 0 or com_abs < 0:
            raise ModelError("uncertainty: fractions must be nonnegative")
        mass = IntervalMatrix.from_center_radius(p.mass, mass_frac * np.abs(p.mass))
        inertia = IntervalMatrix.from_center_radius(p.inertia, inertia_frac * np.abs(p.inertia))
        com = IntervalMatrix.from_center_radius(p.com, np.full(p.com.shape, float(com_abs)))
        return cls(mass, com, inertia)

    def contains(self, p: InertialParams, tol: float = 1e-12) -> bool:
        return bool(
            self.mass.contains(p.mass, tol).all()
            and self.com.contains(p.com, tol).all()
            and self.inertia.contains(p.inertia, tol).all()
        )

    def sample(self, rng: np.random.Generator, endpoints: bool = False) -> InertialParams:
        """Draw a physically consistent parameter set from the box.

        Mass and inertia of each link share one scale variable so the drawn
        inertia stays a scaled copy of the nominal one; the center of mass
        is drawn uniformly (or at a random corner with ``endpoints``).
        """
        n = self.n
        if endpoints:
            u = rng.choice([-1.0, 1.0], size=n)
            uc = rng.choice([-1.0, 1.0], size=(n, 3))
        else:
            u = rng.uniform(-1.0, 1.0, size=n)
            uc = rng.uniform(-1.0, 1.0, size=(n, 3))
        mm, mr = self.mass.mid, self.mass.rad
        mass = mm + u * mr
        Im, Ir = self.inertia.mid, self.inertia.rad
        inertia = Im + u[:, None, None] * np.sign(Im) * Ir
        inertia = np.clip(inertia, self.inertia.lo, self.inertia.hi)
        com = self.com.mid + uc * self.com.rad
        return InertialParams(np.clip(mass, self.mass.lo, self.mass.hi), com, inertia)


# ---------------------------------------------------------------------------
# loading


def _vec(x, n, where):
    try:
        arr = np.asarray(x, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelError(f"{where}: not numeric") from exc
    if arr.shape != (n,):
        raise ModelError(f"{where}: expected length {n}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{where}: non-finite value")
    return arr


def _mat(x, shape, where):
    try:
        arr = np.asarray(x, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelError(f"{where}: not numeric") from exc
    if arr.shape != shape:
        raise ModelError(f"{where}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{where}: non-finite value")
    return arr


def _limit(x, where):
    lo, hi = _vec(x, 2, where)
    if lo > hi:
        raise ModelError(f"{where}: empty limit interval [{lo}, {hi}]")
    return (float(lo), float(hi))


def _check_psd(I, where):
    if not np.allclose(I, I.T, atol=1e-12):
        raise ModelError(f"{where}: inertia tensor not symmetric")
    if np.linalg.eigvalsh(I).min() < -1e-12:
        raise ModelError(f"{where}: inertia tensor not positive semidefinite")


def model_from_dict(doc: dict):
    """Build ``(RobotModel, InertialParams, IntervalInertialParams)``."""
    try:
        n = int(doc["n_q"])
        joints_doc = doc["joints"]
        links_doc = doc["links"]
        inertia_doc = doc["inertia"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"missing or malformed top-level field: {exc}") from exc
    if n < 1:
        raise ModelError("n_q: must be at least 1")
    for key, items in (("joints", joints_doc), ("links", links_doc), ("inertia", inertia_doc)):
        if len(items) != n:
            raise ModelError(f"{key}: expected {n} entries, got {len(items)}")
    joints = []
    for j, jd in enumerate(joints_doc):
        where = f"joints[{j}]"
        axis = _vec(jd.get("axis"), 3, f"{where}.axis")
        if abs(np.linalg.norm(axis) - 1.0) > 1e-12:
            raise ModelError(f"{where}.axis: must be unit norm")
        rot = _mat(jd.get("rotation", np.eye(3)), (3, 3), f"{where}.rotation")
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-10) or np.linalg.det(rot) < 0:
            raise ModelError(f"{where}.rotation: not a rotation matrix")
        joints.append(
            Joint(
                axis=axis,
                translation=_vec(jd.get("translation"), 3, f"{where}.translation"),
                rotation=rot,
                q_lim=_limit(jd.get("q_lim"), f"{where}.q_lim"),
                qd_lim=_limit(jd.get("qd_lim"), f"{where}.qd_lim"),
                u_lim=_limit(jd.get("u_lim"), f"{where}.u_lim"),
            )
        )
    links = []
    for j, ld in enumerate(links_doc):
        where = f"links[{j}]"
        center = _vec(ld.get("volume_center", [0, 0, 0]), 3, f"{where}.volume_center")
        gens = np.asarray(ld.get("volume_generators", []), dtype=float).reshape(-1, 3)
        links.append(LinkVolume(center, gens))
    masses, coms, inertias = [], [], []
    for j, idoc in enumerate(inertia_doc):
        where = f"inertia[{j}]"
        m = float(idoc.get("m"))
        if not m > 0:
            raise ModelError(f"{where}.m: mass must be positive")
        I = _mat(idoc.get("I"), (3, 3), f"{where}.I")
        _check_psd(I, f"{where}.I")
        masses.append(m)
        coms.append(_vec(idoc.get("c"), 3, f"{where}.c"))
        inertias.append(I)
    nominal = InertialParams(np.array(masses), np.array(coms), np.array(inertias))
    unc = doc.get("uncertainty", {}) or {}
    if "intervals" in unc:
        ivs = unc["intervals"]
        if len(ivs) != n:
            raise ModelError(f"uncertainty.intervals: expected {n} entries")
        m_lo, m_hi, c_lo, c_hi, I_lo, I_hi = [], [], [], [], [], []
        for j, iv in enumerate(ivs):
            where = f"uncertainty.intervals[{j}]"
            lo, hi = _limit(iv.get("m"), f"{where}.m")
            m_lo.append(lo)
            m_hi.append(hi)
            cc = _mat(iv.get("c"), (3, 2), f"{where}.c")
            c_lo.append(cc[:, 0])
            c_hi.append(cc[:, 1])
            I_lo.append(_mat(iv.get("I_lo"), (3, 3), f"{where}.I_lo"))
            I_hi.append(_mat(iv.get("I_hi"), (3, 3), f"{where}.I_hi"))
        try:
            interval = IntervalInertialParams(
                IntervalMatrix(m_lo, m_hi), IntervalMatrix(c_lo, c_hi), IntervalMatrix(I_lo, I_hi)
            )
        except ValueError as exc:
            raise ModelError(f"uncertainty.intervals: {exc}") from exc
    else:
        interval = IntervalInertialParams.from_fractions(
            nominal,
            mass_frac=float(unc.get("mass_frac", 0.0)),
            inertia_frac=unc.get("inertia_frac"),
            com_abs=float(unc.get("com_abs", 0.0)),
        )
    if not interval.contains(nominal):
        raise ModelError("uncertainty: nominal parameters lie outside the interval parameters")
    model = RobotModel(
        name=str(doc.get("name", "robot")),
        joints=tuple(joints),
        links=tuple(links),
        gravity=_vec(doc.get("gravity", [0, 0, 9.81]), 3, "gravity"),
        end_effector=_vec(doc.get("end_effector", [0, 0, 0]), 3, "end_effector"),
    )
    return model, nominal, interval


def load_model(path):
    """Load a robot JSON file; bundled fixtures can be named directly
    (``"planar2"``, ``"pendulum"``, ``"spatial3"``)."""
    p = Path(path)
    if not p.exists() and not p.suffix:
        p = Path(str(resources.files("armour") / "data" / f"{path}.json"))
    try:
        doc = json.loads(p.read_text())
    except FileNotFoundError as exc:
        raise ModelError(f"robot file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ModelError(f"robot file {path} does not parse: {exc}") from exc
    return model_from_dict(doc)


# ---------------------------------------------------------------------------
# kinematics


def axis_rotation(axis, q) -> np.ndarray:
    """Rotation by angle(s) ``q`` about a unit axis (Rodrigues), batched over q."""
    q = np.asarray(q, dtype=float)
    K = skew(np.asarray(axis, dtype=float))
    s = np.sin(q)[..., None, None]
    c = np.cos(q)[..., None, None]
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def homog_transform(model: RobotModel, j: int, q_j):
    """``(R, p)`` of frame ``j`` (1-based) relative to frame ``j-1``."""
    if not 1 <= j <= model.n_q:
        raise IndexError(f"joint index {j} outside 1..{model.n_q}")
    joint = model.joints[j - 1]
    R = joint.rotation @ axis_rotation(joint.axis, q_j)
    return R, joint.translation.copy()


def fk_batch(model: RobotModel, q):
    """World rotations ``(..., n, 3, 3)`` and joint positions ``(..., n, 3)``."""
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != model.n_q:
        raise ValueError(f"expected {model.n_q} joint values, got {q.shape[-1]}")
    batch = q.shape[:-1]
    R = np.broadcast_to(np.eye(3), batch + (3, 3))
    p = np.zeros(batch + (3,))
    Rs, ps = [], []
    for j, joint in enumerate(model.joints):
        p = p + np.einsum("...ij,j->...i", R, joint.translation)
        R = R @ joint.rotation @ axis_rotation(joint.axis, q[..., j])
        Rs.append(R)
        ps.append(p)
    return np.stack(Rs, axis=-3), np.stack(ps, axis=-2)


def fk_point(model: RobotModel, q):
    """List of ``(R_j, p_j)`` world poses of every joint frame."""
    q = np.asarray(q, dtype=float)
    if q.shape != (model.n_q,):
        raise ValueError(f"expected {model.n_q} joint values, got shape {q.shape}")
    R, p = fk_batch(model, q)
    return [(R[j], p[j]) for j in range(model.n_q)]


def end_effector_point(model: RobotModel, q) -> np.ndarray:
    R, p = fk_batch(model, q)
    return p[..., -1, :] + np.einsum("...ij,j->...i", R[..., -1, :, :], model.end_effector)


def fo_point(model: RobotModel, q):
    """Forward occupancy: one world-frame zonotope ``(center, generators)`` per link."""
    out = []
    for (R, p), link in zip(fk_point(model, q), model.links):
        out.append((p + R @ link.center, link.generators @ R.T))
    return out


def mass_matrix(model: RobotModel, params: InertialParams, q) -> np.ndarray:
    """Batched joint-space mass matrix via unit-acceleration RNEA columns."""
    from .dynamics import rnea

    q = np.asarray(q, dtype=float)
    n = model.n_q
    # one RNEA call over a leading axis of unit accelerations
    eye = np.eye(n).reshape((n,) + (1,) * (q.ndim - 1) + (n,))
    qs = np.broadcast_to(q, (n,) + q.shape)
    zeros = np.zeros_like(qs)
    cols = rnea(model, qs, zeros, zeros, np.broadcast_to(eye, qs.shape), params, gravity=np.zeros(3))
    return np.moveaxis(cols, 0, -1)


def eigen_bounds(
    model: RobotModel,
    params_interval: IntervalInertialParams,
    n_samples: int = 100_000,
    margin: tuple = (0.95, 1.05),
    seed: int = 0,
    batch: int = 20_000,
):
    """Sampled ``(sigma_min, sigma_max)`` of the mass matrix over joint
    configurations and parameter draws, scaled by the safety margins."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = np.random.default_rng(seed)
    lo, hi = model.q_limits
    lo = np.maximum(lo, -np.pi)
    hi = np.minimum(hi, np.pi)
    smin, smax = np.inf, -np.inf
    done = 0
    while done < n_samples:
        b = min(batch, n_samples - done)
        q = rng.uniform(lo, hi, size=(b, model.n_q))
        u = rng.uniform(-1.0, 1.0, size=(b, model.n_q))
        mass = params_interval.mass.mid + u * params_interval.mass.rad
        Im, Ir = params_interval.inertia.mid, params_interval.inertia.rad
        inertia = Im + u[..., None, None] * np.sign(Im) * Ir
        com = params_interval.com.mid + rng.uniform(-1, 1, size=(b, model.n_q, 3)) * params_interval.com.rad
        M = mass_matrix(model, InertialParams(mass, com, inertia), q)
        ev = np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, -1, -2)))
        if ev[:, 0].min() <= 0:
            raise ModelError("mass matrix not positive definite at a sampled configuration")
        smin = min(smin, ev[:, 0].min())
        smax = max(smax, ev[:, -1].max())
        done += b
    return smin * margin[0], smax * margin[1]
