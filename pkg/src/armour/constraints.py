"""Planning constraints ``h(k) <= 0`` with analytic gradients.

Every constraint is a signed bound of a k-sliced scalar PZ, so all of them
are evaluated together through one :class:`~armour.polyzono.KBounds`.
Joint limits use ``inf``/``sup`` of the position, velocity and input
reach sets; obstacle avoidance uses the obstacle's halfspaces
``A p - b``: a sliced occupancy set is clear of the obstacle when some face
has ``inf(A_f FO - b_f) > 0``.

The robust part of the input set is a k-independent box, so input-limit
gradients come only from the nominal-input polynomial.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .polyzono import KBounds, PolyZonotope, param_id

OBS_MARGIN = 1e-6


class DegenerateObstacleError(ValueError):
    pass


def obstacle_halfspaces(center, generators, tol: float = 1e-12):
    """Halfspace form ``(A, b)`` of a 3-D zonotope: ``p`` inside iff ``max(A p - b) <= 0``.

    Axis-aligned boxes give the six ``+-e_i`` faces; other zonotopes get one
    pair of faces per non-parallel generator pair, offset by the support
    function ``|n . g|`` summed over all generators.
    """
    c = np.asarray(center, dtype=float).reshape(3)
    G = np.asarray(generators, dtype=float).reshape(-1, 3)
    G = G[np.linalg.norm(G, axis=1) > tol]
    if G.shape[0] < 3 or np.linalg.matrix_rank(G, tol=1e-9) < 3:
        raise DegenerateObstacleError("obstacle zonotope is not full-dimensional")
    nnz = (np.abs(G) > tol).sum(axis=1)
    if np.all(nnz == 1) and G.shape[0] == 3 and len(set(np.argmax(np.abs(G), axis=1))) == 3:
        half = np.abs(G).sum(axis=0)
        A = np.vstack([np.eye(3), -np.eye(3)])
        b = np.concatenate([c + half, -(c - half)])
        return A, b
    normals = []
    for i, j in combinations(range(G.shape[0]), 2):
        n = np.cross(G[i], G[j])
        norm = np.linalg.norm(n)
        if norm <= tol * max(1.0, np.linalg.norm(G[i]) * np.linalg.norm(G[j])):
            continue
        n = n / norm
        if any(abs(abs(n @ m) - 1.0) < 1e-12 for m in normals):
            continue
        normals.append(n)
    N = np.array(normals)
    d = N @ c + np.abs(N @ G.T).sum(axis=1)
    A = np.vstack([N, -N])
    b = np.concatenate([d, -(N @ c) + np.abs(N @ G.T).sum(axis=1)])
    return A, b


@dataclass(frozen=True)
class Obstacle:
    center: np.ndarray
    generators: np.ndarray
    A: np.ndarray = field(init=False, repr=False)
    b: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(3)
        G = np.asarray(self.generators, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "generators", G)
        A, b = obstacle_halfspaces(c, G)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def box(cls, center, half_widths) -> "Obstacle":
        return cls(center, np.diag(np.asarray(half_widths, dtype=float)))

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        """Boolean mask of points (..., 3) inside or on the obstacle."""
        p = np.asarray(points, dtype=float)
        return np.max(p @ self.A.T - self.b, axis=-1) <= tol

    def bounds(self):
        half = np.abs(self.generators).sum(axis=0)
        return self.center - half, self.center + half

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "generators": self.generators.tolist()}


def collision_constraint(fo: PolyZonotope, obstacle: Obstacle, k):
    """``(h_obs, grad)`` with ``h_obs = -max_f inf((A FO - b)_f)`` at ``k``."""
    faces = obstacle.A @ fo - obstacle.b
    pzs = [faces[f] for f in range(faces.dim)]
    kb = KBounds(pzs, [param_id(j) for j in range(len(k))])
    lo, _, dlo, _ = kb.evaluate(k)
    f = int(np.argmax(lo))
    return -lo[f], -dlo[f]


def box_constraint(pz: PolyZonotope, lower: float, upper: float, k):
    """``(h_minus, h_plus)`` for a scalar PZ and limits, with gradients."""
    kb = KBounds([pz], [param_id(j) for j in range(len(k))])
    lo, hi, dlo, dhi = kb.evaluate(k)
    return (lower - lo[0], -dlo[0]), (hi[0] - upper, dhi[0])


@dataclass
class ConstraintSet:
    """All constraints of one planning problem, evaluated together.

    ``kinds`` labels every row (``q-``, ``q+``, ``qd-``, ``qd+``, ``u-``,
    ``u+``, ``obs``) and ``where`` holds ``(step, joint_or_link, obstacle)``.
    """

    n_params: int
    bounds: KBounds
    box_rows: np.ndarray  # scalar-PZ index per box constraint
    box_sign: np.ndarray  # +1 for upper (sup - hi), -1 for lower (lo - inf)
    box_limit: np.ndarray
    box_offset: np.ndarray  # k-independent widening (robust input)
    obs_groups: list  # per obstacle constraint: scalar-PZ indices of its faces
    kinds: list
    where: list
    margin: float = OBS_MARGIN

    @property
    def n_constraints(self) -> int:
        return len(self.box_rows) + len(self.obs_groups)

    def evaluate(self, k, with_grad: bool = True):
        """Values ``h`` (obstacle rows include the strictness margin) and Jacobian."""
        k = np.asarray(k, dtype=float)
        lo, hi, dlo, dhi = self.bounds.evaluate(k)
        nb = len(self.box_rows)
        h = np.empty(self.n_constraints)
        J = np.empty((self.n_constraints, self.n_params))
        r = self.box_rows
        up = self.box_sign > 0
        h[:nb] = np.where(up, hi[r] + self.box_offset - self.box_limit, self.box_limit - (lo[r] - self.box_offset))
        J[:nb] = np.where(up[:, None], dhi[r], -dlo[r])
        for c, rows in enumerate(self.obs_groups):
            vals = lo[rows]
            f = int(np.argmax(vals))
            h[nb + c] = -vals[f] + self.margin
            J[nb + c] = -dlo[rows[f]]
        return (h, J) if with_grad else h


def build_constraints(model, bundles, obstacles, prefilter: bool = True) -> ConstraintSet:
    """Assemble joint, velocity, input and collision constraints over all steps.

    With ``prefilter`` a (step, link, obstacle) pair is dropped when the
    unsliced occupancy is already separated for every k.
    """
    n = model.n_q
    qlo, qhi = model.q_limits
    vlo, vhi = model.qd_limits
    ulo, uhi = model.u_limits
    pzs, rows, signs, limits, offsets, kinds, where = [], [], [], [], [], [], []
    groups, gkinds, gwhere = [], [], []

    def add_scalar(p):
        pzs.append(p)
        return len(pzs) - 1

    for b in bundles:
        tau = b.tau
        for j in range(n):
            for pz, (lo_lim, hi_lim), name, off in (
                (b.Q[j], (qlo[j], qhi[j]), "q", 0.0),
                (b.Qd[j], (vlo[j], vhi[j]), "qd", 0.0),
                (tau[j], (ulo[j], uhi[j]), "u", float(b.v_bound[j])),
            ):
                idx = add_scalar(pz.reshape(()) if pz.shape != () else pz)
                for sign, lim in ((-1, lo_lim), (1, hi_lim)):
                    rows.append(idx)
                    signs.append(sign)
                    limits.append(lim)
                    offsets.append(off)
                    kinds.append(name + ("-" if sign < 0 else "+"))
                    where.append((b.i, j, None))
        for li, fo in enumerate(b.FO):
            for oi, obs in enumerate(obstacles):
                faces = obs.A @ fo - obs.b
                if prefilter:
                    flo, _ = faces.bounds()
                    if np.max(flo) > OBS_MARGIN:
                        continue
                idxs = [add_scalar(faces[f]) for f in range(faces.dim)]
                groups.append(np.array(idxs))
                gkinds.append("obs")
                gwhere.append((b.i, li, oi))
    kb = KBounds(pzs, [param_id(j) for j in range(n)])
    return ConstraintSet(
        n, kb, np.array(rows, dtype=int), np.array(signs), np.array(limits, dtype=float),
        np.array(offsets, dtype=float), groups, kinds + gkinds, where + gwhere,
    )
