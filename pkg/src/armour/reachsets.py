"""Per-time-step reachable sets: joint trajectories, forward kinematics,
forward occupancy and the control input, all as polynomial zonotopes that
stay sliceable by the trajectory parameter k."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controller import ControllerConfig, robust_input_bound
from .dynamics import (
    _newton_euler,
    _split_params,
    irnea_disturbance_enclosure,
    parameter_shift,
    pz_inertial_params,
    pzrnea,
    rotation_pz,
)
from .interval import IntervalMatrix
from .polyzono import PolyZonotope, fresh_ids, param_id, pz_reduce, pz_sincos, robust_id
from .robot import InertialParams, IntervalInertialParams, RobotModel
from .trajectory import InitialCondition, TimeGrid, buffer_error_pz, desired_traj_pz


@dataclass(frozen=True)
class ReachConfig:
    taylor_degree: int = 6
    fk_budget: int = 100
    fo_budget: int = 100
    rnea_budget: int = 100


@dataclass
class ReachSetBundle:
    i: int
    Q: list
    Qd: list
    Qd_a: list
    Qdd_a: list
    rotations: list  # frame j in frame j-1
    R: list  # world rotations
    p: list  # world joint positions
    FO: list  # per-link (3,) PZs
    tau: PolyZonotope  # nominal input, (n,)
    U: PolyZonotope  # full input reach set, (n,)
    v_bound: np.ndarray
    w_M: np.ndarray
    meta: dict = field(default_factory=dict)


def _iv(p: PolyZonotope) -> IntervalMatrix:
    lo, hi = p.bounds()
    return IntervalMatrix(lo, hi)


def pzfk(model: RobotModel, Q, degree: int = 6, max_generators: int = 100):
    """PZ forward kinematics: relative rotations plus world ``R_j``, ``p_j``."""
    rel, Rw, pw = [], [], []
    R = None
    p = PolyZonotope(np.zeros(3))
    for j in range(model.n_q):
        s, c = pz_sincos(Q[j], degree, max_generators)
        Rj = rotation_pz(model, j, c, s)
        rel.append(Rj)
        t = model.joints[j].translation
        if R is None:
            p = p + t
            R = Rj
        else:
            p = pz_reduce(p + R @ t, max_generators)
            R = pz_reduce(R @ Rj, max_generators)
        Rw.append(R)
        pw.append(p)
    return rel, Rw, pw


def pz_forward_occupancy(model: RobotModel, R, p, max_generators: int = 100):
    """``FO_j = p_j + R_j L_j`` for every link, ``L_j`` on fresh indeterminates."""
    out = []
    for j, link in enumerate(model.links):
        fo = p[j] + R[j] @ link.center
        gens = link.generators
        if gens.shape[0]:
            L = PolyZonotope(np.zeros(3), gens, np.eye(gens.shape[0], dtype=int), fresh_ids(gens.shape[0]))
            fo = fo + R[j] @ L
        out.append(pz_reduce(fo, max_generators))
    return out


def input_reach_set(model, rotations, Qd, Qd_a, Qdd_a, params0: InertialParams, iparams: IntervalInertialParams,
                    cfg: ControllerConfig, max_generators: int = 100):
    """Input reach set ``U = tau + v_bound * x_v``.

    ``w_M`` is the larger of the bound read off the PZ disturbance and an
    interval bound on what the running controller computes with IRNEA at
    any enclosed state, so the robust-input bound covers both.
    Returns ``(tau, U, v_bound, w_M)``.
    """
    n = model.n_q
    tau = pzrnea(model, rotations, Qd, Qd_a, Qdd_a, params0, max_generators=max_generators)
    w_M = disturbance_magnitude(model, rotations, Qd, Qd_a, Qdd_a, params0, iparams, tau, max_generators)
    v_bound = robust_input_bound(cfg, w_M)
    V = PolyZonotope(np.zeros(n), np.diag(v_bound), np.eye(n, dtype=int), [robust_id(j) for j in range(n)])
    return tau, tau + V, v_bound, w_M


def _stack_iv(xs) -> IntervalMatrix:
    b = [x.bounds() for x in xs]
    return IntervalMatrix(np.array([lo for lo, _ in b]).reshape(-1), np.array([hi for _, hi in b]).reshape(-1))


def disturbance_magnitude(model, rotations, Qd, Qd_a, Qdd_a, params0, iparams, tau=None, max_generators=100):
    """Worst-case disturbance ``w_M(*)`` over the states enclosed by the PZs."""
    n = model.n_q
    if all(np.all(x.rad == 0) for x in (iparams.mass, iparams.com, iparams.inertia)):
        return np.zeros(n)
    rot_iv = [_iv(R) for R in rotations]
    qd, qda, qdda = _stack_iv(Qd), _stack_iv(Qd_a), _stack_iv(Qdd_a)
    try:
        shift = parameter_shift(iparams, params0)
    except ValueError:
        shift = None
    if shift is not None:
        w_pz = pzrnea(model, rotations, Qd, Qd_a, Qdd_a, pz_inertial_params(shift), max_generators=max_generators)
        lo, hi = w_pz.bounds()
        w_iv = irnea_disturbance_enclosure(model, rot_iv, qd, qda, qdda, iparams, params0)
        return np.maximum(np.maximum(np.abs(lo), np.abs(hi)), np.maximum(np.abs(w_iv.lo), np.abs(w_iv.hi)))
    # uncertain centre of mass: difference of the two enclosures
    if tau is None:
        tau = pzrnea(model, rotations, Qd, Qd_a, Qdd_a, params0, max_generators=max_generators)
    full = pzrnea(model, rotations, Qd, Qd_a, Qdd_a, pz_inertial_params(iparams), max_generators=max_generators)
    lo, hi = (full - tau).bounds()
    w_pz = np.maximum(np.abs(lo), np.abs(hi))
    mass, com, inertia = _split_params(iparams, n)
    u = _newton_euler(model, rot_iv, qd, qda, qdda, mass, com, inertia, model.gravity)
    tlo, thi = tau.bounds()
    ilo = np.array([float(x.lo) for x in u])
    ihi = np.array([float(x.hi) for x in u])
    return np.maximum(w_pz, np.maximum(np.abs(ihi - tlo), np.abs(ilo - thi)))


def build_bundle(model, init: InitialCondition, eta, grid: TimeGrid, i: int, cfg: ControllerConfig,
                 params0: InertialParams, iparams: IntervalInertialParams,
                 reach: ReachConfig = ReachConfig()) -> ReachSetBundle:
    Qd_, Qdd_, Qddd_ = desired_traj_pz(init, eta, grid, i)
    Q, Qd, Qda, Qdda = buffer_error_pz(Qd_, Qdd_, Qddd_, cfg.eps_p, cfg.eps_v, cfg.Kr)
    rel, R, p = pzfk(model, Q, reach.taylor_degree, reach.fk_budget)
    FO = pz_forward_occupancy(model, R, p, reach.fo_budget)
    tau, U, v_bound, w_M = input_reach_set(model, rel, Qd, Qda, Qdda, params0, iparams, cfg, reach.rnea_budget)
    return ReachSetBundle(i, Q, Qd, Qda, Qdda, rel, R, p, FO, tau, U, v_bound, w_M)


def build_all(model, init, eta, grid, cfg, params0, iparams, reach: ReachConfig = ReachConfig()):
    """Bundles for every time step (independent; built in order)."""
    return [build_bundle(model, init, eta, grid, i, cfg, params0, iparams, reach) for i in range(grid.n_t)]


def dump_fo_bounds(bundles, path, k=None):
    """Write per-step, per-link axis-aligned FO bounds (optionally sliced at k) as JSON."""
    out = []
    for b in bundles:
        links = []
        for fo in b.FO:
            if k is not None:
                fo = fo.slice({param_id(j): float(k[j]) for j in range(len(k))})
            lo, hi = fo.bounds()
            links.append({"lo": lo.tolist(), "hi": hi.tolist()})
        out.append({"step": b.i, "links": links})
    Path(path).write_text(json.dumps(out, indent=1))
