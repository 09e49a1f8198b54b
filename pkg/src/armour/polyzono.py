"""Sparse polynomial zonotopes over named indeterminates.

A polynomial zonotope (PZ) is the set

    { c + sum_i g_i * prod_k x_k ** E[i, k]  :  x in [-1, 1]^p }

where every indeterminate ``x_k`` is identified by a globally registered
integer id. Exponents are stored densely over the ids a PZ actually uses,
generators with equal exponent rows are merged and all-zero rows are folded
into the center, so every PZ is kept in a canonical form.

Matrix-valued PZs are stored flattened (row-major) with a ``shape``.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .interval import Interval, IntervalMatrix, as_interval_matrix

__all__ = [
    "IdKind",
    "IdRegistry",
    "REGISTRY",
    "PolyZonotope",
    "PZError",
    "StructureError",
    "TaylorDivergenceError",
    "KBounds",
    "param_id",
    "time_id",
    "err_pos_id",
    "err_vel_id",
    "robust_id",
    "fresh_ids",
    "pz_from_interval",
    "pz_sum",
    "pz_mul",
    "pz_pow",
    "pz_cross",
    "pz_skew",
    "pz_stack",
    "pz_slice",
    "pz_bounds",
    "pz_taylor",
    "pz_sincos",
    "pz_reduce",
    "pz_grad_k",
    "interval_sin",
    "interval_cos",
]

EXP_DTYPE = np.int32


class PZError(ValueError):
    pass


class StructureError(PZError):
    pass


class TaylorDivergenceError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# indeterminate ids


class IdKind(str, Enum):
    TIME = "time"
    PARAM = "param"
    ERR_POS = "err_pos"
    ERR_VEL = "err_vel"
    ROBUST = "robust"
    FRESH = "fresh"


# Fresh ids live above this offset so they need no per-id bookkeeping.
_FRESH_BASE = 1 << 40


class IdRegistry:
    """Append-only registry mapping ``(kind, index)`` to integer ids.

    Structured ids are allocated on first request and are stable for the
    life of the process. Fresh ids come from an atomic counter.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._by_key: dict[tuple[IdKind, int], int] = {}
        self._keys: list[tuple[IdKind, int]] = []
        self._fresh = 0
        self._params: set[int] = set()

    def get(self, kind: IdKind, index: int) -> int:
        kind = IdKind(kind)
        if kind is IdKind.FRESH:
            raise PZError("fresh ids are allocated with fresh()")
        key = (kind, int(index))
        with self._lock:
            out = self._by_key.get(key)
            if out is None:
                out = len(self._keys)
                self._keys.append(key)
                self._by_key[key] = out
                if kind is IdKind.PARAM:
                    self._params.add(out)
            return out

    def fresh(self, n: int = 1) -> np.ndarray:
        with self._lock:
            start = self._fresh
            self._fresh += n
        return _FRESH_BASE + np.arange(start, start + n, dtype=np.int64)

    def kind(self, ident: int) -> IdKind:
        if ident >= _FRESH_BASE:
            return IdKind.FRESH
        return self._keys[ident][0]

    def name(self, ident: int) -> str:
        ident = int(ident)
        if ident >= _FRESH_BASE:
            return f"fresh({ident - _FRESH_BASE})"
        kind, index = self._keys[ident]
        return f"{kind.value}({index})"

    def is_param(self, ids: np.ndarray) -> np.ndarray:
        params = self._params
        return np.fromiter((int(i) in params for i in ids), dtype=bool, count=len(ids))


REGISTRY = IdRegistry()


def param_id(j: int) -> int:
    return REGISTRY.get(IdKind.PARAM, j)


def time_id(i: int) -> int:
    return REGISTRY.get(IdKind.TIME, i)


def err_pos_id(j: int) -> int:
    return REGISTRY.get(IdKind.ERR_POS, j)


def err_vel_id(j: int) -> int:
    return REGISTRY.get(IdKind.ERR_VEL, j)


def robust_id(j: int) -> int:
    return REGISTRY.get(IdKind.ROBUST, j)


def fresh_ids(n: int) -> np.ndarray:
    return REGISTRY.fresh(n)


# ---------------------------------------------------------------------------
# canonical form helpers


def _row_keys(E: np.ndarray):
    """Pack exponent rows into int64 keys preserving lexicographic order.

    Returns None when the rows need more than 62 bits.
    """
    if E.shape[1] == 0:
        return np.zeros(E.shape[0], dtype=np.int64)
    m = E.max(axis=0).astype(np.int64)
    bits = np.ones_like(m)
    big = m > 1
    bits[big] = np.floor(np.log2(m[big])).astype(np.int64) + 1
    if bits.sum() > 62:
        return None
    shifts = np.zeros_like(bits)
    shifts[:-1] = np.cumsum(bits[::-1])[::-1][1:]
    return E.astype(np.int64) @ (np.int64(1) << shifts)


def _prune(c, G, E, ids):
    """Drop zero generators and unused ids (no merging needed)."""
    if G.shape[0]:
        nz = np.any(G != 0.0, axis=1)
        if not nz.all():
            G, E = G[nz], E[nz]
    if E.shape[1]:
        used = np.any(E != 0, axis=0) if E.shape[0] else np.zeros(E.shape[1], dtype=bool)
        if not used.all():
            E, ids = E[:, used], ids[used]
    return c, G, E, ids


def _canonical(c, G, E, ids):
    ng = G.shape[0]
    if ng:
        zero = ~np.any(E != 0, axis=1)
        if zero.any():
            c = c + G[zero].sum(axis=0)
            keep = ~zero
            G, E = G[keep], E[keep]
    if G.shape[0] > 1:
        keys = _row_keys(E)
        if keys is not None:
            order = np.argsort(keys, kind="stable")
            ks = keys[order]
            start = np.empty(len(ks), dtype=bool)
            start[0] = True
            np.not_equal(ks[1:], ks[:-1], out=start[1:])
            if start.all():
                G, E = G[order], E[order]
            else:
                idx = np.flatnonzero(start)
                G = np.add.reduceat(G[order], idx, axis=0)
                E = E[order[idx]]
        else:
            E, inv = np.unique(E, axis=0, return_inverse=True)
            G2 = np.zeros((E.shape[0], G.shape[1]))
            np.add.at(G2, inv.ravel(), G)
            G = G2
    return _prune(c, G, E, ids)


def _align(p: "PolyZonotope", q: "PolyZonotope"):
    if p.ids.shape == q.ids.shape and np.array_equal(p.ids, q.ids):
        return p.E, q.E, p.ids
    ids = np.union1d(p.ids, q.ids)
    Ep = np.zeros((p.E.shape[0], len(ids)), dtype=EXP_DTYPE)
    Eq = np.zeros((q.E.shape[0], len(ids)), dtype=EXP_DTYPE)
    if len(p.ids):
        Ep[:, np.searchsorted(ids, p.ids)] = p.E
    if len(q.ids):
        Eq[:, np.searchsorted(ids, q.ids)] = q.E
    return Ep, Eq, ids


def _size(shape) -> int:
    return int(np.prod(shape, dtype=np.int64)) if len(shape) else 1


# ---------------------------------------------------------------------------
# the set type


class PolyZonotope:
    """Polynomial zonotope with flattened center ``c`` and generators ``G``.

    Parameters
    ----------
    center : array_like
        Center with the PZ's shape.
    generators : array_like, optional
        ``(n_g, *shape)`` generator array.
    exponents : array_like, optional
        ``(n_g, n_ids)`` nonnegative integer exponents.
    ids : sequence of int, optional
        Registered indeterminate ids labelling the exponent columns.
    """

    __array_ufunc__ = None
    __slots__ = ("c", "G", "E", "ids", "shape")

    def __init__(self, center, generators=None, exponents=None, ids=None):
        center = np.array(center, dtype=float)
        shape = center.shape
        n = _size(shape)
        c = center.reshape(n)
        if generators is None:
            G = np.zeros((0, n))
            E = np.zeros((0, 0), dtype=EXP_DTYPE)
            idarr = np.zeros(0, dtype=np.int64)
        else:
            G = np.array(generators, dtype=float).reshape(-1, n)
            E = np.array(exponents, dtype=EXP_DTYPE).reshape(G.shape[0], -1)
            idarr = np.array(ids, dtype=np.int64).reshape(-1)
            if E.shape[1] != len(idarr):
                raise PZError("exponent columns must match ids")
            if (E < 0).any():
                raise PZError("exponents must be nonnegative")
            if len(np.unique(idarr)) != len(idarr):
                raise PZError("duplicate ids")
            order = np.argsort(idarr)
            idarr, E = idarr[order], E[:, order]
        c, G, E, idarr = _canonical(c, G, E, idarr)
        self.c, self.G, self.E, self.ids, self.shape = c, G, E, idarr, shape

    @classmethod
    def _make(cls, c, G, E, ids, shape) -> "PolyZonotope":
        obj = cls.__new__(cls)
        obj.c, obj.G, obj.E, obj.ids, obj.shape = c, G, E, ids, tuple(shape)
        return obj

    @classmethod
    def constant(cls, value) -> "PolyZonotope":
        return cls(value)

    @classmethod
    def _from_parts(cls, c, G, E, ids, shape, merge=True) -> "PolyZonotope":
        if merge:
            c, G, E, ids = _canonical(c, G, E, ids)
        else:
            c, G, E, ids = _prune(c, G, E, ids)
        return cls._make(c, G, E, ids, shape)

    # -- basic properties -------------------------------------------------
    @property
    def dim(self) -> int:
        return self.c.shape[0]

    @property
    def n_generators(self) -> int:
        return self.G.shape[0]

    @property
    def center(self) -> np.ndarray:
        return self.c.reshape(self.shape)

    @property
    def generators(self) -> np.ndarray:
        return self.G.reshape((self.G.shape[0],) + self.shape)

    def is_point(self) -> bool:
        return self.G.shape[0] == 0

    def __repr__(self):
        return f"PolyZonotope(shape={self.shape}, n_generators={self.n_generators}, n_ids={len(self.ids)})"

    # -- evaluation ---------------------------------------------------------
    def evaluate(self, values) -> np.ndarray:
        """Evaluate at indeterminate values.

        ``values`` is a mapping id -> value or batch of values (missing ids
        raise; extra ids are ignored) or an array of shape ``(..., n_ids)``
        ordered like ``self.ids``.
        """
        if isinstance(values, Mapping):
            cols = [np.asarray(values[int(i)], dtype=float) for i in self.ids]
            x = np.stack(cols, axis=-1) if cols else np.zeros((0,))
        else:
            x = np.asarray(values, dtype=float)
        batch = x.shape[:-1]
        X = x.reshape(-1, len(self.ids))
        if self.G.shape[0] == 0:
            out = np.broadcast_to(self.c, (X.shape[0], self.dim)).copy()
        else:
            mono = np.prod(X[:, None, :] ** self.E[None, :, :], axis=2)
            out = self.c + mono @ self.G
        return out.reshape(batch + self.shape)

    def sample(self, rng: np.random.Generator, n: int):
        """Return ``(points, x)`` for ``n`` uniform indeterminate draws."""
        x = rng.uniform(-1.0, 1.0, size=(n, len(self.ids)))
        return self.evaluate(x), x

    # -- linear structure ------------------------------------------------------
    def _linear(self, fn, shape) -> "PolyZonotope":
        n_out = _size(shape)
        Z = np.concatenate([self.c[None, :], self.G], axis=0).reshape((-1,) + self.shape)
        Z = np.asarray(fn(Z), dtype=float).reshape(-1, n_out)
        return PolyZonotope._from_parts(Z[0].copy(), Z[1:], self.E, self.ids, shape, merge=False)

    def __neg__(self):
        return PolyZonotope._make(-self.c, -self.G, self.E, self.ids, self.shape)

    def __add__(self, other):
        if isinstance(other, PolyZonotope):
            return pz_sum(self, other)
        other = np.asarray(other, dtype=float)
        shape = np.broadcast_shapes(self.shape, other.shape)
        if shape != self.shape:
            raise PZError(f"cannot add constant of shape {other.shape} to PZ of shape {self.shape}")
        return PolyZonotope._make(self.c + np.broadcast_to(other, shape).reshape(-1), self.G, self.E, self.ids, self.shape)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, PolyZonotope):
            return pz_mul(self, other, elementwise=True)
        other = np.asarray(other, dtype=float)
        shape = np.broadcast_shapes(self.shape, other.shape)
        pad = (1,) * (len(shape) - len(self.shape))
        return self._linear(lambda Z: Z.reshape((Z.shape[0],) + pad + self.shape) * other, shape)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, PolyZonotope):
            return pz_mul(self, other)
        other = np.asarray(other, dtype=float)
        shape = np.matmul(np.empty(self.shape), other).shape
        return self._linear(lambda Z: Z @ other, shape)

    def __rmatmul__(self, other):
        other = np.asarray(other, dtype=float)
        shape = np.matmul(other, np.empty(self.shape)).shape
        if len(self.shape) == 1:
            return self._linear(lambda Z: Z @ other.T, shape)
        return self._linear(lambda Z: np.matmul(other, Z), shape)

    @property
    def T(self) -> "PolyZonotope":
        if len(self.shape) != 2:
            return self
        return self._linear(lambda Z: np.swapaxes(Z, 1, 2), self.shape[::-1])

    def __getitem__(self, idx) -> "PolyZonotope":
        sel = np.arange(self.dim).reshape(self.shape)[idx]
        flat = np.asarray(sel).reshape(-1)
        return PolyZonotope._from_parts(self.c[flat].copy(), self.G[:, flat], self.E, self.ids, np.shape(sel), merge=False)

    def reshape(self, shape) -> "PolyZonotope":
        shape = tuple(shape)
        if _size(shape) != self.dim:
            raise PZError(f"cannot reshape {self.shape} to {shape}")
        return PolyZonotope._make(self.c, self.G, self.E, self.ids, shape)

    def sum(self) -> "PolyZonotope":
        return self._linear(lambda Z: Z.reshape(Z.shape[0], -1).sum(axis=1), ())

    # -- set operations as methods ----------------------------------------
    def bounds(self, tight: bool = False):
        return pz_bounds(self, tight=tight)

    def slice(self, assignments: Mapping[int, float]) -> "PolyZonotope":
        return pz_slice(self, assignments)

    def reduce(self, max_generators: int = 100) -> "PolyZonotope":
        return pz_reduce(self, max_generators)

    def to_dict(self) -> dict:
        """Canonical JSON-friendly form for golden files and debugging."""
        return {
            "shape": list(self.shape),
            "center": self.c.tolist(),
            "generators": self.G.tolist(),
            "exponents": self.E.tolist(),
            "ids": [REGISTRY.name(i) for i in self.ids],
        }


# ---------------------------------------------------------------------------
# operations


def pz_from_interval(z, ids: Sequence[int] | None = None) -> PolyZonotope:
    """Exact PZ of an interval vector, one degree-1 generator per dimension."""
    z = as_interval_matrix(z)
    lo, hi = z.lo.reshape(-1), z.hi.reshape(-1)
    n = lo.shape[0]
    ids = fresh_ids(n) if ids is None else np.asarray(ids, dtype=np.int64).reshape(-1)
    if len(ids) != n:
        raise PZError(f"need {n} ids, got {len(ids)}")
    if len(np.unique(ids)) != n:
        raise PZError("id collision: ids must be distinct")
    c = 0.5 * (hi + lo)
    r = 0.5 * (hi - lo)
    order = np.argsort(ids)
    G = np.diag(r)[order]
    E = np.eye(n, dtype=EXP_DTYPE)
    return PolyZonotope._from_parts(c, G, E, ids[order], z.shape, merge=False)


def pz_sum(p: PolyZonotope, q: PolyZonotope) -> PolyZonotope:
    """Dependent sum; a Minkowski sum when the id sets are disjoint."""
    if p.dim != q.dim:
        raise PZError(f"dimension mismatch: {p.shape} vs {q.shape}")
    shape = p.shape if len(p.shape) >= len(q.shape) else q.shape
    if not q.G.shape[0]:
        return PolyZonotope._make(p.c + q.c, p.G, p.E, p.ids, shape)
    if not p.G.shape[0]:
        return PolyZonotope._make(p.c + q.c, q.G, q.E, q.ids, shape)
    Ep, Eq, ids = _align(p, q)
    G = np.concatenate([p.G, q.G], axis=0)
    E = np.concatenate([Ep, Eq], axis=0)
    return PolyZonotope._from_parts(p.c + q.c, G, E, ids, shape)


def _bilinear(p: PolyZonotope, q: PolyZonotope, op: Callable, shape) -> PolyZonotope:
    Ep, Eq, ids = _align(p, q)
    Zp = np.concatenate([p.c[None, :], p.G], axis=0).reshape((-1,) + p.shape)
    Zq = np.concatenate([q.c[None, :], q.G], axis=0).reshape((-1,) + q.shape)
    prod = op(Zp, Zq)  # (np+1, nq+1, *shape)
    n_out = _size(shape)
    G = prod.reshape(-1, n_out)
    nid = len(ids)
    Ep0 = np.concatenate([np.zeros((1, nid), dtype=EXP_DTYPE), Ep], axis=0)
    Eq0 = np.concatenate([np.zeros((1, nid), dtype=EXP_DTYPE), Eq], axis=0)
    E = (Ep0[:, None, :] + Eq0[None, :, :]).reshape(Ep0.shape[0] * Eq0.shape[0], nid)
    return PolyZonotope._from_parts(G[0].copy(), G[1:], E[1:], ids, shape)


def pz_mul(p: PolyZonotope, q: PolyZonotope, elementwise: bool = False) -> PolyZonotope:
    """Product of two PZs as a polynomial map.

    Matrix product by default (with ``np.matmul`` shape rules); with
    ``elementwise=True`` an elementwise product where a scalar PZ broadcasts.
    """
    if elementwise:
        if p.shape == q.shape or p.dim == 1 or q.dim == 1:
            shape = p.shape if p.dim >= q.dim else q.shape
            if p.dim == 1 and q.dim == 1:
                shape = p.shape if len(p.shape) >= len(q.shape) else q.shape
            a = p.c.shape[0]
            b = q.c.shape[0]
            return _bilinear(
                p.reshape((a,)),
                q.reshape((b,)),
                lambda X, Y: X[:, None, :] * Y[None, :, :],
                shape,
            )
        raise PZError(f"elementwise shapes differ: {p.shape} vs {q.shape}")
    try:
        shape = np.matmul(np.empty(p.shape), np.empty(q.shape)).shape
    except ValueError as exc:
        raise PZError(f"shape mismatch: {p.shape} @ {q.shape}") from exc

    def op(X, Y):
        if len(p.shape) == 1 and len(q.shape) == 1:
            return np.einsum("ia,ja->ij", X, Y)
        if len(q.shape) == 1:
            return np.einsum("iab,jb->ija", X, Y)
        if len(p.shape) == 1:
            return np.einsum("ia,jab->ijb", X, Y)
        return np.einsum("iab,jbc->ijac", X, Y)

    return _bilinear(p, q, op, shape)


def pz_pow(p: PolyZonotope, m: int, max_generators: int | None = None) -> PolyZonotope:
    """Elementwise power ``p**m`` for integer ``m >= 0``."""
    if m < 0:
        raise PZError("negative powers are not supported")
    out = PolyZonotope(np.ones(p.shape))
    for _ in range(m):
        out = pz_mul(out, p, elementwise=True)
        if max_generators is not None:
            out = pz_reduce(out, max_generators)
    return out


_SKEW_MAP = np.zeros((9, 3))
for _r, _c, _k, _s in [(0, 1, 2, -1), (0, 2, 1, 1), (1, 0, 2, 1), (1, 2, 0, -1), (2, 0, 1, -1), (2, 1, 0, 1)]:
    _SKEW_MAP[3 * _r + _c, _k] = _s


def pz_skew(a: PolyZonotope) -> PolyZonotope:
    """Skew-symmetric 3x3 PZ with ``skew(a) @ b = a x b``."""
    if a.dim != 3:
        raise PZError("skew needs a 3-vector PZ")
    return a.reshape((3,))._linear(lambda Z: Z @ _SKEW_MAP.T, (3, 3))


def pz_cross(a, b) -> PolyZonotope:
    """Cross product of 3-vector PZs via the skew matrix of ``a``."""
    if not isinstance(a, PolyZonotope):
        from .interval import skew

        return np.asarray(skew(np.asarray(a, dtype=float))) @ b
    S = pz_skew(a)
    if isinstance(b, PolyZonotope):
        return pz_mul(S, b.reshape((3,)))
    return S @ np.asarray(b, dtype=float)


def pz_stack(parts: Sequence[PolyZonotope], shape=None) -> PolyZonotope:
    """Stack scalar (or flattened) PZs into one PZ with the given shape."""
    parts = [p if isinstance(p, PolyZonotope) else PolyZonotope(p) for p in parts]
    sizes = [p.dim for p in parts]
    n = sum(sizes)
    shape = (n,) if shape is None else tuple(shape)
    if _size(shape) != n:
        raise PZError("stack shape does not match total size")
    ids = np.unique(np.concatenate([p.ids for p in parts])) if parts else np.zeros(0, np.int64)
    c = np.concatenate([p.c for p in parts])
    Gs, Es = [], []
    off = 0
    for p, s in zip(parts, sizes):
        if p.G.shape[0]:
            G = np.zeros((p.G.shape[0], n))
            G[:, off : off + s] = p.G
            E = np.zeros((p.G.shape[0], len(ids)), dtype=EXP_DTYPE)
            E[:, np.searchsorted(ids, p.ids)] = p.E
            Gs.append(G)
            Es.append(E)
        off += s
    if not Gs:
        return PolyZonotope(c.reshape(shape))
    return PolyZonotope._from_parts(c, np.concatenate(Gs), np.concatenate(Es), ids, shape)


def pz_slice(p: PolyZonotope, assignments: Mapping[int, float]) -> PolyZonotope:
    """Substitute fixed values for some indeterminates."""
    cols, vals = [], []
    for ident, val in assignments.items():
        val = float(val)
        if not (-1.0 <= val <= 1.0):
            raise PZError(f"slice value {val} for {REGISTRY.name(ident)} outside [-1, 1]")
        hit = np.flatnonzero(p.ids == int(ident))
        if hit.size:
            cols.append(int(hit[0]))
            vals.append(val)
    if not cols:
        return p
    E = p.E.copy()
    sub = E[:, cols].astype(float)
    factor = np.prod(np.asarray(vals)[None, :] ** sub, axis=1)
    G = p.G * factor[:, None]
    E[:, cols] = 0
    return PolyZonotope._from_parts(p.c.copy(), G, E, p.ids, p.shape)


def pz_bounds(p: PolyZonotope, tight: bool = False):
    """Elementwise ``(inf, sup)`` from the absolute generator sum.

    With ``tight=True`` monomials whose exponents are all even are bounded
    in ``[0, 1]`` instead of ``[-1, 1]``.
    """
    if not p.G.shape[0]:
        return p.c.reshape(p.shape).copy(), p.c.reshape(p.shape).copy()
    if not tight:
        r = np.abs(p.G).sum(axis=0)
        return (p.c - r).reshape(p.shape), (p.c + r).reshape(p.shape)
    even = np.all(p.E % 2 == 0, axis=1)
    odd = ~even
    r = np.abs(p.G[odd]).sum(axis=0)
    up = np.maximum(p.G[even], 0).sum(axis=0)
    down = np.minimum(p.G[even], 0).sum(axis=0)
    return (p.c - r + down).reshape(p.shape), (p.c + r + up).reshape(p.shape)


def pz_reduce(p: PolyZonotope, max_generators: int = 100) -> PolyZonotope:
    """Bound the generator count by boxing the smallest generators.

    Generators whose exponents involve a trajectory-parameter id are kept in
    preference to all others; within each group generators are ranked by
    infinity norm. The boxed remainder gets one fresh id per dimension.
    """
    if max_generators < 0:
        raise PZError("max_generators must be nonnegative")
    ng = p.G.shape[0]
    if ng <= max_generators:
        return p
    norms = np.abs(p.G).max(axis=1)
    pmask = REGISTRY.is_param(p.ids)
    touches = np.any(p.E[:, pmask] != 0, axis=1) if pmask.any() else np.zeros(ng, dtype=bool)
    order = np.lexsort((-norms, ~touches))
    keep = np.sort(order[:max_generators])
    rest = order[max_generators:]
    radius = np.abs(p.G[rest]).sum(axis=0)
    dims = np.flatnonzero(radius > 0)
    new_ids = fresh_ids(len(dims))
    Gb = np.zeros((len(dims), p.dim))
    Gb[np.arange(len(dims)), dims] = radius[dims]
    ids = np.concatenate([p.ids, new_ids])
    E = np.zeros((len(keep) + len(dims), len(ids)), dtype=EXP_DTYPE)
    E[: len(keep), : len(p.ids)] = p.E[keep]
    E[len(keep) :, len(p.ids) :] = np.eye(len(dims), dtype=EXP_DTYPE)
    G = np.concatenate([p.G[keep], Gb], axis=0)
    return PolyZonotope._from_parts(p.c.copy(), G, E, ids, p.shape, merge=False)


# ---------------------------------------------------------------------------
# Taylor expansion


def interval_sin(lo, hi):
    """Exact range of sin over ``[lo, hi]`` (elementwise arrays)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    slo, shi = np.sin(lo), np.sin(hi)
    out_lo = np.minimum(slo, shi)
    out_hi = np.maximum(slo, shi)
    # a maximum sits at pi/2 + 2 pi m, a minimum at -pi/2 + 2 pi m
    has_max = np.floor((hi - np.pi / 2) / (2 * np.pi)) >= np.ceil((lo - np.pi / 2) / (2 * np.pi))
    has_min = np.floor((hi + np.pi / 2) / (2 * np.pi)) >= np.ceil((lo + np.pi / 2) / (2 * np.pi))
    out_hi = np.where(has_max, 1.0, out_hi)
    out_lo = np.where(has_min, -1.0, out_lo)
    return out_lo, out_hi


def interval_cos(lo, hi):
    return interval_sin(np.asarray(lo) + np.pi / 2, np.asarray(hi) + np.pi / 2)


@dataclass(frozen=True)
class TaylorFunction:
    """An analytic scalar function described by its derivatives.

    ``derivative(n, x)`` evaluates the n-th derivative at real ``x`` and
    ``derivative_range(n, lo, hi)`` encloses it over ``[lo, hi]``.
    """

    derivative: Callable[[int, float], float]
    derivative_range: Callable[[int, float, float], tuple]


def _sin_derivative(n, x):
    return math.sin(x + n * math.pi / 2)


def _sin_derivative_range(n, lo, hi):
    return interval_sin(lo + n * np.pi / 2, hi + n * np.pi / 2)


SIN = TaylorFunction(_sin_derivative, _sin_derivative_range)
COS = TaylorFunction(
    lambda n, x: math.sin(x + (n + 1) * math.pi / 2),
    lambda n, lo, hi: interval_sin(lo + (n + 1) * np.pi / 2, hi + (n + 1) * np.pi / 2),
)
_NAMED = {"sin": SIN, "cos": COS}


def _taylor_many(funcs, p: PolyZonotope, degree: int, max_generators: int | None):
    if degree < 1:
        raise PZError("Taylor degree must be at least 1")
    if p.dim != 1:
        raise PZError("Taylor expansion needs a scalar PZ")
    funcs = [_NAMED[f] if isinstance(f, str) else f for f in funcs]
    c = float(p.c[0])
    lo, hi = (float(v) for v in pz_bounds(p))
    dev = PolyZonotope._make(np.zeros(1), p.G, p.E, p.ids, ())
    powers = [dev]
    for _ in range(degree):
        nxt = pz_mul(powers[-1], dev, elementwise=True)
        if max_generators is not None:
            nxt = pz_reduce(nxt, max_generators)
        powers.append(nxt)
    plo, phi = (float(v) for v in pz_bounds(powers[degree]))
    results = []
    for f in funcs:
        acc = PolyZonotope(np.array(f.derivative(0, c)))
        fact = 1.0
        for n in range(1, degree + 1):
            fact *= n
            coef = f.derivative(n, c) / fact
            if coef != 0.0:
                acc = pz_sum(acc, powers[n - 1] * coef)
        fact *= degree + 1
        dlo, dhi = f.derivative_range(degree + 1, lo, hi)
        rem = Interval(float(dlo), float(dhi)) * Interval(plo, phi)
        rlo, rhi = rem.lo / fact, rem.hi / fact
        if not (math.isfinite(rlo) and math.isfinite(rhi)):
            raise TaylorDivergenceError("Taylor remainder is not finite")
        if rhi > rlo:
            acc = pz_sum(acc, pz_from_interval(IntervalMatrix(np.array([rlo]), np.array([rhi]))).reshape(()))
        else:
            acc = acc + rlo
        if max_generators is not None:
            acc = pz_reduce(acc, max_generators)
        results.append(acc)
    return results


def pz_taylor(f, p: PolyZonotope, degree: int = 6, max_generators: int | None = None) -> PolyZonotope:
    """Enclose ``f(p)`` by a degree-``degree`` Taylor polynomial about the
    center plus an interval Lagrange remainder on a fresh indeterminate.

    ``f`` is ``"sin"``, ``"cos"`` or a :class:`TaylorFunction`.
    """
    return _taylor_many([f], p, degree, max_generators)[0]


def pz_sincos(p: PolyZonotope, degree: int = 6, max_generators: int | None = None):
    """``(sin(p), cos(p))`` sharing the powers of ``p - c``."""
    s, c = _taylor_many(["sin", "cos"], p, degree, max_generators)
    return s, c


# ---------------------------------------------------------------------------
# bounds of k-sliced PZs and their gradients


class KBounds:
    """Vectorised ``sup``/``inf`` of many scalar PZs after slicing by k.

    For each scalar PZ, generators are split into monomials in the param
    ids times a residual monomial in all other ids. Slicing at ``k`` turns
    each residual group into a polynomial ``c_m(k)``, so

        sup(P^k) = poly(k) + sum_m |c_m(k)|,   inf(P^k) = poly(k) - sum_m |c_m(k)|

    which is exactly ``pz_bounds(pz_slice(P, k))``. Gradients follow from
    the polynomial part plus ``sign(c_m(k)) * grad c_m(k)``, with zero used
    at a sign change.
    """

    def __init__(self, pzs: Sequence[PolyZonotope], param_ids: Sequence[int]):
        self.param_ids = np.asarray(param_ids, dtype=np.int64)
        self.n_params = len(self.param_ids)
        self.n = len(pzs)
        npar = self.n_params
        poly_rows, poly_mono, poly_val = [], [], []
        grp_owner, grp_mono_rows, grp_vals = [], [], []
        const_rad = np.zeros(self.n)
        mono_list = []  # exponent rows (npar,) collected across PZs
        n_groups = 0
        for r, p in enumerate(pzs):
            if p.dim != 1:
                raise StructureError("KBounds needs scalar PZs")
            poly_rows.append(r)
            poly_mono.append(np.zeros((1, npar), dtype=np.int64))
            poly_val.append(p.c[:1])
            if not p.G.shape[0]:
                continue
            cols = np.searchsorted(self.param_ids, p.ids)
            cols = np.minimum(cols, max(npar - 1, 0))
            is_par = (self.param_ids[cols] == p.ids) if npar else np.zeros(len(p.ids), bool)
            Ek = np.zeros((p.G.shape[0], npar), dtype=np.int64)
            if is_par.any():
                Ek[:, cols[is_par]] = p.E[:, is_par]
            Eo = p.E[:, ~is_par]
            g = p.G[:, 0]
            pure = ~np.any(Eo != 0, axis=1)
            if pure.any():
                poly_rows.append(np.full(int(pure.sum()), r))
                poly_mono.append(Ek[pure])
                poly_val.append(g[pure])
            mixed = ~pure
            if mixed.any():
                Eom, Ekm, gm = Eo[mixed], Ek[mixed], g[mixed]
                keys = _row_keys(Eom)
                if keys is None:
                    _, inv = np.unique(Eom, axis=0, return_inverse=True)
                else:
                    _, inv = np.unique(keys, return_inverse=True)
                inv = inv.ravel()
                ng = int(inv.max()) + 1
                # groups that only carry a constant coefficient fold into a radius
                kconst = ~np.any(Ekm != 0, axis=1)
                varying = np.zeros(ng, dtype=bool)
                np.logical_or.at(varying, inv, ~kconst)
                const_groups = ~varying
                if const_groups.any():
                    sums = np.zeros(ng)
                    np.add.at(sums, inv, gm)
                    const_rad[r] += np.abs(sums[const_groups]).sum()
                if varying.any():
                    remap = -np.ones(ng, dtype=np.int64)
                    remap[varying] = n_groups + np.arange(int(varying.sum()))
                    sel = varying[inv]
                    grp_mono_rows.append(remap[inv[sel]])
                    mono_list.append(Ekm[sel])
                    grp_vals.append(gm[sel])
                    grp_owner.append(np.full(int(varying.sum()), r))
                    n_groups += int(varying.sum())
        all_poly_mono = np.concatenate(poly_mono) if poly_mono else np.zeros((0, npar), np.int64)
        all_grp_mono = np.concatenate(mono_list) if mono_list else np.zeros((0, npar), np.int64)
        stacked = np.concatenate([all_poly_mono, all_grp_mono])
        if npar:
            monos, inv = np.unique(stacked, axis=0, return_inverse=True)
            inv = inv.ravel()
        else:
            monos, inv = np.zeros((1, 0), np.int64), np.zeros(stacked.shape[0], np.int64)
        self.monomials = monos
        nm = monos.shape[0]
        npoly = all_poly_mono.shape[0]
        rows = np.concatenate([np.atleast_1d(np.asarray(x)) for x in poly_rows])
        vals = np.concatenate(poly_val)
        self._poly = sp.csr_matrix((vals, (rows, inv[:npoly])), shape=(self.n, nm))
        if n_groups:
            grows = np.concatenate(grp_mono_rows)
            gvals = np.concatenate(grp_vals)
            self._grp = sp.csr_matrix((gvals, (grows, inv[npoly:])), shape=(n_groups, nm))
            owner = np.concatenate(grp_owner)
            self._owner = sp.csr_matrix((np.ones(n_groups), (owner, np.arange(n_groups))), shape=(self.n, n_groups))
        else:
            self._grp = None
            self._owner = None
        self._const_rad = const_rad

    def _monomials(self, k):
        k = np.asarray(k, dtype=float)
        if k.shape != (self.n_params,):
            raise StructureError(f"k must have length {self.n_params}")
        E = self.monomials
        vals = np.prod(k[None, :] ** E, axis=1) if E.shape[1] else np.ones(E.shape[0])
        grad = np.zeros((E.shape[0], self.n_params))
        for j in range(self.n_params):
            Ej = E.copy()
            has = Ej[:, j] > 0
            Ej[has, j] -= 1
            grad[has, j] = E[has, j] * np.prod(k[None, :] ** Ej[has], axis=1)
        return vals, grad

    def evaluate(self, k, with_grad: bool = True):
        """Return ``(inf, sup)`` or ``(inf, sup, d_inf, d_sup)`` at ``k``."""
        m, dm = self._monomials(k)
        poly = self._poly @ m
        rad = self._const_rad.copy()
        if with_grad:
            dpoly = self._poly @ dm
            drad = np.zeros_like(dpoly)
        if self._grp is not None:
            gv = self._grp @ m
            rad += self._owner @ np.abs(gv)
            if with_grad:
                dg = self._grp @ dm
                drad += self._owner @ (np.sign(gv)[:, None] * dg)
        if not with_grad:
            return poly - rad, poly + rad
        return poly - rad, poly + rad, dpoly - drad, dpoly + drad


def pz_grad_k(p: PolyZonotope, which: str, k, param_ids: Sequence[int] | None = None) -> np.ndarray:
    """Gradient in k of ``sup`` or ``inf`` of the k-sliced scalar PZ."""
    k = np.asarray(k, dtype=float)
    if param_ids is None:
        param_ids = [param_id(j) for j in range(len(k))]
    if p.dim != 1:
        raise StructureError("pz_grad_k needs a scalar PZ")
    lo, hi, dlo, dhi = KBounds([p], param_ids).evaluate(k)
    if which == "sup":
        return dhi[0]
    if which == "inf":
        return dlo[0]
    raise PZError(f"which must be 'sup' or 'inf', got {which!r}")
