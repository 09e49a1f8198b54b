"""Closed-interval arithmetic for scalars, vectors and matrices.

Endpoints use plain floating point; no directed rounding is performed, so
containment holds up to about one ulp of slack.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class IntervalError(ValueError):
    """Raised for malformed intervals or incompatible shapes."""


@dataclass(frozen=True)
class Interval:
    """A closed real interval ``[lo, hi]``."""

    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if math.isnan(lo) or math.isnan(hi):
            raise IntervalError("interval endpoints must not be NaN")
        if lo > hi:
            raise IntervalError(f"lower endpoint {lo} exceeds upper endpoint {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def point(cls, x: float) -> "Interval":
        return cls(x, x)

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def rad(self) -> float:
        return 0.5 * (self.hi - self.lo)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    def __add__(self, other):
        return iv_add_sub(self, _as_interval(other), "sum")

    __radd__ = __add__

    def __sub__(self, other):
        return iv_add_sub(self, _as_interval(other), "diff")

    def __rsub__(self, other):
        return iv_add_sub(_as_interval(other), self, "diff")

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def __mul__(self, other):
        return iv_mul(self, _as_interval(other))

    __rmul__ = __mul__


def _as_interval(x) -> Interval:
    if isinstance(x, Interval):
        return x
    return Interval.point(float(x))


def iv_add_sub(a: Interval, b: Interval, mode: str = "sum") -> Interval:
    """Minkowski sum (``mode="sum"``) or difference (``mode="diff"``)."""
    if mode == "sum":
        return Interval(a.lo + b.lo, a.hi + b.hi)
    if mode == "diff":
        return Interval(a.lo - b.hi, a.hi - b.lo)
    raise IntervalError(f"unknown mode {mode!r}")


def iv_mul(a: Interval, b: Interval) -> Interval:
    p = (a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi)
    return Interval(min(p), max(p))


class IntervalMatrix:
    """Array of intervals stored as two endpoint arrays.

    Any shape is accepted; a 1-D array acts as a column vector and leading
    axes broadcast like NumPy batch dimensions. Instances are immutable.
    """

    __array_ufunc__ = None

    def __init__(self, lo, hi=None):
        lo = np.array(lo, dtype=float)
        hi = lo.copy() if hi is None else np.array(hi, dtype=float)
        if lo.shape != hi.shape:
            raise IntervalError(f"endpoint shapes differ: {lo.shape} vs {hi.shape}")
        if np.isnan(lo).any() or np.isnan(hi).any():
            raise IntervalError("interval endpoints must not be NaN")
        if (lo > hi).any():
            bad = np.argwhere(lo > hi)[0]
            raise IntervalError(f"lower endpoint exceeds upper endpoint at index {tuple(bad)}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        self._lo = lo
        self._hi = hi

    @classmethod
    def _raw(cls, lo, hi) -> "IntervalMatrix":
        # internal constructor for results that are ordered by construction
        obj = cls.__new__(cls)
        lo.setflags(write=False)
        hi.setflags(write=False)
        obj._lo = lo
        obj._hi = hi
        return obj

    @classmethod
    def from_center_radius(cls, center, radius) -> "IntervalMatrix":
        center = np.asarray(center, dtype=float)
        radius = np.asarray(radius, dtype=float)
        if (radius < 0).any():
            raise IntervalError("radius must be nonnegative")
        return cls(center - radius, center + radius)

    @classmethod
    def from_intervals(cls, entries) -> "IntervalMatrix":
        arr = np.asarray(entries, dtype=object)
        lo = np.vectorize(lambda e: _as_interval(e).lo, otypes=[float])(arr)
        hi = np.vectorize(lambda e: _as_interval(e).hi, otypes=[float])(arr)
        return cls(lo, hi)

    @property
    def lo(self) -> np.ndarray:
        return self._lo

    @property
    def hi(self) -> np.ndarray:
        return self._hi

    @property
    def shape(self) -> tuple:
        return self._lo.shape

    @property
    def rows(self) -> int:
        return self.shape[-2] if len(self.shape) >= 2 else self.shape[0]

    @property
    def cols(self) -> int:
        return self.shape[-1] if len(self.shape) >= 2 else 1

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self._lo + self._hi)

    @property
    def rad(self) -> np.ndarray:
        return 0.5 * (self._hi - self._lo)

    def is_degenerate(self) -> bool:
        return bool(np.all(self._lo == self._hi))

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x >= self._lo - tol) & (x <= self._hi + tol)

    def __getitem__(self, idx):
        lo, hi = self._lo[idx], self._hi[idx]
        if np.ndim(lo) == 0:
            return Interval(float(lo), float(hi))
        return IntervalMatrix._raw(np.array(lo), np.array(hi))

    def __len__(self):
        return self.shape[0]

    def __repr__(self):
        return f"IntervalMatrix(lo={self._lo!r}, hi={self._hi!r})"

    @property
    def T(self) -> "IntervalMatrix":
        return IntervalMatrix._raw(np.swapaxes(self._lo, -1, -2).copy(), np.swapaxes(self._hi, -1, -2).copy())

    def __neg__(self):
        return IntervalMatrix._raw(-self._hi, -self._lo)

    def __add__(self, other):
        o = as_interval_matrix(other)
        return IntervalMatrix._raw(self._lo + o._lo, self._hi + o._hi)

    __radd__ = __add__

    def __sub__(self, other):
        o = as_interval_matrix(other)
        return IntervalMatrix._raw(self._lo - o._hi, self._hi - o._lo)

    def __rsub__(self, other):
        return as_interval_matrix(other) - self

    def __mul__(self, other):
        return _elementwise_mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return iv_matmul(self, other)

    def __rmatmul__(self, other):
        return iv_matmul(other, self)

    def sum(self, axis=None) -> "IntervalMatrix":
        return IntervalMatrix._raw(np.asarray(self._lo.sum(axis=axis)), np.asarray(self._hi.sum(axis=axis)))


def as_interval_matrix(x) -> IntervalMatrix:
    if isinstance(x, IntervalMatrix):
        return x
    if isinstance(x, Interval):
        return IntervalMatrix(x.lo, x.hi)
    arr = np.array(x, dtype=float)
    return IntervalMatrix._raw(arr, arr.copy())


def _elementwise_mul(a, b) -> IntervalMatrix:
    if not isinstance(a, IntervalMatrix):
        a, b = b, a
    if not isinstance(b, (IntervalMatrix, Interval)):
        s = np.asarray(b, dtype=float)
        p, q = s * a._lo, s * a._hi
        return IntervalMatrix._raw(np.minimum(p, q), np.maximum(p, q))
    b = as_interval_matrix(b)
    p1, p2 = a._lo * b._lo, a._lo * b._hi
    p3, p4 = a._hi * b._lo, a._hi * b._hi
    lo = np.minimum(np.minimum(p1, p2), np.minimum(p3, p4))
    hi = np.maximum(np.maximum(p1, p2), np.maximum(p3, p4))
    return IntervalMatrix._raw(lo, hi)


def iv_matmul(A, B) -> IntervalMatrix:
    """Interval matrix product, entry (i, j) = sum over k of A_ik * B_kj.

    Either operand may be a real array. One-dimensional operands follow the
    ``np.matmul`` conventions.
    """
    a_iv = isinstance(A, (IntervalMatrix, Interval))
    b_iv = isinstance(B, (IntervalMatrix, Interval))
    A = as_interval_matrix(A)
    B = as_interval_matrix(B)
    a_vec, b_vec = A._lo.ndim == 1, B._lo.ndim == 1
    alo = A._lo[None, :] if a_vec else A._lo
    ahi = A._hi[None, :] if a_vec else A._hi
    blo = B._lo[:, None] if b_vec else B._lo
    bhi = B._hi[:, None] if b_vec else B._hi
    if alo.ndim < 2 or blo.ndim < 2:
        raise IntervalError("matrix product needs at least one dimension on each side")
    if alo.shape[-1] != blo.shape[-2]:
        raise IntervalError(f"shape mismatch: {A.shape} @ {B.shape}")
    # (..., n, m, 1) * (..., 1, m, p) summed over m
    alo_, ahi_ = alo[..., :, :, None], ahi[..., :, :, None]
    blo_, bhi_ = blo[..., None, :, :], bhi[..., None, :, :]
    if not a_iv:
        p, q = alo_ * blo_, alo_ * bhi_
        lo, hi = np.minimum(p, q), np.maximum(p, q)
    elif not b_iv:
        p, q = alo_ * blo_, ahi_ * blo_
        lo, hi = np.minimum(p, q), np.maximum(p, q)
    else:
        p1, p2 = alo_ * blo_, alo_ * bhi_
        p3, p4 = ahi_ * blo_, ahi_ * bhi_
        lo = np.minimum(np.minimum(p1, p2), np.minimum(p3, p4))
        hi = np.maximum(np.maximum(p1, p2), np.maximum(p3, p4))
    lo, hi = lo.sum(axis=-2), hi.sum(axis=-2)
    if a_vec:
        lo, hi = lo[..., 0, :], hi[..., 0, :]
    if b_vec:
        lo, hi = lo[..., 0], hi[..., 0]
    return IntervalMatrix._raw(np.asarray(lo), np.asarray(hi))


def skew(v) -> np.ndarray:
    """Real skew-symmetric matrix with ``skew(a) @ b == cross(a, b)``."""
    v = np.asarray(v, dtype=float)
    z = np.zeros(v.shape[:-1])
    return np.stack(
        [
            np.stack([z, -v[..., 2], v[..., 1]], axis=-1),
            np.stack([v[..., 2], z, -v[..., 0]], axis=-1),
            np.stack([-v[..., 1], v[..., 0], z], axis=-1),
        ],
        axis=-2,
    )


def iv_skew(a: IntervalMatrix) -> IntervalMatrix:
    a = as_interval_matrix(a)
    return IntervalMatrix._raw(*_skew_lo_hi(a._lo, a._hi))


def _skew_lo_hi(lo, hi):
    z = np.zeros(lo.shape[:-1])

    def build(p, n):
        # p supplies entries that enter with + sign, n supplies negated ones
        return np.stack(
            [
                np.stack([z, -n[..., 2], p[..., 1]], axis=-1),
                np.stack([p[..., 2], z, -n[..., 0]], axis=-1),
                np.stack([-n[..., 1], p[..., 0], z], axis=-1),
            ],
            axis=-2,
        )

    return build(lo, hi), build(hi, lo)


def _iv_mul_raw(alo, ahi, blo, bhi):
    p1, p2, p3, p4 = alo * blo, alo * bhi, ahi * blo, ahi * bhi
    return np.minimum(np.minimum(p1, p2), np.minimum(p3, p4)), np.maximum(np.maximum(p1, p2), np.maximum(p3, p4))


_C1 = np.array([1, 2, 0])
_C2 = np.array([2, 0, 1])


def iv_cross(a, b) -> IntervalMatrix:
    """Set-based cross product ``[a]^x [b]`` of interval 3-vectors.

    Component ``i`` is ``a_{i+1} b_{i+2} - a_{i+2} b_{i+1}``, the same two
    products the skew-matrix route sums, so the enclosure is identical.
    """
    A = as_interval_matrix(a)
    B = as_interval_matrix(b)
    if A.shape[-1:] != (3,) or B.shape[-1:] != (3,):
        raise IntervalError(f"cross product needs 3-vectors, got {A.shape} and {B.shape}")
    l1, h1 = _iv_mul_raw(A._lo[..., _C1], A._hi[..., _C1], B._lo[..., _C2], B._hi[..., _C2])
    l2, h2 = _iv_mul_raw(A._lo[..., _C2], A._hi[..., _C2], B._lo[..., _C1], B._hi[..., _C1])
    return IntervalMatrix._raw(l1 - h2, h1 - l2)


def iv_matvec(M, v) -> IntervalMatrix:
    """Batched matrix-vector product: ``(..., n, m) x (..., m) -> (..., n)``."""
    if isinstance(v, (IntervalMatrix, Interval)):
        v = as_interval_matrix(v)
        col = IntervalMatrix._raw(v.lo[..., None], v.hi[..., None])
    else:
        col = np.asarray(v, dtype=float)[..., None]
    out = iv_matmul(M, col)
    return IntervalMatrix._raw(out.lo[..., 0], out.hi[..., 0])
