import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from armour.interval import (
    Interval,
    IntervalError,
    IntervalMatrix,
    iv_add_sub,
    iv_cross,
    iv_matmul,
    iv_matvec,
    iv_mul,
    iv_skew,
    skew,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


@st.composite
def intervals(draw):
    a, b = draw(finite), draw(finite)
    return Interval(min(a, b), max(a, b))


def test_add_and_sub_endpoints():
    assert iv_add_sub(Interval(1, 2), Interval(3, 5)) == Interval(4, 7)
    assert iv_add_sub(Interval(1, 2), Interval(3, 5), "diff") == Interval(-4, -1)
    assert Interval(2.5, 2.5) + Interval(0, 0) == Interval(2.5, 2.5)


def test_unknown_mode_rejected():
    with pytest.raises(IntervalError):
        iv_add_sub(Interval(0, 1), Interval(0, 1), "prod")


def test_mul_endpoint_enumeration():
    # products of endpoints: -3, -4, 6, 8
    assert iv_mul(Interval(-1, 2), Interval(3, 4)) == Interval(-4, 8)
    assert iv_mul(Interval(2, 2), Interval(3, 3)) == Interval(6, 6)
    assert iv_mul(Interval(-1, 1), Interval(-1, 1)) == Interval(-1, 1)


def test_invalid_interval_rejected():
    with pytest.raises(IntervalError):
        Interval(2, 1)
    with pytest.raises(IntervalError):
        Interval(float("nan"), 1)
    with pytest.raises(IntervalError):
        IntervalMatrix([1.0, 2.0], [0.0, 3.0])


@given(intervals(), intervals(), st.floats(0, 1), st.floats(0, 1))
def test_scalar_ops_contain_samples(a, b, s, t):
    x = a.lo + s * (a.hi - a.lo)
    y = b.lo + t * (b.hi - b.lo)
    tol = 1e-9 * (1 + abs(x) + abs(y)) ** 2
    for res, val in ((a + b, x + y), (a - b, x - y), (a * b, x * y)):
        assert res.lo - tol <= val <= res.hi + tol


def test_matmul_degenerate_matches_real_product():
    rng = np.random.default_rng(0)
    A, B = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    out = iv_matmul(IntervalMatrix(A), IntervalMatrix(B))
    np.testing.assert_allclose(out.lo, A @ B, atol=1e-14)
    np.testing.assert_allclose(out.hi, A @ B, atol=1e-14)


def test_matmul_one_by_one_is_scalar_product():
    out = iv_matmul(IntervalMatrix([[-1.0]], [[2.0]]), IntervalMatrix([[3.0]], [[4.0]]))
    assert out[0, 0] == iv_mul(Interval(-1, 2), Interval(3, 4))


def test_matmul_contains_sampled_selections():
    rng = np.random.default_rng(1)
    ca, cb = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    ra, rb = rng.uniform(0, 0.5, (2, 2)), rng.uniform(0, 0.5, (2, 2))
    A = IntervalMatrix.from_center_radius(ca, ra)
    B = IntervalMatrix.from_center_radius(cb, rb)
    out = A @ B
    a0 = ca + ra * rng.uniform(-1, 1, (10_000, 2, 2))
    b0 = cb + rb * rng.uniform(-1, 1, (10_000, 2, 2))
    assert out.contains(a0 @ b0, tol=1e-12).all()


def test_matmul_shape_mismatch():
    with pytest.raises(IntervalError):
        iv_matmul(IntervalMatrix(np.zeros((2, 3))), IntervalMatrix(np.zeros((2, 3))))


def test_cross_basis_and_self():
    e1, e2 = IntervalMatrix([1.0, 0, 0]), IntervalMatrix([0, 1.0, 0])
    np.testing.assert_array_equal(iv_cross(e1, e2).lo, [0, 0, 1])
    a = IntervalMatrix([0.3, -1.2, 2.0])
    out = iv_cross(a, a)
    np.testing.assert_allclose(out.lo, 0, atol=1e-15)
    np.testing.assert_allclose(out.hi, 0, atol=1e-15)


def test_cross_contains_sampled_selections():
    rng = np.random.default_rng(2)
    ca, cb = rng.normal(size=3), rng.normal(size=3)
    ra, rb = rng.uniform(0, 0.4, 3), rng.uniform(0, 0.4, 3)
    out = iv_cross(IntervalMatrix.from_center_radius(ca, ra), IntervalMatrix.from_center_radius(cb, rb))
    a0 = ca + ra * rng.uniform(-1, 1, (10_000, 3))
    b0 = cb + rb * rng.uniform(-1, 1, (10_000, 3))
    assert out.contains(np.cross(a0, b0), tol=1e-12).all()


def test_cross_equals_skew_route():
    rng = np.random.default_rng(3)
    a = IntervalMatrix.from_center_radius(rng.normal(size=(5, 3)), rng.uniform(0, 1, (5, 3)))
    b = IntervalMatrix.from_center_radius(rng.normal(size=(5, 3)), rng.uniform(0, 1, (5, 3)))
    direct = iv_cross(a, b)
    via = iv_matvec(iv_skew(a), b)
    np.testing.assert_allclose(direct.lo, via.lo, atol=1e-12)
    np.testing.assert_allclose(direct.hi, via.hi, atol=1e-12)


def test_skew_matches_cross():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=3), rng.normal(size=3)
    np.testing.assert_allclose(skew(a) @ b, np.cross(a, b), atol=1e-14)


def test_cross_requires_three_vectors():
    with pytest.raises(IntervalError):
        iv_cross(IntervalMatrix([1.0, 2.0]), IntervalMatrix([1.0, 2.0]))


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_matvec_batched_contains(seed):
    rng = np.random.default_rng(seed)
    M = IntervalMatrix.from_center_radius(rng.normal(size=(4, 3, 3)), rng.uniform(0, 0.3, (4, 3, 3)))
    v = IntervalMatrix.from_center_radius(rng.normal(size=(4, 3)), rng.uniform(0, 0.3, (4, 3)))
    out = iv_matvec(M, v)
    m0 = M.mid + M.rad * rng.uniform(-1, 1, M.shape)
    v0 = v.mid + v.rad * rng.uniform(-1, 1, v.shape)
    assert out.contains(np.einsum("bij,bj->bi", m0, v0), tol=1e-12).all()
