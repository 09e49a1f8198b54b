import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from armour.interval import IntervalMatrix
from armour.polyzono import (
    KBounds,
    PolyZonotope,
    PZError,
    err_pos_id,
    fresh_ids,
    param_id,
    pz_bounds,
    pz_cross,
    pz_from_interval,
    pz_grad_k,
    pz_mul,
    pz_pow,
    pz_reduce,
    pz_slice,
    pz_sum,
    pz_taylor,
    pz_sincos,
)


def naive_eval(p: PolyZonotope, values: dict) -> np.ndarray:
    """Loop-based evaluation used as an oracle for the vectorised code."""
    out = p.c.copy()
    for g, e in zip(p.G, p.E):
        term = 1.0
        for ident, power in zip(p.ids, e):
            term *= values[int(ident)] ** int(power)
        out = out + g * term
    return out.reshape(p.shape)


def random_pz(rng, n_ids=3, n_gen=6, dim=2, max_deg=3, ids=None):
    ids = fresh_ids(n_ids) if ids is None else np.asarray(ids)
    E = rng.integers(0, max_deg + 1, size=(n_gen, len(ids)))
    G = rng.normal(size=(n_gen, dim))
    return PolyZonotope(rng.normal(size=dim), G, E, ids)


def draw_values(rng, ids):
    return {int(i): float(rng.uniform(-1, 1)) for i in ids}


def test_from_interval_formula():
    p = pz_from_interval(IntervalMatrix([0.0], [2.0]))
    assert p.c[0] == 1.0 and p.G.shape == (1, 1) and p.G[0, 0] == 1.0
    q = pz_from_interval(IntervalMatrix([3.0], [3.0]))
    assert q.is_point() and q.c[0] == 3.0
    r = pz_from_interval(IntervalMatrix([-1.0, 2.0], [3.0, 2.0]))
    np.testing.assert_array_equal(r.c, [1.0, 2.0])
    assert r.n_generators == 1
    np.testing.assert_array_equal(r.G[0], [2.0, 0.0])


def test_from_interval_rejects_id_collision():
    i = fresh_ids(1)[0]
    with pytest.raises(PZError):
        pz_from_interval(IntervalMatrix([0.0, 0.0], [1.0, 1.0]), ids=[i, i])


def test_sum_identity_and_dependent():
    rng = np.random.default_rng(0)
    p = random_pz(rng)
    s = pz_sum(p, PolyZonotope(np.zeros(2)))
    np.testing.assert_array_equal(s.c, p.c)
    np.testing.assert_array_equal(s.G, p.G)
    x = fresh_ids(1)
    a = PolyZonotope(1.0, [[2.0]], [[1]], x)
    b = PolyZonotope(3.0, [[4.0]], [[1]], x)
    ab = pz_sum(a, b)
    assert ab.c[0] == 4.0 and ab.G.shape == (1, 1) and ab.G[0, 0] == 6.0


def test_sum_disjoint_contains_samples():
    rng = np.random.default_rng(1)
    p, q = random_pz(rng), random_pz(rng)
    s = p + q
    for _ in range(500):
        v = draw_values(rng, np.concatenate([p.ids, q.ids]))
        np.testing.assert_allclose(naive_eval(s, v), naive_eval(p, v) + naive_eval(q, v), atol=1e-12)


def test_mul_identity_square_and_cross():
    rng = np.random.default_rng(2)
    P = random_pz(rng, dim=3).reshape((3,))
    out = pz_mul(PolyZonotope(np.eye(3)), P)
    np.testing.assert_allclose(out.c, P.c)
    np.testing.assert_allclose(out.G, P.G)
    x = fresh_ids(1)
    sq = pz_pow(PolyZonotope(1.0, [[1.0]], [[1]], x), 2)
    terms = {tuple(e): g[0] for e, g in zip(sq.E, sq.G)}
    assert sq.c[0] == 1.0 and terms == {(1,): 2.0, (2,): 1.0}
    e3 = pz_cross(PolyZonotope(np.array([1.0, 0, 0])), PolyZonotope(np.array([0, 1.0, 0])))
    np.testing.assert_array_equal(e3.c, [0, 0, 1])


def test_mul_and_cross_match_pointwise():
    rng = np.random.default_rng(3)
    A = random_pz(rng, dim=9).reshape((3, 3))
    b = random_pz(rng, dim=3).reshape((3,))
    c = random_pz(rng, dim=3).reshape((3,))
    Ab, bxc = A @ b, pz_cross(b, c)
    ids = np.unique(np.concatenate([A.ids, b.ids, c.ids]))
    for _ in range(300):
        v = draw_values(rng, ids)
        np.testing.assert_allclose(naive_eval(Ab, v), naive_eval(A, v) @ naive_eval(b, v), atol=1e-10)
        np.testing.assert_allclose(naive_eval(bxc, v), np.cross(naive_eval(b, v), naive_eval(c, v)), atol=1e-10)


def test_slice_examples():
    k = param_id(0)
    p = PolyZonotope(1.0, [[2.0]], [[1]], [k])
    s = pz_slice(p, {k: 0.5})
    assert s.is_point() and s.c[0] == 2.0
    other = param_id(1)
    assert pz_slice(p, {other: 0.3}) is p
    with pytest.raises(PZError):
        pz_slice(p, {k: 1.5})


def test_slice_subset_of_original():
    rng = np.random.default_rng(4)
    p = random_pz(rng)
    fixed = int(p.ids[0])
    sigma = 0.37
    s = pz_slice(p, {fixed: sigma})
    for _ in range(300):
        v = draw_values(rng, p.ids)
        v[fixed] = sigma
        np.testing.assert_allclose(naive_eval(s, v), naive_eval(p, v), atol=1e-12)


def test_bounds_formula():
    x, y = fresh_ids(2)
    p = PolyZonotope(1.0, [[2.0], [3.0]], [[1, 0], [1, 1]], [x, y])
    lo, hi = pz_bounds(p)
    assert float(lo) == -4.0 and float(hi) == 6.0
    c = PolyZonotope(np.array([1.5, -2.0]))
    lo, hi = pz_bounds(c)
    np.testing.assert_array_equal(lo, hi)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bounds_enclose_samples(seed):
    rng = np.random.default_rng(seed)
    p = random_pz(rng)
    lo, hi = pz_bounds(p)
    tlo, thi = pz_bounds(p, tight=True)
    assert np.all(tlo >= lo - 1e-12) and np.all(thi <= hi + 1e-12)
    pts, _ = p.sample(rng, 2000)
    assert np.all(pts >= tlo - 1e-12) and np.all(pts <= thi + 1e-12)


def test_taylor_degenerate_inputs():
    z = PolyZonotope(np.array(0.0))
    s = pz_taylor("sin", z)
    c = pz_taylor("cos", z)
    assert s.is_point() and float(s.c[0]) == 0.0
    assert c.is_point() and float(c.c[0]) == 1.0


def test_taylor_contains_sin_and_cos():
    rng = np.random.default_rng(5)
    x = fresh_ids(1)
    p = PolyZonotope(0.0, [[0.1]], [[1]], x)
    s, c = pz_sincos(p, degree=6)
    slo, shi = pz_bounds(s)
    clo, chi = pz_bounds(c)
    xs = rng.uniform(-1, 1, 10_000)
    assert np.all(np.sin(0.1 * xs) >= slo) and np.all(np.sin(0.1 * xs) <= shi)
    assert np.all(np.cos(0.1 * xs) >= clo) and np.all(np.cos(0.1 * xs) <= chi)
    # the shared indeterminate keeps the dependency: slicing at x recovers sin(0.1 x)
    for xv in rng.uniform(-1, 1, 50):
        v = {int(x[0]): xv}
        sl = pz_slice(s, v)
        lo, hi = pz_bounds(sl)
        assert lo <= np.sin(0.1 * xv) <= hi
        assert hi - lo < 1e-8


def test_reduce_cases():
    rng = np.random.default_rng(6)
    p = random_pz(rng, n_gen=4)
    assert pz_reduce(p, 10) is p
    box = pz_from_interval(IntervalMatrix([-1.0, 0.0, 2.0], [1.0, 3.0, 2.5]))
    red = pz_reduce(box, 0)
    np.testing.assert_allclose(pz_bounds(red)[0], pz_bounds(box)[0])
    np.testing.assert_allclose(pz_bounds(red)[1], pz_bounds(box)[1])
    with pytest.raises(PZError):
        pz_reduce(p, -1)


def test_reduce_keeps_param_generators_and_encloses():
    rng = np.random.default_rng(7)
    ids = np.concatenate([[param_id(0), param_id(1)], fresh_ids(3)])
    p = random_pz(rng, n_gen=40, ids=ids)
    red = pz_reduce(p, 10)
    lo, hi = pz_bounds(red)
    pts, _ = p.sample(rng, 10_000)
    assert np.all(pts >= lo - 1e-12) and np.all(pts <= hi + 1e-12)
    # slicing the reduced set at k still encloses points of the original sliced at the same k
    k = {param_id(0): 0.4, param_id(1): -0.8}
    slo, shi = pz_bounds(pz_slice(red, k))
    ps = pz_slice(p, k)
    pts, _ = ps.sample(rng, 5000)
    assert np.all(pts >= slo - 1e-12) and np.all(pts <= shi + 1e-12)


def test_grad_linear_and_kink():
    k0 = param_id(0)
    p = PolyZonotope(3.0, [[2.0]], [[1]], [k0])
    for k in (-0.7, 0.0, 0.9):
        assert pz_grad_k(p, "sup", [k]) == pytest.approx(2.0)
    y = fresh_ids(1)[0]
    ab = PolyZonotope(0.0, [[1.0]], [[1, 1]], sorted([k0, y]))
    assert pz_grad_k(ab, "sup", [0.0]) == 0.0
    with pytest.raises(PZError):
        pz_grad_k(p, "mid", [0.0])


def test_kbounds_match_slice_and_finite_differences():
    rng = np.random.default_rng(8)
    ids = np.concatenate([[param_id(0), param_id(1)], fresh_ids(2)])
    pzs = [random_pz(rng, dim=1, n_gen=8, ids=ids).reshape(()) for _ in range(20)]
    kb = KBounds(pzs, [param_id(0), param_id(1)])
    h = 1e-6
    checked = 0
    for _ in range(20):
        k = rng.uniform(-1 + 2 * h, 1 - 2 * h, 2)
        lo, hi, dlo, dhi = kb.evaluate(k)
        for i, p in enumerate(pzs):
            slo, shi = pz_bounds(pz_slice(p, {param_id(0): k[0], param_id(1): k[1]}))
            assert lo[i] == pytest.approx(float(slo), abs=1e-12)
            assert hi[i] == pytest.approx(float(shi), abs=1e-12)
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            up, dn = kb.evaluate(k + e, False), kb.evaluate(k - e, False)
            fd = (up[1] - dn[1]) / (2 * h)
            one_sided = (up[1] - hi) / h
            smooth = np.abs(one_sided - fd) < 1e-4 * np.maximum(1, np.abs(fd))
            err = np.abs(dhi[:, j] - fd) / np.maximum(np.abs(fd), 1)
            assert np.all(err[smooth] < 1e-5)
            checked += int(smooth.sum())
    assert checked > 500


def test_shape_errors():
    with pytest.raises(PZError):
        PolyZonotope(np.zeros(2), np.ones((1, 2)), [[1, 1]], [err_pos_id(0)])
    with pytest.raises(PZError):
        PolyZonotope(np.zeros(2)).reshape((3,))


def test_evaluate_by_id_mapping_batches():
    pz = PolyZonotope(np.array([1.0]), np.array([[2.0], [1.0]]), np.array([[1, 0], [1, 1]]), np.array([3, 7]))
    x3, x7 = np.array([0.5, -1.0, 0.0]), np.array([0.2, 0.4, 1.0])
    got = pz.evaluate({3: x3, 7: x7, 99: np.zeros(3)})
    np.testing.assert_allclose(got[:, 0], 1 + 2 * x3 + x3 * x7)
    np.testing.assert_allclose(got, pz.evaluate(np.column_stack([x3, x7])))
