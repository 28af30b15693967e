import numpy as np
import pytest

from yamabe_lab.tensor_core import (
    Dim,
    MonomialSpace,
    PolyScalar,
    differentiate,
    eval_jet,
    multi_indices,
    poly_trace,
    trace_free_project,
    unit,
)


def test_multi_index_count():
    # stars and bars: C(n + N, N)
    assert len(multi_indices(3, 4)) == 35
    assert len(multi_indices(6, 3)) == 84
    assert len(multi_indices(6, 3, min_degree=3)) == 56


def test_dim_rejects_small():
    with pytest.raises(ValueError):
        Dim(2)


def test_poly_arithmetic_and_eval(rng):
    x, y, z = (PolyScalar.coordinate(3, i) for i in range(3))
    p = (x + 2.0 * y) * (z - 1.0) + x**2
    pt = rng.normal(size=3)
    expect = (pt[0] + 2 * pt[1]) * (pt[2] - 1) + pt[0] ** 2
    assert p(pt) == pytest.approx(expect, rel=1e-14)
    assert p.degree == 2
    assert (p - p).is_zero()


def test_partial_and_restrict():
    x, y = PolyScalar.coordinate(2, 0), PolyScalar.coordinate(2, 1)
    p = x**3 * y + 4.0 * y**2
    assert p.partial(0) == 3.0 * x**2 * y
    assert differentiate(p, (1, 1)) == 3.0 * x**2
    assert differentiate(p, (0, 2)) == PolyScalar.constant(2, 8.0)
    assert p.restrict(1, 0.0).is_zero()
    assert p.restrict(1, 2.0) == 2.0 * x**3 + 16.0


def test_eval_jet_matches_finite_differences(rng):
    n = 4
    p = PolyScalar(n, {(2, 0, 1, 0): 1.5, (0, 1, 1, 1): -2.0, (0, 0, 0, 3): 0.25, (1, 0, 0, 0): 3.0})
    x = rng.normal(size=n)
    jv = eval_jet(p, x)
    h = 1e-6
    fd = np.array([(p(x + h * np.eye(n)[i]) - p(x - h * np.eye(n)[i])) / (2 * h) for i in range(n)])
    assert np.allclose(jv.gradient, fd, rtol=1e-8, atol=1e-8)
    assert np.allclose(jv.hessian, jv.hessian.T)


def test_trace_free_projection():
    n = 3
    t = [[PolyScalar.coordinate(n, (i + k) % n) for k in range(n)] for i in range(n)]
    tf = trace_free_project(t)
    assert poly_trace(tf).is_zero()


def test_monomial_space_jets_agree_with_poly_partials(rng):
    n = 3
    sp = MonomialSpace(n, 4)
    polys = [PolyScalar(n, {tuple(a): c for a, c in zip(sp.exponents, rng.normal(size=sp.size))}) for _ in range(2)]
    X = rng.normal(size=(7, n))
    v, d1, d2, d3 = sp.jets(sp.coefficients(polys), X, order=3)
    for k, p in enumerate(polys):
        assert np.allclose(v[:, k], p(X))
        for i in range(n):
            assert np.allclose(d1[:, k, i], p.partial(i)(X))
            for j in range(n):
                assert np.allclose(d2[:, k, i, j], p.partial(i).partial(j)(X))
                for l in range(n):
                    assert np.allclose(d3[:, k, i, j, l], p.partial(i).partial(j).partial(l)(X))


def test_monomial_space_rejects_high_degree():
    sp = MonomialSpace(2, 1)
    with pytest.raises(ValueError):
        sp.coefficients([PolyScalar.monomial((2, 0))])


def test_unit_index():
    assert unit(4, 2) == (0, 0, 1, 0)


def test_jet_examples():
    n = 4
    x1 = PolyScalar.coordinate(n, 0)
    jv = eval_jet(x1**2, [2.0, 0, 0, 0])
    assert jv.value == 4.0
    assert np.array_equal(jv.gradient, [4, 0, 0, 0])
    assert np.array_equal(jv.hessian, np.diag([2.0, 0, 0, 0]))
    z = eval_jet(PolyScalar.zero(n), [1.0, 2.0, 3.0, 4.0])
    assert z.value == 0 and not z.gradient.any() and not z.hessian.any()
    x2, x3 = PolyScalar.coordinate(n, 1), PolyScalar.coordinate(n, 2)
    jv = eval_jet(x1 * x2 + x3**3, [1.0, 1.0, 1.0, 0.0])
    assert jv.value == 2.0
    assert np.array_equal(jv.gradient, [1, 1, 3, 0])
    assert jv.hessian[2, 2] == 6.0


def test_differentiate_examples():
    x1, x2 = PolyScalar.coordinate(3, 0), PolyScalar.coordinate(3, 1)
    assert differentiate(x1 * x2, (1, 0, 0)) == x2
    assert differentiate(x2**3, (2, 0, 0)).is_zero()
    assert differentiate(x1 * x2**2, (1, 2, 0)) == PolyScalar.constant(3, 2.0)


def test_trace_free_projection_examples():
    n = 6
    one, zero = PolyScalar.constant(n, 1.0), PolyScalar.zero(n)
    ident = [[one if i == k else zero for k in range(n)] for i in range(n)]
    assert all(p.is_zero() for row in trace_free_project(ident) for p in row)
    xn2 = PolyScalar.coordinate(n, n - 1) ** 2
    t = [[xn2 if i == k == 0 else zero for k in range(n)] for i in range(n)]
    tf = trace_free_project(t)
    assert tf[0][0] == xn2 * (5.0 / 6.0)
    assert tf[3][3] == xn2 * (-1.0 / 6.0)
    again = trace_free_project(tf)
    assert all(again[i][k] == tf[i][k] for i in range(n) for k in range(n))


def test_gradient_against_differences_at_spec_step(rng):
    n = 5
    sp = MonomialSpace(n, 4)
    p = sp.to_poly(rng.normal(size=sp.size))
    for _ in range(10):
        x = rng.normal(size=n)
        g = eval_jet(p, x).gradient
        h = 1e-4
        fd = np.array([(p(x + h * e) - p(x - h * e)) / (2 * h) for e in np.eye(n)])
        assert np.linalg.norm(fd - g) <= 1e-6 * max(np.linalg.norm(g), 1.0)


def test_product_degree_and_evaluation(rng):
    n = 3
    sp = MonomialSpace(n, 3)
    p, q = sp.to_poly(rng.normal(size=sp.size)), sp.to_poly(rng.normal(size=sp.size))
    assert (p * q).degree == p.degree + q.degree
    X = rng.normal(size=(20, n))
    assert np.allclose((p * q)(X), p(X) * q(X), rtol=1e-12, atol=1e-12)
