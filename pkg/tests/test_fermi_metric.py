import json

import numpy as np
import pytest

from yamabe_lab.fermi_metric import (
    BoundaryConstraintError,
    DegreeError,
    NormalComponentError,
    SymmetryError,
    TraceError,
    admissible_basis,
    admissible_dimension,
    algebraic_curvature,
    check_fermi_constraints,
    curvature_and_inverse,
    exp_divided_differences,
    fermi_from_json,
    linear_curvature,
    make_fermi_tensor,
    metric_jets,
    random_admissible,
    scalar_curvatures,
    weyl_map_injectivity,
    xn2_example,
)
from yamabe_lab.tensor_core import Dim

A2 = (0, 0, 0, 0, 0, 2)


def test_xn2_example_structure():
    H = xn2_example(6)
    assert H.n == 6
    assert H.by_order() == {2: 2.0}
    assert H.coefficient_norms() == {"l1": 2.0, "l2sq": 2.0}
    assert linear_curvature(H).is_zero()


def test_json_roundtrip_one_based():
    H = xn2_example(6, scale=0.5)
    doc = H.to_json()
    assert {c["i"] for c in doc["coeffs"]} == {1, 2}
    again = fermi_from_json(json.dumps(doc))
    assert again.dumps() == H.dumps()


@pytest.mark.parametrize(
    "coeffs, err",
    [
        ([(1, 2, A2, 1.0), (2, 1, A2, 2.0)], SymmetryError),
        ([(1, 6, (2, 0, 0, 0, 0, 0), 1.0)], NormalComponentError),
        ([(1, 1, A2, 1.0)], TraceError),
        ([(1, 2, (2, 0, 0, 0, 0, 0), 1.0)], BoundaryConstraintError),
        ([(1, 1, (0, 0, 1, 0, 0, 0), 1.0), (2, 2, (0, 0, 1, 0, 0, 0), -1.0)], DegreeError),
    ],
)
def test_constraint_violations(coeffs, err):
    with pytest.raises(err):
        make_fermi_tensor(6, coeffs)


def test_bad_index_rejected():
    with pytest.raises(ValueError):
        make_fermi_tensor(6, [(0, 1, A2, 1.0)])


def test_metric_is_exponential_of_h():
    H = xn2_example(6)
    X = np.array([[0, 0, 0, 0, 0, 0.1], [0.3, -0.2, 0.1, 0.5, 0.4, 0.7]])
    mj = metric_jets(H, X)
    assert mj.g[0, 0, 0] == pytest.approx(np.exp(0.01), rel=1e-15)
    assert mj.g[0, 1, 1] == pytest.approx(np.exp(-0.01), rel=1e-15)
    assert np.allclose(mj.det, 1.0)  # tr h = 0
    assert np.allclose(np.einsum("nij,njk->nik", mj.g, mj.ginv), np.eye(6))


def test_scalar_curvature_reference():
    # g = diag(e^{x6^2}, e^{-x6^2}, 1, 1, 1, 1) has R = -2 x6^2 (symbolic computation)
    H = xn2_example(6)
    X = np.array([[0.3, -0.2, 0.1, 0.5, 0.4, 0.7], [0, 0, 0, 0, 0, 0.1], [1.0, 2.0, 0, 0, 0, 0]])
    assert np.allclose(scalar_curvatures(H, X), [-0.98, -0.02, 0.0], atol=1e-13)
    R, GI = curvature_and_inverse(H, X)
    assert np.allclose(R, [-0.98, -0.02, 0.0], atol=1e-13)
    assert np.allclose(GI[1], np.diag(np.exp([-0.01, 0.01, 0, 0, 0, 0])), atol=1e-15)


def test_curvature_is_quadratic_on_admissible_tensors(rng):
    # the gauge kills the linear term, so R(sH) = s^2 R_2 + O(s^3)
    H = random_admissible(Dim(6), rng)
    assert linear_curvature(H).is_zero(1e-10)
    x = np.array([[0.2, -0.1, 0.3, 0.05, 0.1, 0.25]])
    s = 1e-3
    r1 = scalar_curvatures(H.scaled(s), x)[0]
    r2 = scalar_curvatures(H.scaled(2 * s), x)[0]
    assert r2 / r1 == pytest.approx(4.0, rel=1e-2)


def test_divided_differences_degenerate():
    lam = np.array([[0.3, 0.3 + 1e-12, -1.0]])
    F1, F2 = exp_divided_differences(lam)
    assert F1[0, 0, 1] == pytest.approx(np.exp(0.3), rel=1e-9)
    assert F1[0, 0, 2] == pytest.approx((np.exp(0.3) - np.exp(-1.0)) / 1.3, rel=1e-12)
    # exp[a, a, a] = e^a / 2
    assert F2[0, 0, 1, 0] == pytest.approx(np.exp(0.3) / 2, rel=1e-9)


def test_admissible_space_and_weyl_injectivity():
    assert admissible_dimension(Dim(6)) == 49
    basis = admissible_basis(Dim(6))
    for b in basis[:5]:
        check_fermi_constraints(b.entries, b.dim)
    smin, rank, dim = weyl_map_injectivity(Dim(6))
    assert rank == dim == 49
    assert smin > 0.1


def test_algebraic_curvature_vanishes_only_for_zero():
    Z = algebraic_curvature(xn2_example(6), check_injectivity=False).Z
    assert any(not p.is_zero() for p in Z.values())
    Z0 = algebraic_curvature(make_fermi_tensor(6), check_injectivity=False).Z
    assert all(p.is_zero() for p in Z0.values())


def test_empty_tensor_is_valid_zero():
    H = make_fermi_tensor(6, [])
    assert H.is_zero()
    assert H.by_order() == {}
    mj = metric_jets(H, np.array([[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]]))
    assert np.array_equal(mj.g[0], np.eye(6))
    assert mj.det[0] == 1.0
    assert not mj.dg.any() and not mj.d2g.any()


def test_normal_diagonal_rejected():
    a = (0, 0, 0, 0, 0, 0, 2, 0)
    with pytest.raises(NormalComponentError):
        make_fermi_tensor(8, [(8, 8, (2, 0, 0, 0, 0, 0, 0, 0), 1.0), (1, 1, a, -1.0)])


def test_unit_determinant_random_points(rng):
    H = random_admissible(Dim(6), rng)
    X = rng.uniform(-1, 1, size=(1000, 6))
    X[:, -1] = np.abs(X[:, -1])
    assert np.allclose(metric_jets(H, X).det, 1.0, atol=1e-12)


@pytest.mark.parametrize("n", [6, 8])
def test_curvature_at_origin_matches_linearization(rng, n):
    origin = np.zeros((1, n))
    for _ in range(20):
        H = random_admissible(Dim(n), rng)
        assert scalar_curvatures(H, origin)[0] == pytest.approx(linear_curvature(H)(origin)[0], abs=1e-12)


def test_curvature_vanishes_quadratically_along_rays(rng):
    H = random_admissible(Dim(6), rng)
    x = np.array([0.3, -0.2, 0.1, 0.4, -0.3, 0.5])
    ratios = [abs(scalar_curvatures(H, (t * x)[None])[0]) / t**2 for t in (1e-1, 1e-2, 1e-3)]
    assert max(ratios) < 10 * max(ratios[0], 1e-12)


def test_schouten_for_quadratic_normal_profile():
    a = A2
    c = {(1, 1): 1.0, (1, 2): 0.3, (2, 2): -0.5, (3, 3): -0.5}
    H = make_fermi_tensor(6, [(i, k, a, v) for (i, k), v in c.items()])
    ac = algebraic_curvature(H, check_injectivity=False)
    for (i, k), v in c.items():
        assert ac.A[i - 1][k - 1] == ac.A[i - 1][k - 1].constant(6, -2 * v)
    key = (5, 0, 5, 1)
    assert ac.Z[key].terms == {(0,) * 6: pytest.approx(0.45, rel=1e-14)}


def test_weyl_symmetries(rng):
    Z = algebraic_curvature(random_admissible(Dim(6), rng), check_injectivity=False).Z
    idx = [tuple(rng.integers(0, 6, size=4)) for _ in range(40)]
    for i, j, k, l in idx:
        z = Z[i, j, k, l]
        assert (z + Z[j, i, k, l]).is_zero(1e-12)
        assert (z + Z[i, j, l, k]).is_zero(1e-12)
        assert (z - Z[k, l, i, j]).is_zero(1e-12)
