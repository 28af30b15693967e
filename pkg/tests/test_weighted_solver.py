import numpy as np
import pytest

from yamabe_lab.conformal_deficit import conformal_killing_fields, killing_image, poly_field_jets
from yamabe_lab.fermi_metric import make_fermi_tensor, xn2_example
from yamabe_lab.quadrature import make_quadrature
from yamabe_lab.weighted_solver import (
    WeightSpec,
    build_basis,
    coercivity_estimate,
    decay_diagnostics,
    constrained_space_dimension,
    gram_matrix,
    solve_scaled,
    solve_system,
    symbolic_kernel_dimension,
)


def test_basis_dimension_formula():
    # tangential components: 5 * (C(9,3) - C(8,2) terms with x6^1) ; normal: those vanishing at x6 = 0
    assert build_basis(6, 3).size == 5 * (84 - 21) + (84 - 56) == 343
    for n, N in [(3, 1), (3, 2), (6, 2), (6, 3)]:
        assert build_basis(n, N).size == constrained_space_dimension(n, N)


def test_basis_fields_meet_boundary_conditions():
    for V in build_basis(4, 3).fields[:40]:
        assert V.satisfies_boundary_conditions()


@pytest.mark.parametrize("n, N, expected", [(3, 2, 6), (6, 2, 21)])
def test_kernel_dimension(n, N, expected):
    # conformal Killing fields tangent to the boundary: (n - 1 + 1)(n - 1 + 2)/2
    basis = build_basis(n, N)
    assert symbolic_kernel_dimension(basis) == expected
    G = gram_matrix(basis)
    # constant tangential fields give zero rows, the rest of the kernel is numerical
    d = np.sqrt(np.diag(G))
    lam = np.linalg.eigvalsh(G / np.outer(np.where(d > 0, d, 1), np.where(d > 0, d, 1)))
    assert np.count_nonzero(lam < 1e-10 * lam[-1]) == expected


def test_weight_decay():
    w = WeightSpec(4)
    X = np.array([[0.0, 0.0, 0.0, 0.0], [3.0, 0.0, 0.0, 1.0]])
    assert np.allclose(w(X), [1.0, 13.0**-4])
    assert w.exponent == 4.0
    assert w.gram_integrable(2) and not w.gram_integrable(4)


def test_gram_moments_match_quadrature():
    basis = build_basis(3, 2)
    q = make_quadrature("half-space", 3, 1.0, 3, 0, method="product")
    G1, G2 = gram_matrix(basis), gram_matrix(basis, q)
    assert np.allclose(G1, G2, rtol=1e-6, atol=1e-8 * np.abs(G1).max())


def test_manufactured_solution_n3(rng):
    basis = build_basis(3, 2)
    c = rng.normal(size=basis.size)
    W = basis.field_from_coefficients(c)
    rep = solve_system(None, None, basis, target=killing_image(W))
    G = gram_matrix(basis)
    d = rep.coefficients - c
    assert np.sqrt(abs(d @ G @ d) / (c @ G @ c)) < 1e-6
    assert rep.kernel_dim_detected == 6


def test_xn2_solution_diagnostics():
    rep = solve_system(xn2_example(6), 1.0, build_basis(6, 2))
    assert rep.weak_residual < 1e-10
    assert rep.kernel_dim_detected == 21
    assert rep.solution.satisfies_boundary_conditions()
    assert set(rep.diagnostics()) >= {"gram_condition", "weak_residual", "energy_bound_ratio"}


def test_raw_target_needs_quadrature_when_callable():
    with pytest.raises(ValueError):
        solve_system(None, None, build_basis(3, 1), target=lambda X: np.zeros((len(X), 3, 3)))


def test_coercivity_positive():
    out = coercivity_estimate(build_basis(3, 2))
    assert out["kernel_dim"] == 6
    assert out["min_eig_deflated"] > 0
    assert out["spectral_gap"] > 1e6


def test_scaled_solution_is_homogeneous():
    # H is quadratic, so V(x) = eps^3 W(x / eps) scales like the cube of the zoom
    H = xn2_example(6)
    V1, _ = solve_scaled(H, 0.1, 0.4, degree=2)
    V2, _ = solve_scaled(H, 0.2, 0.8, degree=2)
    x = np.array([0.1, 0.05, 0.0, 0.0, 0.02, 0.03])
    assert V2.components[0](2 * x) == pytest.approx(8 * V1.components[0](x), rel=1e-8)


def test_smallest_basis_members():
    basis = build_basis(3, 1)
    sigs = {(c, tuple(basis.space.exponents[s])) for c, s in basis.terms}
    assert (0, (0, 0, 0)) in sigs and (1, (0, 0, 0)) in sigs
    assert (2, (0, 0, 1)) in sigs
    assert (2, (0, 0, 0)) not in sigs


def test_boundary_killing_fields_in_span():
    n = 4
    basis = build_basis(n, 2)
    span = np.array([basis.coefficient_array(e).ravel() for e in np.eye(basis.size)]).T
    keep = [V for group in conformal_killing_fields(n).values() for V in group if V.satisfies_boundary_conditions()]
    assert len(keep) == n * (n + 1) // 2
    for V in keep:
        target = np.array([basis.space.coefficients([c])[0] for c in V.components]).ravel()
        coef, *_ = np.linalg.lstsq(span, target, rcond=None)
        assert np.allclose(span @ coef, target, atol=1e-12)


def test_energy_bound_ratio_stable_in_degree():
    H = xn2_example(6)
    r3 = solve_system(H, 1.0, build_basis(6, 3, radius=2.0)).energy_bound_ratio
    r4 = solve_system(H, 1.0, build_basis(6, 4, radius=2.0)).energy_bound_ratio
    assert r3 > 0 and abs(r4 - r3) / r4 < 0.1


def test_deflated_coercivity_and_kernel_separation():
    out = coercivity_estimate(build_basis(6, 4, radius=2.0), level=3)
    assert out["kernel_dim"] == 21
    assert out["min_eig_deflated"] > 0.1
    assert abs(out["min_eig_undeflated"]) < 1e-10
    assert out["spectral_gap"] >= 1e3


def test_decay_rates_match_tensor_order():
    rep = solve_system(xn2_example(6), 1.0, build_basis(6, 3))
    out = decay_diagnostics(rep, [1.0, 2.0, 4.0, 8.0], H=xn2_example(6))
    for order in (0, 1, 2):
        assert out[order]["predicted"] == 3 - order
        assert abs(out[order]["exponent"] - out[order]["predicted"]) < 0.5
        assert out[order]["violations"] == 0


def test_decay_of_zero_solution_is_flagged():
    rep = solve_system(make_fermi_tensor(6), 1.0, build_basis(6, 2))
    out = decay_diagnostics(rep, [1.0, 2.0, 4.0])
    assert all(not out[k]["defined"] and np.isnan(out[k]["exponent"]) for k in out)


def test_gram_symmetric_semidefinite():
    G = gram_matrix(build_basis(6, 2))
    assert np.allclose(G, G.T, rtol=0, atol=1e-14 * np.abs(G).max())
    assert np.linalg.eigvalsh(G).min() > -1e-10 * np.abs(G).max()


def test_galerkin_orthogonality():
    basis = build_basis(6, 3, radius=2.0)
    rep = solve_system(xn2_example(6), 1.0, basis)
    assert rep.weak_residual < 1e-8
    assert np.isfinite(rep.gram_condition)


def test_gauge_only_moves_kernel(rng):
    basis = build_basis(6, 2)
    H = xn2_example(6)
    a = solve_system(H, 1.0, basis, gauge=True).solution
    b = solve_system(H, 1.0, basis, gauge=False).solution
    X = rng.uniform(0.05, 2.0, size=(30, 6))
    Sa = poly_field_jets([p for row in killing_image(a) for p in row], 6, X, order=0)[0]
    Sb = poly_field_jets([p for row in killing_image(b) for p in row], 6, X, order=0)[0]
    assert np.allclose(Sa, Sb, atol=1e-8 * np.abs(Sa).max())


def test_flat_tensor_gives_zero_field():
    rep = solve_system(make_fermi_tensor(6), 1.0, build_basis(6, 2))
    assert np.abs(rep.coefficients).max() == 0.0
    assert rep.load_norm == 0.0


def test_strong_residual_decreases_with_degree():
    H = xn2_example(6)
    res = [solve_system(H, None, build_basis(6, N, radius=2.0), level=3).strong_divergence_residual for N in (2, 3, 4, 5)]
    assert all(b < a for a, b in zip(res, res[1:]))
