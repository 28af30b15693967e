import math

import numpy as np
import pytest

from conftest import half_space_points
from yamabe_lab.model_bubble import (
    BubbleParams,
    boundary_mass_closed_form,
    bubble_identity_residuals,
    bubble_jets,
    bubble_value,
    critical_exponent,
    fit_envelope_constants,
    identity_residual_arrays,
    sharp_constant,
    sharp_constant_closed_form,
    sphere_area,
)
from yamabe_lab.tensor_core import Dim

# B0 = int_{R^{n-1}} (1+|y|^2)^{1-n} dy and Q = 4(n-1) B0^{1/(n-1)}, 30-digit radial quadrature
B0 = {3: 3.1415926535897932385, 4: 2.4674011002723396547, 6: 0.96894614625936938048, 8: 0.25366950790104801364}
Q = {3: 14.179630807244128218, 4: 16.215406140380941132, 6: 19.874212249382151885, 8: 23.017253348347326473}


@pytest.mark.parametrize("n", sorted(B0))
def test_closed_forms_match_reference(n):
    assert boundary_mass_closed_form(n) == pytest.approx(B0[n], rel=1e-13)
    assert sharp_constant_closed_form(n) == pytest.approx(Q[n], rel=1e-13)
    res = sharp_constant(Dim(n))
    assert res["trace_ratio"] == pytest.approx(n - 2, rel=1e-13)


def test_sphere_area():
    assert sphere_area(1) == pytest.approx(2 * math.pi)
    assert sphere_area(2) == pytest.approx(4 * math.pi)


def test_value_at_origin_and_boundary_decay():
    n, eps = 5, 0.3
    assert bubble_value(eps, n, np.zeros(n))[0] == pytest.approx(eps ** (-(n - 2) / 2))
    far = np.zeros(n)
    far[0] = 1e4
    v = bubble_value(eps, n, far)[0]
    assert v == pytest.approx(eps ** ((n - 2) / 2) * 1e4 ** (2 - n), rel=1e-3)


def test_jets_match_finite_differences(rng):
    n, eps = 6, 0.7
    X = half_space_points(rng, n, 5) + np.eye(n)[-1] * 0.1
    v, dv, d2v = bubble_jets(eps, n, X)
    h = 1e-6
    for i in range(n):
        e = np.eye(n)[i] * h
        vp, dvp, _ = bubble_jets(eps, n, X + e)
        vm, dvm, _ = bubble_jets(eps, n, X - e)
        assert np.allclose((vp - vm) / (2 * h), dv[:, i], rtol=1e-7)
        assert np.allclose((dvp - dvm) / (2 * h), d2v[:, :, i], rtol=1e-6, atol=1e-9)


def test_rejects_lower_half_space():
    with pytest.raises(ValueError):
        bubble_jets(1.0, 4, np.array([[0.0, 0.0, 0.0, -0.5]]))


@pytest.mark.parametrize("n", [3, 5, 9])
def test_identities_hold(rng, n):
    for eps in (0.25, 1.0, 4.0):
        inner = identity_residual_arrays(eps, n, half_space_points(rng, n, 200))
        assert inner["laplacian"].max() < 1e-12
        assert inner["hessian_identity"].max() < 1e-12
        assert inner["envelope_violation"].max() == 0.0
        bdy = identity_residual_arrays(eps, n, half_space_points(rng, n, 200, boundary=True))
        assert np.nanmax(bdy["boundary_identity"]) < 1e-12


def test_single_point_residuals():
    r = bubble_identity_residuals(BubbleParams(0.5, Dim(4)), np.array([0.1, 0.2, 0.3, 0.0]))
    assert r.boundary_identity < 1e-13
    assert r.laplacian < 1e-13


def test_envelope_constants(rng):
    n, eps = 6, 0.5
    out = fit_envelope_constants(eps, n, half_space_points(rng, n, 500, spread=(1e-3, 50.0)))
    assert out["lower_violations"] == 0
    assert 1.0 <= out["upper"] <= 2 ** (n - 2)
    assert np.isfinite(out["far_field"])


def test_critical_exponent():
    assert critical_exponent(6) == pytest.approx(2.5)


def test_point_values():
    v, dv, _ = bubble_jets(1.0, 6, np.zeros((1, 6)))
    assert v[0] == 1.0
    assert dv[0, -1] == -4.0
    assert not dv[0, :-1].any()
    assert bubble_value(1.0, 6, np.eye(6)[:1])[0] == 0.25


def test_scaling_law(rng):
    n = 7
    for _ in range(10):
        eps = float(np.exp(rng.uniform(-2, 2)))
        x = half_space_points(rng, n, 1)
        lhs = bubble_value(eps, n, x)[0]
        rhs = eps ** (-(n - 2) / 2) * bubble_value(1.0, n, x / eps)[0]
        assert lhs == pytest.approx(rhs, rel=1e-13)


def test_q_six_dimensions():
    assert sharp_constant_closed_form(6) == pytest.approx(20 * (math.pi**3 / 32) ** 0.2, rel=1e-14)


def test_far_field_constant_stable_across_samples():
    n, eps = 6, 0.5
    fits = []
    for seed in range(3):
        rng = np.random.default_rng(seed)
        fits.append(fit_envelope_constants(eps, n, half_space_points(rng, n, 1000, spread=(2 * eps, 40 * eps))))
    far = [f["far_field"] for f in fits]
    grad = [f["gradient"] for f in fits]
    assert all(np.isfinite(far)) and max(far) / min(far) < 1.5
    assert max(grad) / min(grad) < 1.5


def test_quadrature_mode_independent_of_eps_and_converges():
    from yamabe_lab.quadrature import make_quadrature

    n = 4
    exact = sharp_constant_closed_form(n)
    errs = []
    for level in (0, 1, 2):
        rules = (make_quadrature("half-space", n, 1.0, level, 0, method="product"),
                 make_quadrature("boundary-plane", n, 1.0, level, 0, method="product"))
        errs.append(abs(sharp_constant(Dim(n), rules)["Q"] - exact))
    assert errs[0] > errs[1] > errs[2] or errs[2] < 1e-13
    half = (make_quadrature("half-space", n, 1.0, 2, 0, method="product", scale=0.5),
            make_quadrature("boundary-plane", n, 1.0, 2, 0, method="product", scale=0.5))
    q_half = sharp_constant(Dim(n), half, eps=0.5)["Q"]
    assert q_half == pytest.approx(exact, rel=1e-6)
