import math

import numpy as np
import pytest

from yamabe_lab.model_bubble import sphere_area
from yamabe_lab.quadrature import hemisphere_rule, make_quadrature, radial_rule, sphere_rule


@pytest.mark.parametrize("k", [1, 2, 4])
def test_sphere_rule_integrates_polynomials(k):
    pts, w = sphere_rule(k, 7)
    assert w.sum() == pytest.approx(sphere_area(k), rel=1e-12)
    assert np.allclose(np.linalg.norm(pts, axis=1), 1.0)
    # odd moments vanish, second moment is |S^k| / (k+1)
    assert abs(np.sum(w * pts[:, 0] ** 3)) < 1e-12
    assert np.sum(w * pts[:, 0] ** 2) == pytest.approx(sphere_area(k) / (k + 1), rel=1e-12)


def test_hemisphere_rule_area():
    pts, w = hemisphere_rule(5, 7, 10)
    assert np.all(pts[:, -1] >= 0)
    assert w.sum() == pytest.approx(sphere_area(4) / 2, rel=1e-12)


def test_radial_rule_power():
    r, w = radial_rule([0.0, 0.5, 1.0], 8, 3)
    assert np.sum(w * r**2) == pytest.approx(1.0 / 6.0, rel=1e-13)


@pytest.mark.parametrize("domain", ["half-ball", "boundary-disk", "annulus", "hemisphere-shell"])
def test_measure_of_product_rules(domain):
    n = 4
    q = make_quadrature(domain, n, 1.5, 1, 0, method="product", inner=0.5)
    assert q.integrate(lambda X: np.ones(len(X))) == pytest.approx(q.measure, rel=1e-12)


def test_half_space_tail():
    n = 3
    q = make_quadrature("half-space", n, 1.0, 2, 0, method="product")
    # int over R^3_+ of (1+|x|^2)^{-3} = (1/2) 4 pi * pi/16
    val = q.integrate(lambda X: (1 + np.sum(X**2, axis=1)) ** -3)
    assert val == pytest.approx(math.pi**2 / 8, rel=1e-6)
    assert q.error_estimate < 1e-4


def test_monte_carlo_is_seeded_and_reports_sigma():
    a = make_quadrature("half-ball", 6, 1.0, 0, seed=3)
    b = make_quadrature("half-ball", 6, 1.0, 0, seed=3)
    assert a.method == "mc"
    assert np.array_equal(a.nodes, b.nodes)
    f = lambda X: X[:, 0] ** 2
    val, sigma = a.integrate(f, return_sigma=True)
    exact = a.measure / 8  # E[x1^2] = r^2/n averaged with r^5 dr -> 6/8 / 6
    assert sigma > 0
    assert abs(val - exact) < 6 * sigma


def test_bad_arguments():
    with pytest.raises(ValueError):
        make_quadrature("cube", 3)
    with pytest.raises(ValueError):
        make_quadrature("annulus", 3, 1.0, inner=2.0)
    with pytest.raises(ValueError):
        make_quadrature("half-ball", 2)


def test_chunked_integration_matches():
    q = make_quadrature("half-ball", 3, 1.0, 2, 0, method="product")
    f = lambda X: np.exp(X[:, 0]) * X[:, 2]
    assert q.integrate(f, max_nodes=97) == pytest.approx(q.integrate(f), rel=1e-13)
