import numpy as np
import pytest

from yamabe_lab.cutoff import T_IN, T_OUT, CutoffSpec, cutoff_eta, eta_profile


def test_profile_plateaus():
    v, d1, d2 = eta_profile(np.array([0.0, 1.0, T_IN, T_OUT, 2.0]))
    assert np.allclose(v, [1, 1, 1, 0, 0])
    assert np.allclose(d1, 0) and np.allclose(d2, 0)


def test_profile_monotone_and_symmetric():
    t = np.linspace(T_IN, T_OUT, 401)
    v, d1, _ = eta_profile(t)
    assert np.all(d1 <= 1e-15)
    mid = 0.5 * (T_IN + T_OUT)
    assert eta_profile(mid)[0] == pytest.approx(0.5)
    assert np.allclose(v + v[::-1], 1.0)


def test_profile_derivatives_by_differences():
    t = np.linspace(T_IN + 0.01, T_OUT - 0.01, 25)
    h = 1e-6
    v, d1, d2 = eta_profile(t)
    assert np.allclose((eta_profile(t + h)[0] - eta_profile(t - h)[0]) / (2 * h), d1, atol=1e-6)
    assert np.allclose((eta_profile(t + h)[1] - eta_profile(t - h)[1]) / (2 * h), d2, atol=1e-5)


def test_spec_jets(rng):
    spec = CutoffSpec(0.6)
    assert spec.support_radius == pytest.approx(T_OUT * 0.6)
    x = rng.normal(size=4)
    x *= 0.9 / np.linalg.norm(x)
    jv = cutoff_eta(spec, x)
    h = 1e-6
    fd = np.array([(spec(x + h * e)[0] - spec(x - h * e)[0]) / (2 * h) for e in np.eye(4)])
    assert np.allclose(jv.gradient, fd, atol=1e-7)
    assert np.allclose(jv.hessian, jv.hessian.T)
    assert spec.of_st(np.array([0.3]), np.array([0.4]))[0] == pytest.approx(spec(np.array([0.3, 0.0, 0.0, 0.4]))[0])


def test_spec_validates():
    with pytest.raises(ValueError):
        CutoffSpec(0.0)
