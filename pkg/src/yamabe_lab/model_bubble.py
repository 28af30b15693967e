"""The half-space bubble v_eps and the sharp trace-Sobolev constant.

    v_eps(x) = eps^{(n-2)/2} ((eps + x_n)^2 + |x'|^2)^{-(n-2)/2},  x_n >= 0.

Jets are computed from the closed form: with y = x + eps e_n and
rho = |y|^2 every derivative of v is a polynomial in y times a power of rho.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor_core import Dim, JetValue


@dataclass(frozen=True)
class BubbleParams:
    epsilon: float
    dim: Dim

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    @property
    def n(self) -> int:
        return self.dim.n


@dataclass(frozen=True)
class BubbleResiduals:
    """Relative residuals of the bubble identities at one point (all >= 0)."""

    laplacian: float
    hessian_identity: float
    boundary_identity: float
    envelope_violation: float


def critical_exponent(n: int) -> float:
    """Trace-Sobolev exponent 2(n-1)/(n-2)."""
    return 2.0 * (n - 1) / (n - 2)


def bubble_jets(eps: float, n: int, X, order: int = 2, check_domain: bool = True):
    """Vectorized jets of v_eps at points X of shape (N, n).

    Returns (v, dv, d2v[, d3v]) with shapes (N,), (N, n), (N, n, n), (N, n, n, n).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if check_domain and np.any(X[:, -1] < 0):
        raise ValueError("bubble is defined on the closed half-space x_n >= 0")
    m = 0.5 * (n - 2)
    c = eps**m
    Y = X.copy()
    Y[:, -1] += eps
    rho = np.einsum("ij,ij->i", Y, Y)
    f0 = c * rho**-m
    out = [f0]
    if order >= 1:
        f1 = -m * f0 / rho
        out.append(2.0 * f1[:, None] * Y)
    if order >= 2:
        f2 = -(m + 1) * f1 / rho
        eye = np.eye(n)
        out.append(4.0 * f2[:, None, None] * Y[:, :, None] * Y[:, None, :] + 2.0 * f1[:, None, None] * eye)
    if order >= 3:
        f3 = -(m + 2) * f2 / rho
        t = 8.0 * f3[:, None, None, None] * Y[:, :, None, None] * Y[:, None, :, None] * Y[:, None, None, :]
        sym = (
            eye[None, :, :, None] * Y[:, None, None, :]
            + eye[None, :, None, :] * Y[:, None, :, None]
            + eye[None, None, :, :] * Y[:, :, None, None]
        )
        out.append(t + 4.0 * f2[:, None, None, None] * sym)
    return tuple(out)


def bubble_value(eps: float, n: int, X) -> np.ndarray:
    return bubble_jets(eps, n, X, order=0)[0]


def bubble_jet(b: BubbleParams, x) -> JetValue:
    x = np.asarray(x, dtype=float)
    if x[-1] < 0:
        raise ValueError("bubble is defined on the closed half-space x_n >= 0")
    v, dv, d2v = bubble_jets(b.epsilon, b.n, x[None, :], order=2)
    return JetValue(float(v[0]), dv[0], d2v[0])


def identity_residual_arrays(eps: float, n: int, X, boundary: bool | None = None) -> dict[str, np.ndarray]:
    """Relative residuals of the harmonic, Hessian and boundary identities.

    Each residual is divided by the largest magnitude among the terms of
    its identity. The boundary residual is NaN at points with x_n != 0
    unless ``boundary`` forces evaluation.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    v, dv, d2v = bubble_jets(eps, n, X)
    diag = np.einsum("nii->ni", d2v)
    lap = np.abs(diag.sum(axis=1)) / np.abs(diag).max(axis=1)

    grad2 = np.einsum("ni,ni->n", dv, dv)
    t1 = v[:, None, None] * d2v
    t2 = (n / (n - 2)) * dv[:, :, None] * dv[:, None, :]
    t3 = (grad2 / (n - 2))[:, None, None] * np.eye(n)
    resid = np.abs(t1 - t2 + t3).max(axis=(1, 2))
    scale = np.maximum.reduce([np.abs(t1).max(axis=(1, 2)), np.abs(t2).max(axis=(1, 2)), np.abs(t3).max(axis=(1, 2))])
    hess = resid / scale

    rhs = -(n - 2) * v ** (n / (n - 2))
    bdy = np.abs(dv[:, -1] - rhs) / np.maximum(np.abs(dv[:, -1]), np.abs(rhs))
    on_bdy = X[:, -1] == 0 if boundary is None else np.full(len(X), bool(boundary))
    bdy = np.where(on_bdy, bdy, np.nan)

    r = np.linalg.norm(X, axis=1)
    lower = eps ** (0.5 * (n - 2)) * (eps + r) ** (2 - n)
    env = np.maximum(lower - v, 0.0) / lower
    return {"laplacian": lap, "hessian_identity": hess, "boundary_identity": bdy, "envelope_violation": env}


def bubble_identity_residuals(b: BubbleParams, x) -> BubbleResiduals:
    x = np.asarray(x, dtype=float)
    if x[-1] < 0:
        raise ValueError("bubble is defined on the closed half-space x_n >= 0")
    res = identity_residual_arrays(b.epsilon, b.n, x[None, :])
    bdy = float(res["boundary_identity"][0])
    return BubbleResiduals(
        laplacian=float(res["laplacian"][0]),
        hessian_identity=float(res["hessian_identity"][0]),
        boundary_identity=0.0 if math.isnan(bdy) else bdy,
        envelope_violation=float(res["envelope_violation"][0]),
    )


def fit_envelope_constants(eps: float, n: int, X) -> dict[str, float]:
    """Smallest constants making the three two-sided bubble bounds hold on X.

    ``upper``: v <= C eps^{(n-2)/2} (eps+|x|)^{2-n};
    ``gradient``: |dv| <= C eps^{(n-2)/2} (eps+|x|)^{1-n};
    ``far_field``: |v - eps^{(n-2)/2}|x|^{2-n}| <= C eps^{n/2} |x|^{1-n} for |x| >= 2 eps.
    ``lower_violations`` counts points violating the lower bound (C = 1).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    v, dv = bubble_jets(eps, n, X, order=1)
    r = np.linalg.norm(X, axis=1)
    base = eps ** (0.5 * (n - 2)) * (eps + r) ** (2 - n)
    gbase = eps ** (0.5 * (n - 2)) * (eps + r) ** (1 - n)
    far = r >= 2 * eps
    out = {
        "upper": float(np.max(v / base)),
        "gradient": float(np.max(np.linalg.norm(dv, axis=1) / gbase)),
        "lower_violations": int(np.sum(v < base * (1 - 1e-14))),
        "far_field": float("nan"),
    }
    if np.any(far):
        rf = r[far]
        dev = np.abs(v[far] - eps ** (0.5 * (n - 2)) * rf ** (2 - n))
        out["far_field"] = float(np.max(dev / (eps ** (0.5 * n) * rf ** (1 - n))))
    return out


def sphere_area(k: int) -> float:
    """Area of the unit sphere S^k in R^{k+1}."""
    return 2.0 * math.pi ** ((k + 1) / 2) / math.gamma((k + 1) / 2)


def boundary_mass_closed_form(n: int) -> float:
    """int over R^{n-1} of (1+|y|^2)^{-(n-1)} dy = |S^{n-2}| * B((n-1)/2, (n-1)/2) / 2."""
    a = 0.5 * (n - 1)
    beta = math.exp(2 * math.lgamma(a) - math.lgamma(2 * a))
    return sphere_area(n - 2) * 0.5 * beta


def sharp_constant_closed_form(n: int) -> float:
    return 4.0 * (n - 1) * boundary_mass_closed_form(n) ** (1.0 / (n - 1))


def sharp_constant(dim: Dim, quad=None, eps: float = 1.0) -> dict[str, float]:
    """Q(B^n, dB^n) and the ratio int |grad v|^2 / int_boundary v^{2(n-1)/(n-2)}.

    With ``quad=None`` both come from the Beta-function reduction; otherwise
    ``quad`` is a pair (half-space rule, boundary-plane rule) from
    :mod:`yamabe_lab.quadrature` and both integrals are computed numerically.
    """
    n = dim.n
    p = critical_exponent(n)
    if quad is None:
        boundary = boundary_mass_closed_form(n)
        # Fubini: integrate x' first, then int_0^inf (1+x_n)^{-(n-1)} dx_n = 1/(n-2)
        dirichlet = (n - 2) ** 2 * boundary / (n - 2)
    else:
        bulk_rule, bdy_rule = quad
        dirichlet = bulk_rule.integrate(lambda X: np.einsum("ni,ni->n", *[bubble_jets(eps, n, X, order=1)[1]] * 2))
        boundary = bdy_rule.integrate(lambda X: bubble_value(eps, n, X) ** p)
    if not (np.isfinite(dirichlet) and np.isfinite(boundary)) or boundary <= 0:
        raise FloatingPointError("non-finite sharp-constant integrals")
    return {
        "Q": 4.0 * (n - 1) * boundary ** (1.0 / (n - 1)),
        "trace_ratio": dirichlet / boundary,
        "dirichlet": dirichlet,
        "boundary": boundary,
    }
