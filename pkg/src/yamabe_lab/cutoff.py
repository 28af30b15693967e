"""Radial smooth cutoff eta_delta(x) = eta(|x| / delta).

eta = 1 on t <= 4/3, eta = 0 on t >= 5/3, and in between the C-infinity
smoothstep built from f(u) = exp(-1/u).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_core import JetValue

T_IN = 4.0 / 3.0
T_OUT = 5.0 / 3.0


def _f(u):
    """exp(-1/u) for u > 0, else 0, with the first two derivatives."""
    u = np.asarray(u, dtype=float)
    pos = u > 0
    us = np.where(pos, u, 1.0)
    f = np.where(pos, np.exp(-1.0 / us), 0.0)
    f1 = f / us**2
    f2 = f * (1.0 / us**4 - 2.0 / us**3)
    return f, f1, f2


def eta_profile(t):
    """eta(t) and its first two t-derivatives."""
    t = np.asarray(t, dtype=float)
    w = T_OUT - T_IN
    u = (t - T_IN) / w
    a, a1, a2 = _f(1.0 - u)
    b, b1, b2 = _f(u)
    a1, a2 = -a1, a2  # chain rule for 1 - u
    s = a + b
    val = a / s
    d1 = (a1 * b - a * b1) / s**2
    d2 = ((a2 * b - a * b2) * s - 2.0 * (a1 * b - a * b1) * (a1 + b1)) / s**3
    return val, d1 / w, d2 / w**2


@dataclass(frozen=True)
class CutoffSpec:
    delta: float
    profile: str = "exp-bump-smoothstep"

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    @property
    def support_radius(self) -> float:
        return T_OUT * self.delta

    def jets(self, X: np.ndarray):
        """Values (N,), gradients (N, n) and Hessians (N, n, n)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        r = np.sqrt(np.einsum("ij,ij->i", X, X))
        e, e1, e2 = eta_profile(r / self.delta)
        rs = np.where(r > 0, r, 1.0)
        u = X / rs[:, None]
        g1 = e1 / self.delta
        g2 = e2 / self.delta**2
        grad = g1[:, None] * u
        uu = np.einsum("ni,nk->nik", u, u)
        eye = np.eye(X.shape[1])
        hess = g2[:, None, None] * uu + (g1 / rs)[:, None, None] * (eye - uu)
        return e, grad, hess

    def of_st(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        """eta as a function of (|x'|, x_n)."""
        return eta_profile(np.sqrt(s * s + t * t) / self.delta)[0]

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return eta_profile(np.sqrt(np.einsum("ij,ij->i", X, X)) / self.delta)[0]


def cutoff_eta(spec: CutoffSpec, x) -> JetValue:
    x = np.asarray(x, dtype=float)
    v, g, h = spec.jets(x[None, :])
    return JetValue(float(v[0]), g[0], h[0])
