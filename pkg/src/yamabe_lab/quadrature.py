"""Quadrature on half-balls, boundary disks, hemispherical shells and annuli.

Every rule is a product of a radial rule and a direction rule. Radial
rules are composite Gauss-Legendre on geometrically graded panels (graded
towards ``scale``, the width of the bubble being integrated), with an
optional mapped tail panel [a, inf). Direction rules are either a nested
Gauss product rule on the sphere ("product") or seeded Monte Carlo
directions ("mc").

Sums over nodes are done chunkwise and combined with ``math.fsum`` so the
result does not depend on chunking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .model_bubble import boundary_mass_closed_form, sphere_area

DOMAINS = ("half-ball", "boundary-disk", "hemisphere-shell", "annulus", "half-space", "boundary-plane")
BULK = ("half-ball", "annulus", "half-space")
CHUNK = 200_000


def sphere_rule(k: int, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Product rule on S^k in R^{k+1}, exact for polynomials of degree <= ``degree``."""
    if k < 1:
        raise ValueError("sphere dimension must be >= 1")
    if k == 1:
        m = degree + 1
        ang = 2 * np.pi * (np.arange(m) + 0.5) / m
        return np.stack([np.cos(ang), np.sin(ang)], axis=1), np.full(m, 2 * np.pi / m)
    a = 0.5 * (k - 2)
    q = degree // 2 + 1
    t, wt = roots_jacobi(q, a, a)
    sub, wsub = sphere_rule(k - 1, degree)
    s = np.sqrt(1.0 - t**2)
    pts = np.concatenate(
        [np.repeat(t, len(sub))[:, None], (s[:, None, None] * sub[None, :, :]).reshape(-1, k)], axis=1
    )
    return pts, np.outer(wt, wsub).ravel()


def hemisphere_rule(n: int, degree: int, polar_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Directions on {|w| = 1, w_n >= 0} in R^n: Gauss-Legendre in the polar
    angle (w_n = cos theta) times a product rule on S^{n-2}."""
    th, wth = roots_legendre(polar_nodes)
    th = 0.25 * np.pi * (th + 1.0)
    wth = 0.25 * np.pi * wth * np.sin(th) ** (n - 2)
    sub, wsub = sphere_rule(n - 2, degree)
    pts = np.concatenate(
        [(np.sin(th)[:, None, None] * sub[None]).reshape(-1, n - 1), np.repeat(np.cos(th), len(sub))[:, None]], axis=1
    )
    return pts, np.outer(wth, wsub).ravel()


def random_directions(n: int, m: int, rng: np.random.Generator, hemisphere: bool) -> np.ndarray:
    g = rng.standard_normal((m, n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    if hemisphere:
        g[:, -1] = np.abs(g[:, -1])
    return g


def graded_breaks(lo: float, hi: float, scale: float | None, extra: Sequence[float] = ()) -> list[float]:
    pts = {lo, hi}
    if scale is not None and scale > 0:
        r = max(scale, lo)
        if lo < scale < hi:
            pts.add(scale)
        while r * 2 < hi:
            r *= 2
            if r > lo:
                pts.add(r)
    pts.update(b for b in extra if lo < b < hi)
    return sorted(pts)


def radial_rule(breaks: Sequence[float], nodes: int, power: int, tail: bool = False, tail_nodes: int | None = None):
    """Composite Gauss-Legendre for int f(r) r^power dr over the panels; if
    ``tail`` an extra mapped panel covers [breaks[-1], inf)."""
    x, w = roots_legendre(nodes)
    rs, ws = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        r = 0.5 * (b - a) * (x + 1) + a
        rs.append(r)
        ws.append(0.5 * (b - a) * w * r**power)
    if tail:
        a = breaks[-1]
        xt, wt = roots_legendre(tail_nodes or nodes)
        u = 0.5 * (xt + 1)
        r = a / u
        rs.append(r)
        ws.append(0.5 * wt * a / u**2 * r**power)
    return np.concatenate(rs), np.concatenate(ws)


@dataclass
class QuadratureRule:
    """Radial x direction product rule. ``nodes``/``weights`` are formed lazily."""

    domain: str
    dim: int
    radii: np.ndarray
    radial_weights: np.ndarray
    directions: np.ndarray
    direction_weights: np.ndarray
    level: int
    seed: int | None
    method: str
    measure: float = math.nan
    error_estimate: float = math.nan
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.radii) * len(self.directions)

    @property
    def nodes(self) -> np.ndarray:
        return (self.radii[:, None, None] * self.directions[None]).reshape(-1, self.dim)

    @property
    def weights(self) -> np.ndarray:
        return np.outer(self.radial_weights, self.direction_weights).ravel()

    def chunks(self, max_nodes: int = CHUNK):
        m = len(self.directions)
        step = max(1, max_nodes // m)
        for s in range(0, len(self.radii), step):
            r = self.radii[s : s + step]
            X = (r[:, None, None] * self.directions[None]).reshape(-1, self.dim)
            yield s, len(r), X

    def integrate(self, f: Callable[[np.ndarray], np.ndarray], return_sigma: bool = False, max_nodes: int = CHUNK):
        """Sum of w_i f(x_i). ``f`` maps (N, n) nodes to (N,) or (N, k) values.

        With ``return_sigma`` the standard error over the direction sample is
        returned too (zero for product rules).
        """
        m = len(self.directions)
        per_dir = None
        partials = []
        for s, nr, X in self.chunks(max_nodes):
            vals = np.asarray(f(X), dtype=float)
            shape = vals.shape[1:]
            vals = vals.reshape((nr, m) + shape)
            radial = np.tensordot(self.radial_weights[s : s + nr], vals, axes=(0, 0))
            per_dir = radial if per_dir is None else per_dir + radial
            partials.append(np.tensordot(self.direction_weights, radial, axes=(0, 0)))
        stack = np.array(partials)
        total = np.array([math.fsum(col) for col in stack.reshape(len(partials), -1).T]).reshape(stack.shape[1:])
        total = float(total) if total.ndim == 0 else total
        if not return_sigma:
            return total
        if self.method != "mc" or m < 2:
            return total, (0.0 if np.ndim(total) == 0 else np.zeros_like(total))
        contrib = self.direction_weights.reshape((m,) + (1,) * (per_dir.ndim - 1)) * per_dir * m
        sigma = np.std(contrib, axis=0, ddof=1) / math.sqrt(m)
        return total, (float(sigma) if np.ndim(sigma) == 0 else sigma)


def level_parameters(level: int) -> dict:
    return {
        "radial_nodes": 8 + 4 * level,
        "polar_nodes": 6 + 4 * level,
        "sphere_degree": 5 + 2 * level,
        "mc_directions": 1000 * 4**level,
    }


def make_quadrature(
    domain: str,
    dim: int,
    delta: float = 1.0,
    level: int = 1,
    seed: int | None = 0,
    *,
    method: str | None = None,
    inner: float = 0.0,
    scale: float | None = None,
    breaks: Sequence[float] = (),
    radial_nodes: int | None = None,
    polar_nodes: int | None = None,
    sphere_degree: int | None = None,
    mc_directions: int | None = None,
) -> QuadratureRule:
    """Build a deterministic rule for ``domain`` in dimension ``dim``.

    ``delta`` is the (outer) radius; ``inner`` the inner radius of an
    annulus. ``method`` defaults to "product" for dim <= 4 and for surface
    rules, and to "mc" (Gauss radial x Monte Carlo angular) for bulk rules
    in dim >= 5.
    """
    if domain not in DOMAINS:
        raise ValueError(f"unsupported domain {domain!r}")
    n = int(dim)
    if n < 3:
        raise ValueError("dimension must be >= 3")
    if not delta > 0:
        raise ValueError("delta must be positive")
    if domain == "annulus" and not 0 < inner < delta:
        raise ValueError("annulus needs 0 < inner < delta")
    prm = level_parameters(level)
    rn = radial_nodes or prm["radial_nodes"]
    pn = polar_nodes or prm["polar_nodes"]
    sd = sphere_degree if sphere_degree is not None else prm["sphere_degree"]
    md = mc_directions or prm["mc_directions"]
    if method is None:
        method = "mc" if (domain in BULK and n >= 5) else "product"
    if method not in ("product", "mc"):
        raise ValueError(f"unknown method {method!r}")
    rng = np.random.default_rng(seed)
    bulk = domain in BULK or domain == "hemisphere-shell"
    area = sphere_area(n - 1) / 2 if bulk else sphere_area(n - 2)
    if method == "product":
        dirs, dw = hemisphere_rule(n, sd, pn) if bulk else _embed(*sphere_rule(n - 2, sd))
    else:
        dirs = random_directions(n, md, rng, hemisphere=True) if bulk else _embed(random_directions(n - 1, md, rng, False), None)[0]
        dw = np.full(md, area / md)

    power = n - 1 if bulk else n - 2
    infinite = domain in ("half-space", "boundary-plane")
    if domain == "hemisphere-shell":
        radii, rw = np.array([float(delta)]), np.array([float(delta) ** (n - 1)])
        measure = area * delta ** (n - 1)
    else:
        lo = inner if domain == "annulus" else 0.0
        if infinite:
            hi = max(16.0 * (scale or delta), max(breaks, default=0.0))
            radii, rw = radial_rule(graded_breaks(lo, hi, scale or delta, breaks), rn, power, tail=True, tail_nodes=2 * rn)
            measure = math.inf
        else:
            radii, rw = radial_rule(graded_breaks(lo, delta, scale, breaks), rn, power)
            measure = area * (delta ** (power + 1) - lo ** (power + 1)) / (power + 1)
    rule = QuadratureRule(domain, n, radii, rw, dirs, dw, level, seed, method, measure)
    rule.meta.update(inner=inner if domain == "annulus" else 0.0, outer=float(delta), scale=scale)
    rule.error_estimate = _error_estimate(rule)
    return rule


def _embed(pts: np.ndarray, w):
    """Lift S^{n-2} directions in R^{n-1} to R^n with x_n = 0."""
    return np.concatenate([pts, np.zeros((len(pts), 1))], axis=1), w


def _error_estimate(rule: QuadratureRule) -> float:
    """Max relative error over closed-form test integrands (plus 2 sigma for MC)."""
    n = rule.dim
    if rule.domain in ("half-space", "boundary-plane"):
        if rule.domain == "half-space":
            a = 0.5 * (n - 1)
            exact = sphere_area(n - 2) * 0.5 * math.exp(math.lgamma(a) + math.lgamma(a + 1) - math.lgamma(2 * a + 1)) / n
            f = lambda X: ((1 + X[:, -1]) ** 2 + np.sum(X[:, :-1] ** 2, axis=1)) ** (-n)
        else:
            exact = boundary_mass_closed_form(n)
            f = lambda X: (1 + np.sum(X**2, axis=1)) ** (-(n - 1))
        val, sig = rule.integrate(f, return_sigma=True)
        return float((abs(val - exact) + 2 * sig) / exact)
    lo, hi = rule.meta["inner"], rule.meta["outer"]
    errs = []
    val, sig = rule.integrate(lambda X: np.ones(len(X)), return_sigma=True)
    errs.append((abs(val - rule.measure) + 2 * sig) / rule.measure)
    # second moment of one coordinate, by symmetry |x|^2 / (number of coordinates)
    if rule.domain == "hemisphere-shell":
        exact, comp = rule.measure * hi**2 / n, -1
    elif rule.domain == "boundary-disk":
        exact, comp = sphere_area(n - 2) / (n - 1) * (hi ** (n + 1) - lo ** (n + 1)) / (n + 1), 0
    else:
        exact, comp = sphere_area(n - 1) / (2 * n) * (hi ** (n + 2) - lo ** (n + 2)) / (n + 2), -1
    val, sig = rule.integrate(lambda X: X[:, comp] ** 2, return_sigma=True)
    errs.append((abs(val - exact) + 2 * sig) / exact)
    return float(max(errs))
