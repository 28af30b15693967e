"""Energy of the glued test function and the local estimates.

The model manifold is the half-space with metric g = exp(H) on the half-ball
B_{2 delta} and the flat metric outside. Since tr H = 0, det g = 1, so the
volume and boundary elements are the coordinate ones, and the boundary
x_n = 0 is totally geodesic.

The test function is

    phi = eta_delta (v_eps + psi) + (1 - eta_delta) eps^{(n-2)/2} G,

and the quotient is evaluated as a deviation from the exact bubble, whose
energy is known in closed form. Writing N and B for the numerator and the
boundary integral,

    E(phi) - Q = Q * [ (1 + dN / N0) / (1 + dB / B0)^{(n-2)/(n-1)} - 1 ],

with dN, dB integrated from pointwise differences. The gap is of order
eps^{n-2}, far below the size of N0, so this keeps it above rounding.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import roots_legendre

from .conformal_deficit import VectorFieldPoly, poly_field_jets, tensor_field_jets, weighted_radial_mass
from .cutoff import T_IN, T_OUT, CutoffSpec, cutoff_eta  # noqa: F401  (re-exported)
from .fermi_metric import FermiTensor, curvature_and_inverse, metric_jets, scalar_curvatures
from .model_bubble import boundary_mass_closed_form, bubble_jets, critical_exponent, sharp_constant_closed_form, sphere_area
from .quadrature import QuadratureRule, graded_breaks, hemisphere_rule, make_quadrature, radial_rule, sphere_rule  # noqa: F401
from .weighted_solver import solve_scaled

# --- Green's function -------------------------------------------------------------------


@dataclass(frozen=True)
class GreensField:
    """G = |x|^{2-n} (flat) or |x|^{2-n} (1 + m(x)) with a polynomial m (perturbative)."""

    n: int
    mode: str = "flat"
    correction: object = None  # PolyScalar m, or None
    inner: float | None = None
    outer: float | None = None
    residual: float = 0.0
    normalization: float = 1.0
    condition: float = 1.0
    ill_conditioned: bool = False

    def jets(self, X: np.ndarray):
        """Values (N,) and gradients (N, n)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = self.n
        r2 = np.einsum("ij,ij->i", X, X)
        base = r2 ** (1 - n / 2)
        dbase = (2 - n) * r2[:, None] ** (-n / 2) * X
        if self.correction is None:
            return base, dbase
        m, dm = poly_field_jets([self.correction], n, X, order=1)[:2]
        m, dm = m[:, 0], dm[:, 0]
        return base * (1 + m), dbase * (1 + m)[:, None] + base[:, None] * dm

    def __call__(self, X):
        return self.jets(X)[0]


def conformal_laplacian(H, X: np.ndarray, u, du, d2u) -> np.ndarray:
    """L_g u = -(4(n-1)/(n-2)) d_i(g^{ij} d_j u) + R_g u (det g = 1).

    u may carry extra axes after the node axis, shapes (N, ...), (N, ..., n)
    and (N, ..., n, n), so many functions share one metric evaluation.
    """
    n = X.shape[1]
    mj = metric_jets(H, X)
    # d_c g^{ij} = -g^{ia} d_c g_{ab} g^{bj}
    dginv = -np.einsum("nia,ncab,nbj->ncij", mj.ginv, mj.dg, mj.ginv)
    div = np.einsum("nij,n...ij->n...", mj.ginv, d2u) + np.einsum("niij,n...j->n...", dginv, du)
    R = scalar_curvatures(H, X).reshape((-1,) + (1,) * (np.ndim(u) - 1))
    return -(4.0 * (n - 1) / (n - 2)) * div + R * u


def _green_rows(h, space, C, X):
    """L_g applied to |x|^{2-n} times each kept monomial, and to |x|^{2-n} itself."""
    n = X.shape[1]
    r2 = np.einsum("ij,ij->i", X, X)
    base, dbase = GreensField(n).jets(X)
    d2base = (2 - n) * (
        r2[:, None, None] ** (-n / 2) * np.eye(n) - n * r2[:, None, None] ** (-n / 2 - 1) * np.einsum("ni,nj->nij", X, X)
    )
    M, dM, d2M = space.jets(C, X, order=2)
    u = np.concatenate([base[:, None] * M, base[:, None]], axis=1)
    du = dbase[:, None, :] * M[..., None] + base[:, None, None] * dM
    d2u = (
        d2base[:, None] * M[..., None, None]
        + dbase[:, None, :, None] * dM[:, :, None, :]
        + dM[..., None] * dbase[:, None, None, :]
        + base[:, None, None, None] * d2M
    )
    du = np.concatenate([du, dbase[:, None]], axis=1)
    d2u = np.concatenate([d2u, d2base[:, None]], axis=1)
    L = conformal_laplacian(h, X, u, du, d2u)
    return L[:, :-1], L[:, -1]


def greens_function(
    h: FermiTensor | None,
    mode: str = "flat",
    annulus: tuple[float, float] | None = None,
    degree: int = 4,
    level: int = 1,
    n: int | None = None,
) -> GreensField:
    """Green's function of the conformal Laplacian with Neumann condition.

    ``perturbative`` fits m in G = |x|^{2-n}(1 + m) by least squares of
    L_g G on the annulus; m has no constant term and satisfies d_n m = 0 on
    x_n = 0, so G keeps the Neumann condition and |x|^{n-2} G -> 1 at the
    pole. The normalization reported is |x|^{n-2} G averaged on |x| = inner.
    """
    n = n or (h.n if h is not None else None)
    if n is None:
        raise ValueError("need h or n")
    if mode == "flat":
        return GreensField(n)
    if mode != "perturbative":
        raise ValueError(f"unknown Green's function mode {mode!r}")
    if h is None or annulus is None:
        raise ValueError("perturbative mode needs h and an annulus")
    inner, outer = annulus
    from .tensor_core import MonomialSpace

    space = MonomialSpace(n, degree)
    keep = [s for s, a in enumerate(space.exponents) if 0 < a.sum() and a[-1] != 1]
    quad = make_quadrature("annulus", n, outer, level, 0, method="product", inner=inner)
    C = np.eye(space.size)[keep]
    rows, rhs = [], []
    for _, _, X in quad.chunks(2000):
        A, b = _green_rows(h, space, C, X)
        rows.append(A)
        rhs.append(b)
    A, b = np.concatenate(rows), np.concatenate(rhs)
    X, w = quad.nodes, quad.weights
    r2 = np.einsum("ij,ij->i", X, X)
    scale = np.sqrt(w) * r2 ** (n / 2)  # balance the |x|^{-n} growth of L_g G
    As, bs = A * scale[:, None], b * scale
    coef, *_ = np.linalg.lstsq(As, -bs, rcond=None)
    sv = np.linalg.svd(As, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    res = float(np.linalg.norm(As @ coef + bs) / max(np.linalg.norm(bs), 1e-300))
    m = space.to_poly(C.T @ coef)
    G = GreensField(n, "perturbative", m, inner, outer, res, 1.0, cond, cond > 1e12)
    dirs, dw = hemisphere_rule(n, 7, 8)
    norm = float(np.sum(dw * inner ** (n - 2) * G(inner * dirs)) / np.sum(dw))
    return GreensField(n, "perturbative", m, inner, outer, res, norm, cond, cond > 1e12)


# --- flux integral -----------------------------------------------------------------------


@dataclass(frozen=True)
class FluxResult:
    value: float
    green_term: float
    h_term: float
    error_estimate: float
    delta: float


def flux_integral(G: GreensField, h: FermiTensor | None, delta: float, quad: QuadratureRule | None = None, level: int = 2) -> FluxResult:
    """I(p, delta): the Green's-function bracket minus the h-contraction, on |x| = delta."""
    n = G.n
    if quad is None:
        quad = make_quadrature("hemisphere-shell", n, delta, level, 0, method="product")
    if quad.domain != "hemisphere-shell" or abs(quad.meta["outer"] - delta) > 1e-14 * delta:
        raise ValueError("flux integral needs a hemisphere-shell rule of radius delta")
    c = 4.0 * (n - 1) / (n - 2)

    def green(X):
        r = np.sqrt(np.einsum("ij,ij->i", X, X))
        g, dg = G.jets(X)
        f, df = GreensField(n).jets(X)
        return c * np.einsum("ni,ni->n", f[:, None] * dg - g[:, None] * df, X) / r

    def hterm(X):
        if h is None or h.is_zero():
            return np.zeros(len(X))
        r2 = np.einsum("ij,ij->i", X, X)
        L, dL = tensor_field_jets(h, n, X, order=1)
        divh = np.einsum("nikk->ni", dL)
        hx = np.einsum("nik,nk->ni", L, X)
        vec = r2[:, None] * divh - 2 * n * hx
        return r2 ** (1 - n) * np.einsum("ni,ni->n", vec, X) / np.sqrt(r2)

    gt = quad.integrate(green)
    ht = quad.integrate(hterm)
    scale = quad.integrate(lambda X: np.abs(green(X)) + np.abs(hterm(X)))
    err = (quad.error_estimate if np.isfinite(quad.error_estimate) else 0.0) * scale + 1e-14 * scale
    return FluxResult(gt - ht, gt, ht, float(err), float(delta))


# --- pointwise fields --------------------------------------------------------------------


def metric_fields(H: FermiTensor | None, X: np.ndarray, cache: dict | None = None):
    """R_g and g^{-1} at X, evaluated once per distinct projection onto the
    coordinates H actually depends on."""
    n = X.shape[1]
    if H is None or H.is_zero():
        return np.zeros(len(X)), np.broadcast_to(np.eye(n), (len(X), n, n))
    used = sorted({j for _, _, a, _ in H.coeff_index for j in range(n) if a[j]})
    P = X[:, used]
    uniq, inv = np.unique(P, axis=0, return_inverse=True)
    inv = inv.ravel()
    Xu = np.zeros((len(uniq), n))
    Xu[:, used] = uniq
    R, GI = curvature_and_inverse(H, Xu)
    return R[inv], GI[inv]


class FieldStack:
    """Several polynomial vector fields evaluated together.

    Only what psi and its gradient need is formed: V, dV and d(div V),
    all from one product of the monomial table with a coefficient block.
    """

    def __init__(self, fields: Sequence[VectorFieldPoly], n: int):
        from .tensor_core import MonomialSpace

        self.n = n
        self.count = len(fields)
        deg = max([p.degree for V in fields for p in V.components] + [0])
        self.space = MonomialSpace(n, deg)
        sp = self.space
        blocks = []
        for V in fields:
            C = sp.coefficients(list(V.components))  # (n, size)
            Cd = np.stack([C @ sp.dmat(j) for j in range(n)], axis=-1)  # (k, size, j)
            ddiv = np.stack([sum(Cd[k, :, k] for k in range(n)) @ sp.dmat(j) for j in range(n)])
            blocks.append(np.concatenate([C, Cd.transpose(0, 2, 1).reshape(n * n, -1), ddiv]))
        self.width = n + n * n + n
        self.B = np.concatenate(blocks).T if blocks else np.zeros((sp.size, 0))

    def __call__(self, X: np.ndarray):
        """Per field: V (N, n), dV (N, k, j) and d(div V) (N, n)."""
        n, N = self.n, len(X)
        vals = self.space.monomials(X) @ self.B
        out = []
        for f in range(self.count):
            blk = vals[:, f * self.width : (f + 1) * self.width]
            out.append((blk[:, :n], blk[:, n : n + n * n].reshape(N, n, n), blk[:, n + n * n :]))
        return out


def psi_from_parts(eps: float, n: int, X: np.ndarray, parts, order: int = 1):
    """psi and its gradient from bubble jets and precomputed field parts."""
    a = (n - 2) / (2.0 * n)
    m = 0.5 * (n - 2)
    Y = X.copy()
    Y[:, -1] += eps
    rho = np.einsum("ij,ij->i", Y, Y)
    v = eps**m * rho**-m
    f1 = -m * v / rho
    dv = 2.0 * f1[:, None] * Y
    Vv, dV, ddiv = parts
    div = np.einsum("nkk->n", dV)
    psi = np.einsum("nl,nl->n", dv, Vv) + a * v * div
    if order == 0:
        return v, dv, psi, None
    f2 = -(m + 1) * f1 / rho
    hessV = 4.0 * (f2 * np.einsum("nl,nl->n", Y, Vv))[:, None] * Y + 2.0 * f1[:, None] * Vv
    dpsi = hessV + np.einsum("nl,nlj->nj", dv, dV) + a * (dv * div[:, None] + v[:, None] * ddiv)
    return v, dv, psi, dpsi


def psi_jets(eps: float, V: VectorFieldPoly, X: np.ndarray, order: int = 1):
    """psi = dv.V + (n-2)/(2n) v div V and its gradient; with order=0 only psi."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[1]
    if np.any(X[:, -1] < 0):
        raise ValueError("psi is defined on the closed half-space x_n >= 0")
    parts = FieldStack([V], n)(X)[0]
    return psi_from_parts(eps, n, X, parts, order)[2:]


# --- reports -----------------------------------------------------------------------------


CSV_COLUMNS = (
    "epsilon",
    "delta",
    "numerator",
    "denominator",
    "quotient",
    "sharp_gap",
    "mc_sigma",
    "flat_gap",
    "curvature_gap",
    "curvature_sigma",
    "bulk_lhs",
    "boundary_expansion",
    "sphere_flux",
    "correction_term",
    "local_slack",
    "theta_point",
    "local2_rhs",
    "local2_excess",
    "local2_constant",
)


@dataclass(frozen=True)
class EnergyReport:
    """One (eps, delta) point.

    ``flat_gap`` is the gap of the same construction with H = 0 on the same
    nodes; ``curvature_gap = sharp_gap - flat_gap`` is the metric-dependent
    part. ``theta_point`` is the largest theta for which the local bulk
    inequality holds at this point, ``local2_constant`` the smallest C for
    the boundary comparison.
    """

    epsilon: float
    delta: float
    numerator: float
    denominator: float
    quotient: float
    sharp_gap: float
    mc_sigma: float
    flat_gap: float
    curvature_gap: float
    curvature_sigma: float
    bulk_lhs: float
    boundary_expansion: float
    sphere_flux: float
    correction_term: float
    local_slack: float
    theta_point: float
    local2_rhs: float
    local2_excess: float
    local2_constant: float

    def row(self) -> list[float]:
        return [getattr(self, c) for c in CSV_COLUMNS]

    def to_json(self) -> dict:
        return {c: getattr(self, c) for c in CSV_COLUMNS}


def fmt(x: float) -> str:
    return "%.17g" % x


def stable_json(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with every float written as %.17g, keys in insertion order."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        t = fmt(x)
        return t if any(ch in t for ch in ".e") else t + ".0"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {stable_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [pad + stable_json(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


@dataclass(frozen=True)
class GapExperiment:
    reports: tuple[EnergyReport, ...]
    exponent: float
    exponent_constant: float
    curvature_exponent: float
    curvature_constant: float
    theta_fit: float
    local2_constant: float
    monotone: bool
    flux: float
    sharp_constant: float
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "sharp_constant": self.sharp_constant,
            "exponent": self.exponent,
            "exponent_constant": self.exponent_constant,
            "curvature_exponent": self.curvature_exponent,
            "curvature_constant": self.curvature_constant,
            "theta_fit": self.theta_fit,
            "local2_constant": self.local2_constant,
            "monotone": self.monotone,
            "flux": self.flux,
            "reports": [r.to_json() for r in self.reports],
        }

    def dumps(self) -> str:
        return stable_json(self.to_json()) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.reports:
            w.writerow([fmt(x) for x in r.row()])
        return buf.getvalue()


def fit_exponent(eps: Sequence[float], gaps: Sequence[float]) -> tuple[float, float]:
    """Least-squares fit of log|gap| = log C + theta log eps."""
    eps = np.asarray(eps, dtype=float)
    g = np.abs(np.asarray(gaps, dtype=float))
    if len(eps) < 2 or np.any(g == 0):
        return math.nan, math.nan
    slope, icpt = np.polyfit(np.log(eps), np.log(g), 1)
    return float(slope), float(math.exp(icpt))


# --- the experiment ------------------------------------------------------------------------


@dataclass(frozen=True)
class GapConfig:
    """``exact_bubble`` replaces phi by v_eps everywhere and integrates the
    quotient directly instead of as a difference, which checks the rules
    against the closed-form constant."""

    H: FermiTensor
    delta: float
    epsilons: tuple[float, ...]
    degree: int = 3
    level: int = 2
    green: str = "flat"
    exact_bubble: bool = False
    sigma: bool = True
    baseline: bool = True

    def __post_init__(self):
        if not self.epsilons:
            raise ValueError("need at least one epsilon")
        if not all(0 < 2 * e <= self.delta for e in self.epsilons):
            raise ValueError("need 0 < 2 eps <= delta for every eps")
        if self.green != "flat":
            raise ValueError("the glued test function uses the flat Green's function")

    def to_json(self) -> dict:
        return {
            "metric": self.H.to_json(),
            "delta": self.delta,
            "epsilons": list(self.epsilons),
            "degree": self.degree,
            "level": self.level,
            "green": self.green,
            "exact_bubble": self.exact_bubble,
            "cutoff": CutoffSpec(self.delta).profile,
        }


def level_nodes(level: int) -> dict:
    return {
        "radial": 6 + 3 * level,
        "polar": 8 + 4 * level,
        "sphere_degree": 7 + 2 * level,
        "boundary_degree": 11 + 4 * level,
        "shell_polar": 10 + 4 * level,
    }


def _breaks(delta: float, eps_min: float) -> list[float]:
    return graded_breaks(0.0, 2 * delta, eps_min / 4, [delta, T_IN * delta, T_OUT * delta])


def _bulk_rule(n: int, delta: float, eps_min: float, level: int) -> QuadratureRule:
    p = level_nodes(level)
    radii, rw = radial_rule(_breaks(delta, eps_min), p["radial"], n - 1)
    dirs, dw = hemisphere_rule(n, p["sphere_degree"], p["polar"])
    return QuadratureRule("half-ball", n, radii, rw, dirs, dw, level, None, "product")


def _disk_rule(n: int, delta: float, eps_min: float, level: int) -> QuadratureRule:
    p = level_nodes(level)
    radii, rw = radial_rule(_breaks(delta, eps_min), p["radial"], n - 2)
    sub, sw = sphere_rule(n - 2, p["boundary_degree"])
    dirs = np.concatenate([sub, np.zeros((len(sub), 1))], axis=1)
    return QuadratureRule("boundary-disk", n, radii, rw, dirs, sw, level, None, "product")


def _exterior_bulk(n: int, a: float, f, level: int) -> float:
    """int over {|x| > a, x_n > 0} of f(|x'|, x_n) dx."""
    rn = 8 + 4 * level
    r, rw = radial_rule(graded_breaks(a, 64 * a, a), rn, 1, tail=True, tail_nodes=2 * rn)
    x, w = roots_legendre(16 + 8 * level)
    th = 0.25 * math.pi * (x + 1)
    thw = 0.25 * math.pi * w
    s = np.outer(r, np.sin(th)).ravel()
    t = np.outer(r, np.cos(th)).ravel()
    ww = np.outer(rw, thw).ravel() * s ** (n - 2) * sphere_area(n - 2)
    return math.fsum(f(s, t) * ww)


def _exterior_boundary(n: int, a: float, f, level: int) -> float:
    """int over {|x'| > a} in R^{n-1} of f(|x'|) dx'."""
    rn = 8 + 4 * level
    r, rw = radial_rule(graded_breaks(a, 64 * a, a), rn, n - 2, tail=True, tail_nodes=2 * rn)
    return math.fsum(f(r) * rw) * sphere_area(n - 2)


def boundary_radial_mass(eps: float, delta: float, n: int, order: int) -> float:
    """int over the boundary disk of radius delta of (eps+|x|)^{2|alpha|-2n+2}."""
    from scipy.integrate import quad

    m = 2 * order + 2 - 2 * n
    pts = [eps * 2.0**k for k in range(60) if eps * 2.0**k < delta]
    val, _ = quad(lambda r: (eps + r) ** m * r ** (n - 2), 0.0, delta, points=pts or None, limit=400, epsabs=0, epsrel=1e-13)
    return sphere_area(n - 2) * val


def _radial_bubble_st(eps: float, n: int, s, t):
    """v and |dv|^2 as functions of (|x'|, x_n)."""
    rho = s * s + (eps + t) ** 2
    v = eps ** ((n - 2) / 2) * rho ** (-(n - 2) / 2)
    dv2 = (n - 2) ** 2 * v * v / rho
    return v, dv2


def _experiment_level(cfg: GapConfig, H: FermiTensor, Vs: Sequence[VectorFieldPoly], level: int) -> dict:
    """All integrals of one run at a given quadrature level, for every epsilon.

    Returns arrays over epsilon: dN, dB (deviations from the bubble's
    numerator and boundary integral) and the local terms lhs, expansion,
    sphere and local2 (the boundary integral of (v + psi)^p on B_delta).
    """
    delta = cfg.delta
    n = H.n
    eps_list = list(cfg.epsilons)
    c = 4.0 * (n - 1) / (n - 2)
    p = critical_exponent(n)
    cut = CutoffSpec(delta)
    G = GreensField(n)
    ne = len(eps_list)
    exact = cfg.exact_bubble
    stack = FieldStack(Vs, n)

    # bulk: columns [dN_e..., lhs_e...]
    def bulk(X):
        R, GI = metric_fields(H, X)
        r = np.sqrt(np.einsum("ij,ij->i", X, X))
        inside = r <= delta * (1 + 1e-12)
        eta, deta, _ = cut.jets(X)
        g0, dg0 = G.jets(X)
        parts = stack(X)
        out = np.empty((len(X), 2 * ne))
        for j, e in enumerate(eps_list):
            v, dv, psi, dpsi = psi_from_parts(e, n, X, parts[j])
            gdv = np.einsum("nij,nj->ni", GI, dv)
            if exact:
                out[:, j] = c * np.einsum("ni,ni->n", dv, gdv) + R * v * v
                out[:, ne + j] = np.where(inside, out[:, j], 0.0)
                continue
            sc = e ** ((n - 2) / 2)
            g, dg = sc * g0, sc * dg0
            err = eta * psi + (1 - eta) * (g - v)
            derr = deta * (psi - g + v)[:, None] + eta[:, None] * dpsi + (1 - eta)[:, None] * (dg - dv)
            phi = v + err
            quad_form = np.einsum("ni,ni->n", dv, gdv - dv) + 2 * np.einsum("ni,ni->n", derr, gdv)
            quad_form += np.einsum("ni,nij,nj->n", derr, GI, derr)
            out[:, j] = c * quad_form + R * phi * phi
            u = v + psi
            du = dv + dpsi
            lhs = c * np.einsum("ni,nij,nj->n", du, GI, du) + R * u * u
            out[:, ne + j] = np.where(inside, lhs, 0.0)
        return out

    bulk_vals = np.asarray(_bulk_rule(n, delta, min(eps_list), level).integrate(bulk))

    # boundary disk: columns [dB_e..., expansion_e..., local2_e...]
    def disk(X):
        r = np.sqrt(np.einsum("ij,ij->i", X, X))
        inside = r <= delta * (1 + 1e-12)
        eta = cut(X)
        g0 = G(X)
        parts = stack(X)
        out = np.empty((len(X), 3 * ne))
        for j, e in enumerate(eps_list):
            v, _, psi, _ = psi_from_parts(e, n, X, parts[j], order=0)
            dV = parts[j][1]
            if exact:
                out[:, j] = v**p
                psi = np.zeros_like(v)
            else:
                g = e ** ((n - 2) / 2) * g0
                rel = (eta * psi + (1 - eta) * (g - v)) / v
                out[:, j] = v**p * np.expm1(p * np.log1p(rel))
            Snn = 2 * dV[:, -1, -1] - (2.0 / n) * np.einsum("nkk->n", dV)
            expn = 4 * (n - 1) * v ** (2 / (n - 2)) * (
                v * v + 2 * v * psi + (n / (n - 2)) * psi**2 - (n - 2) / (8 * (n - 1) ** 2) * v * v * Snn**2
            )
            out[:, ne + j] = np.where(inside, expn, 0.0)
            out[:, 2 * ne + j] = np.where(inside, (v + psi) ** p, 0.0)
        return out

    disk_vals = np.asarray(_disk_rule(n, delta, min(eps_list), level).integrate(disk))

    # half-sphere |x| = delta: flux term of the local estimate
    shell = make_quadrature("hemisphere-shell", n, delta, level, 0, method="product", polar_nodes=level_nodes(level)["shell_polar"])

    def sphere(X):
        r = np.sqrt(np.einsum("ij,ij->i", X, X))
        L, dL = tensor_field_jets(H, n, X, order=1)
        divh = np.einsum("nikk->ni", dL)
        out = np.empty((len(X), ne))
        for j, e in enumerate(eps_list):
            v, dv = bubble_jets(e, n, X, order=1)
            vec = c * v[:, None] * dv + (v * v)[:, None] * divh - 2 * v[:, None] * np.einsum("nk,nik->ni", dv, L)
            out[:, j] = np.einsum("ni,ni->n", vec, X) / r
        return out

    sphere_vals = np.atleast_1d(np.asarray(shell.integrate(sphere)))

    # beyond 2 delta the metric is flat and phi = eps^{(n-2)/2} |x|^{2-n}
    ext_bulk, ext_bdy = [], []
    for e in eps_list:
        sc = e ** ((n - 2) / 2)
        if exact:

            def fb(s, t, e=e):
                return c * _radial_bubble_st(e, n, s, t)[1]

            def fd(s, e=e):
                return _radial_bubble_st(e, n, s, 0.0 * s)[0] ** p

        else:

            def fb(s, t, e=e, sc=sc):
                dv2 = _radial_bubble_st(e, n, s, t)[1]
                return c * (sc * sc * (n - 2) ** 2 * (s * s + t * t) ** (1 - n) - dv2)

            def fd(s, e=e, sc=sc):
                v = _radial_bubble_st(e, n, s, 0.0 * s)[0]
                return (sc * s ** (2 - n)) ** p - v**p

        ext_bulk.append(_exterior_bulk(n, 2 * delta, fb, level))
        ext_bdy.append(_exterior_boundary(n, 2 * delta, fd, level))

    dN = bulk_vals[:ne] + np.array(ext_bulk)
    dB = disk_vals[:ne] + np.array(ext_bdy)
    if exact:
        B0 = boundary_mass_closed_form(n)
        dN = dN - 4.0 * (n - 1) * B0
        dB = dB - B0
    return {
        "dN": dN,
        "dB": dB,
        "lhs": bulk_vals[ne:],
        "expansion": disk_vals[ne : 2 * ne],
        "local2": disk_vals[2 * ne :],
        "sphere": sphere_vals,
    }


def _solutions(cfg: GapConfig, H: FermiTensor) -> list[VectorFieldPoly]:
    n = H.n
    if cfg.exact_bubble or H.is_zero():
        return [VectorFieldPoly.zero(n) for _ in cfg.epsilons]
    return [solve_scaled(H, e, cfg.delta, cfg.degree)[0] for e in cfg.epsilons]


def _gaps(n: int, res: dict) -> np.ndarray:
    B0 = boundary_mass_closed_form(n)
    N0 = 4.0 * (n - 1) * B0
    k = (n - 2) / (n - 1)
    return sharp_constant_closed_form(n) * np.expm1(np.log1p(res["dN"] / N0) - k * np.log1p(res["dB"] / B0))


def _run(cfg: GapConfig, H: FermiTensor, Vs):
    """Integrals at the configured level, the gaps, and the coarse-level gaps."""
    n = H.n
    main = _experiment_level(cfg, H, Vs, cfg.level)
    gap = _gaps(n, main)
    coarse = None
    if cfg.sigma and cfg.level > 0:
        coarse = _gaps(n, _experiment_level(cfg, H, Vs, cfg.level - 1))
    return main, gap, coarse


def _local2_scale(H: FermiTensor, eps: float, delta: float) -> float:
    n = H.n
    l1: dict[int, float] = {}
    for _, _, a, cf in H.coeff_index:
        l1[sum(a)] = l1.get(sum(a), 0.0) + abs(cf)
    lin = sum(w * delta ** (l - n + 1) * eps ** (n - 1) for l, w in l1.items())
    sq = sum(w * eps ** (n - 1) * delta**2 * boundary_radial_mass(eps, delta, n, l) for l, w in H.by_order().items())
    return lin + sq


def energy_gap_experiment(cfg: GapConfig) -> GapExperiment:
    """Run the glued test function over the epsilon sweep.

    The same nodes are reused for every epsilon; ``mc_sigma`` is the change
    of the gap from the next coarser quadrature level.
    """
    H = cfg.H
    n = H.n
    Q = sharp_constant_closed_form(n)
    k = (n - 2) / (n - 1)
    B0 = boundary_mass_closed_form(n)
    N0 = 4.0 * (n - 1) * B0
    Vs = _solutions(cfg, H)
    main, gap, coarse = _run(cfg, H, Vs)
    sigma = np.abs(gap - coarse) if coarse is not None else np.zeros_like(gap)
    if H.is_zero():
        # the construction is its own flat model
        fgap, csigma = gap.copy(), np.zeros_like(gap)
    elif cfg.exact_bubble:
        fgap, csigma = np.zeros_like(gap), sigma.copy()
    elif cfg.baseline:
        zero = [VectorFieldPoly.zero(n) for _ in cfg.epsilons]
        _, fgap, fcoarse = _run(cfg, _zero_tensor(H), zero)
        csigma = np.abs((gap - fgap) - (coarse - fcoarse)) if coarse is not None else np.zeros_like(gap)
    else:
        fgap, csigma = np.full_like(gap, math.nan), np.full_like(gap, math.nan)
    flux = flux_integral(GreensField(n), H, cfg.delta).value
    reports = []
    for j, e in enumerate(cfg.epsilons):
        corr = sum(w * weighted_radial_mass(e, cfg.delta, n, l) for l, w in H.by_order().items())
        slack = main["expansion"][j] + main["sphere"][j] - main["lhs"][j]
        rhs2 = Q * main["local2"][j] ** k
        excess = main["expansion"][j] - rhs2
        scale2 = _local2_scale(H, e, cfg.delta)
        reports.append(
            EnergyReport(
                epsilon=float(e),
                delta=float(cfg.delta),
                numerator=float(N0 + main["dN"][j]),
                denominator=float((B0 + main["dB"][j]) ** k),
                quotient=float(Q + gap[j]),
                sharp_gap=float(gap[j]),
                mc_sigma=float(sigma[j]),
                flat_gap=float(fgap[j]),
                curvature_gap=float(gap[j] - fgap[j]),
                curvature_sigma=float(csigma[j]),
                bulk_lhs=float(main["lhs"][j]),
                boundary_expansion=float(main["expansion"][j]),
                sphere_flux=float(main["sphere"][j]),
                correction_term=float(corr),
                local_slack=float(slack),
                theta_point=float(slack / corr) if corr > 0 else math.nan,
                local2_rhs=float(rhs2),
                local2_excess=float(excess),
                local2_constant=float(max(excess, 0.0) / scale2) if scale2 > 0 else math.nan,
            )
        )
    eps = [r.epsilon for r in reports]
    expo, const = fit_exponent(eps, [r.sharp_gap for r in reports])
    cexpo, cconst = fit_exponent(eps, [r.curvature_gap for r in reports])
    order = np.argsort(eps)
    lo, hi = reports[order[0]], reports[order[-1]]
    monotone = len(reports) > 1 and lo.sharp_gap < hi.sharp_gap - 2 * (lo.mc_sigma + hi.mc_sigma)
    thetas = [r.theta_point for r in reports if np.isfinite(r.theta_point)]
    consts = [r.local2_constant for r in reports if np.isfinite(r.local2_constant)]
    return GapExperiment(
        reports=tuple(reports),
        exponent=expo,
        exponent_constant=const,
        curvature_exponent=cexpo,
        curvature_constant=cconst,
        theta_fit=float(min(thetas)) if thetas else math.nan,
        local2_constant=float(max(consts)) if consts else math.nan,
        monotone=bool(monotone),
        flux=float(flux),
        sharp_constant=Q,
        config=cfg.to_json(),
    )


def _zero_tensor(H: FermiTensor) -> FermiTensor:
    from .fermi_metric import make_fermi_tensor

    return make_fermi_tensor(H.dim)


def local_energy_report(
    eps: float, delta: float, H: FermiTensor, V: VectorFieldPoly | None = None, level: int = 2, degree: int = 3
) -> EnergyReport:
    """Both local estimates, plus the glued gap, at one (eps, delta).

    V defaults to the solver output; no level-difference sigma is formed.
    """
    cfg = GapConfig(H, delta, (eps,), degree, level, sigma=False, baseline=False)
    if V is None:
        return energy_gap_experiment(cfg).reports[0]
    n = H.n
    Q = sharp_constant_closed_form(n)
    k = (n - 2) / (n - 1)
    B0 = boundary_mass_closed_form(n)
    res = _experiment_level(cfg, H, [V], level)
    gap = float(_gaps(n, res)[0])
    corr = sum(w * weighted_radial_mass(eps, delta, n, l) for l, w in H.by_order().items())
    slack = float(res["expansion"][0] + res["sphere"][0] - res["lhs"][0])
    rhs2 = float(Q * res["local2"][0] ** k)
    excess = float(res["expansion"][0]) - rhs2
    scale2 = _local2_scale(H, eps, delta)
    return EnergyReport(
        eps, delta, 4.0 * (n - 1) * B0 + float(res["dN"][0]), (B0 + float(res["dB"][0])) ** k, Q + gap, gap, 0.0,
        math.nan, math.nan, math.nan, float(res["lhs"][0]), float(res["expansion"][0]), float(res["sphere"][0]), float(corr), slack,
        slack / corr if corr > 0 else math.nan, rhs2, excess, max(excess, 0.0) / scale2 if scale2 > 0 else math.nan,
    )
