"""Ritz-Galerkin solution of the weighted conformal Killing system.

Find V minimizing  int_{x_n>0} w |eta_delta H - DV|^2 dx,  w = v_1^{2n/(n-2)},
over polynomial fields with V_n = 0 and d_n V_a = 0 on x_n = 0. The
minimizer solves

    sum_k d_k [ w (eta_delta H - DV)_ik ] = 0.

Every Gram entry is an integral of w times a product of monomial
derivatives, so the rule is only used to integrate w against monomials
(the "moments"); the Gram matrix is then assembled exactly from them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .conformal_deficit import VectorFieldPoly, killing_image, poly_field_jets, tensor_field_jets
from .cutoff import CutoffSpec
from scipy.special import roots_legendre

from .quadrature import QuadratureRule, graded_breaks, radial_rule, random_directions
from .tensor_core import Dim, MonomialSpace, PolyScalar

DEFLATION_TOL = 1e-9


class SolverError(RuntimeError):
    """Raised when assembly or the solve cannot be trusted."""


# --- weight ---------------------------------------------------------------------


@dataclass(frozen=True)
class WeightSpec:
    """w = v_1^{2n/(n-2)} = rho^{-n} with rho = (1+x_n)^2 + |x'|^2."""

    n: int

    @property
    def exponent(self) -> float:
        return 2.0 * self.n / (self.n - 2)

    def rho(self, X: np.ndarray) -> np.ndarray:
        Y = np.array(X, dtype=float)
        Y[:, -1] += 1.0
        return np.einsum("ij,ij->i", Y, Y)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.rho(X) ** (-self.n)

    def mass_weight(self, X: np.ndarray) -> np.ndarray:
        """v_1^{2(n+2)/(n-2)} = rho^{-(n+2)}, the weight paired with |V|^2."""
        return self.rho(X) ** (-(self.n + 2))

    def of_st(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        """w as a function of (|x'|, x_n)."""
        return (s * s + (1.0 + t) ** 2) ** (-self.n)

    def mass_of_st(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        return (s * s + (1.0 + t) ** 2) ** (-(self.n + 2))

    def gram_integrable(self, degree: int) -> bool:
        # |DV|^2 w ~ r^{2N-2-2n}; integrable against r^{n-1} dr iff 2N-2 < n
        return 2 * degree - 2 < self.n


# --- basis -------------------------------------------------------------------------


@dataclass(frozen=True)
class GalerkinBasis:
    """Monomial fields x^beta e_c passing the boundary constraints.

    ``terms`` lists (component c, monomial index s in ``space``).
    ``radius`` truncates the domain to the half-ball of that radius.
    """

    dim: Dim
    degree: int
    terms: tuple[tuple[int, int], ...]
    space: MonomialSpace = field(repr=False, compare=False)
    radius: float | None = None
    constraints: tuple[str, ...] = ("V_n = 0 on x_n = 0", "d_n V_a = 0 on x_n = 0")

    @property
    def n(self) -> int:
        return self.dim.n

    @property
    def size(self) -> int:
        return len(self.terms)

    @property
    def fields(self) -> list[VectorFieldPoly]:
        return [self.field_from_coefficients(np.eye(self.size)[j]) for j in range(self.size)]

    def coefficient_array(self, c: np.ndarray) -> np.ndarray:
        """Solution coefficients -> (n, space.size) array of component coefficients."""
        out = np.zeros((self.n, self.space.size))
        for (comp, s), v in zip(self.terms, c):
            out[comp, s] += v
        return out

    def field_from_coefficients(self, c: np.ndarray) -> VectorFieldPoly:
        return VectorFieldPoly.from_arrays(self.space, self.coefficient_array(c))


def _admits(comp: int, alpha: np.ndarray, n: int) -> bool:
    if comp == n - 1:
        return alpha[n - 1] >= 1
    return alpha[n - 1] != 1


def build_basis(dim: Dim | int, degree: int, radius: float | None = None) -> GalerkinBasis:
    dim = dim if isinstance(dim, Dim) else Dim(int(dim))
    if degree < 1:
        raise ValueError("basis degree must be >= 1")
    if radius is not None and not radius > 0:
        raise ValueError("truncation radius must be positive")
    n = dim.n
    space = MonomialSpace(n, degree)
    terms = tuple((c, s) for c in range(n) for s, a in enumerate(space.exponents) if _admits(c, a, n))
    if not terms:
        raise ValueError("over-constrained: empty basis")
    return GalerkinBasis(dim, degree, terms, space, radius)


def constrained_space_dimension(n: int, degree: int) -> int:
    """Dimension of {V polynomial of degree <= N : V_n|_0 = 0, d_n V_a|_0 = 0} by linear algebra."""
    space = MonomialSpace(n, degree)
    m = space.size
    rows = []
    restrict = [s for s, a in enumerate(space.exponents) if a[n - 1] == 0]
    for s in restrict:
        r = np.zeros(n * m)
        r[(n - 1) * m + s] = 1.0
        rows.append(r)
    Dn = space.dmat(n - 1)
    for a in range(n - 1):
        for s in restrict:
            r = np.zeros(n * m)
            r[a * m : (a + 1) * m] = Dn[:, s]
            rows.append(r)
    rank = np.linalg.matrix_rank(np.array(rows)) if rows else 0
    return n * m - rank


def symbolic_kernel_dimension(basis: GalerkinBasis) -> int:
    """dim ker D on span(basis), from the exact coefficient map V -> DV."""
    n, sp = basis.n, basis.space
    mat = []
    for j in range(basis.size):
        S = killing_image(basis.field_from_coefficients(np.eye(basis.size)[j]))
        mat.append(sp.coefficients([S[i][k] for i in range(n) for k in range(n)]).ravel())
    return basis.size - int(np.linalg.matrix_rank(np.array(mat), tol=1e-10))


# --- moments and assembly -------------------------------------------------------------


def _split(X: np.ndarray):
    """(|x'|, x_n) for each row."""
    return np.sqrt(np.einsum("ij,ij->i", X[:, :-1], X[:, :-1])), X[:, -1]


def sphere_monomial_moments(exponents: np.ndarray) -> np.ndarray:
    """int over S^{k-1} of omega^gamma, for each row gamma of length k."""
    E = np.atleast_2d(exponents)
    k = E.shape[1]
    out = np.zeros(len(E))
    for r, g in enumerate(E):
        if np.all(g % 2 == 0):
            out[r] = 2.0 * math.exp(sum(math.lgamma((a + 1) / 2) for a in g) - math.lgamma((g.sum() + k) / 2))
    return out


class RuleMoments:
    """Moments int f(|x'|, x_n) x^gamma over a QuadratureRule."""

    def __init__(self, quad: QuadratureRule):
        self.quad = quad
        self.sigma = 0.0

    def __call__(self, space: MonomialSpace, f) -> np.ndarray:
        def g(X):
            s, t = _split(X)
            return space.monomials(X) * f(s, t)[:, None]

        vals, sig = self.quad.integrate(g, return_sigma=True)
        vals = np.atleast_1d(np.asarray(vals, dtype=float))
        if np.ndim(sig) and vals[0]:
            self.sigma = max(self.sigma, float(np.asarray(sig)[0] / abs(vals[0])))
        return vals


class ReducedMoments:
    """Moments of weights depending only on (|x'|, x_n).

    The S^{n-2} factor is done in closed form, leaving a 2-D Gauss rule in
    polar coordinates (r, theta) of the quarter plane {|x'| >= 0, x_n >= 0}.
    """

    def __init__(self, n: int, radius: float | None = None, breaks: Sequence[float] = (), level: int = 2):
        self.n = n
        self.radius = radius
        self.sigma = 0.0
        rn = 10 + 5 * level
        tn = 16 + 8 * level
        extra = [b for b in breaks if radius is None or b < radius]
        if radius is None:
            hi = 16.0 * max([1.0] + list(extra))
            brk = graded_breaks(0.0, hi, 1.0, extra)
        else:
            brk = graded_breaks(0.0, radius, 1.0, extra)
        self.r, self.rw = radial_rule(brk, rn, 1, tail=radius is None, tail_nodes=2 * rn)
        x, w = roots_legendre(tn)
        self.th = 0.25 * math.pi * (x + 1)
        self.thw = 0.25 * math.pi * w
        self.s = np.outer(self.r, np.sin(self.th)).ravel()
        self.t = np.outer(self.r, np.cos(self.th)).ravel()
        self.w = np.outer(self.rw, self.thw).ravel()

    def __call__(self, space: MonomialSpace, f) -> np.ndarray:
        E = space.exponents
        n = self.n
        tang = E[:, :-1]
        a = tang.sum(axis=1)
        k = E[:, -1]
        sph = sphere_monomial_moments(tang)
        fw = f(self.s, self.t) * self.w
        out = np.zeros(len(E))
        logs = np.log(np.where(self.s > 0, self.s, 1.0))
        logt = np.log(np.where(self.t > 0, self.t, 1.0))
        for ai, ki in set(zip(a.tolist(), k.tolist())):
            ps = ai + n - 2
            vals = np.exp(ps * logs + ki * logt)
            if ps:
                vals = np.where(self.s > 0, vals, 0.0)
            if ki:
                vals = np.where(self.t > 0, vals, 0.0)
            out[(a == ai) & (k == ki)] = math.fsum(vals * fw)
        out = out * sph
        if not np.all(np.isfinite(out)):
            raise SolverError("non-finite moments")
        return out


@dataclass
class _Moments:
    w: np.ndarray  # int w m_gamma, |gamma| <= 2N - 2
    mass: np.ndarray  # int w2 m_gamma, |gamma| <= 2N
    low: MonomialSpace
    high: MonomialSpace
    sigma: float


def _moments(basis: GalerkinBasis, engine, weight: WeightSpec) -> _Moments:
    N = basis.degree
    low = MonomialSpace(basis.n, max(2 * N - 2, 0))
    high = MonomialSpace(basis.n, 2 * N)
    mw = engine(low, weight.of_st)
    mm = engine(high, weight.mass_of_st)
    return _Moments(mw, mm, low, high, engine.sigma)


def _derivative_moments(basis: GalerkinBasis, mom: _Moments) -> np.ndarray:
    """A[i, j, s, t] = int w d_i m_s d_j m_t."""
    sp, n = basis.space, basis.n
    small = MonomialSpace(n, basis.degree - 1)
    # derivative coefficients expressed in the degree N-1 space
    proj = np.array([sp.index[tuple(a)] for a in small.exponents])
    Dg = [sp.dmat(i)[:, proj] for i in range(n)]
    M = mom.w[_product_index(small, mom.low)]
    return np.array([[Dg[i] @ M @ Dg[j].T for j in range(n)] for i in range(n)])


def _product_index(space: MonomialSpace, big: MonomialSpace, other: MonomialSpace | None = None) -> np.ndarray:
    E = space.exponents
    F = (other or space).exponents
    return np.array([[big.index[tuple(a + b)] for b in F] for a in E])


def assemble_gram(basis: GalerkinBasis, A: np.ndarray) -> np.ndarray:
    n = basis.n
    comp = np.array([c for c, _ in basis.terms])
    mono = np.array([s for _, s in basis.terms])
    lap = np.einsum("iist->st", A)
    G = 2.0 * (comp[:, None] == comp[None, :]) * lap[np.ix_(mono, mono)]
    # 2 A_{dc}[s,t] - (4/n) A_{cd}[s,t] for rows (c,s), cols (d,t)
    G += 2.0 * A[comp[None, :], comp[:, None], mono[:, None], mono[None, :]]
    G -= (4.0 / n) * A[comp[:, None], comp[None, :], mono[:, None], mono[None, :]]
    return 0.5 * (G + G.T)


def assemble_mass(basis: GalerkinBasis, mom: _Moments) -> np.ndarray:
    comp = np.array([c for c, _ in basis.terms])
    mono = np.array([s for _, s in basis.terms])
    M = mom.mass[_product_index(basis.space, mom.high)]
    return (comp[:, None] == comp[None, :]) * M[np.ix_(mono, mono)]


Target = Callable[[np.ndarray], np.ndarray]


def _is_poly_tensor(L) -> bool:
    return not callable(L)


def _poly_tensor_coeffs(L, n: int):
    ent = [list(row) for row in (L.entries if hasattr(L, "entries") else L)]
    flat = [ent[i][k] for i in range(n) for k in range(n)]
    sp = MonomialSpace.for_polys(flat, n)
    return sp, sp.coefficients(flat).reshape(n, n, sp.size)


def _load_moments(basis: GalerkinBasis, L, engine, weight: WeightSpec, cutoff: CutoffSpec | None):
    """r[j] = int w eta <L, D b_j> and int w eta^2 |L|^2 for a polynomial tensor L."""
    n, N = basis.n, basis.degree
    hsp, Hc = _poly_tensor_coeffs(L, n)
    tr = np.einsum("iis->s", Hc)
    Lt = 2.0 * Hc - (2.0 / n) * np.eye(n)[:, :, None] * tr[None, None, :]
    small = MonomialSpace(n, N - 1)
    big = MonomialSpace(n, hsp.degree + N - 1)
    sq = MonomialSpace(n, 2 * hsp.degree)
    if cutoff is None:
        f1, f2 = weight.of_st, weight.of_st
    else:
        def f1(s, t):
            return weight.of_st(s, t) * cutoff.of_st(s, t)

        def f2(s, t):
            return weight.of_st(s, t) * cutoff.of_st(s, t) ** 2

    M = engine(big, f1)[_product_index(hsp, big, small)]  # (hsize, small)
    proj = np.array([basis.space.index[tuple(a)] for a in small.exponents])
    Dg = [basis.space.dmat(i)[:, proj] for i in range(n)]
    R = np.zeros((n, basis.space.size))
    for i in range(n):
        R += (Lt[i] @ M) @ Dg[i].T  # rows d, columns t
    r = np.array([R[c, m] for c, m in basis.terms])
    M2 = engine(sq, f2)[_product_index(hsp, sq)]
    load2 = float(np.einsum("iks,st,ikt->", Hc, M2, Hc))
    return r, load2


def _load_rule(basis: GalerkinBasis, target: Target, quad: QuadratureRule, weight: WeightSpec):
    """Same as _load_moments for an arbitrary callable target."""
    n, sp = basis.n, basis.space
    Dt = [sp.dmat(i).T for i in range(n)]
    comp = np.array([c for c, _ in basis.terms])
    mono = np.array([s for _, s in basis.terms])

    def f(X):
        L = target(X)
        w = weight(X)
        tr = np.einsum("nii->n", L)
        Lt = 2.0 * L - (2.0 / n) * tr[:, None, None] * np.eye(n)
        M = sp.monomials(X)
        grads = np.stack([M @ D for D in Dt], axis=1)  # (N, i, t)
        R = np.einsum("q,qid,qit->qdt", w, Lt, grads)
        return np.concatenate([R[:, comp, mono], (w * np.einsum("nik,nik->n", L, L))[:, None]], axis=1)

    vals = np.asarray(quad.integrate(f))
    if not np.all(np.isfinite(vals)):
        raise SolverError("non-finite load vector")
    return vals[:-1], float(vals[-1])


def tensor_target(H, cutoff: CutoffSpec | None = None) -> Target:
    """eta_delta H as a callable on node batches."""

    def target(X):
        n = X.shape[1]
        L = tensor_field_jets(H, n, X, order=0)[0]
        return L if cutoff is None else L * cutoff(X)[:, None, None]

    return target


def tensor_target_jets(H, cutoff: CutoffSpec | None, X: np.ndarray):
    """Values (N, n, n) and gradients (N, n, n, n) of eta_delta H."""
    n = X.shape[1]
    L, dL = tensor_field_jets(H, n, X, order=1)
    if cutoff is None:
        return L, dL
    e, de, _ = cutoff.jets(X)
    return L * e[:, None, None], dL * e[:, None, None, None] + L[..., None] * de[:, None, None, :]


# --- reports -----------------------------------------------------------------------------


@dataclass(frozen=True)
class SolveReport:
    solution: VectorFieldPoly
    coefficients: np.ndarray = field(repr=False)
    gram_condition: float
    kernel_dim_detected: int
    weak_residual: float
    strong_divergence_residual: float
    energy_bound_ratio: float
    load_norm: float
    basis_size: int
    degree: int
    radius: float | None
    quadrature_sigma: float
    eigenvalues: np.ndarray = field(repr=False)
    gram: np.ndarray = field(repr=False, default=None)
    decay_fit: dict = field(default_factory=dict)

    def diagnostics(self) -> dict:
        return {
            "degree": self.degree,
            "basis_size": self.basis_size,
            "radius": self.radius,
            "gram_condition": self.gram_condition,
            "kernel_dim_detected": self.kernel_dim_detected,
            "weak_residual": self.weak_residual,
            "strong_divergence_residual": self.strong_divergence_residual,
            "energy_bound_ratio": self.energy_bound_ratio,
            "load_norm": self.load_norm,
            "quadrature_sigma": self.quadrature_sigma,
            "decay_fit": {str(k): v for k, v in self.decay_fit.items()},
        }

    def to_json(self) -> dict:
        return {"diagnostics": self.diagnostics(), "solution": self.solution.to_json()}

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def moment_engine(basis: GalerkinBasis, quad: QuadratureRule | None = None, cutoff: CutoffSpec | None = None, level: int = 2):
    """Rule-based moments if ``quad`` is given, else the reduced 2-D engine."""
    if basis.radius is None and not WeightSpec(basis.n).gram_integrable(basis.degree):
        raise ValueError(
            f"degree {basis.degree} fields are not square integrable against the weight in n={basis.n}; "
            "pass a truncation radius"
        )
    if quad is not None:
        return RuleMoments(quad)
    breaks = () if cutoff is None else (cutoff.delta, 4.0 * cutoff.delta / 3.0, cutoff.support_radius, 2.0 * cutoff.delta)
    return ReducedMoments(basis.n, basis.radius, breaks, level)


def sample_points(basis: GalerkinBasis, count: int = 20, seed: int = 0) -> np.ndarray:
    """Deterministic interior sample for strong-residual checks."""
    rng = np.random.default_rng(seed)
    radii = [0.25, 0.5, 1.0, 2.0]
    if basis.radius is not None:
        radii = [r * basis.radius / 2.5 for r in radii]
    dirs = random_directions(basis.n, count, rng, hemisphere=True)
    dirs[:, -1] = np.maximum(dirs[:, -1], 0.05)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return np.concatenate([r * dirs for r in radii])


def strong_residual(V: VectorFieldPoly, H, cutoff: CutoffSpec | None, X: np.ndarray, target_jets=None) -> float:
    """Relative RMS of sum_k d_k[w (L - DV)_ik] / w at the points X."""
    n = X.shape[1]
    weight = WeightSpec(n)
    if target_jets is None:
        L, dL = tensor_target_jets(H, cutoff, X)
    else:
        L, dL = target_jets(X)
    _, dV, d2V = poly_field_jets(list(V.components), n, X, order=2)
    eye = np.eye(n)
    div = np.einsum("nkk->n", dV)
    S = np.einsum("nki->nik", dV) + dV - (2.0 / n) * div[:, None, None] * eye
    ddiv = np.einsum("nkkl->nl", d2V)
    dS = np.einsum("nkil->nikl", d2V) + d2V - (2.0 / n) * np.einsum("nl,ik->nikl", ddiv, eye)
    T, dT = L - S, dL - dS
    Y = np.array(X)
    Y[:, -1] += 1.0
    glog = -n * 2.0 * Y / weight.rho(X)[:, None]  # grad w / w
    res = np.einsum("nikk->ni", dT) + np.einsum("nk,nik->ni", glog, T)
    scale = np.sqrt(np.einsum("nikl,nikl->n", dL, dL) + np.einsum("nk,nk->n", glog, glog) * np.einsum("nik,nik->n", L, L))
    den = math.sqrt(float(np.sum(scale**2)))
    return math.sqrt(float(np.sum(res**2))) / den if den > 0 else math.sqrt(float(np.sum(res**2)))


def solve_system(
    H,
    delta: float | None,
    basis: GalerkinBasis,
    quad: QuadratureRule | None = None,
    *,
    target=None,
    target_jets=None,
    tol: float = DEFLATION_TOL,
    level: int = 2,
    gauge: bool = True,
) -> SolveReport:
    """Galerkin minimizer of || eta_delta H - DV ||_w over span(basis).

    ``target`` replaces H by a raw symmetric tensor, either nested
    PolyScalar entries or a callable on node batches; no Fermi validation
    happens then (manufactured solutions use this). ``delta=None`` means no
    cutoff. With ``gauge`` the kernel component is chosen to minimize
    int v_1^{2(n+2)/(n-2)} |V|^2.
    """
    n = basis.n
    weight = WeightSpec(n)
    cutoff = None if delta is None else CutoffSpec(delta)
    if target is None:
        if H is None:
            raise ValueError("need H or a raw target")
        if H.n != n:
            raise ValueError("dimension mismatch between H and basis")
        target = H
    engine = moment_engine(basis, quad, cutoff, level)
    mom = _moments(basis, engine, weight)
    G = assemble_gram(basis, _derivative_moments(basis, mom))
    if not np.all(np.isfinite(G)):
        raise SolverError("non-finite Gram matrix")
    if callable(target):
        if quad is None:
            raise ValueError("a callable target needs an explicit quadrature rule")
        r, load2 = _load_rule(basis, target, quad, weight)
    elif quad is not None:
        r, load2 = _load_rule(basis, tensor_target(target, cutoff), quad, weight)
    else:
        r, load2 = _load_moments(basis, target, engine, weight, cutoff)

    d = np.sqrt(np.clip(np.diag(G), 0, None))
    d = np.where(d > 0, d, 1.0)
    lam, U = scipy.linalg.eigh(G / np.outer(d, d))
    lmax = float(lam[-1])
    keep = lam > tol * lmax
    kernel_dim = int(np.count_nonzero(~keep))
    Uk = U[:, keep]
    c = (Uk @ ((Uk.T @ (r / d)) / lam[keep])) / d
    Mass = assemble_mass(basis, mom)
    if gauge and kernel_dim:
        K = U[:, ~keep] / d[:, None]
        KM = K.T @ Mass
        c = c - K @ np.linalg.solve(KM @ K, KM @ c)

    load_norm = math.sqrt(max(load2, 0.0))
    colnorm = np.sqrt(np.clip(np.diag(G), 1e-300, None))
    gap = np.abs(r - G @ c) / colnorm
    weak = float(gap.max()) / load_norm if load_norm > 0 else float(gap.max())
    V = basis.field_from_coefficients(c)
    ebr = float(c @ Mass @ c) / load2 if load2 > 0 else math.nan
    pts = sample_points(basis)
    if target_jets is not None:
        sres = strong_residual(V, None, None, pts, target_jets)
    elif not callable(target):
        sres = strong_residual(V, target, cutoff, pts)
    else:
        sres = math.nan
    cond = lmax / float(lam[keep][0]) if keep.any() else math.inf
    return SolveReport(
        solution=V,
        coefficients=c,
        gram_condition=cond,
        kernel_dim_detected=kernel_dim,
        weak_residual=weak,
        strong_divergence_residual=sres,
        energy_bound_ratio=ebr,
        load_norm=load_norm,
        basis_size=basis.size,
        degree=basis.degree,
        radius=basis.radius,
        quadrature_sigma=mom.sigma,
        eigenvalues=lam,
        gram=G,
    )


def gram_matrix(basis: GalerkinBasis, quad: QuadratureRule | None = None, level: int = 2) -> np.ndarray:
    weight = WeightSpec(basis.n)
    mom = _moments(basis, moment_engine(basis, quad, None, level), weight)
    return assemble_gram(basis, _derivative_moments(basis, mom))


def coercivity_estimate(basis: GalerkinBasis, quad: QuadratureRule | None = None, tol: float = DEFLATION_TOL, level: int = 2) -> dict:
    """Smallest deflated eigenvalue of G relative to the weighted H^1 Gram.

    The H^1 norm is int v^{2(n+2)/(n-2)}|V|^2 + int w |grad V|^2.
    """
    weight = WeightSpec(basis.n)
    mom = _moments(basis, moment_engine(basis, quad, None, level), weight)
    A = _derivative_moments(basis, mom)
    G = assemble_gram(basis, A)
    comp = np.array([c for c, _ in basis.terms])
    mono = np.array([s for _, s in basis.terms])
    lap = np.einsum("iist->st", A)
    H1 = assemble_mass(basis, mom) + (comp[:, None] == comp[None, :]) * lap[np.ix_(mono, mono)]
    d = np.sqrt(np.diag(H1))
    Gs, Hs = G / np.outer(d, d), H1 / np.outer(d, d)
    g = np.sqrt(np.clip(np.diag(G), 0, None))
    g = np.where(g > 0, g, 1.0)  # translations have DV = 0
    lam_raw = scipy.linalg.eigvalsh(G / np.outer(g, g))
    lam = scipy.linalg.eigvalsh(Gs, Hs)
    keep = lam > tol * lam[-1]
    kern = np.abs(lam[~keep])
    return {
        "min_eig_deflated": float(lam[keep][0]) if keep.any() else 0.0,
        "min_eig_undeflated": float(lam_raw[0]),
        "max_eig": float(lam[-1]),
        "kernel_dim": int(np.count_nonzero(~keep)),
        "spectral_gap": float(lam[keep][0] / max(kern.max(), 1e-300)) if kern.size and keep.any() else math.inf,
    }


# --- decay ---------------------------------------------------------------------------------


def decay_diagnostics(report: SolveReport, radii: Sequence[float], H=None, directions: int = 400, seed: int = 0) -> dict:
    """Fit log max_{|x|=r} |d^beta V| against log(1+r) for |beta| = 0, 1, 2."""
    radii = np.asarray(sorted(radii), dtype=float)
    if report.radius is not None and radii[-1] > report.radius:
        raise ValueError("radii outside the quadrature support")
    V = report.solution
    n = V.n
    dirs = random_directions(n, directions, np.random.default_rng(seed), hemisphere=True)
    top = max(H.by_order()) if H is not None and not H.is_zero() else 2
    out = {}
    for order in (0, 1, 2):
        peaks = []
        for r in radii:
            jets = poly_field_jets(list(V.components), n, r * dirs, order=order)
            peaks.append(float(np.abs(jets[order]).max()))
        peaks = np.array(peaks)
        predicted = top + 1 - order
        if not np.any(peaks > 0):
            out[order] = {"exponent": math.nan, "defined": False, "violations": 0, "predicted": predicted}
            continue
        x = np.log1p(radii)
        y = np.log(np.maximum(peaks, 1e-300))
        slope = float(np.polyfit(x, y, 1)[0])
        ratio = peaks / (1 + radii) ** predicted
        half = max(1, len(radii) // 2)
        C = float(ratio[:half].max())
        out[order] = {
            "exponent": slope,
            "defined": True,
            "constant": C,
            "violations": int(np.count_nonzero(ratio > 2.0 * C)),
            "predicted": predicted,
        }
    return out


# --- scaled solutions ------------------------------------------------------------------------


def solve_scaled(
    H,
    eps: float,
    delta: float,
    degree: int = 3,
    quad: QuadratureRule | None = None,
    radius: float | None = None,
    **kw,
) -> tuple[VectorFieldPoly, list[SolveReport]]:
    """Solution of the eps-bubble system in x coordinates.

    With x = eps y and H_l homogeneous of degree l, V(x) = eps^{l+1} W_l(x/eps)
    where W_l solves the eps = 1 system with cutoff radius delta/eps.
    """
    n = H.n
    basis = build_basis(Dim(n), degree, radius)
    V = VectorFieldPoly.zero(n)
    reports = []
    for l in sorted(H.by_order()):
        rep = solve_system(H.homogeneous_part(l), delta / eps, basis, quad, **kw)
        reports.append(rep)
        V = V + rep.solution.rescaled(eps, l + 1)
    return V, reports
