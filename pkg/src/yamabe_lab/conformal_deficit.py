"""Conformal Killing deficit calculus around the half-space bubble.

For a vector field V and a trace-free symmetric tensor H:

    S = DV = dV + dV^T - (2/n) div V,   T = H - S,
    psi = dv . V + (n-2)/(2n) v div V,

plus the tensor P and the divergence field xi. All quantities are evaluated
on batches of points; derivatives of composite expressions use the
forward-mode :class:`Dual` so that div xi is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model_bubble import bubble_jets
from .tensor_core import Dim, MonomialSpace, PolyScalar

# --- forward-mode duals ------------------------------------------------------------


class Dual:
    """Array value with its spatial gradient in a trailing axis."""

    __slots__ = ("val", "der")

    def __init__(self, val, der):
        self.val = np.asarray(val, dtype=float)
        self.der = np.asarray(der, dtype=float)

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.der + other.der)
        return Dual(self.val + other, self.der)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, -self.der)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val, self.der * other.val[..., None] + self.val[..., None] * other.der)
        other = np.asarray(other, dtype=float)
        return Dual(self.val * other, self.der * other[..., None] if other.ndim else self.der * other)

    __rmul__ = __mul__

    def __pow__(self, p: float):
        return Dual(self.val**p, (p * self.val ** (p - 1))[..., None] * self.der)

    def __getitem__(self, idx):
        # indexes value axes only
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Dual(self.val[idx], self.der[idx + (slice(None),)])


def ein(spec: str, *ops) -> Dual:
    """einsum with the product rule; operands may be Duals or constant arrays."""
    lhs, out = spec.split("->")
    subs = lhs.split(",")
    vals = [o.val if isinstance(o, Dual) else np.asarray(o) for o in ops]
    val = np.einsum(spec, *vals, optimize=True)
    der = 0.0
    for j, o in enumerate(ops):
        if not isinstance(o, Dual):
            continue
        s = list(subs)
        s[j] = s[j] + "Z"
        args = list(vals)
        args[j] = o.der
        der = der + np.einsum(",".join(s) + "->" + out + "Z", *args, optimize=True)
    if isinstance(der, float):
        raise TypeError("ein needs at least one Dual operand")
    return Dual(val, der)


# --- vector fields -----------------------------------------------------------------


@dataclass(frozen=True)
class VectorFieldPoly:
    """Polynomial vector field V = (V_1, ..., V_n)."""

    components: tuple[PolyScalar, ...]
    dim: Dim
    boundary_flags: dict = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.components) != self.dim.n:
            raise ValueError("need one component per coordinate")
        n = self.dim.n
        tangent = self.components[n - 1].restrict(n - 1).is_zero()
        neumann = all(self.components[a].partial(n - 1).restrict(n - 1).is_zero() for a in range(n - 1))
        object.__setattr__(self, "boundary_flags", {"tangential": tangent, "neumann": neumann})

    @property
    def n(self) -> int:
        return self.dim.n

    @property
    def degree(self) -> int:
        return max(c.degree for c in self.components)

    @classmethod
    def zero(cls, n: int) -> "VectorFieldPoly":
        return cls(tuple(PolyScalar.zero(n) for _ in range(n)), Dim(n))

    @classmethod
    def from_arrays(cls, space: MonomialSpace, coeffs: np.ndarray) -> "VectorFieldPoly":
        return cls(tuple(space.to_poly(c) for c in coeffs), Dim(space.n))

    def __add__(self, other: "VectorFieldPoly") -> "VectorFieldPoly":
        return VectorFieldPoly(tuple(a + b for a, b in zip(self.components, other.components)), self.dim)

    def __mul__(self, s: float) -> "VectorFieldPoly":
        return VectorFieldPoly(tuple(c * s for c in self.components), self.dim)

    __rmul__ = __mul__

    def satisfies_boundary_conditions(self) -> bool:
        return self.boundary_flags["tangential"] and self.boundary_flags["neumann"]

    def rescaled(self, eps: float, power: float) -> "VectorFieldPoly":
        """x -> eps^power * V(x / eps), still a polynomial."""
        comps = []
        for c in self.components:
            comps.append(PolyScalar(self.n, {a: v * eps ** (power - sum(a)) for a, v in c.terms.items()}))
        return VectorFieldPoly(tuple(comps), self.dim)

    def to_json(self) -> dict:
        return {"n": self.n, "components": [c.to_dict() for c in self.components]}

    @classmethod
    def from_json(cls, doc: dict) -> "VectorFieldPoly":
        n = int(doc["n"])
        comps = [PolyScalar(n, {tuple(t["alpha"]): t["value"] for t in c}) for c in doc["components"]]
        return cls(tuple(comps), Dim(n))


def conformal_killing_fields(n: int) -> dict[str, list[VectorFieldPoly]]:
    """Translations, rotations, dilation and special conformal fields on R^n."""
    dim = Dim(n)
    x = [PolyScalar.coordinate(n, j) for j in range(n)]
    zero = PolyScalar.zero(n)
    one = PolyScalar.constant(n, 1.0)
    r2 = sum((xi * xi for xi in x), zero)

    def vf(comps):
        return VectorFieldPoly(tuple(comps), dim)

    translations = [vf([one if j == i else zero for j in range(n)]) for i in range(n)]
    rotations = []
    for i in range(n):
        for k in range(i + 1, n):
            comps = [zero] * n
            comps[i] = x[k]
            comps[k] = -x[i]
            rotations.append(vf(comps))
    dilation = [vf(list(x))]
    special = []
    for b in range(n):
        special.append(vf([2.0 * x[j] * x[b] - (r2 if j == b else zero) for j in range(n)]))
    return {"translations": translations, "rotations": rotations, "dilation": dilation, "special_conformal": special}


def killing_image(V: VectorFieldPoly) -> list[list[PolyScalar]]:
    """S = DV as exact polynomials."""
    n = V.n
    div = sum((V.components[i].partial(i) for i in range(n)), PolyScalar.zero(n))
    return [
        [V.components[k].partial(i) + V.components[i].partial(k) - (div * (2.0 / n) if i == k else 0.0) for k in range(n)]
        for i in range(n)
    ]


# --- jets of the ingredients --------------------------------------------------------


def poly_field_jets(polys: Sequence[PolyScalar], n: int, X: np.ndarray, order: int = 3):
    space = MonomialSpace.for_polys(polys, n)
    return space.jets(space.coefficients(polys), X, order=order)


def _tensor_entries(H) -> list[list[PolyScalar]]:
    return [list(row) for row in (H.entries if hasattr(H, "entries") else H)]


def tensor_field_jets(H, n: int, X: np.ndarray, order: int = 3):
    """Jets of a 2-tensor of polynomials: shapes (N, n, n, [n, [n, [n]]])."""
    ent = _tensor_entries(H)
    flat = [ent[i][k] for i in range(n) for k in range(n)]
    jets = poly_field_jets(flat, n, X, order)
    return tuple(j.reshape((j.shape[0], n, n) + j.shape[2:]) for j in jets)


@dataclass
class DeficitFields:
    """Duals of every ingredient at a batch of points."""

    n: int
    v: Dual
    dv: Dual
    d2v: np.ndarray
    H: Dual
    dH: Dual
    d2H: np.ndarray
    V: Dual
    dV: Dual
    S: Dual
    dS: Dual
    T: Dual
    dT: Dual
    psi: Dual
    dpsi: Dual
    divV: Dual

    def P(self) -> np.ndarray:
        """P[n, i, k, l] = P_{ik,l}."""
        n = self.n
        c = 2.0 / (n - 2)
        v, dv, T, dT = self.v.val, self.dv.val, self.T.val, self.dT.val
        eye = np.eye(n)
        dvT = np.einsum("np,nip->ni", dv, T)
        P = v[:, None, None, None] * dT
        P = P - c * np.einsum("ni,nkl->nikl", dv, T) - c * np.einsum("nk,nil->nikl", dv, T)
        P = P + c * np.einsum("ni,kl->nikl", dvT, eye) + c * np.einsum("nk,il->nikl", dvT, eye)
        return P

    def strong_residual(self) -> np.ndarray:
        """sum_k (v d_k T_ik + 2n/(n-2) d_k v T_ik), shape (N, n)."""
        n = self.n
        return self.v.val[:, None] * np.einsum("nikk->ni", self.dT.val) + (2.0 * n / (n - 2)) * np.einsum(
            "nk,nik->ni", self.dv.val, self.T.val
        )

    def xi(self) -> Dual:
        n = self.n
        c = 2.0 / (n - 2)
        q = 4.0 * (n - 1) / (n - 2)
        v, dv, psi, dpsi = self.v, self.dv, self.psi, self.dpsi
        H, dH, S, dS, T = self.H, self.dH, self.S, self.dS, self.T
        vpsi = v * psi
        d_vpsi = ein("nk,n->nk", dv, psi) + ein("n,nk->nk", v, dpsi)
        v2 = v * v
        xi = (
            2.0 * ein("n,nikk->ni", vpsi, dH)
            - 2.0 * ein("n,nk,nik->ni", v, dpsi, H)
            - 2.0 * ein("nk,n,nik->ni", dv, psi, H)
            - ein("n,nikk->ni", vpsi, dS)
            + ein("nk,nik->ni", d_vpsi, S)
        )
        xi = xi + (
            2.0 * ein("n,nl,nkl,nki->ni", v, dv, S, H)
            - 0.5 * ein("n,nlki,nlk->ni", v2, dS, H)
            + ein("n,nkll,nki->ni", v2, dS, H)
            + 0.25 * ein("n,nlki,nlk->ni", v2, dS, S)
            - 0.5 * ein("n,nlkk,nil->ni", v2, dS, S)
        )
        xi = xi + (
            -1.0 * ein("n,nk,nlk,nil->ni", v, dv, S, S)
            - c * ein("n,nk,nlk,nli->ni", v, dv, T, T)
        )
        xi = xi + q * (ein("n,ni->ni", psi, dpsi) - ein("nk,n,nik->ni", dv, psi, S))
        return xi


def _as_dual_pair(jets, k):
    return Dual(jets[k], jets[k + 1])


def deficit_fields(eps: float, H, V: VectorFieldPoly, X: np.ndarray, check_domain: bool = True) -> DeficitFields:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[1]
    if V.n != n or len(_tensor_entries(H)) != n:
        raise ValueError("dimension mismatch between point, H and V")
    vj = bubble_jets(eps, n, X, order=3, check_domain=check_domain)
    hj = tensor_field_jets(H, n, X, order=3)
    Vj = poly_field_jets(list(V.components), n, X, order=3)
    v, dv, d2v = Dual(vj[0], vj[1]), Dual(vj[1], vj[2]), Dual(vj[2], vj[3])
    Hd, dH = Dual(hj[0], hj[1]), Dual(hj[1], hj[2])
    Vd, dV, d2V = Dual(Vj[0], Vj[1]), Dual(Vj[1], Vj[2]), Dual(Vj[2], Vj[3])
    eye = np.eye(n)
    divV = ein("nkk->n", dV)
    S = ein("nki->nik", dV) + ein("nik->nik", dV) - (2.0 / n) * ein("n,ik->nik", divV, eye)
    ddiv = ein("nkkl->nl", d2V)
    dS = ein("nkil->nikl", d2V) + ein("nikl->nikl", d2V) - (2.0 / n) * ein("nl,ik->nikl", ddiv, eye)
    T = Hd - S
    dT = dH - dS
    a = (n - 2) / (2.0 * n)
    psi = ein("nl,nl->n", dv, Vd) + a * (v * divV)
    dpsi = ein("nlj,nl->nj", d2v, Vd) + ein("nl,nlj->nj", dv, dV) + a * (ein("nj,n->nj", dv, divV) + ein("n,nj->nj", v, ddiv))
    return DeficitFields(n, v, dv, vj[2], Hd, dH, hj[2], Vd, dV, S, dS, T, dT, psi, dpsi, divV)


@dataclass(frozen=True)
class DeficitBundle:
    """S, T, P, psi and xi (with first derivatives) at one point."""

    x: np.ndarray
    S: np.ndarray
    T: np.ndarray
    dS: np.ndarray
    dT: np.ndarray
    P: np.ndarray
    psi: float
    dpsi: np.ndarray
    xi: np.ndarray
    div_xi: float


def deficit_bundle(eps: float, H, V: VectorFieldPoly, x) -> DeficitBundle:
    x = np.asarray(x, dtype=float)
    if x[-1] < 0:
        raise ValueError("point must lie in the closed half-space")
    f = deficit_fields(eps, H, V, x[None, :])
    xi = f.xi()
    return DeficitBundle(
        x=x,
        S=f.S.val[0],
        T=f.T.val[0],
        dS=f.dS.val[0],
        dT=f.dT.val[0],
        P=f.P()[0],
        psi=float(f.psi.val[0]),
        dpsi=f.dpsi.val[0],
        xi=xi.val[0],
        div_xi=float(np.trace(xi.der[0])),
    )


# --- identity residuals --------------------------------------------------------------


def _relative(diff: np.ndarray, terms: Sequence[np.ndarray]) -> np.ndarray:
    scale = np.max(np.abs(np.stack([np.broadcast_to(t, diff.shape) for t in terms])), axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(scale > 0, np.abs(diff) / np.where(scale > 0, scale, 1.0), 0.0)


def interior_identity_arrays(eps: float, H, V: VectorFieldPoly, X: np.ndarray, div_xi: np.ndarray | None = None):
    """Relative residuals of the psi Laplacian formula and the second-variation identity.

    ``div_xi`` may be supplied (e.g. from finite differences) to replace the
    exact divergence.
    """
    f = deficit_fields(eps, H, V, X)
    n = f.n
    v, dv = f.v.val, f.dv.val
    H0, dH, d2H = f.H.val, f.dH.val, f.d2H
    # Laplacian of psi: trace of the derivative of dpsi
    lap_psi = np.einsum("njj->n", f.dpsi.der)
    c1 = (n - 2) / (4.0 * (n - 1))
    t1 = c1 * v * np.einsum("nikik->n", f.dS.der)  # d_i d_k S_ik
    dvS = ein("ni,nik->nk", f.dv, f.S)
    t2 = np.einsum("nkk->n", dvS.der)
    delta_psi = _relative(lap_psi - t1 - t2, [lap_psi, t1, t2])

    P = f.P()
    lhs1 = 0.25 * np.einsum("nikl,nikl->n", P, P)
    sr = f.strong_residual()
    lhs2 = -0.5 * np.einsum("ni,ni->n", sr, sr)
    q = (n - 1) / (n - 2)
    psi, dpsi = f.psi.val, f.dpsi.val
    r = [
        0.25 * v**2 * np.einsum("nikl,nikl->n", dH, dH),
        -0.5 * v**2 * np.einsum("nikk,nill->n", dH, dH),
        -2.0 * v * np.einsum("nk,nik,nill->n", dv, H0, dH),
        -2.0 * q * np.einsum("nk,nl,nik,nil->n", dv, dv, H0, H0),
        -2.0 * v * psi * np.einsum("nikik->n", d2H),
        8.0 * q * np.einsum("ni,nk,nik->n", dv, dpsi, H0),
        -4.0 * q * np.einsum("ni,ni->n", dpsi, dpsi),
    ]
    if div_xi is None:
        div_xi = np.einsum("nii->n", f.xi().der)
    rhs = sum(r) + div_xi
    second = _relative(lhs1 + lhs2 - rhs, [lhs1, lhs2, div_xi] + r)
    return {"delta_psi": delta_psi, "second_variation": second}


def interior_identity_residuals(eps: float, H, V: VectorFieldPoly, x) -> dict[str, float]:
    x = np.asarray(x, dtype=float)
    if x[-1] <= 0:
        raise ValueError("interior identities need x_n > 0")
    out = interior_identity_arrays(eps, H, V, x[None, :])
    return {k: float(v[0]) for k, v in out.items()}


def finite_difference_div_xi(eps: float, H, V: VectorFieldPoly, X: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference divergence of xi, the independent cross-check."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[1]
    out = np.zeros(len(X))
    for i in range(n):
        e = np.zeros(n)
        e[i] = step
        hi = deficit_fields(eps, H, V, X + e).xi().val[:, i]
        lo = deficit_fields(eps, H, V, X - e).xi().val[:, i]
        out += (hi - lo) / (2 * step)
    return out


def boundary_identity_arrays(eps: float, H, V: VectorFieldPoly, X: np.ndarray) -> dict[str, np.ndarray]:
    """Absolute and relative residuals of the boundary relations at x_n = 0."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if np.any(X[:, -1] != 0):
        raise ValueError("boundary identities are evaluated on x_n = 0")
    f = deficit_fields(eps, H, V, X)
    n = f.n
    v, dvn = f.v.val, f.dv.val[:, -1]
    S, dS = f.S.val, f.dS.val
    Snn = S[:, -1, -1]
    vp = v ** (2.0 / (n - 2))
    out = {}
    s_an = np.abs(S[:, -1, :-1]).max(axis=1)
    out["s_an"] = (s_an, _relative(s_an, [np.abs(S).max(axis=(1, 2))]))
    a = dS[:, -1, -1, -1]
    b = 2.0 * n * vp * Snn
    out["dn_snn"] = (np.abs(a - b), _relative(a - b, [a, b]))
    a = dS[:, :-1, :-1, -1]
    b = -(2.0 * n / (n - 1)) * (vp * Snn)[:, None, None] * np.eye(n - 1)
    diff = np.abs(a - b).max(axis=(1, 2))
    out["dn_sab"] = (diff, _relative(diff, [np.abs(a).max(axis=(1, 2)), np.abs(b).max(axis=(1, 2))]))
    psi, dpsin = f.psi.val, f.dpsi.val[:, -1]
    t1 = -dvn * Snn / (2.0 * (n - 1))
    t2 = (n / (n - 2)) * dvn * psi / v
    out["dn_psi"] = (np.abs(dpsin - t1 - t2), _relative(dpsin - t1 - t2, [dpsin, t1, t2]))
    xin = f.xi().val[:, -1]
    t1 = -((n + 2) / (2.0 * (n - 2))) * v * dvn * Snn**2
    t2 = (4.0 * n * (n - 1) / (n - 2) ** 2) * dvn * psi**2 / v
    out["xi_n"] = (np.abs(xin - t1 - t2), _relative(xin - t1 - t2, [xin, t1, t2]))
    return out


def boundary_identity_residuals(eps: float, H, V: VectorFieldPoly, x) -> dict[str, float]:
    x = np.asarray(x, dtype=float)
    if x[-1] != 0:
        raise ValueError("boundary identities are evaluated on x_n = 0")
    out = boundary_identity_arrays(eps, H, V, x[None, :])
    return {k: float(rel[0]) for k, (_, rel) in out.items()}


# --- P lower bound --------------------------------------------------------------------


def weighted_radial_mass(eps: float, delta: float, n: int, order: int) -> float:
    """eps^{n-2} int_{B_delta, x_n>0} (eps+|x|)^{2|alpha|+2-2n} dx."""
    from scipy.integrate import quad

    m = 2 * order + 2 - 2 * n
    half_sphere = math.pi ** (n / 2) / math.gamma(n / 2)  # |S^{n-1}| / 2
    pts = [eps * 2.0**k for k in range(0, 60) if eps * 2.0**k < delta]
    val, _ = quad(lambda r: (eps + r) ** m * r ** (n - 1), 0.0, delta, points=pts or None, limit=400, epsabs=0, epsrel=1e-13)
    return eps ** (n - 2) * half_sphere * val


def p_tensor_lower_bound(eps: float, delta: float, H, V: VectorFieldPoly, quad) -> dict:
    """lhs = sum |h_{ik,alpha}|^2 eps^{n-2} int (eps+|x|)^{2|alpha|+2-2n}, rhs = int |P|^2."""
    if not delta >= 2 * eps > 0:
        raise ValueError("need delta >= 2 eps > 0")
    n = H.n
    lhs = sum(w * weighted_radial_mass(eps, delta, n, l) for l, w in H.by_order().items())

    def integrand(X):
        P = deficit_fields(eps, H, V, X).P()
        return np.einsum("nikl,nikl->n", P, P)

    # third-order tensor jets are wide, so keep batches small
    rhs = quad.integrate(integrand, max_nodes=4000)
    if not np.isfinite(rhs):
        raise FloatingPointError("non-finite |P|^2 integral")
    degenerate = lhs == 0.0 or rhs == 0.0
    return {"lhs": lhs, "rhs": rhs, "ratio": math.nan if degenerate else lhs / rhs, "degenerate": degenerate}
