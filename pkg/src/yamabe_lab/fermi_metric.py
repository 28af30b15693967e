"""Admissible conformal-Fermi data H, the metric g = exp(H) and its curvature.

Coefficient indices (i, k) are 1-based in the public API and in JSON, so
that k = n is the normal direction.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numba
import numpy as np
import scipy.linalg

from .tensor_core import Dim, MonomialSpace, PolyScalar, multi_indices, poly_trace, zero_tensor

CONSTRAINT_TOL = 1e-14


class FermiConstraintError(ValueError):
    """Base class for rejected Fermi-coordinate data."""


class SymmetryError(FermiConstraintError):
    pass


class TraceError(FermiConstraintError):
    pass


class NormalComponentError(FermiConstraintError):
    pass


class BoundaryConstraintError(FermiConstraintError):
    pass


class DegreeError(FermiConstraintError):
    pass


@dataclass(frozen=True)
class FermiTensor:
    entries: tuple[tuple[PolyScalar, ...], ...]
    dim: Dim
    coeff_index: tuple[tuple[int, int, tuple[int, ...], float], ...]

    @property
    def n(self) -> int:
        return self.dim.n

    def is_zero(self) -> bool:
        return not self.coeff_index

    def coefficient_norms(self) -> dict[str, float]:
        """Sums over (i, k, alpha), each unordered pair counted in both orders."""
        vals = [c for _, _, _, c in self.coeff_index]
        return {"l1": float(sum(abs(c) for c in vals)), "l2sq": float(sum(c * c for c in vals))}

    def by_order(self) -> dict[int, float]:
        """sum_{i,k} sum_{|alpha| = l} |h_{ik,alpha}|^2 for each order l."""
        out: dict[int, float] = {}
        for _, _, a, c in self.coeff_index:
            out[sum(a)] = out.get(sum(a), 0.0) + c * c
        return out

    def homogeneous_part(self, l: int) -> "FermiTensor":
        return make_fermi_tensor(self.dim, [(i, k, a, c) for i, k, a, c in self.coeff_index if sum(a) == l and i <= k])

    def scaled(self, s: float) -> "FermiTensor":
        return make_fermi_tensor(self.dim, [(i, k, a, s * c) for i, k, a, c in self.coeff_index if i <= k])

    def to_json(self) -> dict:
        coeffs = [
            {"i": i, "k": k, "alpha": list(a), "value": c} for i, k, a, c in self.coeff_index if i <= k
        ]
        return {"n": self.n, "coeffs": coeffs}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def _entries_from_coeffs(n: int, coeffs: Iterable) -> list[list[PolyScalar]]:
    given: dict[tuple[int, int], dict[tuple[int, ...], float]] = {}
    for item in coeffs:
        if isinstance(item, dict):
            i, k, alpha, value = item["i"], item["k"], item["alpha"], item["value"]
        else:
            i, k, alpha, value = item
        i, k = int(i), int(k)
        alpha = tuple(int(a) for a in alpha)
        if not (1 <= i <= n and 1 <= k <= n) or len(alpha) != n:
            raise ValueError(f"bad coefficient entry {(i, k, alpha)} for n={n}")
        slot = given.setdefault((i, k), {})
        slot[alpha] = slot.get(alpha, 0.0) + float(value)
    ent = zero_tensor(n)
    for (i, k), terms in given.items():
        p = PolyScalar(n, terms)
        if (k, i) in given and i != k:
            other = PolyScalar(n, given[(k, i)])
            if not p == other:
                raise SymmetryError(f"H_{i}{k} and H_{k}{i} differ")
        ent[i - 1][k - 1] = p
        ent[k - 1][i - 1] = p
    return ent


def check_fermi_constraints(ent: Sequence[Sequence[PolyScalar]], dim: Dim) -> None:
    """Raise the specific FermiConstraintError subclass for the first violation."""
    n = dim.n
    for i in range(n):
        for k in range(i + 1, n):
            if not ent[i][k] == ent[k][i]:
                raise SymmetryError(f"H_{i + 1}{k + 1} != H_{k + 1}{i + 1}")
    for i in range(n):
        if not ent[i][n - 1].is_zero(CONSTRAINT_TOL):
            raise NormalComponentError(f"H_{i + 1}{n} must vanish identically")
    if not poly_trace(ent).is_zero(CONSTRAINT_TOL):
        raise TraceError("tr H must vanish identically")
    for i in range(n):
        for k in range(n):
            for a in ent[i][k].terms:
                if not 2 <= sum(a) <= dim.d:
                    raise DegreeError(f"H_{i + 1}{k + 1} has a monomial of order {sum(a)} outside [2, {dim.d}]")
    xs = [PolyScalar.coordinate(n, j) for j in range(n)]
    for a in range(n - 1):
        for b in range(n - 1):
            if not ent[a][b].partial(n - 1).restrict(n - 1).is_zero(CONSTRAINT_TOL):
                raise BoundaryConstraintError(f"d_n H_{a + 1}{b + 1} does not vanish on x_n = 0")
        contraction = PolyScalar.zero(n)
        for i in range(n):
            contraction = contraction + ent[a][i] * xs[i]
        if not contraction.restrict(n - 1).is_zero(CONSTRAINT_TOL):
            raise BoundaryConstraintError(f"sum_i H_{a + 1}i x_i does not vanish on x_n = 0")


def make_fermi_tensor(dim: Dim | int, coeffs: Iterable = ()) -> FermiTensor:
    """Validated FermiTensor from (i, k, alpha, value) entries (1-based i, k).

    An off-diagonal entry given once is mirrored; if both orders are given
    they must agree.
    """
    dim = dim if isinstance(dim, Dim) else Dim(int(dim))
    n = dim.n
    ent = _entries_from_coeffs(n, coeffs)
    check_fermi_constraints(ent, dim)
    index = []
    for i in range(n):
        for k in range(n):
            for a, c in ent[i][k].terms.items():
                index.append((i + 1, k + 1, a, c))
    return FermiTensor(tuple(tuple(row) for row in ent), dim, tuple(index))


def fermi_from_json(doc: dict | str) -> FermiTensor:
    if isinstance(doc, str):
        doc = json.loads(doc)
    return make_fermi_tensor(Dim(int(doc["n"])), doc.get("coeffs", []))


def xn2_example(n: int = 6, scale: float = 1.0) -> FermiTensor:
    """H_11 = x_n^2, H_22 = -x_n^2, all other entries zero."""
    a = tuple(2 if j == n - 1 else 0 for j in range(n))
    return make_fermi_tensor(Dim(n), [(1, 1, a, scale), (2, 2, a, -scale)])


@lru_cache(maxsize=None)
def _admissible_system(n: int):
    """Parameters (a, b, alpha), constraint matrix and null-space basis rows."""
    d = Dim(n).d
    alphas = multi_indices(n, d, 2)
    slots = [(a, b) for a in range(n - 1) for b in range(a, n - 1)]
    params = [(a, b, al) for a, b in slots for al in alphas]
    if not params:
        return params, np.zeros((0, 0)), np.zeros((0, 0))
    rows: dict[tuple, np.ndarray] = {}

    def add(key, j, c):
        rows.setdefault(key, np.zeros(len(params)))[j] += c

    for j, (a, b, al) in enumerate(params):
        if a == b:
            add(("tr", al), j, 1.0)
        # d_n H_ab restricted to x_n = 0: only alpha_n == 1 survives
        if al[n - 1] == 1:
            bl = list(al)
            bl[n - 1] = 0
            add(("dn", min(a, b), max(a, b), tuple(bl)), j, 1.0)
        # sum_i H_ai x_i restricted to x_n = 0
        if al[n - 1] == 0:
            for row, col in ((a, b), (b, a)) if a != b else ((a, b),):
                bl = list(al)
                bl[col] += 1
                add(("contr", row, tuple(bl)), j, 1.0)
    A = np.array(list(rows.values()))
    # constraints never mix parameters with different (alpha_n, |alpha|): null space per block
    blocks: dict[tuple[int, int], list[int]] = {}
    for j, (_, _, al) in enumerate(params):
        blocks.setdefault((al[n - 1], sum(al)), []).append(j)
    null_rows = []
    for cols in blocks.values():
        sub = A[:, cols]
        sub = sub[np.any(sub != 0, axis=1)]
        if len(sub):
            # gesvd converges reliably on these 0/1 matrices
            _, sv, vt = scipy.linalg.svd(sub, lapack_driver="gesvd")
            rank = int(np.sum(sv > 1e-10 * sv.max()))
            ns = _refine(sub, vt[rank:].T).T
        else:
            ns = np.eye(len(cols))
        for v in ns:
            full = np.zeros(len(params))
            full[cols] = v
            null_rows.append(full)
    return params, A, np.array(null_rows)


def _tensor_from_params(dim: Dim, params, vec) -> FermiTensor:
    coeffs = [(a + 1, b + 1, al, c) for (a, b, al), c in zip(params, vec) if c != 0.0]
    return make_fermi_tensor(dim, coeffs)


def _refine(A: np.ndarray, vec: np.ndarray) -> np.ndarray:
    # push near-admissible parameter vectors (columns) back onto the null space
    for _ in range(2):
        vec = vec - np.linalg.lstsq(A, A @ vec, rcond=None)[0]
    vec[np.abs(vec) < 1e-15] = 0.0
    return vec


def admissible_basis(dim: Dim) -> list[FermiTensor]:
    """Orthonormal basis (in coefficient space) of admissible H."""
    params, A, null = _admissible_system(dim.n)
    return [_tensor_from_params(dim, params, v) for v in null]


def admissible_dimension(dim: Dim) -> int:
    return len(_admissible_system(dim.n)[2])


def random_admissible(dim: Dim, rng: np.random.Generator, scale: float = 1.0) -> FermiTensor:
    params, A, null = _admissible_system(dim.n)
    if not len(null):
        return make_fermi_tensor(dim)
    vec = null.T @ (rng.standard_normal(len(null)) * scale)
    return _tensor_from_params(dim, params, vec)


# --- metric jets -----------------------------------------------------------------


@dataclass(frozen=True)
class MetricJet:
    g: np.ndarray
    ginv: np.ndarray
    det: float | np.ndarray
    dg: np.ndarray  # dg[..., c, a, b] = d_c g_ab
    d2g: np.ndarray  # d2g[..., c, e, a, b] = d_c d_e g_ab


def tensor_jets(H: FermiTensor | Sequence[Sequence[PolyScalar]], X: np.ndarray, order: int = 2):
    """Value/derivative arrays of a symmetric polynomial tensor at points X.

    Returns (T, dT, d2T) with shapes (N, n, n), (N, c, n, n), (N, c, e, n, n).
    """
    vals, pairs, derivs = _compact_jets(H, X, order)
    n = len(H.entries if isinstance(H, FermiTensor) else H)
    rows = np.array([i for i, _ in pairs])
    cols = np.array([k for _, k in pairs])
    N = vals.shape[0]

    def fill(block, shape):
        T = np.zeros((N,) + shape + (n, n))
        T[..., rows, cols] = block
        T[..., cols, rows] = block
        return T

    out = [fill(vals[:, 0], ())]
    if order >= 1:
        out.append(fill(vals[:, 1 : n + 1], (n,)))
    if order >= 2:
        d2 = np.zeros((N, n, n, len(pairs)))
        for m, (c, e) in enumerate(derivs[n + 1 :]):
            d2[:, c, e] = vals[:, n + 1 + m]
            d2[:, e, c] = vals[:, n + 1 + m]
        out.append(fill(d2, (n, n)))
    return tuple(out)


def _compact_jets(H, X, order: int = 2):
    """Derivatives of the upper-triangular entries: (N, n_derivs, n_pairs)."""
    ent = H.entries if isinstance(H, FermiTensor) else H
    n = len(ent)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    pairs = [(i, k) for i in range(n) for k in range(i, n)]
    polys = [ent[i][k] for i, k in pairs]
    space = MonomialSpace.for_polys(polys, n)
    C = space.coefficients(polys)
    # every derivative multi-index up to `order`, stacked into one product
    derivs = [()] + [(c,) for c in range(n)] * (order >= 1)
    if order >= 2:
        derivs += [(c, e) for c in range(n) for e in range(c, n)]
    mats = []
    for dv in derivs:
        Cd = C
        for j in dv:
            Cd = Cd @ space.dmat(j)
        mats.append(Cd)
    vals = space.monomials(X) @ np.concatenate(mats).T  # (N, len(derivs) * len(pairs))
    return vals.reshape(len(X), len(derivs), len(pairs)), pairs, derivs


def _h_sym(x: np.ndarray, y: np.ndarray, z: np.ndarray, k: int) -> np.ndarray:
    """Complete homogeneous symmetric polynomial h_k(x, y, z)."""
    out = np.zeros_like(x)
    for i in range(k + 1):
        for j in range(k + 1 - i):
            out = out + x**i * y**j * z ** (k - i - j)
    return out


SERIES_SPREAD = 1e-3
CHUNK = 4096


def exp_divided_differences(lam: np.ndarray):
    """First and second divided differences of exp at eigenvalues lam (N, n).

    F1[a, b] = exp[l_a, l_b], F2[a, k, b] = exp[l_a, l_k, l_b]. Clustered
    triples use the series sum_j h_j / (j + 2)! about their mean.
    """
    a = lam[:, :, None]
    z = lam[:, None, :] - a
    safe = np.where(z == 0, 1.0, z)
    F1 = np.exp(a) * np.where(z == 0, 1.0, np.expm1(z) / safe)
    shape = (lam.shape[0],) + (lam.shape[1],) * 3
    la = np.broadcast_to(lam[:, :, None, None], shape)
    lk = np.broadcast_to(lam[:, None, :, None], shape)
    lb = np.broadcast_to(lam[:, None, None, :], shape)
    Fak = np.broadcast_to(F1[:, :, :, None], shape)
    Fkb = np.broadcast_to(F1[:, None, :, :], shape)
    Fab = np.broadcast_to(F1[:, :, None, :], shape)
    F2 = np.empty(shape)
    use_ab = np.abs(lb - la) >= SERIES_SPREAD
    use_kb = ~use_ab & (np.abs(lb - lk) >= SERIES_SPREAD)
    use_ak = ~use_ab & ~use_kb & (np.abs(lk - la) >= SERIES_SPREAD)
    rest = ~(use_ab | use_kb | use_ak)
    F2[use_ab] = (Fkb[use_ab] - Fak[use_ab]) / (lb[use_ab] - la[use_ab])
    F2[use_kb] = (
        (Fab[use_kb] - Fak[use_kb]) / (lb[use_kb] - lk[use_kb])
    )
    F2[use_ak] = (Fkb[use_ak] - Fab[use_ak]) / (lk[use_ak] - la[use_ak])
    if rest.any():
        x, y, w = la[rest], lk[rest], lb[rest]
        mu = (x + y + w) / 3.0
        x, y, w = x - mu, y - mu, w - mu
        ser = sum(_h_sym(x, y, w, j) / math.factorial(j + 2) for j in range(5))
        F2[rest] = np.exp(mu) * ser
    return F1, F2


def metric_jets(H, X: np.ndarray, max_norm: float = 30.0) -> MetricJet:
    """g = exp(H) with first and second coordinate derivatives at points X.

    Derivatives use the Daleckii-Krein formulas on the eigendecomposition
    of H, so they are exact up to rounding.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T, dT, d2T = tensor_jets(H, X)
    lam, Q = np.linalg.eigh(T)
    if np.any(np.abs(lam) > max_norm):
        raise FloatingPointError("|h| too large for a reliable exponential")
    F1, F2 = exp_divided_differences(lam)
    Qt = np.swapaxes(Q, -1, -2)
    E = Qt[:, None] @ dT @ Q[:, None]  # (N, c, n, n)
    EE = Qt[:, None, None] @ d2T @ Q[:, None, None]
    g = (Q * np.exp(lam)[:, None, :]) @ Qt
    ginv = (Q * np.exp(-lam)[:, None, :]) @ Qt
    det = np.exp(lam.sum(axis=1))
    dg = Q[:, None] @ (F1[:, None] * E) @ Qt[:, None]
    # second order: sum_k F2[a,k,b] (E_c[a,k] E_e[k,b] + E_e[a,k] E_c[k,b])
    prod = np.einsum("nakb,ncak,nekb->nceab", F2, E, E)
    inner = prod + np.swapaxes(prod, 1, 2) + F1[:, None, None] * EE
    d2g = Q[:, None, None] @ inner @ Qt[:, None, None]
    return MetricJet(g, ginv, det, dg, d2g)


def metric_jet(H, x) -> MetricJet:
    x = np.asarray(x, dtype=float)
    mj = metric_jets(H, x[None, :])
    return MetricJet(mj.g[0], mj.ginv[0], float(mj.det[0]), mj.dg[0], mj.d2g[0])


def scalar_curvature_from_jets(mj: MetricJet) -> np.ndarray:
    """R = g^{ij} (d_k Gamma^k_ij - d_j Gamma^k_ik + Gamma Gamma - Gamma Gamma),
    with the second-derivative part contracted directly."""
    gi, dg, D = mj.ginv, mj.dg, mj.d2g
    ein = lambda spec, *ops: np.einsum(spec, *ops, optimize="greedy")
    low = 0.5 * (np.swapaxes(dg, 1, 2) + np.transpose(dg, (0, 3, 2, 1)) - dg)  # Gamma_{l,ij}
    gam = ein("nkl,nlij->nkij", gi, low)
    second = ein("nkl,nij,nkilj->n", gi, gi, D) - ein("nij,nkl,nijkl->n", gi, gi, D)
    # d_k g^{kl} Gamma_{l,ij} g^{ij}  and  g^{ij} d_j g^{kl} Gamma_{l,ik}
    dgi = -ein("nka,nmab,nbl->nmkl", gi, dg, gi)
    first = ein("nkkl,nlij,nij->n", dgi, low, gi) - ein("nij,njkl,nlik->n", gi, dgi, low)
    trace_gam = np.einsum("nkkl->nl", gam)
    quad = ein("nl,nlij,nij->n", trace_gam, gam, gi) - ein("nij,nkjl,nlik->n", gi, gam, gam)
    return second + first + quad


def scalar_curvatures(H, X) -> np.ndarray:
    return scalar_curvature_from_jets(metric_jets(H, X))


def scalar_curvature(H, x) -> float:
    return float(scalar_curvatures(H, np.asarray(x, dtype=float)[None, :])[0])


@numba.njit(cache=True)
def _dd2(la, lk, lb, fak, fkb, fab):
    if abs(lb - la) >= SERIES_SPREAD:
        return (fkb - fak) / (lb - la)
    if abs(lb - lk) >= SERIES_SPREAD:
        return (fab - fak) / (lb - lk)
    if abs(lk - la) >= SERIES_SPREAD:
        return (fkb - fab) / (lk - la)
    mu = (la + lk + lb) / 3.0
    x, y, z = la - mu, lk - mu, lb - mu
    total = 0.0
    fact = 2.0
    for j in range(5):
        h = 0.0
        for i in range(j + 1):
            for m in range(j + 1 - i):
                h += x**i * y**m * z ** (j - i - m)
        total += h / fact
        fact *= j + 3
    return math.exp(mu) * total


@numba.njit(cache=True)
def _sandwich(Q, M, out, transpose_first):
    # out = Q^T M Q if transpose_first else Q M Q^T
    n = Q.shape[0]
    for a in range(n):
        for b in range(n):
            acc = 0.0
            for i in range(n):
                qa = Q[i, a] if transpose_first else Q[a, i]
                if qa == 0.0:
                    continue
                row = 0.0
                for j in range(n):
                    row += M[i, j] * (Q[j, b] if transpose_first else Q[b, j])
                acc += qa * row
            out[a, b] = acc


@numba.njit(cache=True)
def _curvature_kernel(vals, rows, cols, R, GI):
    N, n = vals.shape[0], GI.shape[1]
    T = np.zeros((n, n))
    dT = np.zeros((n, n, n))
    d2T = np.zeros((n, n, n, n))
    F1 = np.empty((n, n))
    F2 = np.empty((n, n, n))
    E = np.empty((n, n, n))
    dg = np.empty((n, n, n))
    D = np.empty((n, n, n, n))
    inner = np.empty((n, n))
    tmp = np.empty((n, n))
    EE = np.empty((n, n))
    gi = np.empty((n, n))
    low = np.empty((n, n, n))
    gam = np.empty((n, n, n))
    dgi = np.empty((n, n, n))
    for p in range(N):
        for q in range(rows.shape[0]):
            i, k = rows[q], cols[q]
            T[i, k] = T[k, i] = vals[p, 0, q]
            m = n + 1
            for c in range(n):
                dT[c, i, k] = dT[c, k, i] = vals[p, 1 + c, q]
                for e in range(c, n):
                    d2T[c, e, i, k] = d2T[c, e, k, i] = vals[p, m, q]
                    m += 1
        lam, Q = np.linalg.eigh(T)
        for a in range(n):
            for b in range(n):
                z = lam[b] - lam[a]
                F1[a, b] = math.exp(lam[a]) * (1.0 if z == 0.0 else math.expm1(z) / z)
        for a in range(n):
            for k in range(n):
                for b in range(n):
                    F2[a, k, b] = _dd2(lam[a], lam[k], lam[b], F1[a, k], F1[k, b], F1[a, b])
        for a in range(n):
            for b in range(n):
                acc = 0.0
                for m in range(n):
                    acc += Q[a, m] * math.exp(-lam[m]) * Q[b, m]
                gi[a, b] = acc
        for c in range(n):
            _sandwich(Q, dT[c], E[c], True)
            for a in range(n):
                for b in range(n):
                    tmp[a, b] = F1[a, b] * E[c, a, b]
            _sandwich(Q, tmp, dg[c], False)
        for c in range(n):
            for e in range(c, n):
                _sandwich(Q, d2T[c, e], EE, True)
                for a in range(n):
                    for b in range(n):
                        acc = F1[a, b] * EE[a, b]
                        for k in range(n):
                            acc += F2[a, k, b] * (E[c, a, k] * E[e, k, b] + E[e, a, k] * E[c, k, b])
                        inner[a, b] = acc
                _sandwich(Q, inner, D[c, e], False)
                if e != c:
                    D[e, c] = D[c, e]
        # R = second + first + quadratic, as in scalar_curvature_from_jets
        for l in range(n):
            for i in range(n):
                for j in range(n):
                    low[l, i, j] = 0.5 * (dg[i, l, j] + dg[j, l, i] - dg[l, i, j])
        for k in range(n):
            for i in range(n):
                for j in range(n):
                    acc = 0.0
                    for l in range(n):
                        acc += gi[k, l] * low[l, i, j]
                    gam[k, i, j] = acc
        for m in range(n):
            _sandwich(gi, dg[m], tmp, False)
            for a in range(n):
                for b in range(n):
                    dgi[m, a, b] = -tmp[a, b]
        second = 0.0
        for k in range(n):
            for l in range(n):
                for i in range(n):
                    for j in range(n):
                        second += gi[k, l] * gi[i, j] * (D[k, i, l, j] - D[i, j, k, l])
        first = 0.0
        quad = 0.0
        for i in range(n):
            for j in range(n):
                for l in range(n):
                    trg = 0.0
                    for k in range(n):
                        trg += gam[k, k, l]
                    quad += trg * gam[l, i, j] * gi[i, j]
                    for k in range(n):
                        first += dgi[k, k, l] * low[l, i, j] * gi[i, j] - gi[i, j] * dgi[j, k, l] * low[l, i, k]
                        quad -= gi[i, j] * gam[k, j, l] * gam[l, i, k]
        R[p] = second + first + quad
        GI[p] = gi


def curvature_and_inverse(H, X: np.ndarray, max_norm: float = 30.0):
    """R_g and g^{-1} at many points (compiled loop; same formulas as
    :func:`metric_jets` followed by :func:`scalar_curvature_from_jets`)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[1]
    R = np.empty(len(X))
    GI = np.empty((len(X), n, n))
    for lo in range(0, len(X), CHUNK):
        vals, pairs, _ = _compact_jets(H, X[lo : lo + CHUNK])
        if len(vals) and np.abs(vals[:, 0]).max() * n > max_norm:
            raise FloatingPointError("|h| too large for a reliable exponential")
        rows = np.array([i for i, _ in pairs])
        cols = np.array([k for _, k in pairs])
        _curvature_kernel(np.ascontiguousarray(vals), rows, cols, R[lo : lo + CHUNK], GI[lo : lo + CHUNK])
    return R, GI


def linear_curvature(H: FermiTensor) -> PolyScalar:
    """sum_{i,k} d_i d_k H_ik, the linearization of R_g at g = delta."""
    n = H.n
    out = PolyScalar.zero(n)
    for i in range(n):
        for k in range(n):
            out = out + H.entries[i][k].partial(i).partial(k)
    return out


# --- algebraic Schouten / Weyl ----------------------------------------------------


@dataclass(frozen=True)
class AlgebraicCurvature:
    A: tuple[tuple[PolyScalar, ...], ...]
    Z: dict  # (i, j, k, l) -> PolyScalar, 0-based
    injectivity_sigma_min: float | None = None
    map_rank: int | None = None
    space_dim: int | None = None


def schouten_weyl(ent: Sequence[Sequence[PolyScalar]]):
    n = len(ent)
    dd = [[[[ent[a][b].partial(i).partial(j) for j in range(n)] for i in range(n)] for b in range(n)] for a in range(n)]
    # dd[a][b][i][j] = d_i d_j H_ab
    ddH = PolyScalar.zero(ent[0][0].n)
    for m in range(n):
        for p in range(n):
            ddH = ddH + dd[m][p][m][p]
    A = []
    for i in range(n):
        row = []
        for j in range(n):
            t = PolyScalar.zero(ent[0][0].n)
            for m in range(n):
                t = t + dd[m][j][i][m] + dd[i][m][m][j] - dd[i][j][m][m]
            if i == j:
                t = t - ddH / (n - 1)
            row.append(t)
        A.append(tuple(row))
    Z = {}
    delta = lambda a, b: 1.0 if a == b else 0.0
    for i, j, k, l in itertools.product(range(n), repeat=4):
        t = dd[j][l][i][k] - dd[j][k][i][l] - dd[i][l][j][k] + dd[i][k][j][l]
        corr = A[j][l] * delta(i, k) - A[j][k] * delta(i, l) - A[i][l] * delta(j, k) + A[i][k] * delta(j, l)
        Z[i, j, k, l] = t + corr / (n - 2)
    return tuple(A), Z


def z_coefficients(Z: dict) -> dict:
    """Flatten Z to {((i, j, k, l), alpha): coefficient}."""
    return {(idx, a): c for idx, p in Z.items() for a, c in p.terms.items()}


def algebraic_curvature(H: FermiTensor, check_injectivity: bool = True) -> AlgebraicCurvature:
    A, Z = schouten_weyl(H.entries)
    if not check_injectivity:
        return AlgebraicCurvature(A, Z)
    smin, rank, dim = weyl_map_injectivity(H.dim)
    return AlgebraicCurvature(A, Z, smin, rank, dim)


def weyl_map_injectivity(dim: Dim) -> tuple[float, int, int]:
    """Smallest singular value (columns normalized), rank and domain dimension
    of the linear map H -> Z on the admissible space."""
    basis = admissible_basis(dim)
    if not basis:
        return math.nan, 0, 0
    cols = []
    for b in basis:
        _, Z = schouten_weyl(b.entries)
        cols.append(z_coefficients(Z))
    keys = sorted(set().union(*cols))
    M = np.array([[col.get(k, 0.0) for col in cols] for k in keys])
    M = M / np.linalg.norm(M, axis=0, keepdims=True)
    s = np.linalg.svd(M, compute_uv=False)
    rank = int(np.sum(s > 1e-10 * s.max()))
    return float(s.min()), rank, len(basis)
