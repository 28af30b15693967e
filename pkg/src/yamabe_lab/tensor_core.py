"""Exact multivariate polynomials and second-order jets on R^n.

Polynomials carry double-precision coefficients keyed by exponent tuples.
For bulk evaluation over quadrature nodes, :class:`MonomialSpace` maps
polynomials to coefficient vectors over a downward-closed monomial set so
that differentiation becomes a matrix product.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

ZERO_TOL = 1e-14

MultiIndex = tuple[int, ...]


@dataclass(frozen=True)
class Dim:
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise ValueError(f"dimension must be an integer >= 3, got {self.n}")

    @property
    def d(self) -> int:
        return (self.n - 2) // 2


def order(alpha: Sequence[int]) -> int:
    return int(sum(alpha))


def unit(n: int, i: int) -> MultiIndex:
    return tuple(1 if j == i else 0 for j in range(n))


@lru_cache(maxsize=None)
def multi_indices(n: int, max_degree: int, min_degree: int = 0) -> tuple[MultiIndex, ...]:
    """All exponent tuples with min_degree <= |alpha| <= max_degree, graded-lex order."""
    out = []
    for deg in range(min_degree, max_degree + 1):
        level = []
        for combo in itertools.combinations_with_replacement(range(n), deg):
            alpha = [0] * n
            for j in combo:
                alpha[j] += 1
            level.append(tuple(alpha))
        out.extend(sorted(level, reverse=True))
    return tuple(out)


class PolyScalar:
    """Polynomial in n variables: sum of c_alpha x^alpha.

    Zero coefficients are never stored; instances are treated as immutable.
    """

    __slots__ = ("n", "terms")

    def __init__(self, n: int, terms: Mapping[Sequence[int], float] | None = None):
        self.n = int(n)
        clean: dict[MultiIndex, float] = {}
        for alpha, c in (terms or {}).items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != self.n or min(alpha, default=0) < 0:
                raise ValueError(f"bad multi-index {alpha} for n={self.n}")
            c = float(c)
            if c != 0.0:
                clean[alpha] = clean.get(alpha, 0.0) + c
        self.terms = {a: c for a, c in sorted(clean.items()) if c != 0.0}

    # construction helpers
    @classmethod
    def zero(cls, n: int) -> "PolyScalar":
        return cls(n)

    @classmethod
    def constant(cls, n: int, c: float) -> "PolyScalar":
        return cls(n, {(0,) * n: c})

    @classmethod
    def coordinate(cls, n: int, i: int) -> "PolyScalar":
        return cls(n, {unit(n, i): 1.0})

    @classmethod
    def monomial(cls, alpha: Sequence[int], c: float = 1.0) -> "PolyScalar":
        return cls(len(alpha), {tuple(alpha): c})

    @property
    def degree(self) -> int:
        """Max total degree; -1 for the zero polynomial."""
        return max((order(a) for a in self.terms), default=-1)

    def is_zero(self, tol: float = ZERO_TOL) -> bool:
        return all(abs(c) <= tol for c in self.terms.values())

    def coeff(self, alpha: Sequence[int]) -> float:
        return self.terms.get(tuple(alpha), 0.0)

    # arithmetic
    def _lift(self, other) -> "PolyScalar":
        if isinstance(other, PolyScalar):
            if other.n != self.n:
                raise ValueError("dimension mismatch")
            return other
        return PolyScalar.constant(self.n, other)

    def __add__(self, other) -> "PolyScalar":
        other = self._lift(other)
        terms = dict(self.terms)
        for a, c in other.terms.items():
            terms[a] = terms.get(a, 0.0) + c
        return PolyScalar(self.n, terms)

    __radd__ = __add__

    def __neg__(self) -> "PolyScalar":
        return PolyScalar(self.n, {a: -c for a, c in self.terms.items()})

    def __sub__(self, other) -> "PolyScalar":
        return self + (-self._lift(other))

    def __rsub__(self, other) -> "PolyScalar":
        return self._lift(other) - self

    def __mul__(self, other) -> "PolyScalar":
        if not isinstance(other, PolyScalar):
            return PolyScalar(self.n, {a: c * float(other) for a, c in self.terms.items()})
        other = self._lift(other)
        terms: dict[MultiIndex, float] = {}
        for a, ca in self.terms.items():
            for b, cb in other.terms.items():
                key = tuple(i + j for i, j in zip(a, b))
                terms[key] = terms.get(key, 0.0) + ca * cb
        return PolyScalar(self.n, terms)

    __rmul__ = __mul__

    def __truediv__(self, other: float) -> "PolyScalar":
        return self * (1.0 / float(other))

    def __pow__(self, k: int) -> "PolyScalar":
        if int(k) != k or k < 0:
            raise ValueError("only non-negative integer powers")
        out = PolyScalar.constant(self.n, 1.0)
        for _ in range(int(k)):
            out = out * self
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolyScalar):
            return NotImplemented
        return (self - other).is_zero()

    def __hash__(self):
        return hash((self.n, tuple(self.terms.items())))

    def __repr__(self) -> str:
        if not self.terms:
            return "PolyScalar(0)"
        parts = []
        for a, c in self.terms.items():
            mono = "*".join(f"x{j + 1}^{e}" if e > 1 else f"x{j + 1}" for j, e in enumerate(a) if e)
            parts.append(f"{c:+.6g}" + (f"*{mono}" if mono else ""))
        return "PolyScalar(" + " ".join(parts) + ")"

    # calculus
    def partial(self, j: int) -> "PolyScalar":
        terms = {}
        for a, c in self.terms.items():
            if a[j]:
                b = list(a)
                b[j] -= 1
                terms[tuple(b)] = c * a[j]
        return PolyScalar(self.n, terms)

    def restrict(self, var: int, value: float = 0.0) -> "PolyScalar":
        """Substitute x_var = value (result still a polynomial in n variables)."""
        terms: dict[MultiIndex, float] = {}
        for a, c in self.terms.items():
            b = list(a)
            e = b[var]
            b[var] = 0
            if e and value == 0.0:
                continue
            key = tuple(b)
            terms[key] = terms.get(key, 0.0) + c * value**e
        return PolyScalar(self.n, terms)

    def __call__(self, x) -> float | np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return float(sum(c * np.prod(x ** np.array(a)) for a, c in self.terms.items()))
        out = np.zeros(x.shape[0])
        for a, c in self.terms.items():
            out += c * np.prod(x ** np.array(a), axis=1)
        return out

    def to_dict(self) -> list[dict]:
        return [{"alpha": list(a), "value": c} for a, c in self.terms.items()]


@dataclass(frozen=True)
class JetValue:
    """Value, gradient and Hessian of a scalar field at one point."""

    value: float
    gradient: np.ndarray
    hessian: np.ndarray = field(repr=False)


def differentiate(p: PolyScalar, beta: Sequence[int]) -> PolyScalar:
    out = p
    for j, k in enumerate(beta):
        for _ in range(int(k)):
            out = out.partial(j)
    return out


def eval_jet(p: PolyScalar, x) -> JetValue:
    x = np.asarray(x, dtype=float)
    n = p.n
    grad = np.array([p.partial(i)(x) for i in range(n)])
    hess = np.zeros((n, n))
    for i in range(n):
        pi = p.partial(i)
        for j in range(i, n):
            hess[i, j] = hess[j, i] = pi.partial(j)(x)
    return JetValue(float(p(x)), grad, hess)


def trace_free_project(t: Sequence[Sequence[PolyScalar]]) -> list[list[PolyScalar]]:
    """t - (tr t / n) * identity for a symmetric matrix of polynomials."""
    n = len(t)
    for i in range(n):
        for k in range(i + 1, n):
            if not t[i][k] == t[k][i]:
                raise ValueError(f"tensor is not symmetric at ({i}, {k})")
    tr = PolyScalar.zero(t[0][0].n)
    for i in range(n):
        tr = tr + t[i][i]
    return [[t[i][k] - (tr / n if i == k else 0.0) for k in range(n)] for i in range(n)]


def poly_trace(t: Sequence[Sequence[PolyScalar]]) -> PolyScalar:
    out = PolyScalar.zero(t[0][0].n)
    for i in range(len(t)):
        out = out + t[i][i]
    return out


def zero_tensor(n: int) -> list[list[PolyScalar]]:
    return [[PolyScalar.zero(n) for _ in range(n)] for _ in range(n)]


class MonomialSpace:
    """All monomials of degree <= ``degree`` in n variables, for batch jets.

    A polynomial becomes a coefficient vector; ``partial`` is exact because
    the monomial set is closed under differentiation.
    """

    def __init__(self, n: int, degree: int):
        self.n = n
        self.degree = max(int(degree), 0)
        self.exponents = np.array(multi_indices(n, self.degree), dtype=int).reshape(-1, n)
        self.index = {tuple(a): k for k, a in enumerate(map(tuple, self.exponents))}
        self.size = len(self.exponents)
        self._dmats: dict[int, np.ndarray] = {}

    @classmethod
    def for_polys(cls, polys: Iterable[PolyScalar], n: int) -> "MonomialSpace":
        deg = max((p.degree for p in polys), default=0)
        return cls(n, max(deg, 0))

    def coefficients(self, polys: Sequence[PolyScalar]) -> np.ndarray:
        C = np.zeros((len(polys), self.size))
        for r, p in enumerate(polys):
            for a, c in p.terms.items():
                try:
                    C[r, self.index[a]] = c
                except KeyError:
                    raise ValueError(f"monomial {a} exceeds space degree {self.degree}") from None
        return C

    def to_poly(self, coeffs: np.ndarray) -> PolyScalar:
        return PolyScalar(self.n, {tuple(a): c for a, c in zip(map(tuple, self.exponents), coeffs) if c != 0.0})

    def dmat(self, j: int) -> np.ndarray:
        """Matrix D with coeffs(d/dx_j p) = coeffs(p) @ D."""
        if j not in self._dmats:
            D = np.zeros((self.size, self.size))
            for k, a in enumerate(self.exponents):
                if a[j]:
                    b = a.copy()
                    b[j] -= 1
                    D[k, self.index[tuple(b)]] = a[j]
            self._dmats[j] = D
        return self._dmats[j]

    def _parents(self):
        """For each monomial of positive degree, (lower monomial, variable) with a = b + e_j."""
        if not hasattr(self, "_par"):
            par = np.zeros((self.size, 2), dtype=int)
            for k, a in enumerate(self.exponents):
                if a.sum():
                    j = int(np.flatnonzero(a)[0])
                    b = a.copy()
                    b[j] -= 1
                    par[k] = self.index[tuple(b)], j
            self._par = par
        return self._par

    def monomials(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        par = self._parents()
        M = np.empty((self.size, X.shape[0]))
        XT = X.T
        # exponents are ordered by degree, so parents come first
        for k in range(self.size):
            if self.exponents[k].any():
                np.multiply(M[par[k, 0]], XT[par[k, 1]], out=M[k])
            else:
                M[k] = 1.0
        return M.T

    def jets(self, C: np.ndarray, X: np.ndarray, order: int = 2):
        """Values, gradients, Hessians (and third derivatives if order=3).

        C has shape (k, size). Returns arrays of shape (N, k), (N, k, n),
        (N, k, n, n) and optionally (N, k, n, n, n).
        """
        M = self.monomials(X)
        n, k = self.n, C.shape[0]
        blocks = [C]
        if order >= 1:
            Cd = [C @ self.dmat(j) for j in range(n)]
            blocks += Cd
        if order >= 2:
            Cdd = {(i, j): Cd[i] @ self.dmat(j) for i in range(n) for j in range(n)}
            blocks += [Cdd[i, j] for i in range(n) for j in range(n)]
        if order >= 3:
            blocks += [Cdd[i, j] @ self.dmat(l) for i in range(n) for j in range(n) for l in range(n)]
        vals = M @ np.concatenate(blocks).T  # (N, blocks * k)
        N = vals.shape[0]
        out = [vals[:, :k]]
        lo = k
        for o in range(1, order + 1):
            w = k * n**o
            part = vals[:, lo : lo + w].reshape((N,) + (n,) * o + (k,))
            out.append(np.ascontiguousarray(np.moveaxis(part, -1, 1)))
            lo += w
        return tuple(out)
