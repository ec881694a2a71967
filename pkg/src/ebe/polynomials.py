"""Polynomial algebra over C, validation of (P, Q, R) and knot-point charges.

Coefficients are stored lowest degree first.  The holomorphic data consist of
the Higgs polynomial ``P`` (phi_z = [[0, P], [0, 0]]) and the small section
``(Q, R)``.  Charges are the zero multiplicities of ``P * R**2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DegreeViolation, NotCoprime, RootClusterAmbiguity, ZeroP

# coefficients below this (relative to the largest one) are treated as zero
TRIM_TOL = 1e-14
RESULTANT_TOL = 1e-9


class Polynomial:
    """Dense univariate polynomial with complex coefficients."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs: Iterable[complex] | complex = ()):
        if np.isscalar(coeffs):
            coeffs = [coeffs]
        c = np.array(list(coeffs), dtype=complex).ravel()
        if c.size:
            scale = np.max(np.abs(c))
            nz = np.nonzero(np.abs(c) > TRIM_TOL * scale)[0] if scale > 0 else []
            c = c[: nz[-1] + 1] if len(nz) else c[:0]
        self.coeffs = c

    @classmethod
    def monomial(cls, k: int, c: complex = 1.0) -> "Polynomial":
        return cls([0] * k + [c])

    @classmethod
    def from_roots(cls, roots: Sequence[complex]) -> "Polynomial":
        p = cls([1.0])
        for r in roots:
            p = p * cls([-r, 1.0])
        return p

    @property
    def degree(self) -> int:
        """Degree; -1 for the zero polynomial."""
        return len(self.coeffs) - 1

    def is_zero(self) -> bool:
        return self.coeffs.size == 0

    @property
    def leading(self) -> complex:
        return complex(self.coeffs[-1]) if self.coeffs.size else 0.0

    def scale(self) -> float:
        return float(np.max(np.abs(self.coeffs))) if self.coeffs.size else 0.0

    def __call__(self, z):
        """Horner evaluation; ``z`` may be a scalar or an array."""
        z = np.asarray(z)
        out = np.zeros(z.shape, dtype=complex)
        for c in self.coeffs[::-1]:
            out = out * z + c
        return out if out.shape else complex(out)

    def __add__(self, other):
        other = _as_poly(other)
        n = max(len(self.coeffs), len(other.coeffs))
        a = np.zeros(n, complex)
        a[: len(self.coeffs)] += self.coeffs
        a[: len(other.coeffs)] += other.coeffs
        return Polynomial(a)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(-self.coeffs)

    def __sub__(self, other):
        return self + (-_as_poly(other))

    def __rsub__(self, other):
        return _as_poly(other) - self

    def __mul__(self, other):
        other = _as_poly(other)
        if self.is_zero() or other.is_zero():
            return Polynomial()
        return Polynomial(np.convolve(self.coeffs, other.coeffs))

    __rmul__ = __mul__

    def __pow__(self, k: int):
        out = Polynomial([1.0])
        for _ in range(k):
            out = out * self
        return out

    def __divmod__(self, other):
        other = _as_poly(other)
        if other.is_zero():
            raise ZeroDivisionError("polynomial division by zero")
        rem = self.coeffs.astype(complex).copy()
        dq = len(rem) - len(other.coeffs)
        if dq < 0:
            return Polynomial(), Polynomial(rem)
        quot = np.zeros(dq + 1, complex)
        lead = other.coeffs[-1]
        for i in range(dq, -1, -1):
            c = rem[i + len(other.coeffs) - 1] / lead
            quot[i] = c
            rem[i : i + len(other.coeffs)] -= c * other.coeffs
        return Polynomial(quot), Polynomial(rem[: len(other.coeffs) - 1])

    def __mod__(self, other):
        return divmod(self, other)[1]

    def __floordiv__(self, other):
        return divmod(self, other)[0]

    def __eq__(self, other):
        other = _as_poly(other)
        return self.coeffs.shape == other.coeffs.shape and np.allclose(
            self.coeffs, other.coeffs, rtol=0, atol=1e-12
        )

    def __hash__(self):
        return hash(tuple(np.round(self.coeffs, 12)))

    def derivative(self, order: int = 1) -> "Polynomial":
        c = self.coeffs
        for _ in range(order):
            if len(c) <= 1:
                return Polynomial()
            c = c[1:] * np.arange(1, len(c))
        return Polynomial(c)

    def monic(self) -> "Polynomial":
        return Polynomial(self.coeffs / self.leading)

    def roots(self) -> np.ndarray:
        """Eigenvalues of the companion matrix (with multiplicity)."""
        d = self.degree
        if d < 1:
            return np.zeros(0, complex)
        c = self.coeffs / self.leading
        comp = np.zeros((d, d), complex)
        comp[1:, :-1] = np.eye(d - 1)
        comp[:, -1] = -c[:-1]
        return np.linalg.eigvals(comp)

    def vanishing_order(self, z0: complex, tol: float = 1e-8) -> int:
        """Order of vanishing at ``z0`` judged by the Taylor coefficients."""
        if self.is_zero():
            raise ValueError("zero polynomial vanishes to infinite order")
        ref = self.scale() * (1 + abs(z0)) ** max(self.degree, 0)
        fact = 1.0
        for j in range(self.degree + 1):
            if j:
                fact *= j
            if abs(self.derivative(j)(z0)) / fact > tol * ref:
                return j
        return self.degree

    def tolist(self) -> list[list[float]]:
        return [[float(c.real), float(c.imag)] for c in self.coeffs]

    def __repr__(self):
        terms = []
        for k, c in enumerate(self.coeffs):
            if c == 0:
                continue
            cs = f"{c.real:g}" if c.imag == 0 else f"({c.real:g}{c.imag:+g}j)"
            terms.append(cs if k == 0 else f"{cs}*z^{k}")
        return "Polynomial(" + (" + ".join(terms) or "0") + ")"


def _as_poly(x) -> Polynomial:
    return x if isinstance(x, Polynomial) else Polynomial([x])


Z = Polynomial([0.0, 1.0])


def _is_gaussian_integer(p: Polynomial) -> bool:
    c = p.coeffs
    return bool(np.all(np.abs(c.real - np.round(c.real)) == 0) and np.all(np.abs(c.imag - np.round(c.imag)) == 0))


def sylvester(p: Polynomial, q: Polynomial) -> np.ndarray:
    m, n = p.degree, q.degree
    size = m + n
    S = np.zeros((size, size), complex)
    a, b = p.coeffs[::-1], q.coeffs[::-1]
    for i in range(n):
        S[i, i : i + m + 1] = a
    for i in range(m):
        S[n + i, i : i + n + 1] = b
    return S


def resultant(p: Polynomial, q: Polynomial) -> complex:
    """Resultant of ``p`` and ``q``.

    Exact (via sympy over Z[i]) when both inputs have Gaussian-integer
    coefficients, otherwise the Sylvester determinant of the unit-normalized
    polynomials.
    """
    if p.is_zero() or q.is_zero():
        return 0.0
    if p.degree == 0 or q.degree == 0:
        return complex(p.leading ** max(q.degree, 0) * q.leading ** max(p.degree, 0))
    if _is_gaussian_integer(p) and _is_gaussian_integer(q):
        import sympy

        z = sympy.Symbol("z")

        def sym(poly):
            return sum(
                (int(round(c.real)) + int(round(c.imag)) * sympy.I) * z**k
                for k, c in enumerate(poly.coeffs)
            )

        return complex(sympy.expand(sympy.resultant(sym(p), sym(q), z)))
    return complex(np.linalg.det(sylvester(p, q)))


def normalized_resultant(p: Polynomial, q: Polynomial) -> float:
    """|resultant| of the polynomials scaled to unit coefficient 2-norm."""
    if p.is_zero() or q.is_zero():
        return 0.0
    pn = Polynomial(p.coeffs / np.linalg.norm(p.coeffs))
    qn = Polynomial(q.coeffs / np.linalg.norm(q.coeffs))
    if pn.degree == 0 or qn.degree == 0:
        return 1.0
    return abs(np.linalg.det(sylvester(pn, qn)))


def coprime(p: Polynomial, q: Polynomial, tol: float = RESULTANT_TOL) -> bool:
    if p.is_zero() or q.is_zero():
        # gcd(0, q) = q up to scale
        other = q if p.is_zero() else p
        return not other.is_zero() and other.degree == 0
    if _is_gaussian_integer(p) and _is_gaussian_integer(q):
        return resultant(p, q) != 0
    return normalized_resultant(p, q) > tol


def bezout(Q: Polynomial, R: Polynomial, tol: float = 1e-10) -> tuple[Polynomial, Polynomial]:
    """Return ``(S, T)`` with ``Q*S + R*T = 1`` by the extended Euclidean algorithm.

    The output is the minimal-degree solution (deg S < deg R).
    """
    if Q.is_zero() and R.is_zero():
        raise NotCoprime("both Q and R vanish")
    if not coprime(Q, R):
        raise NotCoprime("resultant(Q, R) vanishes")
    # remainder sequence with cofactors: r_i = Q*s_i + R*t_i
    r0, r1 = Q, R
    s0, s1 = Polynomial([1.0]), Polynomial()
    t0, t1 = Polynomial(), Polynomial([1.0])
    scale = max(Q.scale(), R.scale())
    while not r1.is_zero() and r1.degree > 0:
        quot, rem = divmod(r0, r1)
        if rem.scale() <= tol * scale:
            rem = Polynomial()
        r0, r1 = r1, rem
        s0, s1 = s1, s0 - quot * s1
        t0, t1 = t1, t0 - quot * t1
    if r1.is_zero():
        # last nonzero remainder r0 is the gcd
        if r0.degree > 0:
            raise NotCoprime("extended Euclid ended with a nonconstant gcd")
        g, S, T = r0.leading, s0, t0
    else:
        g, S, T = r1.leading, s1, t1
    S, T = S * (1.0 / g), T * (1.0 / g)
    # reduce to the canonical solution deg S < deg R
    if R.degree >= 1 and S.degree >= R.degree:
        W, S = divmod(S, R)
        T = T + W * Q
    return S, T


def bezout_residual(Q, R, S, T, points) -> float:
    pts = np.asarray(points)
    return float(np.max(np.abs(Q(pts) * S(pts) + R(pts) * T(pts) - 1.0)))


@dataclass(frozen=True)
class HolomorphicData:
    P: Polynomial
    Q: Polynomial
    R: Polynomial

    @property
    def N(self) -> int:
        return self.P.degree

    @property
    def K(self) -> int:
        return self.P.degree + 2 * self.R.degree

    def phi(self, z):
        """phi_z = [[0, P], [0, 0]] evaluated on an array of z."""
        z = np.asarray(z)
        out = np.zeros(z.shape + (2, 2), complex)
        out[..., 0, 1] = self.P(z)
        return out

    def small_section(self, z):
        z = np.asarray(z)
        return np.stack([self.Q(z) * np.ones(z.shape), self.R(z) * np.ones(z.shape)], axis=-1)

    def to_json(self) -> dict:
        return {"P": self.P.tolist(), "Q": self.Q.tolist(), "R": self.R.tolist()}

    @property
    def r0(self) -> float:
        """sup |z| over the zeros of P and R (0 when there are none)."""
        roots = np.concatenate([self.P.roots(), self.R.roots()])
        return float(np.max(np.abs(roots))) if roots.size else 0.0


def _decode(raw) -> Polynomial:
    if isinstance(raw, Polynomial):
        return raw
    if np.isscalar(raw):
        return Polynomial([raw])
    coeffs = []
    for c in raw:
        if isinstance(c, (list, tuple)):
            if len(c) != 2:
                raise ValueError(f"coefficient {c!r} is not a [re, im] pair")
            coeffs.append(complex(c[0], c[1]))
        else:
            coeffs.append(complex(c))
    arr = np.array(coeffs, complex)
    if not np.all(np.isfinite(arr)):
        raise ValueError("coefficients must be finite")
    return Polynomial(arr)


def validate(P, Q, R, reduce: bool = False) -> HolomorphicData:
    """Check and normalize a raw triple.

    ``P``, ``Q``, ``R`` may be Polynomials, scalars, or coefficient lists
    (lowest first, entries complex or [re, im]).  R is made monic (Q scaled
    by the same factor, which leaves the section line unchanged).  With
    ``reduce=True`` Q is replaced by Q mod R instead of rejecting
    deg Q >= deg R.
    """
    P, Q, R = _decode(P), _decode(Q), _decode(R)
    if P.is_zero():
        raise ZeroP("P must be nonzero")
    if R.is_zero():
        raise NotCoprime("R must be nonzero")
    lead = R.leading
    R = R.monic()
    Q = Q * (1.0 / lead)
    if reduce and not Q.is_zero() and Q.degree >= R.degree:
        Q = Q % R if R.degree > 0 else Polynomial()
    if Q.is_zero():
        if R.degree != 0:
            raise NotCoprime("Q = 0 requires constant R")
    elif not coprime(Q, R):
        raise NotCoprime("Q and R share a root")
    elif Q.degree > R.degree - 1:
        raise DegreeViolation(f"deg Q = {Q.degree} > deg R - 1 = {R.degree - 1}")
    return HolomorphicData(P, Q, R)


@dataclass(frozen=True)
class ChargePoint:
    position: complex
    charge: int
    k_part: int
    p_part: int


@dataclass(frozen=True)
class ChargeSet:
    points: tuple[ChargePoint, ...]
    K: int
    N: int

    def to_json(self) -> dict:
        return {
            "K": self.K,
            "N": self.N,
            "points": [
                {
                    "position": [p.position.real, p.position.imag],
                    "charge": p.charge,
                    "k_part": p.k_part,
                    "p_part": p.p_part,
                }
                for p in self.points
            ],
        }


def cluster_roots(roots: np.ndarray, degree: int) -> list[tuple[complex, int]]:
    """Group companion eigenvalues into (center, multiplicity) clusters.

    A root of multiplicity m is perturbed by ~eps**(1/m), so the linkage
    radius grows with the degree.
    """
    eps = np.finfo(float).eps
    base = max(1e-6, 10 * eps ** (1.0 / max(degree, 1)))
    remaining = list(roots)
    clusters = []
    while remaining:
        seed = remaining.pop(0)
        members = [seed]
        changed = True
        while changed:
            changed = False
            for r in list(remaining):
                if min(abs(r - m) for m in members) <= base * (1 + abs(r)):
                    members.append(r)
                    remaining.remove(r)
                    changed = True
        clusters.append((complex(np.mean(members)), len(members)))
    return clusters


def _checked_clusters(p: Polynomial) -> list[tuple[complex, int]]:
    if p.degree < 1:
        return []
    out = []
    for c, m in cluster_roots(p.roots(), p.degree):
        order = p.vanishing_order(c, tol=1e-6)
        if order != m:
            raise RootClusterAmbiguity(
                f"cluster at {c:.6g} has {m} eigenvalues but derivative test gives order {order}"
            )
        out.append((c, m))
    return out


def charges(data: HolomorphicData) -> ChargeSet:
    """Distinct zeros of P*R^2 with their multiplicities split into P and R parts."""
    parts: list[list] = []  # [position, k, p]
    for poly, slot in ((data.P, 1), (data.R, 2)):
        for c, m in _checked_clusters(poly):
            for entry in parts:
                if abs(entry[0] - c) <= 1e-6 * (1 + abs(c)):
                    entry[slot] += m
                    break
            else:
                entry = [c, 0, 0]
                entry[slot] = m
                parts.append(entry)
    parts.sort(key=lambda e: (round(e[0].real, 9), round(e[0].imag, 9)))
    points = tuple(ChargePoint(complex(c), k + 2 * p, k, p) for c, k, p in parts)
    cs = ChargeSet(points, data.K, data.N)
    assert sum(p.charge for p in points) == cs.K
    return cs
