"""Elementwise 2x2 complex matrix algebra on stacked fields (..., 2, 2)."""

from __future__ import annotations

import numpy as np

from .errors import FactorizationFailure, LogBranch


def mul(A, B):
    """Stacked 2x2 product written out entrywise (faster than matmul for tiny blocks)."""
    out = np.empty(np.broadcast_shapes(A.shape, B.shape), complex)
    a00, a01, a10, a11 = A[..., 0, 0], A[..., 0, 1], A[..., 1, 0], A[..., 1, 1]
    b00, b01, b10, b11 = B[..., 0, 0], B[..., 0, 1], B[..., 1, 0], B[..., 1, 1]
    out[..., 0, 0] = a00 * b00 + a01 * b10
    out[..., 0, 1] = a00 * b01 + a01 * b11
    out[..., 1, 0] = a10 * b00 + a11 * b10
    out[..., 1, 1] = a10 * b01 + a11 * b11
    return out


def mul3(A, B, C):
    return mul(mul(A, B), C)


def comm(A, B):
    return mul(A, B) - mul(B, A)


def dag(A):
    return np.conj(np.swapaxes(A, -1, -2))


def det(A):
    return A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]


def trace(A):
    return A[..., 0, 0] + A[..., 1, 1]


def inv(A):
    d = det(A)
    out = np.empty_like(A, dtype=complex)
    out[..., 0, 0] = A[..., 1, 1] / d
    out[..., 1, 1] = A[..., 0, 0] / d
    out[..., 0, 1] = -A[..., 0, 1] / d
    out[..., 1, 0] = -A[..., 1, 0] / d
    return out


def eye(shape=()):
    out = np.zeros(tuple(shape) + (2, 2), complex)
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = 1.0
    return out


def herm_traceless(X):
    """Projection onto traceless Hermitian matrices."""
    Hm = 0.5 * (X + dag(X))
    t = 0.5 * trace(Hm).real
    Hm[..., 0, 0] -= t
    Hm[..., 1, 1] -= t
    return Hm


def frob(X):
    return np.sqrt(np.sum(np.abs(X) ** 2, axis=(-2, -1)))


# traceless Hermitian sigma = [[a, b], [conj b, -a]] <-> (a, Re b, Im b)


def pack(sigma):
    return np.stack([sigma[..., 0, 0].real, sigma[..., 0, 1].real, sigma[..., 0, 1].imag], axis=-1)


def unpack(v):
    a, br, bi = v[..., 0], v[..., 1], v[..., 2]
    out = np.empty(v.shape[:-1] + (2, 2), complex)
    out[..., 0, 0] = a
    out[..., 1, 1] = -a
    out[..., 0, 1] = br + 1j * bi
    out[..., 1, 0] = br - 1j * bi
    return out


def expm_herm(sigma, t: float = 1.0):
    """exp(t sigma) for traceless Hermitian sigma: cosh(l) + sinh(l)/l * sigma."""
    a = sigma[..., 0, 0].real
    lam = np.sqrt(a**2 + np.abs(sigma[..., 0, 1]) ** 2) * t
    c = np.cosh(lam)
    with np.errstate(invalid="ignore", divide="ignore"):
        sl = np.where(lam > 1e-8, np.sinh(lam) / np.where(lam > 0, lam, 1), 1.0 + lam**2 / 6)
    out = (t * sl)[..., None, None] * sigma
    out[..., 0, 0] += c
    out[..., 1, 1] += c
    return out


def logm_posdef(X, tol: float = 1e-10):
    """Principal log of a Hermitian positive det-1 matrix field (traceless Hermitian)."""
    Xh = 0.5 * (X + dag(X))
    half_tr = 0.5 * trace(Xh).real
    if np.any(half_tr < 1 - tol) or np.any(np.abs(det(Xh) - 1) > 1e-6):
        raise LogBranch("matrix is not positive definite with unit determinant")
    lam = np.arccosh(np.maximum(half_tr, 1.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(lam > 1e-8, lam / np.sinh(np.where(lam > 0, lam, 1)), 1.0 - lam**2 / 6)
    out = Xh.copy()
    out[..., 0, 0] -= half_tr
    out[..., 1, 1] -= half_tr
    return f[..., None, None] * out


def cholesky_upper(H):
    """Upper-triangular g with positive diagonal and H = g^dagger g."""
    h11 = H[..., 0, 0].real
    if np.any(h11 <= 0):
        raise FactorizationFailure("non-positive (1,1) entry")
    al = np.sqrt(h11)
    be = H[..., 0, 1] / al
    rest = H[..., 1, 1].real - np.abs(be) ** 2
    if np.any(rest <= 0):
        raise FactorizationFailure("metric sample is not positive definite")
    g = np.zeros(H.shape, complex)
    g[..., 0, 0] = al
    g[..., 0, 1] = be
    g[..., 1, 1] = np.sqrt(rest)
    return g


def normalize_det(H):
    """Scale a Hermitian positive field to unit determinant."""
    d = det(H).real
    return H / np.sqrt(d)[..., None, None]


def log_ratio(H, K):
    """s = log(K^-1 H) as a K-self-adjoint field, plus the factor g_K (K = g^dag g).

    Returns (s, sigma, g) with s = g^-1 sigma g and sigma traceless Hermitian.
    """
    g = cholesky_upper(K)
    gi = inv(g)
    middle = mul3(dag(gi), H, gi)
    sigma = logm_posdef(middle)
    return mul3(gi, sigma, g), sigma, g
