"""Closed-form charge-k model solutions and an independent ODE oracle.

The model metric is H_k = diag(exp(-u_k), exp(u_k)) with

    exp(u_k) = ((rho + y)^(k+1) - (rho - y)^(k+1)) / (2(k+1)),

which solves Lap u + r^(2k) exp(-2u) = 0 for phi_z = [[0, z^k], [0, 0]].
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError
from .geometry import Grid3, sinh_flux_laplacian


def _ab(r, y):
    r = np.abs(np.asarray(r, float))
    y = np.asarray(y, float)
    if np.any(y <= 0):
        raise DomainError("model solutions are defined for y > 0 only")
    rho = np.hypot(r, y)
    a = rho + y
    # log((rho - y)/(rho + y)) without forming rho - y
    with np.errstate(divide="ignore"):
        ell = np.log1p(-2.0 * y / a)
    return r, y, rho, a, ell


def model_u(k: int, r, y):
    """u_k(r, y); stable when y << r (the ratio of the two powers is near 1)."""
    r, y, rho, a, ell = _ab(r, y)
    m = k + 1
    out = m * np.log(a) + np.log(-np.expm1(m * ell)) - np.log(2.0 * m)
    return out if out.shape else float(out)


def model_du(k: int, r, y):
    """Analytic (r d_r u_k, d_y u_k)."""
    r, y, rho, a, ell = _ab(r, y)
    m = k + 1
    em = np.expm1(m * ell)  # -(1 - (b/a)^m)
    dy = m * (2.0 + em) / (rho * -em)
    if k == 0:
        rdr = np.zeros_like(dy)
    else:
        rdr = m * (r**2 / (rho * a)) * np.expm1((m - 1) * ell) / em
    return rdr, dy


def model_metric(k: int, r, y):
    """H_k sampled at the given points, shape (..., 2, 2)."""
    u = np.asarray(model_u(k, r, y))
    H = np.zeros(u.shape + (2, 2), complex)
    H[..., 0, 0] = np.exp(-u)
    H[..., 1, 1] = np.exp(u)
    return H


def model_metric_at(k: int, x2, x3, y, center: complex = 0.0):
    return model_metric(k, np.hypot(x2 - center.real, x3 - center.imag), y)


_TAU3 = np.diag([0.5j, -0.5j])


def model_unitary_triple(k: int, r, y, theta):
    """Unitary triple of the charge-k model.

    Returns (A_theta, phi_z, phi_1): the d(theta) coefficient of the
    connection, the unitary Higgs component and phi_1, each (..., 2, 2).
    """
    rdr, dy = model_du(k, r, y)
    u = np.asarray(model_u(k, r, y))
    z = np.asarray(r) * np.exp(1j * np.asarray(theta))
    A = rdr[..., None, None] * _TAU3
    phi1 = dy[..., None, None] * _TAU3
    phiz = np.zeros(u.shape + (2, 2), complex)
    phiz[..., 0, 1] = np.exp(-u) * z**k
    return A, phiz, phi1


def ode_oracle(k: int, r, y):
    """u_k rebuilt from the scale-invariant reduction.

    With sigma = y/r = sinh(tau), v_k(tau) = log(sinh((k+1) tau)/(k+1)) and
    u_k = v_k + (k+1) log r.
    """
    r = np.asarray(r, float)
    y = np.asarray(y, float)
    tau = np.arcsinh(y / r)
    m = k + 1
    # log sinh(m tau) = m tau + log(1 - exp(-2 m tau)) - log 2
    v = m * tau + np.log(-np.expm1(-2 * m * tau)) - np.log(2.0) - np.log(m)
    return v + m * np.log(r)


def ode_residual(k: int, taus) -> np.ndarray:
    """v'' + exp(-2v) for v = log(sinh((k+1)tau)/(k+1)), differentiated symbolically."""
    import sympy

    t = sympy.Symbol("t", positive=True)
    v = sympy.log(sympy.sinh((k + 1) * t) / (k + 1))
    expr = sympy.diff(v, t, 2) + sympy.exp(-2 * v)
    f = sympy.lambdify(t, sympy.simplify(expr), "numpy")
    return np.broadcast_to(np.asarray(f(np.asarray(taus, float)), float), np.shape(taus))


def model_residual(k: int, grid: Grid3, center: complex = 0.0) -> np.ndarray:
    """Discrete Lap u_k + r^(2k) exp(-2 u_k) at interior nodes (zero on faces).

    The Laplacian is the sinh flux form, i.e. the diagonal entry of the discrete
    moment map, so this is the residual the solvers see.
    """
    X2, X3, Y = grid.mesh
    r = np.hypot(X2 - center.real, X3 - center.imag)
    u = model_u(k, r, Y)
    res = sinh_flux_laplacian(u, grid) + r ** (2 * k) * np.exp(-2 * u)
    return np.where(grid.interior, res, 0.0)
