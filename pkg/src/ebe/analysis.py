"""Half-space Green's function of Delta - t, decay fits and the indicial-root table."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from .errors import CoincidentPoints, InsufficientDynamicRange
from .geometry import Grid3, flux_laplacian


@dataclass(frozen=True)
class IndicialTable:
    """Boundary growth rates of the linearized operator.

    At a zero-charge point the rates are exactly {-1, 2}.  At a charged
    point (or at infinity) they are -1/2 +- sqrt(gamma + 1/4) for spherical
    eigenvalues gamma, of which only the lower bound gamma_0 > 2 is known.
    """

    zero_charge_roots: tuple[int, int] = (-1, 2)
    gamma0_bound: float = 2.0

    @staticmethod
    def charged_roots(gamma: float) -> tuple[float, float]:
        s = math.sqrt(gamma + 0.25)
        return (-0.5 - s, -0.5 + s)

    @property
    def safe_window(self) -> tuple[float, float]:
        """Exponent interval guaranteed free of charged-point indicial roots."""
        return self.charged_roots(self.gamma0_bound)

    def to_json(self) -> dict:
        return {
            "zero_charge_roots": list(self.zero_charge_roots),
            "gamma0_lower_bound": self.gamma0_bound,
            "safe_window": list(self.safe_window),
        }


# --- Green's function --------------------------------------------------------


def greens_kernel(t: float, x, xp) -> np.ndarray:
    """G_t(x, x') = e^{-k|x-x'|}/(4 pi |x-x'|) - e^{-k|x-x*'|}/(4 pi |x-x*'|), k = sqrt(t).

    x* is the reflection of x' through y = 0.  Arrays broadcast over leading axes.
    """
    x = np.asarray(x, float)
    xp = np.asarray(xp, float)
    k = math.sqrt(t)
    d = np.linalg.norm(x - xp, axis=-1)
    if np.any(d == 0):
        raise CoincidentPoints("Green's kernel evaluated at coincident points")
    img = xp * np.array([1.0, 1.0, -1.0])
    di = np.linalg.norm(x - img, axis=-1)
    return np.exp(-k * d) / (4 * np.pi * d) - np.exp(-k * di) / (4 * np.pi * di)


def _ball_integral(t: float, a: float) -> float:
    """Integral of e^{-k r}/(4 pi r) over a ball of radius a centred at the pole."""
    k = math.sqrt(t)
    if k * a < 1e-6:
        return 0.5 * a * a
    return (1 - (1 + k * a) * math.exp(-k * a)) / k**2


def greens_solve(t: float, f: np.ndarray, grid: Grid3, targets=None, chunk: int = 2048) -> np.ndarray:
    """u(x) = int f(x') G_t(x, x') dx' by trapezoid quadrature over the grid nodes.

    ``u`` solves (-Delta + t) u = f in the half-space with u = 0 at y = 0.
    Only nodes where f is nonzero act as sources.  When a target coincides
    with a source node its cell is replaced by the integral over a ball of
    equal volume.  ``targets`` defaults to all grid nodes (returned in grid
    shape); otherwise it is an (..., 3) array.
    """
    X2, X3, Y = grid.mesh
    W = grid.volume_weights
    mask = f != 0
    if targets is None:
        pts = np.stack([X2, X3, Y], axis=-1)
    else:
        pts = np.asarray(targets, float)
    out_shape = pts.shape[:-1]
    pts = pts.reshape(-1, 3)
    if not np.any(mask):
        return np.zeros(out_shape)
    src = np.stack([X2[mask], X3[mask], Y[mask]], axis=-1)
    q = (f * W)[mask]
    vol = W[mask]
    k = math.sqrt(t)
    img = src * np.array([1.0, 1.0, -1.0])
    u = np.zeros(len(pts))
    for start in range(0, len(pts), chunk):
        tp = pts[start : start + chunk]
        d = np.linalg.norm(tp[:, None, :] - src[None, :, :], axis=-1)
        di = np.linalg.norm(tp[:, None, :] - img[None, :, :], axis=-1)
        self_hit = d == 0
        with np.errstate(divide="ignore"):
            direct = np.where(self_hit, 0.0, np.exp(-k * d) / (4 * np.pi * np.where(self_hit, 1.0, d)))
        vals = (direct - np.exp(-k * di) / (4 * np.pi * di)) @ q
        rows, cols = np.nonzero(self_hit)
        for r, c in zip(rows, cols):
            a = (3 * vol[c] / (4 * np.pi)) ** (1 / 3)
            vals[r] += (f[mask][c]) * _ball_integral(t, a)
        u[start : start + chunk] = vals
    return u.reshape(out_shape)


def poisson_fd_solve(t: float, f: np.ndarray, grid: Grid3, tol: float = 1e-10, boundary=None) -> np.ndarray:
    """Direct FD solve of (-Delta + t) u = f on the box.

    Face values are taken from ``boundary`` (a grid-shaped array) or are zero.
    The flux-form 7-point operator is symmetrized by the trapezoid weights and
    solved by conjugate gradients.
    """
    inner = tuple(n - 2 for n in grid.shape)
    index = np.arange(np.prod(inner)).reshape(inner)
    rows, cols, vals = [], [], []
    diag = np.full(inner, float(t))
    for axis, c in enumerate((grid.x2, grid.x3, grid.y)):
        dx = np.diff(c)
        w = 0.5 * (c[2:] - c[:-2])
        bshape = [1, 1, 1]
        bshape[axis] = -1
        cp = (1 / (dx[1:] * w)).reshape(bshape) * np.ones(inner)
        cm = (1 / (dx[:-1] * w)).reshape(bshape) * np.ones(inner)
        diag += cp + cm
        m = inner[axis]
        src = [slice(None)] * 3
        dst = [slice(None)] * 3
        src[axis], dst[axis] = slice(0, m - 1), slice(1, m)
        rows.append(index[tuple(src)].ravel())
        cols.append(index[tuple(dst)].ravel())
        vals.append(-cp[tuple(src)].ravel())
        src[axis], dst[axis] = slice(1, m), slice(0, m - 1)
        rows.append(index[tuple(src)].ravel())
        cols.append(index[tuple(dst)].ravel())
        vals.append(-cm[tuple(src)].ravel())
    rows.append(index.ravel())
    cols.append(index.ravel())
    vals.append(diag.ravel())
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(index.size,) * 2)
    wv = grid.volume_weights[1:-1, 1:-1, 1:-1].ravel()
    # with trapezoid weights w_x w_3 w_y the operator becomes symmetric
    Wm = sp.diags(wv)
    As = (Wm @ A).tocsr()
    As = 0.5 * (As + As.T)
    rhs = f[1:-1, 1:-1, 1:-1]
    if boundary is not None:
        ub = np.array(boundary, float)
        ub[1:-1, 1:-1, 1:-1] = 0.0
        rhs = rhs + flux_laplacian(ub, grid)[1:-1, 1:-1, 1:-1]
    b = wv * rhs.ravel()
    d = As.diagonal()
    M = sp.diags(1 / d)
    x, info = cg(As, b, rtol=tol, maxiter=20000, M=M)
    if info != 0:
        raise RuntimeError(f"CG failed to converge (info={info})")
    u = np.zeros(grid.shape) if boundary is None else np.array(boundary, float)
    u[1:-1, 1:-1, 1:-1] = x.reshape(inner)
    return u


# --- fits --------------------------------------------------------------------


@dataclass(frozen=True)
class DecayFit:
    slope: float
    intercept: float
    residual: float
    npoints: int

    def to_json(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "residual": self.residual, "npoints": self.npoints}


def decay_fit(values, coords, part: str = "all", fraction: float = 1 / 3, min_decades: float = 1.0) -> DecayFit:
    """Least-squares slope of log|values| against log(coords).

    ``part`` selects the outer (largest coords), lower (smallest coords) or
    all samples; ``fraction`` is the share kept for outer/lower.
    """
    v = np.abs(np.asarray(values, float)).ravel()
    c = np.asarray(coords, float).ravel()
    order = np.argsort(c)
    v, c = v[order], c[order]
    n = len(c)
    if part != "all":
        m = max(3, int(math.ceil(fraction * n)))
        sl = slice(n - m, n) if part == "outer" else slice(0, m)
        v, c = v[sl], c[sl]
    keep = v > 0
    v, c = v[keep], c[keep]
    if len(v) < 3:
        raise InsufficientDynamicRange("fewer than three nonzero samples")
    span = math.log10(v.max() / v.min())
    if span < min_decades:
        raise InsufficientDynamicRange(f"values span {span:.2f} decades, need {min_decades}")
    X = np.log(c)
    Yv = np.log(v)
    A = np.stack([X, np.ones_like(X)], axis=1)
    coef, *_ = np.linalg.lstsq(A, Yv, rcond=None)
    res = float(np.sqrt(np.mean((A @ coef - Yv) ** 2)))
    return DecayFit(float(coef[0]), float(coef[1]), res, len(v))


def ray(direction, rhos):
    """Points rho * d/|d| along a ray; returns an (n, 3) array."""
    d = np.asarray(direction, float)
    d = d / np.linalg.norm(d)
    return np.asarray(rhos, float)[:, None] * d[None, :]


def apriori_decay_check(t: float, f: np.ndarray, grid: Grid3, beta: float, direction=(1.0, 0.0, 1.0), rhos=None) -> dict:
    """Measured decay of u = greens_solve(t, f) against the bound rho_hat^-(2 + 2 beta').

    For t = 0 the bound is quadratic; for t > 0 any beta' < beta is allowed
    and we compare with beta' = beta - 1/4.  The boundary y-slope is fitted on
    a vertical transect through (1, 0).
    """
    if rhos is None:
        rhos = np.geomspace(grid.L / 2, grid.L * 0.9, 16) if t > 0 else np.geomspace(2 * grid.L, 40 * grid.L, 16)
    pts = ray(direction, rhos)
    u = greens_solve(t, f, grid, pts)
    fit = decay_fit(u, rhos)
    expected = 2.0 if t == 0 else 2.0 + 2.0 * (beta - 0.25)
    rho_hat = np.sqrt(rhos**2 + 1)
    constant = float(np.max(np.abs(u) * rho_hat**expected))
    ys = np.geomspace(grid.y_min * 1e-3, grid.y_min * 0.5, 8)
    vert = np.stack([np.ones_like(ys), np.zeros_like(ys), ys], axis=-1)
    yfit = decay_fit(greens_solve(t, f, grid, vert), ys, min_decades=0.5)
    return {
        "t": t,
        "exponent": -fit.slope,
        "expected_min": expected,
        "constant": constant,
        "boundary_y_slope": yfit.slope,
    }
