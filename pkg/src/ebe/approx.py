"""Three-region approximate metric H0 and its error diagnostics.

Near each charge point (half-ball) H0 is the model metric of the total
charge in the Bezout gauge.  Elsewhere it is the diagonal solution for P
twisted by the holomorphic unipotent gauge with Sigma = Q/R, which is an
exact solution; Sigma is cut off by chi in cones above the zeros of R and,
far out, by chi(r/rho) as in the far-region construction.  Everything is
expressed in the reference frame where phi_z = [[0, P], [0, 0]] and the
small section is (Q, R).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import cg

from . import matrices as mx
from .errors import DegenerateGeometry, GaugeMismatch, NewtonStall
from .geometry import Grid3
from .model import model_u
from .operators import moment_map, moment_map_at, phi_field, residual_norm, richardson, unitary_frame
from .polynomials import ChargeSet, HolomorphicData, Polynomial, Z, bezout, charges as charge_set


def chi(x):
    """Quintic smoothstep: 0 for x <= 1/4, 1 for x >= 3/4, C^2 in between."""
    t = np.clip((np.asarray(x, float) - 0.25) * 2.0, 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t**2)


def chi_prime(x):
    t = np.clip((np.asarray(x, float) - 0.25) * 2.0, 0.0, 1.0)
    return 60.0 * t**2 * (1.0 - t) ** 2


# --- decomposition -----------------------------------------------------------


@dataclass(frozen=True)
class RegionDecomposition:
    r0: float
    scale: float
    centers: tuple[complex, ...]
    radii: tuple[float, ...]
    charges: tuple[int, ...]
    r_parts: tuple[int, ...] = ()

    def ball_weights(self, x2, x3, y) -> list[np.ndarray]:
        """Region-1 weight 1 - chi(dist/r_i) for each half-ball."""
        out = []
        for p, r in zip(self.centers, self.radii):
            d = np.sqrt((x2 - p.real) ** 2 + (x3 - p.imag) ** 2 + y**2)
            out.append(1.0 - chi(d / r))
        return out

    def cone_cutoff(self, x2, x3, y):
        """prod_j chi(|z - p_j| / dist_j) over charge points where R vanishes.

        Zero inside the cones |z - p_j| < dist_j / 4 above the zeros of R, one
        near the boundary away from them.
        """
        out = np.ones(np.broadcast(x2, x3, y).shape)
        for p, kp in zip(self.centers, self.r_parts):
            if kp:
                h = np.hypot(x2 - p.real, x3 - p.imag)
                out = out * chi(h / np.maximum(np.sqrt(h**2 + y**2), 1e-300))
        return out

    def far_weight(self, x2, x3, y):
        """Weight of the far region; ramps up over 5 r_s < rho < 7 r_s."""
        rho = np.sqrt(x2**2 + x3**2 + y**2)
        return chi((rho - 4.0 * self.scale) / (4.0 * self.scale))

    def to_json(self) -> dict:
        return {
            "r0": self.r0,
            "scale": self.scale,
            "balls": [
                {"center": [c.real, c.imag], "radius": r, "charge": k}
                for c, r, k in zip(self.centers, self.radii, self.charges)
            ],
        }


def decompose(data: HolomorphicData, charges: ChargeSet | None = None) -> RegionDecomposition:
    """Half-balls r_i = min(1, half the closest spacing, 4 r_s - |p_i|) with r_s = max(r0, 1)."""
    charges = charge_set(data) if charges is None else charges
    pos = [pt.position for pt in charges.points]
    r0 = data.r0
    rs = max(r0, 1.0)
    min_gap = math.inf
    for i in range(len(pos)):
        for j in range(i + 1, len(pos)):
            d = abs(pos[i] - pos[j])
            if d < 1e-9:
                raise DegenerateGeometry(f"charge points {pos[i]} and {pos[j]} coincide")
            min_gap = min(min_gap, d)
    radii = tuple(min(1.0, 0.5 * min_gap, 4.0 * rs - abs(p)) for p in pos)
    return RegionDecomposition(
        r0, rs, tuple(pos), radii, tuple(pt.charge for pt in charges.points), tuple(pt.p_part for pt in charges.points)
    )


# --- gauges ------------------------------------------------------------------


def local_gauge(data: HolomorphicData, p: complex | None = None) -> Callable:
    """Polynomial gauge g = [[T, Q], [-S, R]] with QS + RT = 1.

    g^-1 maps the small section (Q, R) to (0, 1) and the upper-right entry of
    g^-1 phi_z g is P R^2, vanishing to order k + 2p at a charge point.  The
    gauge is global; ``p`` is accepted for symmetry with the local usage.
    """
    S, T = bezout(data.Q, data.R)

    def g(z):
        z = np.asarray(z)
        out = np.empty(z.shape + (2, 2), complex)
        out[..., 0, 0] = T(z)
        out[..., 0, 1] = data.Q(z)
        out[..., 1, 0] = -S(z)
        out[..., 1, 1] = data.R(z)
        return out

    g.S, g.T = S, T
    return g


def _normalizer(data: HolomorphicData, p: complex, K: int) -> Polynomial:
    """c(z) = P R^2 / (z - p)^K, nonvanishing near p."""
    c, rem = divmod(data.P * data.R * data.R, (Z - p) ** K)
    if rem.degree >= 0 and rem.scale > 1e-8 * max(1.0, c.scale):
        raise GaugeMismatch(f"P R^2 does not vanish to order {K} at {p}")
    return c


# --- diagonal solution -------------------------------------------------------


def _flux_laplacian(u: np.ndarray, grid: Grid3, jac: bool = False):
    """sum_j D_j sinh(du)/dx at interior nodes, optionally with its sparse Jacobian."""
    shape = grid.shape
    inner = tuple(n - 2 for n in shape)
    out = np.zeros(inner)
    rows, cols, vals = [], [], []
    index = np.arange(np.prod(inner)).reshape(inner)
    diag = np.zeros(inner)
    for axis, c in enumerate((grid.x2, grid.x3, grid.y)):
        dx = np.diff(c)
        w = 0.5 * (c[2:] - c[:-2])
        bshape = [1, 1, 1]
        bshape[axis] = -1
        du = np.diff(u, axis=axis)
        F = np.sinh(du) / dx.reshape(bshape)
        sl = [slice(1, -1)] * 3
        sl[axis] = slice(None)
        F = F[tuple(sl)]
        n = F.shape[axis]
        Fp = np.take(F, range(1, n), axis=axis)
        Fm = np.take(F, range(0, n - 1), axis=axis)
        out += (Fp - Fm) / w.reshape(bshape)
        if jac:
            C = (np.cosh(du) / dx.reshape(bshape))[tuple(sl)]
            Cp = np.take(C, range(1, n), axis=axis) / w.reshape(bshape)
            Cm = np.take(C, range(0, n - 1), axis=axis) / w.reshape(bshape)
            diag -= Cp + Cm
            m = inner[axis]
            for off, coef in ((1, Cp), (-1, Cm)):
                src = [slice(None)] * 3
                dst = [slice(None)] * 3
                if off == 1:
                    src[axis], dst[axis] = slice(0, m - 1), slice(1, m)
                else:
                    src[axis], dst[axis] = slice(1, m), slice(0, m - 1)
                rows.append(index[tuple(src)].ravel())
                cols.append(index[tuple(dst)].ravel())
                vals.append(coef[tuple(src)].ravel())
    if not jac:
        return out
    rows.append(index.ravel())
    cols.append(index.ravel())
    vals.append(diag.ravel())
    J = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(index.size,) * 2
    )
    return out, J


def _weighted_cg(J, rhs, grid: Grid3):
    """Solve J x = rhs for the negative definite flux Jacobian.

    Scaling rows by the trapezoid cell volumes makes -J symmetric, so Jacobi
    preconditioned CG applies.
    """
    wv = grid.volume_weights[1:-1, 1:-1, 1:-1].ravel()
    A = -(sp.diags(wv) @ J).tocsr()
    A = 0.5 * (A + A.T)
    x, info = cg(A, -wv * rhs, rtol=1e-12, maxiter=20000, M=sp.diags(1 / A.diagonal()))
    if info != 0:
        raise NewtonStall(f"inner CG failed (info={info})")
    return x


@dataclass
class DiagonalSolution:
    """u = model_u(N, |z - z_c|, y) + w with w = 0 on all faces."""

    grid: Grid3
    N: int
    center: complex
    w: np.ndarray
    residual: float
    iterations: int
    history: list[float] = field(default_factory=list)

    @property
    def u(self) -> np.ndarray:
        X2, X3, Y = self.grid.mesh
        return self._model(X2, X3, Y) + self.w

    def _model(self, x2, x3, y):
        return model_u(self.N, np.hypot(x2 - self.center.real, x3 - self.center.imag), y)

    def __call__(self, x2, x3, y):
        """u at arbitrary points; w is interpolated inside the box and zero outside."""
        x2, x3, y = np.broadcast_arrays(*(np.asarray(a, float) for a in (x2, x3, y)))
        base = self._model(x2, x3, y)
        if not np.any(self.w):
            return base
        interp = RegularGridInterpolator(
            (self.grid.x2, self.grid.x3, self.grid.y), self.w, bounds_error=False, fill_value=0.0
        )
        pts = np.stack([x2.ravel(), x3.ravel(), y.ravel()], axis=-1)
        return base + interp(pts).reshape(x2.shape)


def diagonal_residual(u: np.ndarray, P: Polynomial, grid: Grid3) -> np.ndarray:
    """Discrete Lap u + |P|^2 exp(-2u) at interior nodes (flux form)."""
    absP2 = np.abs(P(grid.z)) ** 2
    return _flux_laplacian(u, grid) + (absP2 * np.exp(-2 * u))[1:-1, 1:-1, 1:-1]


def diagonal_solve(P: Polynomial, grid: Grid3, tol: float = 1e-8, max_iter: int = 50) -> DiagonalSolution:
    """Damped Newton for the diagonal metric exp(u) solving Lap u + |P|^2 e^{-2u} = 0."""
    N = P.degree
    roots = P.roots()
    center = complex(np.mean(roots)) if roots.size else 0.0
    sol = DiagonalSolution(grid, N, center, np.zeros(grid.shape), 0.0, 0)
    u0 = sol.u
    absP2 = (np.abs(P(grid.z)) ** 2)[1:-1, 1:-1, 1:-1]
    # each term of the equation is of size 1/y^2 at the boundary
    scale = max(1.0, grid.y_min**-2)
    target = tol * scale

    def residual(w):
        u = u0 + w
        return _flux_laplacian(u, grid) + absP2 * np.exp(-2 * u[1:-1, 1:-1, 1:-1])

    w = np.zeros(grid.shape)
    F = residual(w)
    norm = float(np.max(np.abs(F)))
    history = [norm]
    it = 0
    while norm > target:
        if it >= max_iter:
            raise NewtonStall(f"diagonal Newton did not converge in {max_iter} steps", norm)
        u = u0 + w
        _, J = _flux_laplacian(u, grid, jac=True)
        J = J - sp.diags((2 * absP2 * np.exp(-2 * u[1:-1, 1:-1, 1:-1])).ravel())
        step = np.zeros(grid.shape)
        step[1:-1, 1:-1, 1:-1] = _weighted_cg(J, -F.ravel(), grid).reshape(F.shape)
        lam = 1.0
        for _ in range(30):
            trial = w + lam * step
            Ft = residual(trial)
            nt = float(np.max(np.abs(Ft)))
            if nt <= (1 - 1e-4 * lam) * norm:
                break
            lam *= 0.5
        else:
            raise NewtonStall("line search failed 30 times in the diagonal solve", norm)
        w, F, norm = trial, Ft, nt
        history.append(norm)
        it += 1
    sol.w = w
    sol.residual = norm
    sol.iterations = it
    sol.history = history
    return sol


# --- assembly ----------------------------------------------------------------


def _from_cholesky_form(u, sigma):
    """[[e^-u, -e^-u S], [-e^-u conj S, e^u + e^-u |S|^2]] = G^dag diag(e^-u, e^u) G."""
    em = np.exp(-u)
    H = np.empty(np.shape(u) + (2, 2), complex)
    H[..., 0, 0] = em
    H[..., 0, 1] = -em * sigma
    H[..., 1, 0] = -em * np.conj(sigma)
    H[..., 1, 1] = np.exp(u) + em * np.abs(sigma) ** 2
    return H


@dataclass
class ApproxMetric:
    """Global H0 in the reference frame plus a pointwise evaluator."""

    data: HolomorphicData
    decomposition: RegionDecomposition
    u_far: Callable
    grid: Grid3 | None = None
    H: np.ndarray | None = None
    region: np.ndarray | None = None
    sigma: np.ndarray | None = None

    def __post_init__(self):
        d = self.data
        self._g = local_gauge(d)
        self._norms = []
        for p, K in zip(self.decomposition.centers, self.decomposition.charges):
            self._norms.append(_normalizer(d, p, K))

    # regional representatives
    def region1(self, i, x2, x3, y):
        p = self.decomposition.centers[i]
        K = self.decomposition.charges[i]
        z = x2 + 1j * x3
        ut = model_u(K, np.abs(z - p), y) + np.log(np.abs(self._norms[i](z)))
        g = self._g(z)
        gi = mx.inv(g)
        D = np.zeros(np.shape(ut) + (2, 2), complex)
        D[..., 0, 0] = np.exp(-ut)
        D[..., 1, 1] = np.exp(ut)
        return mx.mul3(mx.dag(gi), D, gi)

    def sigma_at(self, x2, x3, y):
        """Sigma = c Q/R with c the cone cutoff, ramped to chi(r/rho) in the far region."""
        dec = self.decomposition
        z = x2 + 1j * x3
        r = np.abs(z)
        far = dec.far_weight(x2, x3, y)
        c = (1 - far) * dec.cone_cutoff(x2, x3, y) + far * chi(r / np.sqrt(r**2 + y**2))
        out = np.zeros(np.shape(c), complex)
        on = c > 0
        zz = z[on]
        out[on] = c[on] * self.data.Q(zz) / self.data.R(zz)
        return out

    def outer(self, x2, x3, y):
        """Diagonal solution twisted by the unipotent gauge [[1, -Sigma], [0, 1]]."""
        return _from_cholesky_form(self.u_far(x2, x3, y), self.sigma_at(x2, x3, y))

    def weights(self, x2, x3, y):
        balls = self.decomposition.ball_weights(x2, x3, y)
        far = self.decomposition.far_weight(x2, x3, y)
        return balls, far

    def __call__(self, x2, x3, y):
        """H0 at arbitrary points.

        Inside half-ball i the metric moves from the outer representative to
        the model representative along the geodesic g^dag exp(t sigma) g, with
        t = 1 - w_i; the two differ by orders of magnitude entrywise, so a
        linear blend would be dominated by the larger one.
        """
        x2, x3, y = np.broadcast_arrays(*(np.asarray(a, float) for a in (x2, x3, y)))
        balls = self.decomposition.ball_weights(x2, x3, y)
        w_balls = np.zeros(x2.shape)
        for w in balls:
            w_balls += w
        H = np.zeros(x2.shape + (2, 2), complex)
        on = w_balls < 1
        if np.any(on):
            H[on] = self.outer(x2[on], x3[on], y[on])
        for i, w in enumerate(balls):
            on = w > 0
            if not np.any(on):
                continue
            Hb = self.region1(i, x2[on], x3[on], y[on])
            part = w[on] < 1
            if np.any(part):
                _, sigma, g = mx.log_ratio(mx.normalize_det(H[on][part]), Hb[part])
                t = 1 - w[on][part]
                Hb[part] = mx.mul3(mx.dag(g), mx.expm_herm(sigma * t[:, None, None]), g)
            H[on] = Hb
        H = mx.normalize_det(H)
        return 0.5 * (H + mx.dag(H))

    def dominant_region(self, x2, x3, y):
        """Region label per point: i+1 for ball i (as 1), 2 for the middle, 3 for the far region."""
        balls, far = self.weights(x2, x3, y)
        label = np.full(np.shape(far), 2, int)
        for w in balls:
            label[w >= 0.5] = 1
        label[far >= 0.5] = 3
        return label


def check_gauge_consistency(data: HolomorphicData, decomposition: RegionDecomposition, tol: float = 1e-8):
    """Transition checks on each ball boundary: det g = 1, g g^-1 = 1 and g^-1 (Q, R) = (0, 1)."""
    g = local_gauge(data)
    worst = 0.0
    angles = np.linspace(0, 2 * np.pi, 16, endpoint=False)
    for p, r in zip(decomposition.centers, decomposition.radii):
        z = p + 0.5 * r * np.exp(1j * angles)
        G = g(z)
        Gi = mx.inv(G)
        sec = np.einsum("...ij,...j->...i", Gi, data.small_section(z))
        scale = 1 + np.abs(G).max() ** 2
        worst = max(
            worst,
            float(np.max(np.abs(mx.det(G) - 1))) / scale,
            float(np.max(np.abs(mx.mul(G, Gi) - mx.eye(z.shape)))) / scale,
            float(np.max(np.abs(sec - np.array([0, 1])))) / scale,
        )
    if worst > tol:
        raise GaugeMismatch(f"gauge transition defect {worst:.3g} exceeds {tol}")
    return worst


def assemble(
    data: HolomorphicData,
    decomposition: RegionDecomposition,
    u_far: Callable,
    grid: Grid3 | None = None,
) -> ApproxMetric:
    check_gauge_consistency(data, decomposition)
    metric = ApproxMetric(data, decomposition, u_far, grid)
    if grid is not None:
        X2, X3, Y = grid.mesh
        metric.H = metric(X2, X3, Y)
        metric.region = metric.dominant_region(X2, X3, Y)
        metric.sigma = metric.sigma_at(X2, X3, Y)
    return metric


def build_approx(data: HolomorphicData, grid: Grid3) -> tuple[ApproxMetric, DiagonalSolution]:
    """decompose + diagonal_solve + assemble on ``grid``."""
    dec = decompose(data)
    diag = diagonal_solve(data.P, grid)
    return assemble(data, dec, diag, grid), diag


# --- error diagnostics ---------------------------------------------------------


def error_terms(metric: ApproxMetric, x2, x3, y, h, levels: int = 2):
    """Entries A and B of the far-region error evaluated from their closed forms.

    A = Lap u + |P|^2 e^{-2u} + 4 e^{-2u}|d_z conj S|^2 + e^{-2u}|d_y conj S|^2
    B = e^{-u}(Lap conj S - 8 d_zbar u d_z conj S - 2 d_y u d_y conj S)
    with standard Wirtinger derivatives, all by central differences of step h
    (Richardson-extrapolated over ``levels`` halvings).
    """
    x2, x3, y, h = np.broadcast_arrays(*(np.asarray(a, float) for a in (x2, x3, y, h)))

    def derivs(hh):
        def f(a, b, c):
            return metric.u_far(a, b, c), np.conj(metric.sigma_at(a, b, c))

        u0, s0 = f(x2, x3, y)
        du, ds, lu, ls = [], [], 0.0, 0.0
        for axis in range(3):
            sh = [np.zeros_like(hh)] * 3
            sh[axis] = hh
            up, sp_ = f(x2 + sh[0], x3 + sh[1], y + sh[2])
            um, sm = f(x2 - sh[0], x3 - sh[1], y - sh[2])
            du.append((up - um) / (2 * hh))
            ds.append((sp_ - sm) / (2 * hh))
            lu = lu + (up - 2 * u0 + um) / hh**2
            ls = ls + (sp_ - 2 * s0 + sm) / hh**2
        return u0, du, ds, lu, ls

    def assemble_AB(hh):
        u, du, ds, lu, ls = derivs(hh)
        dz_s = 0.5 * (ds[0] - 1j * ds[1])
        dzb_u = 0.5 * (du[0] + 1j * du[1])
        P2 = np.abs(metric.data.P(x2 + 1j * x3)) ** 2
        e2 = np.exp(-2 * u)
        A = lu + P2 * e2 + 4 * e2 * np.abs(dz_s) ** 2 + e2 * np.abs(ds[2]) ** 2
        B = np.exp(-u) * (ls - 8 * dzb_u * dz_s - 2 * du[2] * ds[2])
        return A, B

    AB = richardson(lambda hh: np.stack(assemble_AB(hh)), h, levels)
    return AB[0], AB[1]


def unitary_moment_at(metric: ApproxMetric, x2, x3, y, h):
    """Unitary-frame M(H0) at scattered points via a local 7-point star of spacing h."""
    M = moment_map_at(metric, metric.data.P, x2, x3, y, h)
    x2, x3, y = np.broadcast_arrays(x2, x3, y)
    return unitary_frame(M, metric(x2, x3, y))


def _ray_points(direction, rhos):
    d = np.asarray(direction, float)
    d = d / np.linalg.norm(d)
    return rhos * d[0], rhos * d[1], rhos * d[2]


# directions inside the cone 1/4 < r/rho < 3/4 where the far-region error lives
DEFAULT_RAYS = ((1.0, 0.0, 1.0), (0.0, 1.0, 1.5), (-1.0, 0.5, 1.5), (0.6, -0.8, 2.0))


def error_report(metric: ApproxMetric, grid: Grid3 | None = None, rays=DEFAULT_RAYS, rho_max_factor=64.0):
    """Decay diagnostics of M(H0).

    (a) ray fit of |M(H0)| in the far region on scale-adaptive stars (h = rho/100)
    (b) sup y |M(H0)| over grid nodes of the bounded regions, evaluated with
        stars of spacing h = min(y, dist to charges)/8
    (c) closed-form A, B versus the generic moment map on far-region grid nodes
        (ray samples with rho <= 16 r_s when no grid is given), relative to
        the sup of |M(H0)| over those samples
    """
    from .analysis import decay_fit

    rs = metric.decomposition.scale
    rhos = np.geomspace(8 * rs, rho_max_factor * rs, 24)
    fits = []
    for direction in rays:
        x2, x3, y = _ray_points(direction, rhos)
        norm = mx.frob(unitary_moment_at(metric, x2, x3, y, rhos / 100))
        fit = decay_fit(norm, rhos)
        fits.append({"direction": list(direction), "slope": fit.slope, "residual": fit.residual})
    report = {"ray_fits": fits, "far_slope": max(f["slope"] for f in fits)}
    report.update(ab_cross_check(metric, grid))
    if grid is not None:
        report.update(near_error(metric, grid))
    return report


def _smooth_far_samples(metric: ApproxMetric, grid: Grid3):
    """Cell centres of the far region whose stars stay inside one cell.

    The diagonal solution is interpolated cell by cell and the cutoffs are
    piecewise polynomial, so both evaluations are compared only where every
    star point sees the same smooth piece.
    """
    dec = metric.decomposition
    c = [0.5 * (v[1:] + v[:-1]) for v in (grid.x2, grid.x3, grid.y)]
    half = [0.5 * np.diff(v) for v in (grid.x2, grid.x3, grid.y)]
    x2, x3, y = np.meshgrid(*c, indexing="ij")
    hx, hz, hy = np.meshgrid(*half, indexing="ij")
    h = np.minimum(np.minimum(hx, hz), hy)
    rho = np.sqrt(x2**2 + x3**2 + y**2)
    ratio = np.hypot(x2, x3) / rho
    margin = 4 * h / rho
    ok = rho - 2 * h >= 7 * dec.scale
    ok &= (np.abs(ratio - 0.25) > margin) & (np.abs(ratio - 0.75) > margin)
    return x2[ok], x3[ok], y[ok], h[ok]


def ab_cross_check(metric: ApproxMetric, grid: Grid3 | None = None) -> dict:
    rs = metric.decomposition.scale
    if grid is not None:
        x2, x3, y, h = _smooth_far_samples(metric, grid)
    else:
        rhos = np.geomspace(8 * rs, 16 * rs, 8)
        pts = [_ray_points(d, rhos) for d in DEFAULT_RAYS]
        x2, x3, y = (np.concatenate([p[i] for p in pts]) for i in range(3))
        h = np.sqrt(x2**2 + x3**2 + y**2) / 100
    if x2.size == 0:
        return {"ab_relative_deviation": None, "ab_samples": 0}
    Mu = unitary_frame(moment_map_at(metric, metric.data.P, x2, x3, y, h, levels=3), metric(x2, x3, y))
    A, B = error_terms(metric, x2, x3, y, h, levels=3)
    dev = np.sqrt(np.abs(Mu[..., 0, 0] - A) ** 2 + np.abs(Mu[..., 1, 0] - B) ** 2)
    ref = float(np.max(mx.frob(Mu)))
    return {
        "ab_relative_deviation": float(np.max(dev)) / ref if ref > 0 else float(np.max(dev)),
        "ab_samples": int(x2.size),
        "ab_sup_M": ref,
    }


def near_error(metric: ApproxMetric, grid: Grid3) -> dict:
    """sup y |M(H0)| over interior grid nodes with rho < 5 r_s (regions 1 and 2)."""
    dec = metric.decomposition
    X2, X3, Y = grid.mesh
    rho = np.sqrt(X2**2 + X3**2 + Y**2)
    sel = grid.interior & (rho < 5 * dec.scale)
    x2, x3, y = X2[sel], X3[sel], Y[sel]
    dist = np.full(x2.shape, np.inf)
    for p in dec.centers:
        dist = np.minimum(dist, np.sqrt((x2 - p.real) ** 2 + (x3 - p.imag) ** 2 + y**2))
    h = np.minimum(y, dist) / 8
    Mu = unitary_moment_at(metric, x2, x3, y, h)
    yM = y * mx.frob(Mu)
    i = int(np.argmax(yM))
    out = {"sup_yM": float(yM[i]), "argmax": [float(x2[i]), float(x3[i]), float(y[i])]}
    if metric.H is not None and metric.grid is grid:
        M = moment_map(metric.H, phi_field(metric.data.P, grid), grid)
        out["sup_yM_grid"] = float(np.max((Y * residual_norm(M, metric.H))[sel]))
    return out
