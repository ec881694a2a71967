"""Continuity-method solver for M(H) = 0 with H = H0 e^s, plus solution diagnostics.

The unknown is stored in the unitary frame of H0: with H0 = g0^dag g0 we
write H = g0^dag e^sigma g0, sigma traceless Hermitian, which is the same as
H0 e^s with s = g0^-1 sigma g0.  In this frame

    N_t(sigma) = Ad(e^{sigma/2}) g0 M(H) g0^-1 + t sigma

is the unitary-frame moment map of H plus t sigma, so it is Hermitian up to
discretization error; we keep its traceless Hermitian part.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, aslinearoperator, gmres

from . import matrices as mx
from .errors import ContinuationStall, KrylovStall, NewtonStall
from .geometry import Grid3, WeightFunctions, d_x2, d_x3, d_y, weighted_sup_norm
from .operators import moment_map, phi_field
from .polynomials import HolomorphicData, charges

ARMIJO = 1e-4
MAX_HALVINGS = 30
# warm starts are capped node-wise at this Frobenius size so that e^s stays finite
WARM_START_CAP = 1.0
# (mu, nu, beta) of the reported weighted norm of s
NORM_EXPONENTS = (0.0, 1.0, 1.5)

_OFFSETS = ((0, 0, 0), (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))


def default_schedule(steps: int = 12) -> list[float]:
    return [2.0**-j for j in range(steps + 1)] + [0.0]


class ContinuityProblem:
    """N_t and its sparse Jacobian for fixed data, H0 and grid."""

    def __init__(self, data: HolomorphicData, H0: np.ndarray, grid: Grid3):
        self.data = data
        self.grid = grid
        self.H0 = H0
        self.g0 = mx.cholesky_upper(H0)
        self.g0i = mx.inv(self.g0)
        self.phi = phi_field(data.P, grid)
        self.M0 = self.unitary_moment(self.zeros())
        self.scale = max(1.0, float(np.max(mx.frob(mx.herm_traceless(self.M0)))))
        inner = tuple(n - 2 for n in grid.shape)
        self.inner = inner
        i, j, k = np.meshgrid(*[np.arange(n) for n in inner], indexing="ij")
        # nodes of one colour never share a 7-point stencil
        self.color = (i + 2 * j + 3 * k) % 7
        self._pattern = None

    @property
    def n_unknowns(self) -> int:
        return 3 * int(np.prod(self.inner))

    def zeros(self) -> np.ndarray:
        return np.zeros(self.grid.shape + (2, 2), complex)

    def metric(self, s: np.ndarray) -> np.ndarray:
        return mx.mul3(mx.dag(self.g0), mx.expm_herm(s), self.g0)

    def holomorphic(self, s: np.ndarray) -> np.ndarray:
        """s in the holomorphic frame (H0-self-adjoint)."""
        return mx.mul3(self.g0i, s, self.g0)

    def unitary_moment(self, s: np.ndarray) -> np.ndarray:
        M = moment_map(self.metric(s), self.phi, self.grid, check=False)
        left = mx.mul(mx.expm_herm(s, 0.5), self.g0)
        right = mx.mul(self.g0i, mx.expm_herm(s, -0.5))
        return mx.mul3(left, M, right)

    def residual(self, s: np.ndarray, t: float) -> np.ndarray:
        out = mx.herm_traceless(self.unitary_moment(s)) + t * s
        out[~self.grid.interior] = 0.0
        return out

    def to_vector(self, s: np.ndarray) -> np.ndarray:
        return mx.pack(s)[1:-1, 1:-1, 1:-1].reshape(-1)

    def from_vector(self, v: np.ndarray) -> np.ndarray:
        full = np.zeros(self.grid.shape + (3,))
        full[1:-1, 1:-1, 1:-1] = v.reshape(self.inner + (3,))
        out = mx.unpack(full)
        out[~self.grid.interior] = 0.0
        return out

    def jacobian(self, s: np.ndarray, t: float, eps: float = 1e-7, base_residual=None) -> sp.csr_matrix:
        """Forward-difference Jacobian of N_t from 21 coloured probes."""
        base = mx.pack(s)
        N0 = mx.pack(self.residual(s, t) if base_residual is None else base_residual)
        interior_color = np.full(self.grid.shape, -1)
        interior_color[1:-1, 1:-1, 1:-1] = self.color
        resp = {}
        for c in range(7):
            sel = interior_color == c
            for k in range(3):
                v = base.copy()
                v[..., k][sel] += eps
                plus = mx.pack(self.residual(mx.unpack(v), t))
                resp[c, k] = ((plus - N0) / eps)[1:-1, 1:-1, 1:-1]
        if self._pattern is None:
            self._pattern = self._jacobian_pattern()
        J, sources = self._pattern
        stacked = np.stack([resp[c, k].reshape(-1, 3) for c in range(7) for k in range(3)])
        J = J.copy()
        J.data = stacked.reshape(-1)[sources]
        return J

    def _jacobian_pattern(self):
        """CSR structure of the 7-point block Jacobian and, per stored entry, its source in the probe stack.

        Probe (c, k) perturbs component k at nodes of colour c; its response at
        node j, component m, is the entry (3 j + m, 3 (j + o) + k) for the unique
        stencil offset o with colour(j + o) = c.
        """
        inner = self.inner
        nodes = int(np.prod(inner))
        index = np.arange(nodes).reshape(inner)
        rows, cols, src = [], [], []
        for off in _OFFSETS:
            out_sl = tuple(slice(max(0, -a), n - max(0, a)) for a, n in zip(off, inner))
            in_sl = tuple(slice(max(0, a), n + min(0, a)) for a, n in zip(off, inner))
            r, c_idx, col_color = index[out_sl].ravel(), index[in_sl].ravel(), self.color[in_sl].ravel()
            for k in range(3):
                probe = col_color * 3 + k
                for m in range(3):
                    rows.append(3 * r + m)
                    cols.append(3 * c_idx + k)
                    src.append((probe * nodes + r) * 3 + m)
        rows, cols, src = (np.concatenate(v) for v in (rows, cols, src))
        n = self.n_unknowns
        order = np.lexsort((cols, rows))
        rows, cols, src = rows[order], cols[order], src[order]
        indptr = np.searchsorted(rows, np.arange(n + 1))
        J = sp.csr_matrix((np.zeros(len(rows)), cols, indptr), shape=(n, n))
        return J, src


# --- linear algebra ------------------------------------------------------------


def block_jacobi(A, block: int = 1) -> LinearOperator:
    """Inverse of the block diagonal of a sparse matrix as a preconditioner."""
    A = sp.csr_matrix(A)
    n = A.shape[0]
    nb = n // block
    blocks = np.zeros((nb, block, block))
    for i in range(block):
        for j in range(block):
            blocks[:, i, j] = A[i::block, j::block].diagonal()
    inv = np.linalg.inv(blocks)
    B = sp.bsr_matrix((inv, np.arange(nb), np.arange(nb + 1)), shape=(n, n))
    return aslinearoperator(B.tocsr())


def linear_solve(A, rhs: np.ndarray, tol: float = 1e-8, preconditioner=None, block: int = 1, restart: int = 60) -> np.ndarray:
    """Preconditioned restarted GMRES to relative residual ``tol``.

    ``A`` is a sparse matrix, a LinearOperator or a callable v -> A v.  The
    default preconditioner is (block) Jacobi built from the diagonal of a
    sparse ``A``.  Raises KrylovStall after max(10 n^(1/3), 500) iterations.
    """
    rhs = np.asarray(rhs, float)
    n = rhs.size
    if not np.any(rhs):
        return np.zeros(n)
    if callable(A) and not isinstance(A, LinearOperator) and not sp.issparse(A):
        op = LinearOperator((n, n), matvec=A, dtype=float)
    else:
        op = A if isinstance(A, LinearOperator) else aslinearoperator(A)
    if preconditioner is None and sp.issparse(A):
        preconditioner = block_jacobi(A, block)
    cap = int(max(10 * n ** (1 / 3), 500))
    restart = min(restart, n)
    x, info = gmres(op, rhs, rtol=tol, atol=0.0, restart=restart, maxiter=max(1, cap // restart), M=preconditioner)
    res = float(np.linalg.norm(op.matvec(x) - rhs) / np.linalg.norm(rhs))
    if info != 0 and res > tol:
        raise KrylovStall(f"GMRES stopped at relative residual {res:.3g}", x=x, residual=res)
    return x


# --- Newton and continuation ------------------------------------------------------


def sup_norm(N: np.ndarray) -> float:
    return float(np.max(mx.frob(N)))


class JacobianCache:
    """Last assembled Jacobian and the t it was built at; N_t depends on t only through t I."""

    def __init__(self):
        self.J = None
        self.t = None

    def at(self, t: float):
        if self.J is None:
            return None
        return self.J + (t - self.t) * sp.identity(self.J.shape[0], format="csr")


def newton(problem: ContinuityProblem, s: np.ndarray, t: float, tol: float, max_iter: int = 20, cache: JacobianCache | None = None):
    """Damped Newton on N_t(s) = 0 with Armijo backtracking on sup |N_t|.

    A cached Jacobian is tried first; it is kept only if the full step at
    least halves the residual.  Returns (s, residual, trace).  Raises NewtonStall.
    """
    cache = JacobianCache() if cache is None else cache
    N = problem.residual(s, t)
    res = sup_norm(N)
    trace = [{"t": t, "iteration": 0, "residual": res, "step": 0.0}]
    it = 0
    stale = cache.J is not None
    while res > tol:
        if it >= max_iter:
            raise NewtonStall(f"no convergence at t={t:g} after {max_iter} iterations", residual=res)
        it += 1
        if stale:
            J = cache.at(t)
        else:
            J = problem.jacobian(s, t, base_residual=N)
            cache.J, cache.t = J, t
        try:
            # inexact Newton: the linear residual only has to fall below the target
            eta = min(1e-3, max(1e-8, 0.1 * tol / res))
            dv = linear_solve(J, -problem.to_vector(N), tol=eta, block=3)
        except KrylovStall as exc:
            dv = exc.x
        ds = problem.from_vector(dv)
        defect = float(mx.frob(ds - mx.herm_traceless(ds)).max())
        if stale:
            trial = mx.herm_traceless(s + ds)
            Nt = problem.residual(trial, t)
            rt = sup_norm(Nt)
            if np.isfinite(rt) and rt <= 0.1 * res:
                s, N, res = trial, Nt, rt
                trace.append({"t": t, "iteration": it, "residual": res, "step": 1.0, "reused_jacobian": True, "projection_defect": defect})
                continue
            stale = False
            it -= 1
            continue
        lam = 1.0
        for _ in range(MAX_HALVINGS + 1):
            trial = mx.herm_traceless(s + lam * ds)
            Nt = problem.residual(trial, t)
            rt = sup_norm(Nt)
            if np.isfinite(rt) and rt <= (1 - ARMIJO * lam) * res:
                break
            lam *= 0.5
        else:
            raise NewtonStall(f"line search failed at t={t:g}", residual=res)
        s, N, res = trial, Nt, rt
        trace.append({"t": t, "iteration": it, "residual": res, "step": lam, "projection_defect": defect})
        # a Jacobian that produced a full step is worth reusing
        stale = lam == 1.0
    return s, res, trace


@dataclass
class SolveState:
    """Accepted continuation state; ``s`` is in the unitary frame of H0."""

    t: float
    s: np.ndarray
    residual: float
    weighted_residual: float
    trace: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"t": self.t, "residual": self.residual, "weighted_residual": self.weighted_residual, "trace": self.trace}


def _state(problem: ContinuityProblem, s, t, trace) -> SolveState:
    N = problem.residual(s, t)
    charges_at = [p.position for p in charges(problem.data).points]
    return SolveState(t, s, sup_norm(N), weighted_sup_norm(N, problem.grid, (0.0, 0.0, -2.0), charges_at), trace)


def warm_start(problem: ContinuityProblem, cap: float = WARM_START_CAP) -> np.ndarray:
    """-M(H0) in the unitary frame, shrunk node-wise to Frobenius size <= cap."""
    s = -mx.herm_traceless(problem.M0)
    size = mx.frob(s)
    factor = np.where(size > cap, cap / np.where(size > 0, size, 1.0), 1.0)
    s = s * factor[..., None, None]
    s[~problem.grid.interior] = 0.0
    return s


def continuation(
    problem: ContinuityProblem,
    schedule=None,
    tol: float | None = None,
    s_init: np.ndarray | None = None,
    max_bisections: int = 5,
    max_iter: int = 20,
    log=None,
) -> tuple[SolveState, list[SolveState]]:
    """Follow N_t(s) = 0 along the schedule, bisecting failed steps."""
    schedule = list(default_schedule() if schedule is None else schedule)
    tol = 1e-8 * problem.scale if tol is None else tol
    s = problem.zeros() if s_init is None else mx.herm_traceless(s_init)
    s[~problem.grid.interior] = 0.0
    accepted: list[SolveState] = []
    last_t = None
    pending = list(schedule)
    bisections = 0
    cache = JacobianCache()
    while pending:
        t = pending.pop(0)
        try:
            s_new, _, trace = newton(problem, s, t, tol, max_iter, cache)
        except NewtonStall as exc:
            if last_t is None or bisections >= max_bisections:
                state = accepted[-1] if accepted else None
                raise ContinuationStall(f"Newton failed at t={t:g}: {exc}", last_t=last_t, state=state) from exc
            bisections += 1
            pending = [0.5 * (last_t + t), t] + pending
            continue
        s = s_new
        last_t = t
        accepted.append(_state(problem, s, t, trace))
        if log is not None:
            log(f"t={t:.6g} residual={accepted[-1].residual:.3e} iterations={len(trace) - 1}")
    return accepted[-1], accepted


# --- extraction ------------------------------------------------------------------------


def extract_triple(H: np.ndarray, P, grid: Grid3) -> dict:
    """Unitary triple from H = g^dag g with g upper triangular.

    A_zbar = -(delbar g) g^-1, A_z = (g^dag)^-1 del g^dag with standard
    Wirtinger derivatives, phi_z = g phi g^-1 and, from g d_y g^-1 = d_y - i phi_1 + A_y,
    phi_1 = -i Herm((d_y g) g^-1), A_y = -Anti((d_y g) g^-1).  Also returns
    A_theta = i z A_z - i zbar A_zbar and the unitarity defect sup|A_zbar^dag + A_z|.
    """
    g = mx.cholesky_upper(H)
    gi = mx.inv(g)
    gd = mx.dag(g)
    d2 = lambda f: _deriv(f, grid, d_x2)  # noqa: E731
    d3 = lambda f: _deriv(f, grid, d_x3)  # noqa: E731
    dbar_g = 0.5 * (d2(g) + 1j * d3(g))
    d_gd = 0.5 * (d2(gd) - 1j * d3(gd))
    A_zbar = -mx.mul(dbar_g, gi)
    A_z = mx.mul(mx.inv(gd), d_gd)
    X = mx.mul(_deriv(g, grid, d_y), gi)
    phi1 = -1j * 0.5 * (X + mx.dag(X))
    A_y = -0.5 * (X - mx.dag(X))
    phi_u = mx.mul3(g, phi_field(P, grid), gi)
    z = grid.z[..., None, None]
    A_theta = 1j * z * A_z - 1j * np.conj(z) * A_zbar
    defect = float(np.max(np.abs(mx.dag(A_zbar) + A_z)))
    return {"A_zbar": A_zbar, "A_z": A_z, "A_y": A_y, "A_theta": A_theta, "phi_z": phi_u, "phi_1": phi1, "unitarity_defect": defect}


def _deriv(f, grid, op):
    out = np.empty_like(f)
    for a in range(2):
        for b in range(2):
            out[..., a, b] = op(f[..., a, b].real, grid) + 1j * op(f[..., a, b].imag, grid)
    return out


def small_section_check(H: np.ndarray, data: HolomorphicData, grid: Grid3, layers: int = 4, section=None) -> dict:
    """y-exponent of |g (Q, R)^T| on the lowest layers along a transect away from charges.

    ``section`` overrides (Q, R) with a constant vector (negative control).
    """
    from .analysis import decay_fit

    g = mx.cholesky_upper(H)
    Z = grid.z
    if section is None:
        v0, v1 = data.Q(Z), data.R(Z)
    else:
        v0 = np.full(Z.shape, complex(section[0]))
        v1 = np.full(Z.shape, complex(section[1]))
    gs0 = g[..., 0, 0] * v0 + g[..., 0, 1] * v1
    gs1 = g[..., 1, 1] * v1
    norm = np.sqrt(np.abs(gs0) ** 2 + np.abs(gs1) ** 2)
    centers = [p.position for p in charges(data).points]
    j = grid.shape[1] // 2
    slopes, used = [], []
    for i in range(1, grid.shape[0] - 1):
        x = grid.x2[i] + 1j * grid.x3[j]
        if any(abs(x - c) < 1.0 for c in centers) or abs(grid.x2[i]) > 0.75 * grid.L:
            continue
        vals = norm[i, j, :layers]
        if np.any(vals == 0):
            continue
        fit = decay_fit(vals, grid.y[:layers], min_decades=0.0)
        slopes.append(fit.slope)
        used.append(float(grid.x2[i]))
    if not slopes:
        return {"exponent": None, "exponents": [], "x2": []}
    return {"exponent": float(np.median(slopes)), "exponents": slopes, "x2": used}


def gamma_quadratic(sigma: np.ndarray, X: np.ndarray) -> np.ndarray:
    """<X, gamma(ad_sigma) X> with gamma(x) = (e^x - 1)/x, via the eigenbasis of sigma."""
    a = sigma[..., 0, 0].real
    b = sigma[..., 0, 1]
    lam = np.sqrt(a**2 + np.abs(b) ** 2)
    U = np.zeros(sigma.shape, complex)
    small = lam < 1e-300
    v1 = _eigvec(a, b, lam, +1)
    v2 = _eigvec(a, b, lam, -1)
    U[..., :, 0] = v1
    U[..., :, 1] = v2
    # standard basis where sigma vanishes
    U[small] = np.eye(2)
    Y = mx.mul3(mx.dag(U), X, U)
    ev = np.stack([lam, -lam], axis=-1)
    total = np.zeros(a.shape)
    for i in range(2):
        for j in range(2):
            d = ev[..., i] - ev[..., j]
            with np.errstate(invalid="ignore", divide="ignore"):
                gam = np.where(np.abs(d) > 1e-8, np.expm1(d) / np.where(d == 0, 1, d), 1 + d / 2)
            total = total + gam * np.abs(Y[..., i, j]) ** 2
    return total


def _eigvec(a, b, lam, sign):
    """Unit eigenvector of [[a, b], [conj b, -a]] for eigenvalue sign * lam."""
    mu = sign * lam
    # (a - mu) x + b y = 0 -> (x, y) = (b, mu - a) or (mu + a, conj b)
    c1 = np.stack([b, (mu - a) + 0j], axis=-1)
    c2 = np.stack([(mu + a) + 0j, np.conj(b)], axis=-1)
    n1 = np.linalg.norm(c1, axis=-1)
    n2 = np.linalg.norm(c2, axis=-1)
    v = np.where((n1 >= n2)[..., None], c1, c2)
    n = np.maximum(n1, n2)
    with np.errstate(invalid="ignore", divide="ignore"):
        return v / np.where(n > 0, n, 1)[..., None]


def inner_product_identity_check(K: np.ndarray, P, grid: Grid3, s: np.ndarray) -> dict:
    """Both sides of Tr(s (M(K e^s) - M(K))) = -Lap Tr(s^2)/2 + sum_i <W_i, gamma(sigma) W_i>.

    ``s`` is K-self-adjoint in the holomorphic frame, K = g^dag g, sigma = g s g^-1,
    and W ranges over g (delbar s) g^-1, g (d_y s) g^-1 and g [s, phi] g^-1.
    Returns the two sides and their difference at interior nodes.
    """
    from .geometry import laplacian

    phi = phi_field(P, grid)
    g = mx.cholesky_upper(K)
    gi = mx.inv(g)
    sigma = mx.mul3(g, s, gi)
    sigma = 0.5 * (sigma + mx.dag(sigma))
    H = mx.mul3(mx.dag(g), mx.expm_herm(sigma), g)
    lhs = mx.trace(mx.mul(s, moment_map(H, phi, grid, check=False) - moment_map(K, phi, grid, check=False))).real
    dbar = _deriv(s, grid, d_x2) + 1j * _deriv(s, grid, d_x3)
    parts = [dbar, _deriv(s, grid, d_y), mx.comm(s, phi)]
    rhs = -0.5 * laplacian(mx.trace(mx.mul(s, s)).real, grid)
    for W in parts:
        rhs = rhs + gamma_quadratic(sigma, mx.mul3(g, W, gi))
    inner = grid.interior
    lhs = np.where(inner, lhs, 0.0)
    rhs = np.where(inner, rhs, 0.0)
    return {"lhs": lhs, "rhs": rhs, "difference": lhs - rhs}


# --- record -------------------------------------------------------------------------------


@dataclass
class SolutionRecord:
    data: HolomorphicData
    grid: Grid3
    s: np.ndarray
    H: np.ndarray
    state: SolveState
    path: list[SolveState]
    scale: float
    tol: float
    warm_start_residual: float | None
    triple: dict
    report: dict

    def to_json(self) -> dict:
        return {
            "data": self.data.to_json(),
            "grid": self.grid.metadata(),
            "scale": self.scale,
            "tol": self.tol,
            "final": self.state.to_json(),
            "path": [{"t": st.t, "residual": st.residual, "iterations": len(st.trace) - 1} for st in self.path],
            "warm_start_residual": self.warm_start_residual,
            "unitarity_defect": self.triple["unitarity_defect"],
            **self.report,
        }


def apriori_bound(s: np.ndarray, grid: Grid3) -> float:
    """sup rho_hat |s| over the grid (s in the unitary frame)."""
    X2, X3, Y = grid.mesh
    return float(np.max(WeightFunctions.rho_hat(X2, X3, Y) * mx.frob(s)))


def charge_report(data: HolomorphicData, H: np.ndarray, grid: Grid3) -> dict:
    """Zeros of s ^ phi_z s = -P R^2 for the small section s = (Q, R), with the boundary exponent."""
    cs = charges(data)
    pts = [
        {"position": [p.position.real, p.position.imag], "charge": p.charge}
        for p in cs.points
        if p.charge != 0
    ]
    wedge = -(data.P * data.R * data.R)
    return {
        "wedge_coefficients": wedge.tolist(),
        "charged_points": pts,
        "small_section": small_section_check(H, data, grid),
    }


def continuity_solve(
    data: HolomorphicData,
    H0: np.ndarray,
    grid: Grid3,
    schedule=None,
    tol: float | None = None,
    s_init: np.ndarray | str | None = None,
    max_bisections: int = 5,
    polish_tol: float | None = None,
    log=None,
) -> SolutionRecord:
    """Solve M(H0 e^s) = 0 by continuation from t = 1 to t = 0.

    ``s_init`` is None (s = 0), "warm" (capped -M(H0)) or a unitary-frame field.
    ``polish_tol`` continues Newton at t = 0 to a tighter residual.
    """
    problem = ContinuityProblem(data, H0, grid)
    tol = 1e-8 * problem.scale if tol is None else tol
    warm_res = None
    if isinstance(s_init, str):
        if s_init != "warm":
            raise ValueError(f"unknown initialization {s_init!r}")
        s_init = warm_start(problem)
        warm_res = sup_norm(problem.residual(s_init, 1.0))
    state, path = continuation(problem, schedule, tol, s_init, max_bisections, log=log)
    if polish_tol is not None and state.residual > polish_tol:
        s_fine, _, trace = newton(problem, state.s, state.t, polish_tol)
        state = _state(problem, s_fine, state.t, state.trace + trace[1:])
        path[-1] = state
    H = problem.metric(state.s)
    triple = extract_triple(H, data.P, grid)
    charges_at = [p.position for p in charges(data).points]
    report = {
        "charges": charge_report(data, H, grid),
        "apriori_sup_rho_hat_s": apriori_bound(state.s, grid),
        "weighted_norm_s": weighted_sup_norm(state.s, grid, (NORM_EXPONENTS[0], NORM_EXPONENTS[1], -NORM_EXPONENTS[2]), charges_at),
        "sup_s": float(np.max(mx.frob(state.s))),
        "newton_iterations": sum(len(st.trace) - 1 for st in path),
    }
    return SolutionRecord(data, grid, state.s, H, state, path, problem.scale, tol, warm_res, triple, report)
