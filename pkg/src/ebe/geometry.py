"""Truncated graded grid on C x R+, finite-difference stencils and weight functions.

Fields are numpy arrays whose first three axes are (x2, x3, y); matrix
fields carry two trailing axes of length 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BadGrading


def fornberg_weights(x0: float, nodes: np.ndarray, order: int) -> np.ndarray:
    """Finite-difference weights for the ``order``-th derivative at ``x0``."""
    n = len(nodes)
    c = np.zeros((n, order + 1))
    c1, c4 = 1.0, nodes[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, order)
        c2, c5, c4 = 1.0, c4, nodes[i] - x0
        for j in range(i):
            c3 = nodes[i] - nodes[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, order]


def diff_matrix(x: np.ndarray, order: int) -> np.ndarray:
    """Dense second-order accurate differentiation matrix on nodes ``x``.

    Three-point central formulas inside, one-sided formulas (three points for
    the first derivative, four for the second) at the two ends.
    """
    n = len(x)
    D = np.zeros((n, n))
    for i in range(n):
        if 0 < i < n - 1:
            idx = np.arange(i - 1, i + 2)
        else:
            width = 3 if order == 1 else 4
            idx = np.arange(width) if i == 0 else np.arange(n - width, n)
        D[i, idx] = fornberg_weights(x[i], x[idx], order)
    return D


def apply_along(D: np.ndarray, f: np.ndarray, axis: int) -> np.ndarray:
    out = np.tensordot(D, f, axes=([1], [axis]))
    return np.moveaxis(out, 0, axis)


@dataclass(frozen=True)
class Grid3:
    x2: np.ndarray
    x3: np.ndarray
    y: np.ndarray
    L: float
    y_min: float
    Y: float
    q: float

    @property
    def shape(self) -> tuple[int, int, int]:
        return (len(self.x2), len(self.x3), len(self.y))

    @property
    def h(self) -> float:
        return float(self.x2[1] - self.x2[0])

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(np.meshgrid(self.x2, self.x3, self.y, indexing="ij"))

    @cached_property
    def z(self) -> np.ndarray:
        X2, X3, _ = self.mesh
        return X2 + 1j * X3

    @cached_property
    def D1(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(diff_matrix(c, 1) for c in (self.x2, self.x3, self.y))

    @cached_property
    def D2(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(diff_matrix(c, 2) for c in (self.x2, self.x3, self.y))

    @cached_property
    def interior(self) -> np.ndarray:
        m = np.zeros(self.shape, bool)
        m[1:-1, 1:-1, 1:-1] = True
        return m

    @cached_property
    def volume_weights(self) -> np.ndarray:
        """Trapezoid weights of the box."""
        w = [np.gradient(c) for c in (self.x2, self.x3, self.y)]
        for wi, c in zip(w, (self.x2, self.x3, self.y)):
            wi[0] = (c[1] - c[0]) / 2
            wi[-1] = (c[-1] - c[-2]) / 2
        return w[0][:, None, None] * w[1][None, :, None] * w[2][None, None, :]

    def refine(self) -> "Grid3":
        """Nested refinement: every cell halved, y grading ratio square-rooted."""
        n2, n3, ny = self.shape
        return build_grid(self.L, self.y_min, self.Y, 2 * n2 - 1, 2 * n3 - 1, 2 * ny - 1, math.sqrt(self.q))

    def metadata(self) -> dict:
        n2, n3, ny = self.shape
        return {
            "L": self.L,
            "y_min": self.y_min,
            "Y": self.Y,
            "n2": n2,
            "n3": n3,
            "ny": ny,
            "q": self.q,
        }


def graded_ticks(y_min: float, Y: float, n: int, q: float) -> np.ndarray:
    if q == 1.0:
        return np.linspace(y_min, Y, n)
    j = np.arange(n)
    ticks = y_min + (Y - y_min) * (q**j - 1) / (q ** (n - 1) - 1)
    ticks[-1] = Y
    return ticks


def build_grid(
    L: float = 8.0,
    y_min: float = 0.05,
    Y: float | None = None,
    n2: int = 33,
    n3: int = 33,
    ny: int = 33,
    q: float | None = None,
) -> Grid3:
    """Uniform [-L, L]^2 times geometrically graded [y_min, Y].

    ``q`` is the ratio of consecutive y spacings.  The default makes the
    ticks a pure geometric sequence y_j = y_min * q**j, which resolves the
    log y singularity with the same relative accuracy at every height.
    """
    Y = L if Y is None else Y
    if y_min <= 0:
        raise BadGrading("y_min must be positive (the Nahm pole sits at y = 0)")
    if min(n2, n3, ny) < 8:
        raise BadGrading("need at least 8 nodes per direction")
    if Y <= y_min:
        raise BadGrading("Y must exceed y_min")
    if q is None:
        q = (Y / y_min) ** (1.0 / (ny - 1))
    if q < 1:
        raise BadGrading("grading ratio must be >= 1")
    y = graded_ticks(y_min, Y, ny, q)
    if math.log10(y[1] / y[0]) > 1 / 3:
        raise BadGrading(
            f"first y cell spans {math.log10(y[1] / y[0]):.2f} decades; need >= 3 nodes per decade"
        )
    x = np.linspace(-L, L, n2)
    x3 = np.linspace(-L, L, n3)
    return Grid3(x, x3, y, float(L), float(y_min), float(Y), float(q))


# --- derivatives -----------------------------------------------------------


def d_x2(f: np.ndarray, grid: Grid3) -> np.ndarray:
    return apply_along(grid.D1[0], f, 0)


def d_x3(f: np.ndarray, grid: Grid3) -> np.ndarray:
    return apply_along(grid.D1[1], f, 1)


def d_y(f: np.ndarray, grid: Grid3) -> np.ndarray:
    return apply_along(grid.D1[2], f, 2)


def d_x2x2(f, grid):
    return apply_along(grid.D2[0], f, 0)


def d_x3x3(f, grid):
    return apply_along(grid.D2[1], f, 1)


def d_yy(f: np.ndarray, grid: Grid3) -> np.ndarray:
    return apply_along(grid.D2[2], f, 2)


def laplacian(f: np.ndarray, grid: Grid3) -> np.ndarray:
    return d_x2x2(f, grid) + d_x3x3(f, grid) + d_yy(f, grid)


def flux_laplacian(f: np.ndarray, grid: Grid3) -> np.ndarray:
    """Scalar 7-point flux-form Laplacian at interior nodes (zero on faces).

    With trapezoid weights its weighted sum telescopes to face fluxes.
    """
    out = np.zeros(grid.shape)
    acc = 0.0
    for axis, c in enumerate((grid.x2, grid.x3, grid.y)):
        shape = [1, 1, 1]
        shape[axis] = -1
        flux = np.diff(f, axis=axis) / np.diff(c).reshape(shape)
        width = (0.5 * (c[2:] - c[:-2])).reshape(shape)
        div = np.diff(flux, axis=axis) / width
        sl = [slice(1, -1)] * 3
        sl[axis] = slice(None)
        acc = acc + div[tuple(sl)]
    out[1:-1, 1:-1, 1:-1] = acc
    return out


def sinh_flux_laplacian(u: np.ndarray, grid: Grid3) -> np.ndarray:
    """sum_j D_j(sinh(u_b - u_a)/dx), the diagonal reduction of the discrete moment map.

    Zero on the faces.  It is exact on u = log y for geometric y ticks.
    """
    out = np.zeros(grid.shape)
    acc = 0.0
    for axis, c in enumerate((grid.x2, grid.x3, grid.y)):
        shape = [1, 1, 1]
        shape[axis] = -1
        flux = np.sinh(np.diff(u, axis=axis)) / np.diff(c).reshape(shape)
        width = (0.5 * (c[2:] - c[:-2])).reshape(shape)
        div = np.diff(flux, axis=axis) / width
        sl = [slice(1, -1)] * 3
        sl[axis] = slice(None)
        acc = acc + div[tuple(sl)]
    out[1:-1, 1:-1, 1:-1] = acc
    return out


def holo_derivs(f: np.ndarray, grid: Grid3) -> tuple[np.ndarray, np.ndarray]:
    """(del f, delbar f) with del = d_x2 - i d_x3, delbar = d_x2 + i d_x3 (no 1/2)."""
    a, b = d_x2(f, grid), d_x3(f, grid)
    return a - 1j * b, a + 1j * b


# --- weights ---------------------------------------------------------------


@dataclass(frozen=True)
class WeightFunctions:
    """psi, R_w, rho, rho_hat, y_hat evaluated at arbitrary points."""

    charge_positions: Sequence[complex] = ()
    y_floor: float = 0.0

    @staticmethod
    def psi(x2, x3, y):
        return np.arctan2(np.hypot(x2, x3), y)

    @staticmethod
    def rho(x2, x3, y):
        return np.sqrt(x2**2 + x3**2 + y**2)

    @staticmethod
    def rho_hat(x2, x3, y):
        return np.sqrt(x2**2 + x3**2 + y**2 + 1.0)

    @staticmethod
    def y_hat(x2, x3, y):
        return y / np.sqrt(1.0 + y**2)

    def R(self, x2, x3, y):
        """Product of min(distance to charge point, 1), clipped below at y_floor."""
        out = np.ones(np.broadcast(x2, x3, y).shape)
        for p in self.charge_positions:
            dist = np.sqrt((x2 - p.real) ** 2 + (x3 - p.imag) ** 2 + y**2)
            out = out * np.minimum(dist, 1.0)
        return np.maximum(out, self.y_floor)

    @classmethod
    def for_grid(cls, grid: Grid3, charge_positions=()) -> "WeightFunctions":
        return cls(tuple(complex(p) for p in charge_positions), grid.y_min / 2)


def weighted_sup_norm(f: np.ndarray, grid: Grid3, spec=(0.0, 0.0, 0.0), charge_positions=()) -> float:
    """sup |f| / (psi^mu R^nu rho_hat^beta) for spec = (mu, nu, beta).

    Matrix fields use the Frobenius norm per node.
    """
    mu, nu, beta = spec
    w = WeightFunctions.for_grid(grid, charge_positions)
    X2, X3, Yy = grid.mesh
    a = np.abs(f) if f.ndim == 3 else np.sqrt(np.sum(np.abs(f) ** 2, axis=(-2, -1)))
    with np.errstate(divide="ignore", invalid="ignore"):
        weight = w.psi(X2, X3, Yy) ** mu * w.R(X2, X3, Yy) ** nu * w.rho_hat(X2, X3, Yy) ** beta
        val = np.where(a == 0, 0.0, a / weight)
    return float(np.max(val))


# --- field dumps -----------------------------------------------------------


def _components(values: np.ndarray, grid: Grid3) -> np.ndarray:
    n = grid.shape
    v = np.asarray(values).reshape(n + (-1,))
    if np.iscomplexobj(v):
        v = np.stack([v.real, v.imag], axis=-1).reshape(n + (-1,))
    return v.astype("<f8")


def write_field(path, grid: Grid3, values: np.ndarray) -> None:
    """Binary dump: ``EBEFIELD v1 n2 n3 ny ncomp`` header, coordinates, values.

    Values are little-endian float64 with the component index fastest, then
    y, then x3, then x2.  Complex entries are split into (re, im) components.
    """
    v = _components(values, grid)
    n2, n3, ny = grid.shape
    with open(path, "wb") as fh:
        fh.write(f"EBEFIELD v1 {n2} {n3} {ny} {v.shape[-1]}\n".encode())
        for c in (grid.x2, grid.x3, grid.y):
            fh.write(np.asarray(c, "<f8").tobytes())
        fh.write(np.ascontiguousarray(v).tobytes())


def read_field(path) -> tuple[dict, np.ndarray]:
    data = Path(path).read_bytes()
    nl = data.index(b"\n")
    tag, ver, n2, n3, ny, nc = data[:nl].decode().split()
    if tag != "EBEFIELD" or ver != "v1":
        raise ValueError(f"{path} is not an EBEFIELD v1 dump")
    n2, n3, ny, nc = map(int, (n2, n3, ny, nc))
    arr = np.frombuffer(data[nl + 1 :], "<f8")
    x2, x3, y = arr[:n2], arr[n2 : n2 + n3], arr[n2 + n3 : n2 + n3 + ny]
    vals = arr[n2 + n3 + ny :].reshape(n2, n3, ny, nc)
    return {"x2": x2, "x3": x3, "y": y}, vals


def write_slice_csv(path, coords: np.ndarray, values: np.ndarray, names=("s", "value")) -> None:
    values = np.asarray(values)
    cols = [coords]
    if np.iscomplexobj(values):
        cols += [values.real, values.imag]
        names = (names[0], names[1] + "_re", names[1] + "_im")
    else:
        cols.append(values)
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=",".join(names), comments="")
