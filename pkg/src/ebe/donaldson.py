"""Donaldson-type functional F(H, K) along H_t = K e^{ts} and its t-derivatives.

F(H, K) = int_0^1 int Tr(s M(K e^{us})) dV du with s = log(K^-1 H), so that
dF/dt(H_t) = int Tr(s M(H_t)) and

    d2F/dt2 = int |delbar s|^2_{H_t} + |d_y s|^2_{H_t} + |[phi, s]|^2_{H_t}  -  1/2 int Lap Tr(s^2).

The first integral is a sum of squares; the second is a pure flux and is
reported on its own.  Space integrals use trapezoid weights over the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import matrices as mx
from .geometry import Grid3, d_x2, d_x3, d_y, flux_laplacian
from .operators import linearize_apply, moment_map, phi_field

GAUSS_NODES = 8


def _weights(grid: Grid3) -> np.ndarray:
    return np.where(grid.interior, grid.volume_weights, 0.0)


def _deriv(f, grid, op):
    out = np.empty_like(f)
    for a in range(2):
        for b in range(2):
            out[..., a, b] = op(f[..., a, b].real, grid) + 1j * op(f[..., a, b].imag, grid)
    return out


def h_norm2(a: np.ndarray, H: np.ndarray) -> np.ndarray:
    """|a|^2_H = Tr(H^-1 a^dag H a)."""
    return mx.trace(mx.mul(mx.mul3(mx.inv(H), mx.dag(a), H), a)).real


@dataclass
class PathSample:
    t: float
    first: float
    second: float
    bulk: float
    boundary: float
    direct: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class DonaldsonReport:
    value: float
    samples: list[PathSample] = field(default_factory=list)
    scale: float = 1.0
    sup_s: float = 0.0

    def to_json(self) -> dict:
        return {"value": self.value, "scale": self.scale, "sup_s": self.sup_s, "samples": [p.to_json() for p in self.samples]}


class DonaldsonPath:
    """H_t = K e^{ts} = g^dag e^{t sigma} g for fixed K, s."""

    def __init__(self, K: np.ndarray, s: np.ndarray, P, grid: Grid3):
        self.grid = grid
        self.phi = phi_field(P, grid)
        self.g = mx.cholesky_upper(K)
        self.gi = mx.inv(self.g)
        sigma = mx.mul3(self.g, s, self.gi)
        self.sigma = 0.5 * (sigma + mx.dag(sigma))
        self.s = mx.mul3(self.gi, self.sigma, self.g)
        self.w = _weights(grid)

    @classmethod
    def between(cls, H: np.ndarray, K: np.ndarray, P, grid: Grid3) -> "DonaldsonPath":
        s, _, _ = mx.log_ratio(H, K)
        return cls(K, s, P, grid)

    def metric(self, t: float) -> np.ndarray:
        return mx.mul3(mx.dag(self.g), mx.expm_herm(self.sigma, t), self.g)

    def first(self, t: float) -> float:
        M = moment_map(self.metric(t), self.phi, self.grid, check=False)
        return float(np.sum(self.w * mx.trace(mx.mul(self.s, M)).real))

    def value(self, nodes: int = GAUSS_NODES) -> float:
        x, wq = np.polynomial.legendre.leggauss(nodes)
        u = 0.5 * (x + 1)
        return float(sum(0.5 * wi * self.first(ui) for ui, wi in zip(u, wq)))

    def second(self, t: float) -> PathSample:
        H = self.metric(t)
        s, grid = self.s, self.grid
        dbar = _deriv(s, grid, d_x2) + 1j * _deriv(s, grid, d_x3)
        dy = _deriv(s, grid, d_y)
        comm = mx.comm(self.phi, s)
        bulk = float(np.sum(self.w * (h_norm2(dbar, H) + h_norm2(dy, H) + h_norm2(comm, H))))
        trs2 = mx.trace(mx.mul(s, s)).real
        boundary = float(np.sum(self.w * -0.5 * flux_laplacian(trs2, grid)))
        direct = float(np.sum(self.w * mx.trace(mx.mul(s, linearize_apply(H, self.phi, grid, s))).real))
        return PathSample(t, self.first(t), bulk + boundary, bulk, boundary, direct)


def donaldson(H: np.ndarray, K: np.ndarray, P, grid: Grid3, ts=(0.0, 0.5, 1.0), nodes: int = GAUSS_NODES) -> DonaldsonReport:
    """F(H, K) by Gauss-Legendre in u and trapezoid in space, with derivative samples at ``ts``.

    Raises LogBranch if K^-1 H is not positive with unit determinant.
    """
    path = DonaldsonPath.between(H, K, P, grid)
    M = moment_map(K, path.phi, grid, check=False)
    scale = max(1.0, float(np.max(mx.frob(M))))
    return DonaldsonReport(
        path.value(nodes),
        [path.second(t) for t in ts],
        scale,
        float(np.max(mx.frob(path.sigma))),
    )
