import numpy as np
import pytest

from ebe import matrices as mx
from ebe.acceptance import approx_metric, dataset, grid_preset
from ebe.approx import (
    ab_cross_check,
    chi,
    chi_prime,
    check_gauge_consistency,
    decompose,
    diagonal_solve,
    local_gauge,
)
from ebe.errors import DegenerateGeometry
from ebe.geometry import build_grid
from ebe.model import model_u
from ebe.polynomials import Polynomial, validate


def test_chi_profile():
    x = np.linspace(-1, 2, 301)
    c = chi(x)
    assert np.all(c[x <= 0.25] == 0) and np.all(c[x >= 0.75] == 1)
    assert np.all(np.diff(c) >= 0) and abs(chi(0.5) - 0.5) < 1e-15
    h = 1e-6
    fd = (chi(x + h) - chi(x - h)) / (2 * h)
    assert np.max(np.abs(fd - chi_prime(x))) < 1e-5


def test_decompose_single_point():
    dec = decompose(dataset("one_one_z"))
    assert dec.centers == (0,) and dec.radii == (1.0,) and dec.charges == (2,)


def test_decompose_two_points_halves_the_gap():
    d = validate([-1, 0, 1], 0, 1)
    dec = decompose(d)
    assert np.allclose(sorted(c.real for c in dec.centers), [-1, 1], atol=1e-12)
    assert np.allclose(dec.radii, 1.0)
    d = validate([-0.25, 0, 1], 0, 1)
    assert np.allclose(decompose(d).radii, 0.5)


def test_decompose_rejects_coincident_points():
    from ebe.polynomials import ChargePoint, ChargeSet

    d = dataset("one_one_z")
    pts = ChargeSet((ChargePoint(0j, 2, 0, 1), ChargePoint(1e-12 + 0j, 2, 0, 1)), 4, 2)
    with pytest.raises(DegenerateGeometry):
        decompose(d, pts)


@pytest.mark.parametrize("key", ["one_one_z", "z_one_z", "zsq_zero_one"])
def test_local_gauge_is_unimodular_and_straightens_the_section(key):
    d = dataset(key)
    g = local_gauge(d)
    z = np.array([0.3 + 0.1j, -2.0, 1j])
    G = g(z)
    assert np.allclose(mx.det(G), 1, atol=1e-12)
    sec = np.einsum("...ij,...j->...i", mx.inv(G), d.small_section(z))
    assert np.allclose(sec, [0, 1], atol=1e-12)
    phi = np.zeros(z.shape + (2, 2), complex)
    phi[..., 0, 1] = d.P(z)
    upper = mx.mul3(mx.inv(G), phi, G)[..., 0, 1]
    assert np.allclose(upper, d.P(z) * d.R(z) ** 2, atol=1e-12)
    assert check_gauge_consistency(d, decompose(d)) < 1e-12


def test_diagonal_solve_constant_p_is_log_y():
    grid = grid_preset("solve", 17)
    sol = diagonal_solve(Polynomial([1]), grid)
    _, _, Y = grid.mesh
    assert sol.iterations == 0 and np.max(np.abs(sol.u - np.log(Y))) < 1e-14


def test_diagonal_solve_monomial_converges():
    errs = []
    for n in (17, 33):
        grid = grid_preset("solve", n)
        sol = diagonal_solve(Polynomial([0, 0, 1]), grid)
        X2, X3, Y = grid.mesh
        exact = np.exp(model_u(2, np.hypot(X2, X3), Y))
        errs.append(np.max(np.abs(np.exp(sol.u) - exact) / exact))
        assert sol.residual <= 1e-8 * grid.y_min**-2
    assert errs[1] < errs[0] / 3


def test_diagonal_solution_interpolates_off_grid():
    grid = grid_preset("solve", 17)
    sol = diagonal_solve(Polynomial([0, -1, 1]), grid)
    X2, X3, Y = grid.mesh
    assert np.allclose(sol(X2, X3, Y), sol.u, atol=1e-12)
    assert np.isfinite(sol(20.0, 0.0, 3.0))


@pytest.mark.parametrize("key", ["one_one_z", "z_one_z", "zsq_zero_one", "one_zero_one"])
def test_approx_metric_is_unimodular_positive(key):
    metric, grid = approx_metric(key, "solve", 17)
    H = metric.H
    assert np.max(np.abs(mx.det(H) - 1)) < 1e-10
    assert np.max(np.abs(H - mx.dag(H))) < 1e-12
    assert np.all(H[..., 0, 0].real > 0)
    assert set(np.unique(metric.region)) <= {1, 2, 3}


def test_trivial_data_gives_the_nahm_pole_metric():
    metric, grid = approx_metric("one_zero_one", "solve", 17)
    _, _, Y = grid.mesh
    exact = np.zeros(grid.shape + (2, 2))
    exact[..., 0, 0], exact[..., 1, 1] = 1 / Y, Y
    assert np.max(np.abs(metric.H - exact) / (Y + 1 / Y)[..., None, None]) < 1e-12


def test_twist_equals_q_over_r_away_from_the_cone():
    metric, _ = approx_metric("one_one_z", "solve", 17)
    assert abs(metric.sigma_at(np.array([10.0]), np.array([0.0]), np.array([0.01]))[0] - 0.1) < 1e-12
    assert metric.sigma_at(np.array([0.0]), np.array([0.0]), np.array([1.0]))[0] == 0


def test_twist_is_holomorphic_where_the_cutoff_is_one():
    metric, _ = approx_metric("one_one_z", "solve", 17)
    x2, x3, y, h = 2.0, 1.0, 0.05, 1e-4
    S = lambda a, b: metric.sigma_at(np.array([a]), np.array([b]), np.array([y]))[0]
    dbar = (S(x2 + h, x3) - S(x2 - h, x3)) / (2 * h) + 1j * (S(x2, x3 + h) - S(x2, x3 - h)) / (2 * h)
    assert abs(dbar) < 1e-7


def test_small_section_bounded_near_the_boundary():
    metric, _ = approx_metric("one_one_z", "solve", 17)
    d = dataset("one_one_z")
    y = np.geomspace(1e-4, 0.1, 8)
    x2 = np.full_like(y, 1.5)
    H = metric(x2, np.zeros_like(y), y)
    s = d.small_section(x2 + 0j)
    norm = np.einsum("...i,...ij,...j->...", np.conj(s), H, s).real
    assert np.all(norm > 0) and np.all(np.diff(norm) > 0)
    assert np.polyfit(np.log(y), np.log(norm), 1)[0] == pytest.approx(1.0, abs=0.05)


def test_ab_cross_check_agrees_in_the_far_region():
    grid = build_grid(L=8.0, y_min=0.25, n2=33, n3=33, ny=33)
    metric, _ = approx_metric("one_one_z", "solve", 17)
    res = ab_cross_check(metric, grid)
    assert res["ab_samples"] > 0
    assert res["ab_relative_deviation"] <= 1e-6
