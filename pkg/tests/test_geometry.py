import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ebe.errors import BadGrading
from ebe.geometry import (
    WeightFunctions,
    build_grid,
    d_x2,
    d_x3,
    d_y,
    d_yy,
    flux_laplacian,
    holo_derivs,
    laplacian,
    read_field,
    sinh_flux_laplacian,
    weighted_sup_norm,
    write_field,
    write_slice_csv,
)


@pytest.fixture(scope="module")
def grid():
    return build_grid(L=2.0, y_min=0.1, Y=3.0, n2=17, n3=15, ny=19)


def test_build_grid_echoes_parameters():
    g = build_grid(L=8, y_min=0.05, Y=8, n2=33, n3=33, ny=33, q=1.12)
    assert g.y[0] == 0.05 and abs(g.y[-1] - 8) < 1e-12
    assert g.shape == (33, 33, 33) and g.x2[0] == -8 and g.x2[-1] == 8
    dy = np.diff(g.y)
    assert np.allclose(dy[1:] / dy[:-1], 1.12, rtol=0, atol=1e-12)
    assert g.metadata()["q"] == 1.12


def test_uniform_grading():
    g = build_grid(L=2, y_min=0.5, Y=2.5, n2=9, n3=9, ny=9, q=1.0)
    assert np.allclose(np.diff(g.y), 0.25)


@pytest.mark.parametrize(
    "kwargs",
    [dict(y_min=0.0), dict(n2=5), dict(q=0.9), dict(y_min=0.01, ny=9, Y=8, q=1.0), dict(Y=0.01)],
)
def test_bad_grading(kwargs):
    with pytest.raises(BadGrading):
        build_grid(**{**dict(L=8, y_min=0.05), **kwargs})


def test_default_grid_is_geometric():
    g = build_grid()
    assert np.allclose(g.y[1:] / g.y[:-1], g.q, rtol=1e-12)


def test_refine_nests_nodes(grid):
    fine = grid.refine()
    assert np.allclose(fine.x2[::2], grid.x2) and np.allclose(fine.y[::2], grid.y, rtol=1e-12)


def test_first_derivatives_exact_on_affine(grid):
    X2, X3, Y = grid.mesh
    f = 3 * X2 - 2 * X3 + 0.5 * Y + 1
    assert np.allclose(d_x2(f, grid), 3, atol=1e-11)
    assert np.allclose(d_x3(f, grid), -2, atol=1e-11)
    assert np.allclose(d_y(f, grid), 0.5, atol=1e-11)
    for op in (d_x2, d_x3, d_y, d_yy):
        assert np.max(np.abs(op(np.full(grid.shape, 7.0), grid))) < 1e-10


def test_second_derivative_exact_on_quadratics(grid):
    _, _, Y = grid.mesh
    assert np.allclose(d_yy(Y**2, grid)[grid.interior], 2, atol=1e-10)


def _refinement_slope(errors):
    return np.polyfit(np.log([1, 0.5, 0.25]), np.log(errors), 1)[0]


def test_log_derivative_converges_at_second_order():
    errs = []
    for n in (17, 33, 65):
        g = build_grid(L=1, y_min=0.1, Y=4, n2=9, n3=9, ny=n)
        _, _, Y = g.mesh
        errs.append(np.max(np.abs(d_y(np.log(Y), g) * Y - 1)))
    assert abs(_refinement_slope(errs) - 2) < 0.3


def test_laplacian_converges_at_second_order():
    errs = []
    for n in (17, 33, 65):
        g = build_grid(L=1, y_min=0.5, Y=2, n2=n, n3=n, ny=n)
        X2, X3, Y = g.mesh
        f = np.sin(X2) * np.cos(2 * X3) * np.exp(Y)
        exact = (1 - 1 - 4) * f
        errs.append(np.max(np.abs(laplacian(f, g) - exact)[g.interior]))
    assert abs(_refinement_slope(errs) - 2) < 0.3


def test_doubled_wirtinger_convention(grid):
    z = grid.z
    dz, dbar = holo_derivs(z, grid)
    assert np.allclose(dbar, 0, atol=1e-11) and np.allclose(dz, 2, atol=1e-11)
    _, dbar_conj = holo_derivs(np.conj(z), grid)
    assert np.allclose(dbar_conj, 2, atol=1e-11)


def test_weighted_sup_norm_examples(grid):
    X2, X3, Y = grid.mesh
    w = WeightFunctions()
    assert abs(weighted_sup_norm(w.psi(X2, X3, Y) ** 2, grid, (2, 0, 0)) - 1) < 1e-12
    assert weighted_sup_norm(np.zeros(grid.shape), grid, (1, 1, 1)) == 0
    assert abs(weighted_sup_norm(w.rho_hat(X2, X3, Y) ** -2, grid, (0, 0, -2)) - 1) < 1e-12


def test_weighted_norm_of_matrix_field_uses_frobenius(grid):
    f = np.zeros(grid.shape + (2, 2))
    f[..., 0, 0], f[..., 1, 1] = 3.0, 4.0
    assert abs(weighted_sup_norm(f, grid) - 5.0) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(1e-3, 5))
def test_weights_match_formulas(x2, x3, y):
    w = WeightFunctions(charge_positions=(0.5 + 0.5j,), y_floor=1e-3)
    r = np.hypot(x2, x3)
    assert abs(w.psi(x2, x3, y) - np.arctan(r / y)) < 1e-14
    assert abs(w.rho_hat(x2, x3, y) - np.sqrt(r**2 + y**2 + 1)) < 1e-14 * (1 + r + y)
    assert abs(w.y_hat(x2, x3, y) - y / np.sqrt(1 + y**2)) < 1e-14
    assert 0 <= w.psi(x2, x3, y) <= np.pi / 2
    assert w.R(x2, x3, y) > 0 and w.rho_hat(x2, x3, y) >= 1


def test_field_dump_round_trip(tmp_path, grid):
    vals = np.random.default_rng(0).normal(size=grid.shape + (2, 2)) * (1 + 1j)
    write_field(tmp_path / "f.field", grid, vals)
    head = (tmp_path / "f.field").read_bytes().split(b"\n", 1)[0].decode()
    assert head == f"EBEFIELD v1 {grid.shape[0]} {grid.shape[1]} {grid.shape[2]} 8"
    coords, back = read_field(tmp_path / "f.field")
    assert np.array_equal(coords["y"], grid.y)
    restored = (back[..., 0::2] + 1j * back[..., 1::2]).reshape(vals.shape)
    assert np.array_equal(restored, vals)
    # component index fastest, then y
    raw = np.frombuffer((tmp_path / "f.field").read_bytes().split(b"\n", 1)[1], "<f8")
    offset = sum(grid.shape)
    assert raw[offset] == vals[0, 0, 0, 0, 0].real and raw[offset + 8] == vals[0, 0, 1, 0, 0].real


def test_slice_csv(tmp_path):
    write_slice_csv(tmp_path / "s.csv", np.arange(3.0), np.array([1, 2, 3]) * 1j)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "s,value_re,value_im" and len(lines) == 4


def test_flux_laplacian_telescopes_for_compact_support(grid):
    X2, X3, Y = grid.mesh
    f = np.clip(1 - (X2**2 + X3**2 + (Y - 1.2) ** 2), 0, None) ** 3
    w = np.where(grid.interior, grid.volume_weights, 0)
    assert abs(np.sum(w * flux_laplacian(f, grid))) < 1e-13


def test_sinh_flux_is_exact_on_log_y():
    g = build_grid(L=2, y_min=0.05, Y=4, n2=9, n3=9, ny=33)
    _, _, Y = g.mesh
    res = sinh_flux_laplacian(np.log(Y), g) + 1 / Y**2
    assert np.max(np.abs(res[g.interior]) * Y[g.interior] ** 2) < 1e-12
