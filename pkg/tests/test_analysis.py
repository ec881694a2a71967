import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ebe.analysis import (
    IndicialTable,
    apriori_decay_check,
    decay_fit,
    greens_kernel,
    greens_solve,
    poisson_fd_solve,
    ray,
)
from ebe.errors import CoincidentPoints, InsufficientDynamicRange
from ebe.geometry import build_grid


def test_kernel_is_bounded_by_the_massless_kernel():
    rng = np.random.default_rng(8)
    x = np.column_stack([rng.uniform(-5, 5, (10_000, 2)), rng.uniform(1e-3, 5, 10_000)])
    xp = np.column_stack([rng.uniform(-5, 5, (10_000, 2)), rng.uniform(1e-3, 5, 10_000)])
    g0 = greens_kernel(0.0, x, xp)
    for t in (0.1, 1.0, 10.0):
        gt = greens_kernel(t, x, xp)
        assert np.all(gt >= -1e-15) and np.all(gt <= g0 + 1e-15)


def test_kernel_vanishes_on_the_boundary_and_is_symmetric():
    x = np.array([0.3, -1.0, 0.0])
    assert greens_kernel(1.0, x, np.array([1.0, 2.0, 0.5])) == 0
    a, b = np.array([0.1, 0.2, 0.7]), np.array([-1.0, 0.4, 1.9])
    assert greens_kernel(0.5, a, b) == pytest.approx(greens_kernel(0.5, b, a), rel=1e-15)


def test_kernel_rejects_coincident_points():
    with pytest.raises(CoincidentPoints):
        greens_kernel(0.0, np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, 1.0]))


@pytest.fixture(scope="module")
def grid():
    return build_grid(L=2.0, Y=4.0, y_min=0.25, n2=17, n3=17, ny=17)


def _bump(grid, c, r):
    X2, X3, Y = grid.mesh
    return np.clip(1 - ((X2 - c[0]) ** 2 + (X3 - c[1]) ** 2 + (Y - c[2]) ** 2) / r**2, 0, None) ** 3


def test_greens_solve_is_linear(grid):
    f, g = _bump(grid, (0, 0, 1.5), 1.0), _bump(grid, (0.5, 0, 2.0), 0.8)
    lhs = greens_solve(1.0, 2 * f - 3 * g, grid)
    rhs = 2 * greens_solve(1.0, f, grid) - 3 * greens_solve(1.0, g, grid)
    assert np.max(np.abs(lhs - rhs)) < 1e-12 * np.max(np.abs(lhs))


def test_greens_solution_is_positive_and_decreasing_in_t(grid):
    f = _bump(grid, (0, 0, 1.5), 1.0)
    u0, u1 = greens_solve(0.0, f, grid), greens_solve(1.0, f, grid)
    assert np.all(u0 >= 0) and np.all(u1 <= u0 + 1e-15) and u1.max() > 0


def test_fd_and_greens_agree_with_shared_faces():
    errs = []
    for n in (17, 33):
        grid = build_grid(L=2.0, Y=4.0, y_min=0.25, n2=n, n3=n, ny=n)
        f = _bump(grid, (0, 0, 1.5), 1.0)
        ug = greens_solve(0.0, f, grid)
        ufd = poisson_fd_solve(0.0, f, grid, boundary=ug)
        errs.append(np.max(np.abs(ug - ufd)) / np.max(np.abs(ug)))
    assert errs[1] < 0.02 and errs[0] / errs[1] > 3


def test_decay_fit_examples():
    r = np.geomspace(1, 100, 20)
    assert decay_fit(r**-2, r).slope == pytest.approx(-2, abs=1e-12)
    mixed = np.where(r < 10, r**-1, 10 * r**-2)
    assert decay_fit(mixed, r, part="outer", min_decades=0).slope == pytest.approx(-2, abs=1e-12)
    assert decay_fit(mixed, r, part="lower", min_decades=0).slope == pytest.approx(-1, abs=1e-12)


def test_decay_fit_rejects_flat_data():
    r = np.geomspace(1, 2, 10)
    with pytest.raises(InsufficientDynamicRange):
        decay_fit(np.ones(10), r)
    with pytest.raises(InsufficientDynamicRange):
        decay_fit(np.zeros(10), r, min_decades=0)


@settings(max_examples=40, deadline=None)
@given(st.floats(-6, 6), st.floats(1e-3, 1e3))
def test_decay_fit_recovers_power_laws(p, c):
    r = np.geomspace(1, 1e3, 12)
    fit = decay_fit(c * r**p, r, min_decades=0)
    assert fit.slope == pytest.approx(p, abs=1e-9) and fit.residual < 1e-9


def test_ray_points():
    pts = ray((3.0, 0.0, 4.0), [5.0, 10.0])
    assert np.allclose(pts, [[3, 0, 4], [6, 0, 8]])


def test_indicial_table():
    tab = IndicialTable()
    assert tab.zero_charge_roots == (-1, 2)
    lo, hi = tab.safe_window
    assert lo == pytest.approx(-2) and hi == pytest.approx(1)
    lo, hi = tab.charged_roots(6.0)
    assert lo * hi == pytest.approx(-6.0) and lo + hi == pytest.approx(-1.0)


def test_decay_of_massless_solution_is_quadratic():
    grid = build_grid(L=2.0, Y=4.0, y_min=0.25, n2=17, n3=17, ny=17)
    res = apriori_decay_check(0.0, _bump(grid, (0, 0, 1.5), 1.0), grid, beta=math.inf)
    assert res["exponent"] >= 1.7 and res["boundary_y_slope"] == pytest.approx(1.0, abs=0.2)
