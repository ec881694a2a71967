import numpy as np
import pytest
import sympy

from ebe.errors import DomainError
from ebe.geometry import build_grid
from ebe.model import (
    model_du,
    model_metric,
    model_residual,
    model_u,
    model_unitary_triple,
    ode_oracle,
    ode_residual,
)


def test_k0_is_log_y():
    r = np.array([0.0, 1.0, 5.0])
    y = np.array([0.3, 2.0, 1e-6])
    assert np.allclose(model_u(0, r, y), np.log(y), rtol=0, atol=1e-15)


def test_k1_spot_value():
    assert abs(model_u(1, 3.0, 4.0) - np.log(20.0)) < 1e-14


def test_k2_on_axis():
    assert abs(model_u(2, 0.0, 1.0) - np.log(4 / 3)) < 1e-14


@pytest.mark.parametrize("k", range(4))
def test_axis_closed_form(k):
    y = np.geomspace(1e-3, 10, 7)
    assert np.allclose(np.exp(model_u(k, 0.0, y)), (2 * y) ** (k + 1) / (2 * (k + 1)), rtol=1e-13)


def test_nonpositive_y_raises():
    with pytest.raises(DomainError):
        model_u(1, 1.0, 0.0)


@pytest.mark.parametrize("k", [1, 3])
def test_cancellation_safe_near_boundary(k):
    r, y = sympy.Integer(2), sympy.Rational(1, 10**9)
    R = sympy.sqrt(r**2 + y**2)
    ref = float(sympy.log(((R + y) ** (k + 1) - (R - y) ** (k + 1)) / (2 * (k + 1))).evalf(50))
    assert abs(model_u(k, 2.0, 1e-9) - ref) < 1e-12


@pytest.mark.parametrize("k", range(4))
def test_log_y_offset_bounded_near_boundary(k):
    y = np.geomspace(1e-4, 1e-2, 20)
    d = model_u(k, 1.0, y) - np.log(y)
    assert np.ptp(d) < 1e-3


@pytest.mark.parametrize("k", range(4))
def test_far_field_matches_diagonal_asymptotics(k):
    rho = np.geomspace(10, 1e4, 10)
    psi = 0.7
    r, y = rho * np.sin(psi), rho * np.cos(psi)
    d = model_u(k, r, y) - (k + 1) * np.log(rho) - np.log(np.sin(psi))
    assert np.ptp(d) < 1e-3


def test_metric_properties():
    rng = np.random.default_rng(1)
    r, y = rng.uniform(0, 3, 50), rng.uniform(0.01, 3, 50)
    for k in range(4):
        H = model_metric(k, r, y)
        assert np.allclose(np.linalg.det(H), 1, atol=1e-12)
        assert np.all(H[..., 0, 0].real > 0) and np.all(H[..., 1, 1].real > 0)
    assert np.allclose(model_metric(0, 0.7, 1.0), np.eye(2))


def test_triple_k0():
    A, phiz, phi1 = model_unitary_triple(0, 1.3, 0.5, 0.2)
    assert np.allclose(A, 0)
    assert np.allclose(phi1, np.diag([1j, -1j]) / (2 * 0.5))
    assert np.allclose(phiz, [[0, 1 / 0.5], [0, 0]])


def test_triple_traceless_and_dy_spot_value():
    for k in range(4):
        A, _, phi1 = model_unitary_triple(k, 1.1, 0.4, 0.3)
        assert abs(np.trace(A)) < 1e-15 and abs(np.trace(phi1)) < 1e-15
    _, du_dy = model_du(1, 3.0, 4.0)
    assert abs(du_dy - 0.41) < 1e-14


@pytest.mark.parametrize("k", range(4))
def test_ode_oracle_agrees(k):
    rng = np.random.default_rng(k)
    r = rng.uniform(0.1, 5, 1000)
    y = r * rng.uniform(0.1, 10, 1000)
    assert np.max(np.abs(ode_oracle(k, r, y) - model_u(k, r, y))) < 1e-10
    assert abs(ode_oracle(k, 3.0, 4.0) - model_u(k, 3.0, 4.0)) < 1e-12


def test_ode_oracle_k0_and_symbolic_residual():
    assert abs(ode_oracle(0, 2.0, 0.7) - np.log(0.7)) < 1e-14
    for k in range(4):
        assert np.max(np.abs(ode_residual(k, np.linspace(0.1, 3, 9)))) < 1e-10


def test_model_residual_k0_exact_and_negative_control():
    g = build_grid(L=2, y_min=0.5, Y=4, n2=17, n3=17, ny=17)
    assert np.max(np.abs(model_residual(0, g))) < 1e-10
    X2, X3, Y = g.mesh
    from ebe.geometry import sinh_flux_laplacian

    u = model_u(1, np.hypot(X2, X3), Y) + 0.1
    bad = sinh_flux_laplacian(u, g) + (X2**2 + X3**2) * np.exp(-2 * u)
    assert np.max(np.abs(bad[g.interior])) > 0.1


def test_model_residual_k1_second_order():
    errs = []
    for n in (17, 33, 65):
        g = build_grid(L=2, y_min=0.5, Y=4, n2=n, n3=n, ny=n)
        m = (n - 1) // 16
        errs.append(np.max(np.abs(model_residual(1, g)[::m, ::m, ::m])))
    slope = np.polyfit(np.log([1, 0.5, 0.25]), np.log(errs), 1)[0]
    assert abs(slope - 2) < 0.3
