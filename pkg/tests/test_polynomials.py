import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ebe.errors import DegreeViolation, NotCoprime, ZeroP
from ebe.polynomials import Polynomial, Z, bezout, bezout_residual, charges, resultant, validate


def test_validate_trivial_data_has_no_charge():
    d = validate(1, 0, 1)
    cs = charges(d)
    assert (cs.K, cs.N, cs.points) == (0, 0, ())


def test_validate_counts_charges_of_z_one_z():
    d = validate([0, 1], 1, [0, 1])
    assert (d.K, d.N) == (3, 1)


def test_common_root_is_rejected():
    with pytest.raises(NotCoprime):
        validate(1, [0, 1], [0, 1])


def test_zero_p_and_degree_violation():
    with pytest.raises(ZeroP):
        validate(0, 1, [0, 1])
    with pytest.raises(DegreeViolation):
        validate(1, [1, 0, 1], [0, 1])
    with pytest.raises(NotCoprime):
        validate(1, 0, [0, 1])


def test_r_is_made_monic_and_q_rescaled():
    d = validate(1, 2, [0, 4])
    assert d.R == Polynomial([0, 1])
    assert d.Q == Polynomial([0.5])


def test_reduce_replaces_q_by_remainder():
    d = validate(1, [1, 0, 1], [0, 1], reduce=True)
    assert d.Q == Polynomial([1])


def test_json_pairs_decode_to_complex():
    d = validate([[0, 1]], [[1, 0]], [[0, 0], [1, 0]])
    assert d.P == Polynomial([1j])


def test_invalid_coefficient_pairs_raise():
    with pytest.raises(ValueError):
        validate([[1, 2, 3]], 0, 1)
    with pytest.raises(ValueError):
        validate([float("nan")], 0, 1)


@pytest.mark.parametrize(
    "Q, R, S, T",
    [
        ([1], [0, 1], [1], [0]),
        ([1, 1], [0, 0, 1], [1, -1], [1]),
        ([2], [-1, 1], [0.5], [0]),
    ],
)
def test_bezout_examples(Q, R, S, T):
    s, t = bezout(Polynomial(Q), Polynomial(R))
    assert s == Polynomial(S)
    assert t == Polynomial(T)


def test_bezout_rejects_common_factor():
    with pytest.raises(NotCoprime):
        bezout(Polynomial([-1, 0, 1]), Polynomial([1, 1]))


def test_ring_operations():
    assert abs(Polynomial([1, 0, 1])(1j)) == 0
    assert Z * Z == Polynomial([0, 0, 1])
    assert Polynomial([0, 0, 0, 1]).derivative() == Polynomial([0, 0, 3])
    assert (Z**2).degree == 2 and Polynomial().degree < 0
    q, r = divmod(Polynomial([1, 0, 1]), Polynomial([1, 1]))
    assert q * Polynomial([1, 1]) + r == Polynomial([1, 0, 1])


def test_trailing_zero_coefficients_are_trimmed():
    assert Polynomial([1, 2, 0, 0]).degree == 1


def test_charges_of_z_one_z():
    (pt,) = charges(validate([0, 1], 1, [0, 1])).points
    assert (pt.position, pt.charge, pt.k_part, pt.p_part) == (0, 3, 1, 1)


def test_charges_of_shifted_section():
    (pt,) = charges(validate(1, 1, [-2, 1])).points
    assert abs(pt.position - 2) < 1e-9 and (pt.charge, pt.k_part, pt.p_part) == (2, 0, 1)


@pytest.mark.parametrize("k, p", [(0, 1), (1, 2), (2, 1), (3, 0)])
def test_taubes_type_data_has_one_point(k, p):
    Q = [1.0] + [0.3] * (p - 1) if p else 0
    d = validate(Z**k, Q, Z**p)
    (pt,) = charges(d).points
    assert abs(pt.position) < 1e-6 and pt.charge == k + 2 * p


def test_resultant_integer_path():
    assert resultant(Polynomial([-1, 1]), Polynomial([-2, 1])) != 0
    assert resultant(Polynomial([-1, 1]), Polynomial([1, -2, 1])) == 0


@st.composite
def coprime_pairs(draw):
    r_roots = draw(st.lists(st.integers(-3, 3).map(float), min_size=1, max_size=3, unique=True))
    q_deg = draw(st.integers(0, len(r_roots) - 1))
    q_roots = draw(st.lists(st.integers(-3, 3).map(lambda v: v + 0.5), min_size=q_deg, max_size=q_deg))
    lead = draw(st.sampled_from([1.0, -2.0, 0.5j]))
    return Polynomial.from_roots(q_roots) * lead, Polynomial.from_roots(r_roots)


@settings(max_examples=60, deadline=None)
@given(coprime_pairs(), st.integers(0, 2**31 - 1))
def test_bezout_identity_on_random_pairs(pair, seed):
    Q, R = pair
    S, T = bezout(Q, R)
    pts = np.random.default_rng(seed).normal(size=32) + 1j * np.random.default_rng(seed + 1).normal(size=32)
    scale = 1 + max(np.abs(Q.coeffs).max(), np.abs(R.coeffs).max())
    assert bezout_residual(Q, R, S, T, pts) < 1e-10 * scale


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.integers(-2, 2), min_size=0, max_size=3),
    coprime_pairs(),
    st.sampled_from([1.0, 3.0, -1j]),
    st.lists(st.integers(-2, 2), max_size=2),
)
def test_charge_sum_and_invariances(p_roots, pair, c, w):
    Q, R = pair
    P = Polynomial.from_roots([float(v) for v in p_roots])
    d = validate(P, Q, R)
    cs = charges(d)
    assert sum(pt.charge for pt in cs.points) == P.degree + 2 * R.degree == cs.K
    assert (cs.K - cs.N) % 2 == 0 and cs.K >= cs.N
    same = charges(validate(P * c, Q, R))
    assert [(p.position, p.charge) for p in same.points] == [(p.position, p.charge) for p in cs.points]
    shifted = Q + Polynomial([float(v) for v in w]) * R if w else Q
    if shifted.degree < R.degree:
        moved = charges(validate(P, shifted, R))
        assert [(p.position, p.charge) for p in moved.points] == [(p.position, p.charge) for p in cs.points]
