"""
Pruebas de las series truncadas con carga
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from algebra import E, H0, HMM, HPP, e
from config import Config
from errors import (ChargeMismatch, DependsOnZPlus, Inconsistent, MissingEquivariance, NotTriangular, ShapeMismatch,
                    SingularJacobian, Underdetermined)
from jets import (UPPER, ChargedSeries, apply_flat_field, central_var, compose, d_z,
                  eval_series, from_central, identity_map, invert_map_numeric, invert_series,
                  mat_identity, mat_is_zero, mat_mul, mat_sub, matrix_exp, matrix_inverse, matrix_log,
                  max_abs_coefficient, series_add, series_pow, restrict_identity, solve_charged, substitute, to_central, uvar, zvar)

N = 1
ORDER = 5

property_settings = settings(max_examples=100, derandomize=True, deadline=None)


def zp(a, order=ORDER):
    return zvar(+1, a, N, order)


def zm(a, order=ORDER):
    return zvar(-1, a, N, order)


def triangular_map(order=ORDER):
    """φ = id + z⁺⁰z⁺¹z⁻⁰ en la primera componente"""
    ident = identity_map(N, order)
    ident[0] = ident[0] + zp(0, order) * zp(1, order) * zm(0, order)
    return ident


# ============= CONSTRUCCIÓN Y CARGA =============

def test_coordinate_charges():
    assert zp(0).charge == -1
    assert zm(1).charge == 1
    assert uvar("u1p", N, ORDER).charge == 1
    assert central_var(0, 0, N, ORDER).charge == 0


def test_from_terms_drops_high_degree():
    terms = {((0, 0, 0, 0), (0, 0), (3, 3)): 1, ((2, 0, 0, 0), (0, 0), (1, 1)): 2}
    s = ChargedSeries.from_terms(terms, N, ORDER)
    assert s.max_zdeg() == 2
    assert s.charge == 4


def test_from_terms_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        ChargedSeries.from_terms({((0, 0, 0, 0), (0,), (1, 1)): 1}, N, ORDER)


def test_declared_charge_is_checked():
    with pytest.raises(ChargeMismatch):
        ChargedSeries.from_terms({((0, 0, 0, 0), (0, 0), (1, 0)): 1}, N, ORDER, charge=3)


def test_sum_of_different_charges():
    with pytest.raises(ChargeMismatch):
        zp(0) + zm(0)


def test_product_adds_charges_and_truncates():
    x = zm(0, order=3)
    cube = series_pow(x, 3)
    assert not cube.is_zero()
    assert cube.charge == 3
    fourth = series_pow(x, 4)
    assert fourth.is_zero()
    assert fourth.valid == 3


def test_derivative_lowers_valid_order():
    x = zm(0)
    square = x * x
    assert d_z(-1, 0, square) == 2 * x
    assert d_z(+1, 0, square).is_zero()
    truncated = series_pow(zm(0, order=2), 3)
    assert d_z(-1, 0, truncated).valid == 1


def test_derivative_index_out_of_range():
    with pytest.raises(ShapeMismatch):
        d_z(+1, 2, zp(0))


def test_series_add_matches_operator():
    a, b = zm(0) * zp(1), zm(1) * zp(0) * 2
    assert series_add(a, b) == a + b
    assert series_add(a, b).charge == 0


def test_max_abs_coefficient():
    s = zm(0) * 3 + zm(1) * -7
    assert max_abs_coefficient(s) == pytest.approx(7.0)


# ============= CAMPOS PLANOS =============

@pytest.mark.parametrize("label", [H0, HPP, HMM])
def test_central_coordinates_are_invariant(label):
    for i in (0, 1):
        for a in range(2 * N):
            assert apply_flat_field(label, central_var(i, a, N, ORDER)).is_zero()


def test_raising_moves_zplus_to_zminus():
    result = apply_flat_field(HPP, zp(0))
    assert result == -zm(0)
    assert result.charge == 1


def test_translation_is_partial_derivative():
    s = zp(0) * zm(0)
    assert apply_flat_field(e(-1, 0), s) == zp(0)


def test_E_needs_family_on_arrays():
    s = zm(0).like(zm(0).poly, tag=UPPER)
    with pytest.raises(MissingEquivariance):
        apply_flat_field(E(0), s)
    assert apply_flat_field(E(0), zm(0)).is_zero()


def test_central_round_trip():
    s = zp(0) * zm(1) * uvar("u2p", N, ORDER) + zm(0)
    back = from_central(to_central(s), charge=s.charge)
    assert back == s


@st.composite
def charged_series(draw, charge=None):
    """Serie de carga fija con grado total en z a lo sumo 1 por variable"""
    if charge is None:
        charge = draw(st.integers(min_value=-2, max_value=2))
    terms = {}
    for _ in range(draw(st.integers(min_value=1, max_value=4))):
        zplus = tuple(draw(st.lists(st.integers(0, 1), min_size=2 * N, max_size=2 * N)))
        zminus = tuple(draw(st.lists(st.integers(0, 1), min_size=2 * N, max_size=2 * N)))
        # carga en u que compensa la de las z
        need = charge + sum(zplus) - sum(zminus)
        minus = draw(st.integers(min_value=max(0, -need), max_value=max(0, -need) + 2))
        plus = need + minus
        c = draw(st.integers(0, minus))
        a = draw(st.integers(0, plus))
        u4 = (a, plus - a, c, minus - c)
        terms[(u4, zplus, zminus)] = draw(st.integers(-5, 5).filter(bool))
    return ChargedSeries.from_terms(terms, N, ORDER, charge=charge)


@property_settings
@given(s=charged_series())
def test_flat_fields_agree_with_central_coordinates(s):
    central = to_central(s)
    assert to_central(apply_flat_field(HPP, s)).poly == central.raised().poly
    assert to_central(apply_flat_field(HMM, s)).poly == central.lowered().poly
    assert to_central(apply_flat_field(H0, s)).poly == central.graded().poly


# ============= ECUACIONES SOBRE SERIES =============

def test_solve_charged_recovers_charge_zero():
    f = zp(0) * zm(1)
    g = apply_flat_field(HPP, f)
    assert g.charge == 2
    solution = solve_charged(g, 0, init=f)
    assert solution == f


def test_solve_charged_positive_charge():
    with pytest.raises(Underdetermined):
        solve_charged(ChargedSeries.zero(N, ORDER, charge=3), 1)


def test_solve_charged_inconsistent_init():
    with pytest.raises(Inconsistent):
        solve_charged(ChargedSeries.zero(N, ORDER, charge=1), -1, init=zp(0))


def test_solve_charged_wrong_rhs_charge():
    with pytest.raises(ChargeMismatch):
        solve_charged(zm(0), 0)


# ============= COMPOSICIÓN E INVERSIÓN =============

def test_compose_with_identity():
    f = zp(0) * zm(0) * zm(1) + uvar("u1p", N, ORDER) * zp(0) * zm(1)
    assert compose(f, identity_map(N, ORDER)) == f


def test_compose_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        compose(zp(0), identity_map(N, ORDER)[:3])


def test_invert_series():
    phi = triangular_map()
    Phi = invert_series(phi)
    ident = identity_map(N, ORDER)
    for component, w in zip(phi, ident):
        assert compose(component, Phi).equals_up_to(w)


def test_invert_series_needs_origin():
    phi = triangular_map()
    one = ChargedSeries.constant(1, N, ORDER)
    phi[2] = phi[2] + one.like(one.poly, charge=None)
    with pytest.raises(NotTriangular):
        invert_series(phi)


def test_invert_series_translation():
    u1p = uvar("u1p", N, ORDER)
    phi = identity_map(N, ORDER)
    phi[2] = phi[2] + u1p
    Phi = invert_series(phi)
    assert Phi[2] == zm(0) - u1p
    assert compose(phi[2], Phi) == zm(0)
    assert compose(u1p * u1p, Phi) == u1p * u1p


def test_matrix_inverse_and_log():
    size = 2
    M = mat_identity(size, N, ORDER)
    M[0][1] = zm(0)
    inv = matrix_inverse(M)
    assert mat_is_zero(mat_sub(mat_mul(M, inv), mat_identity(size, N, ORDER)))
    X = mat_sub(M, mat_identity(size, N, ORDER))
    assert mat_is_zero(mat_sub(matrix_log(matrix_exp(X)), X))


# ============= EVALUACIÓN NUMÉRICA =============

def test_eval_series():
    s = zm(0) * uvar("u1p", N, ORDER)
    U = np.array([[2.0, 1.0], [1.0, 1.0]])
    z = np.array([0.1, 0.2, 0.3, 0.4])
    assert eval_series(s, U, z) == pytest.approx(2.0 * 0.3)


def test_eval_series_shape():
    with pytest.raises(ShapeMismatch):
        eval_series(zm(0), np.eye(2), np.zeros(3))


def test_newton_inverts_triangular_map():
    phi = triangular_map()
    target = np.array([0.05, -0.02, 0.03, 0.01], dtype=complex)
    z = invert_map_numeric(phi, np.eye(2), target)
    value = np.array([eval_series(c, np.eye(2), z) for c in phi])
    assert np.allclose(value, target, atol=1e-10)


def test_newton_tolerance_is_absolute(monkeypatch):
    monkeypatch.setattr(Config, "NEWTON_TOL", 2e-5)
    phi = identity_map(N, ORDER)
    phi[0] = zp(0) + zp(0) * zp(0) * zm(0)
    target = np.array([6.0, 0.0, 1.0, 0.0], dtype=complex)
    z = invert_map_numeric(phi, np.eye(2), target)
    value = np.array([eval_series(c, np.eye(2), z) for c in phi])
    # z⁺⁰ + (z⁺⁰)² = 6 con Newton desde 6: el paso con residuo ~6e-5 no basta
    assert np.linalg.norm(value - target) <= 2e-5
    assert abs(z[0] - 2) < 1e-8


def test_newton_singular_jacobian():
    phi = identity_map(N, ORDER)
    phi[0] = zp(0) * zp(0)
    with pytest.raises(SingularJacobian):
        invert_map_numeric(phi, np.eye(2), np.array([0.01, 0, 0, 0]), guess=np.zeros(4))


def test_substitute_along_minus_coordinates():
    f = zm(0) * zm(1)
    args = [zm(0) + zm(0) * zp(0) * zm(1), zm(1)]
    result = substitute(f, args)
    assert result == zm(0) * zm(1) + zm(0) * zp(0) * zm(1) * zm(1)


def test_substitute_rejects_zplus_and_wrong_charge():
    with pytest.raises(DependsOnZPlus):
        substitute(zp(0) * zm(0), [zm(0), zm(1)])
    with pytest.raises(ChargeMismatch):
        substitute(zm(0), [zp(0), zm(1)])
    with pytest.raises(ShapeMismatch):
        substitute(zm(0), [zm(0)])


def test_restrict_identity():
    s = zp(0) * uvar("u1p", N, ORDER) + zm(0) * uvar("u2m", N, ORDER) + zp(1) * uvar("u2p", N, ORDER)
    assert restrict_identity(s).poly == zp(0).poly + zm(0).poly
    assert restrict_identity(s).charge is None
