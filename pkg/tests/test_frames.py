"""
Pruebas de campos sobre 𝒫, corchete de Lie y comprobaciones del marco
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from algebra import E, H0, HMM, HPP, e, sp_dimension
from errors import ChargeMismatch, MissingEquivariance, ShapeMismatch
from frames import (FrameField, HKFrame, check_canonical, check_hk_axioms, check_independence,
                    check_potentials_identities, combine, curvature_symmetry, extract_curvature, field_residual,
                    flat_field, flat_frame, frame_matrix, lie_bracket, sample_points)
from jets import ChargedSeries, zvar

N = 1
ORDER = 4


def test_flat_frame_satisfies_axioms():
    frame = flat_frame(N, ORDER)
    report = check_hk_axioms(frame)
    assert report.passed()
    assert set(report.residuals) >= {"[H0,Hpp]", "[Hpp,Hmm]", "[E,e+]", "[e+,e-]"}


def test_flat_frame_is_canonical():
    report = check_canonical(flat_frame(N, ORDER))
    assert report.is_canonical
    assert report.failures == []
    assert all(v.is_zero() for v in report.v_potential)


def test_flat_potential_identities():
    residuals = check_potentials_identities(flat_frame(N, ORDER))
    assert residuals == {"e+v-": 0.0, "A=e-v-": 0.0, "e+v+=e-v-": 0.0, "symplectic": 0.0}


def test_flat_curvature_vanishes():
    curvature = extract_curvature(flat_frame(N, ORDER))
    assert curvature.is_flat()
    assert curvature_symmetry(curvature) == {"sp": 0.0, "ab": 0.0, "total": 0.0}


def test_bracket_of_flat_fields():
    bracket = lie_bracket(flat_field(HPP, N, ORDER), flat_field(e(-1, 0), N, ORDER))
    assert field_residual(bracket, flat_field(e(+1, 0), N, ORDER)) == 0.0
    assert bracket.declared_charge == 1


def test_bracket_differentiates_coefficients():
    Y = FrameField({e(+1, 0): zvar(+1, 1, N, ORDER)}, 0, N, ORDER, invariant=True)
    bracket = lie_bracket(flat_field(HPP, N, ORDER), Y)
    assert bracket.coefficient(e(+1, 0)) == -zvar(-1, 1, N, ORDER)
    assert bracket.declared_charge == 2


def test_bracket_is_antisymmetric():
    X = flat_field(HMM, N, ORDER)
    Y = FrameField({e(+1, 0): zvar(-1, 1, N, ORDER)}, 2, N, ORDER, invariant=True)
    forward = lie_bracket(X, Y)
    backward = lie_bracket(Y, X)
    assert field_residual(forward, backward.scaled(-1)) == 0.0


FIELD_LABELS = [H0, HPP, HMM, E(0), E(1), E(2), e(+1, 0), e(+1, 1), e(-1, 0), e(-1, 1)]


@st.composite
def coefficient(draw, charge):
    """Serie de carga dada con a lo sumo una z por término"""
    terms = {}
    for _ in range(draw(st.integers(min_value=1, max_value=3))):
        slot = draw(st.integers(min_value=-1, max_value=4 * N - 1))
        zplus, zminus = [0] * (2 * N), [0] * (2 * N)
        if 0 <= slot < 2 * N:
            zplus[slot] = 1
        elif slot >= 2 * N:
            zminus[slot - 2 * N] = 1
        need = charge + sum(zplus) - sum(zminus)
        minus = draw(st.integers(min_value=max(0, -need), max_value=max(0, -need) + 1))
        plus = need + minus
        a = draw(st.integers(0, plus))
        c = draw(st.integers(0, minus))
        u4 = (a, plus - a, c, minus - c)
        terms[(u4, tuple(zplus), tuple(zminus))] = draw(st.integers(-3, 3).filter(bool))
    return ChargedSeries.from_terms(terms, N, ORDER, charge=charge)


@st.composite
def invariant_fields(draw):
    declared = draw(st.integers(min_value=-1, max_value=1))
    labels = draw(st.lists(st.sampled_from(FIELD_LABELS), min_size=1, max_size=3, unique=True))
    coefficients = {lab: draw(coefficient(declared - lab.charge)) for lab in labels}
    return FrameField(coefficients, declared, N, ORDER, invariant=True)


@settings(max_examples=50, derandomize=True, deadline=None)
@given(X=invariant_fields(), Y=invariant_fields(), Z=invariant_fields())
def test_bracket_satisfies_jacobi(X, Y, Z):
    jacobi = combine([(1, lie_bracket(X, lie_bracket(Y, Z))),
                      (1, lie_bracket(Y, lie_bracket(Z, X))),
                      (1, lie_bracket(Z, lie_bracket(X, Y)))])
    zero = FrameField({}, jacobi.declared_charge, N, ORDER, invariant=True)
    assert field_residual(jacobi, zero) == 0.0


def test_field_charge_is_checked():
    with pytest.raises(ChargeMismatch):
        FrameField({e(+1, 0): zvar(-1, 0, N, ORDER)}, 0, N, ORDER)


def test_E_derivative_needs_equivariance():
    X = FrameField({e(+1, 0): zvar(-1, 0, N, ORDER)}, 2, N, ORDER)
    with pytest.raises(MissingEquivariance):
        lie_bracket(flat_field(E(0), N, ORDER), X)


def test_incomplete_frame():
    flat = flat_frame(N, ORDER)
    with pytest.raises(ShapeMismatch):
        HKFrame(n=N, order=ORDER, H0=flat.H0, Hpp=flat.Hpp, Hmm=flat.Hmm, E=flat.E[:1],
                e_plus=flat.e_plus, e_minus=flat.e_minus)


def test_expected_bracket_combination():
    frame = flat_frame(N, ORDER)
    expected = frame.expected(H0, HPP)
    assert field_residual(expected, flat_field(HPP, N, ORDER).scaled(2)) == 0.0
    assert frame.expected(e(+1, 0), e(-1, 1)).coefficients == {}


def test_flat_frame_matrix_is_identity():
    frame = flat_frame(N, ORDER)
    points = sample_points(N, count=3, seed=1)
    assert len(points) == 4
    for U, z in points:
        M = frame_matrix(frame, U, z)
        assert np.allclose(M, np.eye(3 + sp_dimension(N) + 4 * N))
    assert check_independence(frame, points) == pytest.approx(1.0)
