"""
Pruebas del álgebra 𝔭 y de la estructura real τ
"""
import itertools

import numpy as np
import pytest
from sympy import ImmutableMatrix
from sympy.polys.domains import QQ

from algebra import (E, H0, HMM, HPP, Dimensions, basis_labels, bracket_labels, bracket_p, e, epsilon_data, is_sp,
                     is_tau_fixed, jacobi_residual, jhat0_numeric, random_sp_pq_element, random_su2,
                     signature_matrix, sp_basis, sp_basis_matrix, sp_decompose, sp_dimension, sp_pq_basis, sp_recompose,
                     tau_fixed_z, tau_label_pushforward, tau_point)
from errors import IndexOutOfRange, ShapeMismatch


def _omega_np(n):
    w = np.zeros((2 * n, 2 * n))
    w[:n, n:] = np.eye(n)
    w[n:, :n] = -np.eye(n)
    return w


# ============= DIMENSIONES Y BASE =============

@pytest.mark.parametrize("n,p,q", [(0, 0, 0), (1, 2, 0), (2, 1, 0), (1, -1, 2)])
def test_invalid_dimensions(n, p, q):
    with pytest.raises(ShapeMismatch):
        Dimensions(n, p, q)


def test_epsilon_raising_then_lowering():
    eps = epsilon_data()
    assert eps.eps_lower_ij[0, 1] == 1
    assert eps.eps_upper_ij[0, 1] == -1
    assert eps.eps_lower_ij * eps.eps_upper_ij == ImmutableMatrix.eye(2)
    assert eps.eps_lower_AB == eps.eps_lower_ij


def test_basis_labels_count():
    for n in (1, 2):
        labels = basis_labels(n)
        assert len(labels) == 3 + sp_dimension(n) + 4 * n
        assert len(set(labels)) == len(labels)


def test_label_charges():
    assert HPP.charge == 2
    assert HMM.charge == -2
    assert e(+1, 0).charge == 1
    assert e(-1, 1).charge == -1
    assert E(0).charge == 0


def test_sp_basis_out_of_range():
    with pytest.raises(IndexOutOfRange):
        sp_basis_matrix(0, 2, 1)


@pytest.mark.parametrize("n", [1, 2])
def test_sp_basis_is_symplectic(n):
    for mat in sp_basis(n):
        assert is_sp(mat, n)


@pytest.mark.parametrize("n", [1, 2])
def test_sp_decompose_recovers_unit_vectors(n):
    for A, mat in enumerate(sp_basis(n)):
        coeffs = sp_decompose([[QQ(x) for x in row] for row in mat], n)
        assert coeffs == [QQ(1) if B == A else QQ(0) for B in range(sp_dimension(n))]


def test_sp_recompose_inverts_decompose():
    n = 2
    coeffs = [QQ(k + 1, 3) for k in range(sp_dimension(n))]
    M = sp_recompose(coeffs, n)
    assert sp_decompose(M, n) == coeffs


def test_sp_decompose_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        sp_decompose([[0, 0], [0, 0]], 2)


# ============= CORCHETE =============

def test_sp1_brackets():
    assert bracket_labels(H0, HPP, 1) == {HPP: 2}
    assert bracket_labels(H0, HMM, 1) == {HMM: -2}
    assert bracket_labels(HPP, HMM, 1) == {H0: 1}
    assert bracket_labels(HMM, HPP, 1) == {H0: -1}


def test_sp1_action_on_translations():
    assert bracket_labels(HPP, e(-1, 0), 1) == {e(+1, 0): 1}
    assert bracket_labels(HMM, e(+1, 1), 1) == {e(-1, 1): 1}
    assert bracket_labels(HPP, e(+1, 0), 1) == {}
    assert bracket_labels(H0, e(-1, 1), 1) == {e(-1, 1): -1}


def test_translations_commute():
    for a, b in itertools.product(range(2), repeat=2):
        for s, t in itertools.product((1, -1), repeat=2):
            assert bracket_labels(e(s, a), e(t, b), 1) == {}


@pytest.mark.parametrize("n", [1, 2])
def test_bracket_antisymmetry(n):
    labels = basis_labels(n)
    for X, Y in itertools.combinations(labels, 2):
        forward = bracket_labels(X, Y, n)
        backward = bracket_labels(Y, X, n)
        assert forward == {k: -v for k, v in backward.items()}


def test_jacobi_identity_n1():
    labels = basis_labels(1)
    for X, Y, Z in itertools.combinations(labels, 3):
        assert jacobi_residual(X, Y, Z, 1) == {}


@pytest.mark.slow
def test_jacobi_identity_n2():
    labels = basis_labels(2)
    for X, Y, Z in itertools.combinations(labels, 3):
        assert jacobi_residual(X, Y, Z, 2) == {}


def test_bracket_p_is_bilinear():
    X = {HMM: QQ(2), e(-1, 0): QQ(1)}
    Y = {HPP: QQ(3)}
    assert bracket_p(X, Y, 1) == {H0: QQ(-6), e(+1, 0): QQ(-3)}


# ============= ESTRUCTURA REAL =============

def test_jhat_squares_to_minus_identity():
    for dims in (Dimensions(1, 1, 0), Dimensions(2, 1, 1), Dimensions(2, 0, 2)):
        J = jhat0_numeric(dims)
        assert np.allclose(J @ J, -np.eye(2 * dims.n))


def test_tau_is_involution():
    rng = np.random.default_rng(3)
    dims = Dimensions(2, 1, 1)
    U = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    B = np.eye(4) + 0.2 * (rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    z = rng.normal(size=(2, 4)) + 1j * rng.normal(size=(2, 4))
    once = tau_point(U, B, z, dims)
    twice = tau_point(*once, dims)
    for before, after in zip((U, B, z), twice):
        assert np.allclose(before, after)


def test_tau_point_shape_mismatch():
    dims = Dimensions(1, 1, 0)
    with pytest.raises(ShapeMismatch):
        tau_point(np.eye(2), np.eye(2), np.zeros((2, 4)), dims)


@pytest.mark.parametrize("dims", [Dimensions(1, 1, 0), Dimensions(2, 1, 1)])
def test_real_slice_is_fixed(dims):
    rng = np.random.default_rng(11)
    n = dims.n
    A = rng.normal(size=n) + 1j * rng.normal(size=n)
    C = rng.normal(size=n) + 1j * rng.normal(size=n)
    z = tau_fixed_z(A, C, dims)
    U = random_su2(rng)
    B = random_sp_pq_element(dims, rng)
    assert is_tau_fixed(U, B, z, dims)


def test_random_group_elements():
    rng = np.random.default_rng(5)
    dims = Dimensions(2, 1, 1)
    B = random_sp_pq_element(dims, rng)
    w = _omega_np(2)
    assert np.allclose(B.T @ w @ B, w)
    U = random_su2(rng)
    assert np.isclose(np.linalg.det(U), 1)
    assert np.allclose(U.conj().T @ U, np.eye(2))


def _push(expr, dims):
    out = {}
    for label, c in expr.items():
        for image, d in tau_label_pushforward(label, dims).items():
            out[image] = out.get(image, 0) + c * d
    return {k: v for k, v in out.items() if v}


@pytest.mark.parametrize("dims", [Dimensions(1, 1, 0), Dimensions(2, 1, 1)])
def test_pushforward_squares_to_identity(dims):
    for label in basis_labels(dims.n):
        assert _push(_push({label: QQ(1)}, dims), dims) == {label: QQ(1)}


def test_pushforward_exchanges_charges():
    dims = Dimensions(1, 1, 0)
    assert tau_label_pushforward(HPP, dims) == {HMM: QQ(-1)}
    assert tau_label_pushforward(H0, dims) == {H0: QQ(-1)}
    for label, c in tau_label_pushforward(e(+1, 0), dims).items():
        assert label.sign == -1


@pytest.mark.parametrize("dims", [Dimensions(1, 1, 0), Dimensions(2, 1, 1)])
def test_sp_pq_basis_is_real_form(dims):
    basis = sp_pq_basis(dims)
    assert len(basis) == sp_dimension(dims.n)
    w = _omega_np(dims.n)
    I = signature_matrix(dims)
    for X in basis:
        assert np.allclose(X.T @ w + w @ X, 0, atol=1e-10)
        assert np.allclose(X, -I @ X.conj().T @ I, atol=1e-10)
