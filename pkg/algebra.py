"""
Álgebra de Lie 𝔭 = (𝔰𝔭₁(ℂ) + 𝔰𝔭ₙ(ℂ)) + ℂ⁴ⁿ

Convenciones (todas con índices desde 0):
    ω_ab = [[0, Iₙ], [−Iₙ, 0]]   y   ωᵃᵇ = su inversa = −ω_ab
    E_ab = e_a·ω[b,:] + e_b·ω[a,:]  para a ≤ b, en orden lexicográfico
    η = diag(+1 × p, −1 × q),  I_{2p,2q} = diag(η, η),  Ĵ₀ = [[0, −η], [η, 0]]
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, NamedTuple, Tuple
import logging

import numpy as np
import scipy.linalg
from sympy import ImmutableMatrix, Matrix, eye, zeros
from sympy.polys.domains import QQ

from errors import IndexOutOfRange, ShapeMismatch, SingularMatrix

logger = logging.getLogger(__name__)


# ============= TIPOS DEL DOMINIO =============

@dataclass(frozen=True)
class Dimensions:
    """Dimensión cuaterniónica n y firma (p, q) con p + q = n"""
    n: int
    p: int
    q: int = 0

    def __post_init__(self):
        if self.n < 1 or self.p < 0 or self.q < 0 or self.p + self.q != self.n:
            raise ShapeMismatch(f"Dimensiones inválidas: n={self.n}, p={self.p}, q={self.q}")

    @property
    def real_dim(self) -> int:
        return 4 * self.n

    @property
    def sp_dim(self) -> int:
        return (2 * self.n + 1) * self.n

    @classmethod
    def definite(cls, n: int) -> "Dimensions":
        return cls(n=n, p=n, q=0)


class BasisIndex(NamedTuple):
    """Etiqueta de la base estándar de 𝔭: H0, Hpp, Hmm, E(A), e(±, a)"""
    kind: str
    sign: int = 0
    index: int = 0

    @property
    def charge(self) -> int:
        if self.kind == "Hpp":
            return 2
        if self.kind == "Hmm":
            return -2
        if self.kind == "e":
            return self.sign
        return 0

    def __str__(self) -> str:
        if self.kind == "E":
            return f"E{self.index}"
        if self.kind == "e":
            return f"e{'+' if self.sign > 0 else '-'}{self.index}"
        return self.kind


H0 = BasisIndex("H0")
HPP = BasisIndex("Hpp", 2)
HMM = BasisIndex("Hmm", -2)


def E(A: int) -> BasisIndex:
    return BasisIndex("E", 0, A)


def e(sign: int, a: int) -> BasisIndex:
    return BasisIndex("e", 1 if sign > 0 else -1, a)


def basis_labels(n: int) -> List[BasisIndex]:
    """Todas las etiquetas de 𝔭 en orden fijo"""
    labels = [H0, HPP, HMM]
    labels += [E(A) for A in range(sp_dimension(n))]
    labels += [e(+1, a) for a in range(2 * n)]
    labels += [e(-1, a) for a in range(2 * n)]
    return labels


@dataclass(frozen=True)
class SymplecticData:
    omega_lower: ImmutableMatrix
    omega_upper: ImmutableMatrix
    eta: ImmutableMatrix
    Jhat0: ImmutableMatrix


@dataclass(frozen=True)
class EpsilonData:
    eps_lower_ij: ImmutableMatrix
    eps_upper_ij: ImmutableMatrix
    eps_lower_AB: ImmutableMatrix
    eps_upper_AB: ImmutableMatrix


def epsilon_data() -> EpsilonData:
    lower = ImmutableMatrix([[0, 1], [-1, 0]])
    upper = ImmutableMatrix([[0, -1], [1, 0]])
    return EpsilonData(lower, upper, lower, upper)


# ============= DATOS SIMPLÉCTICOS =============

def sp_dimension(n: int) -> int:
    return (2 * n + 1) * n


@lru_cache(maxsize=None)
def _omega(n: int) -> Tuple[Tuple[int, ...], ...]:
    rows = []
    for a in range(2 * n):
        row = [0] * (2 * n)
        if a < n:
            row[a + n] = 1
        else:
            row[a - n] = -1
        rows.append(tuple(row))
    return tuple(rows)


def omega_lower(n: int) -> Tuple[Tuple[int, ...], ...]:
    return _omega(n)


@lru_cache(maxsize=None)
def omega_upper(n: int) -> Tuple[Tuple[int, ...], ...]:
    return tuple(tuple(-x for x in row) for row in _omega(n))


@lru_cache(maxsize=None)
def symplectic_data(dims: Dimensions) -> SymplecticData:
    n = dims.n
    eta = ImmutableMatrix.diag(*([1] * dims.p + [-1] * dims.q))
    jhat = zeros(2 * n, 2 * n)
    jhat[0:n, n:2 * n] = -eta
    jhat[n:2 * n, 0:n] = eta
    lower = ImmutableMatrix(_omega(n))
    upper = ImmutableMatrix(omega_upper(n))
    if upper * lower != eye(2 * n):
        raise SingularMatrix("ωᵃᵇ no es la inversa de ω_ab")
    return SymplecticData(lower, upper, eta, ImmutableMatrix(jhat))


def jhat0_numeric(dims: Dimensions) -> np.ndarray:
    return np.array(symplectic_data(dims).Jhat0.tolist(), dtype=float)


def eta_numeric(dims: Dimensions) -> np.ndarray:
    return np.diag([1.0] * dims.p + [-1.0] * dims.q)


def signature_matrix(dims: Dimensions) -> np.ndarray:
    """I_{2p,2q} = diag(η, η)"""
    eta = eta_numeric(dims)
    return scipy.linalg.block_diag(eta, eta)


# ============= BASE DE 𝔰𝔭ₙ(ℂ) =============

@lru_cache(maxsize=None)
def sp_pairs(n: int) -> Tuple[Tuple[int, int], ...]:
    return tuple((a, b) for a in range(2 * n) for b in range(a, 2 * n))


def sp_basis_matrix(a: int, b: int, n: int) -> ImmutableMatrix:
    """
    Matriz de e_a ∨ e_b actuando sobre ℂ²ⁿ

    Args:
        a, b: índices en 0..2n-1
        n: dimensión cuaterniónica
    """
    if not (0 <= a < 2 * n and 0 <= b < 2 * n):
        raise IndexOutOfRange(f"Índices ({a}, {b}) fuera de rango para n={n}")
    w = _omega(n)
    m = zeros(2 * n, 2 * n)
    for col in range(2 * n):
        m[a, col] += w[b][col]
        m[b, col] += w[a][col]
    return ImmutableMatrix(m)


@lru_cache(maxsize=None)
def sp_basis(n: int) -> Tuple[Tuple[Tuple[int, ...], ...], ...]:
    """Matrices E_A como tuplas de enteros (E_A[fila][columna])"""
    return tuple(tuple(tuple(int(x) for x in row) for row in sp_basis_matrix(a, b, n).tolist())
                 for a, b in sp_pairs(n))


def sp_decompose(M, n: int) -> List:
    """
    Coeficientes de M ∈ 𝔰𝔭ₙ sobre la base E_A

    Usa S = M·ωᵃᵇ: c_ab = S[a][b] fuera de la diagonal y S[a][a]/2 en ella.
    Los elementos de M pueden ser de cualquier anillo que admita suma y división por 2.
    """
    up = omega_upper(n)
    size = 2 * n
    if len(M) != size:
        raise ShapeMismatch(f"Se esperaba una matriz {size}×{size}")

    def s_entry(a, b):
        total = 0
        for c in range(size):
            if up[c][b]:
                total = total + M[a][c] * up[c][b]
        return total

    coeffs = []
    for a, b in sp_pairs(n):
        value = s_entry(a, b)
        coeffs.append(value / 2 if a == b else value)
    return coeffs


def sp_recompose(coeffs, n: int):
    """Σ_A c^A E_A como lista de listas (entradas genéricas)"""
    size = 2 * n
    out = [[0] * size for _ in range(size)]
    for c, mat in zip(coeffs, sp_basis(n)):
        if not c:
            continue
        for i in range(size):
            for j in range(size):
                if mat[i][j]:
                    out[i][j] = out[i][j] + c * mat[i][j]
    return out


def is_sp(M, n: int) -> bool:
    """Mᵀω + ωM = 0"""
    m = Matrix(M)
    w = Matrix(_omega(n))
    return (m.T * w + w * m).is_zero_matrix


@lru_cache(maxsize=None)
def structure_constants(n: int) -> Dict[Tuple[int, int], Dict[int, object]]:
    """c^C_{AB} con [E_A, E_B] = c^C_{AB} E_C (entradas en QQ)"""
    mats = [Matrix(m) for m in sp_basis(n)]
    table = {}
    for A, ma in enumerate(mats):
        for B, mb in enumerate(mats):
            comm = (ma * mb - mb * ma).tolist()
            coeffs = sp_decompose([[QQ(int(x)) for x in row] for row in comm], n)
            table[(A, B)] = {C: c for C, c in enumerate(coeffs) if c}
    logger.debug(f"Constantes de estructura de 𝔰𝔭_{n} calculadas ({len(mats)} generadores)")
    return table


# ============= CORCHETE DE 𝔭 =============

def bracket_labels(X: BasisIndex, Y: BasisIndex, n: int) -> Dict[BasisIndex, object]:
    """Corchete de dos etiquetas de la base según la tabla del modelo plano"""
    if X == Y:
        return {}
    kx, ky = X.kind, Y.kind
    # antisimetría: reducir a un orden canónico de tipos
    order = {"H0": 0, "Hpp": 1, "Hmm": 2, "E": 3, "e": 4}
    if order[kx] > order[ky] or (kx == ky == "e" and (X.sign, X.index) > (Y.sign, Y.index)):
        return {k: -v for k, v in bracket_labels(Y, X, n).items()}

    if kx == "H0":
        if ky in ("Hpp", "Hmm", "e"):
            return {Y: QQ(Y.charge)}
        return {}
    if kx == "Hpp":
        if ky == "Hmm":
            return {H0: QQ(1)}
        if ky == "e" and Y.sign < 0:
            return {e(+1, Y.index): QQ(1)}
        return {}
    if kx == "Hmm":
        if ky == "e" and Y.sign > 0:
            return {e(-1, Y.index): QQ(1)}
        return {}
    if kx == "E":
        if ky == "E":
            return {E(C): c for C, c in structure_constants(n)[(X.index, Y.index)].items()}
        if ky == "e":
            mat = sp_basis(n)[X.index]
            return {e(Y.sign, b): QQ(mat[b][Y.index]) for b in range(2 * n) if mat[b][Y.index]}
    return {}


def bracket_p(X: Dict[BasisIndex, object], Y: Dict[BasisIndex, object], n: int) -> Dict[BasisIndex, object]:
    """Corchete bilineal de dos vectores de 𝔭 dados como {etiqueta: escalar}"""
    result: Dict[BasisIndex, object] = {}
    for lx, cx in X.items():
        if not cx:
            continue
        for ly, cy in Y.items():
            if not cy:
                continue
            for lz, cz in bracket_labels(lx, ly, n).items():
                result[lz] = result.get(lz, 0) + cx * cy * cz
    return {k: v for k, v in result.items() if v}


def jacobi_residual(X: BasisIndex, Y: BasisIndex, Z: BasisIndex, n: int) -> Dict[BasisIndex, object]:
    one = QQ(1)
    x, y, z = {X: one}, {Y: one}, {Z: one}
    total: Dict[BasisIndex, object] = {}
    for a, b, c in ((x, y, z), (y, z, x), (z, x, y)):
        for k, v in bracket_p(a, bracket_p(b, c, n), n).items():
            total[k] = total.get(k, 0) + v
    return {k: v for k, v in total.items() if v}


# ============= ESTRUCTURA REAL τ =============

def psi_z(z: np.ndarray, dims: Dimensions) -> np.ndarray:
    """ψ(z)^{jb} = −J_{ji} 𝕁_{ba} z^{ia}, con z de forma (2, 2n)"""
    J = np.array([[0.0, -1.0], [1.0, 0.0]])
    jhat = jhat0_numeric(dims)
    return -J @ z @ jhat.T


def tau_point(U: np.ndarray, B: np.ndarray, z: np.ndarray, dims: Dimensions):
    """
    Aplica la estructura real τ a un punto (U, B, z)

    Returns:
        ((Ūᵀ)⁻¹, (I B̄ᵀ I)⁻¹, conj(ψ(z)))
    """
    U = np.asarray(U, dtype=complex)
    B = np.asarray(B, dtype=complex)
    z = np.asarray(z, dtype=complex)
    if U.shape != (2, 2) or B.shape != (2 * dims.n, 2 * dims.n) or z.shape != (2, 2 * dims.n):
        raise ShapeMismatch("Forma de punto incompatible con las dimensiones")
    I = signature_matrix(dims)
    try:
        U_new = np.linalg.inv(U.conj().T)
        B_new = np.linalg.inv(I @ B.conj().T @ I)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix(f"U o B singular: {str(exc)}")
    return U_new, B_new, np.conj(psi_z(z, dims))


def is_tau_fixed(U, B, z, dims: Dimensions, tol: float = 1e-10) -> bool:
    U2, B2, z2 = tau_point(U, B, z, dims)
    return (np.allclose(U2, U, atol=tol) and np.allclose(B2, B, atol=tol)
            and np.allclose(z2, z, atol=tol))


def tau_fixed_z(A: np.ndarray, C: np.ndarray, dims: Dimensions) -> np.ndarray:
    """Punto τ-fijo z¹ = (A, η C̄), z² = (C, −η Ā)"""
    eta = np.diag(eta_numeric(dims))
    A = np.asarray(A, dtype=complex)
    C = np.asarray(C, dtype=complex)
    return np.array([np.concatenate([A, eta * np.conj(C)]),
                     np.concatenate([C, -eta * np.conj(A)])])


def tau_label_pushforward(label: BasisIndex, dims: Dimensions) -> Dict[BasisIndex, object]:
    """
    τ_* sobre los campos planos en el punto base

    H₀ ↦ −H₀, H±± ↦ −H∓∓, e₊a ↦ Ĵ₀[a][b] e₋b, e₋a ↦ −Ĵ₀[a][b] e₊b,
    E_A ↦ descomposición de −I E_Aᵀ I.
    """
    n = dims.n
    if label.kind == "H0":
        return {H0: QQ(-1)}
    if label.kind == "Hpp":
        return {HMM: QQ(-1)}
    if label.kind == "Hmm":
        return {HPP: QQ(-1)}
    jhat = symplectic_data(dims).Jhat0
    if label.kind == "e":
        a = label.index
        sign = QQ(1) if label.sign > 0 else QQ(-1)
        return {e(-label.sign, b): sign * QQ(int(jhat[a, b])) for b in range(2 * n) if jhat[a, b]}
    if label.kind == "E":
        I = ImmutableMatrix(signature_matrix(dims).astype(int).tolist())
        mat = Matrix(sp_basis(n)[label.index])
        image = (-I * mat.T * I).tolist()
        coeffs = sp_decompose([[QQ(int(x)) for x in row] for row in image], n)
        return {E(C): c for C, c in enumerate(coeffs) if c}
    raise IndexOutOfRange(f"Etiqueta desconocida: {label}")


@lru_cache(maxsize=None)
def sp_pq_basis(dims: Dimensions) -> Tuple[np.ndarray, ...]:
    """Base real de 𝔰𝔭_{p,q}: parte fija de X ↦ −I X̄ᵀ I en 𝔰𝔭ₙ(ℂ)"""
    I = signature_matrix(dims)
    candidates = []
    for mat in sp_basis(dims.n):
        Y = np.array(mat, dtype=complex)
        for Z in (Y, 1j * Y):
            candidates.append(0.5 * (Z - I @ Z.conj().T @ I))
    flat = np.array([np.concatenate([c.real.ravel(), c.imag.ravel()]) for c in candidates])
    _, s, vh = np.linalg.svd(flat, full_matrices=False)
    rank = int(np.sum(s > 1e-10 * s[0]))
    size = 2 * dims.n
    basis = []
    for row in vh[:rank]:
        half = size * size
        basis.append(row[:half].reshape(size, size) + 1j * row[half:].reshape(size, size))
    if rank != dims.sp_dim:
        raise ShapeMismatch(f"𝔰𝔭_(p,q) con dimensión {rank}, se esperaba {dims.sp_dim}")
    return tuple(basis)


def random_sp_pq_element(dims: Dimensions, rng: np.random.Generator, scale: float = 0.3) -> np.ndarray:
    """Elemento de Sp_{p,q} como exponencial de un elemento aleatorio del álgebra"""
    basis = sp_pq_basis(dims)
    weights = rng.normal(size=len(basis)) * scale
    X = sum(w * b for w, b in zip(weights, basis))
    return scipy.linalg.expm(X)


def random_su2(rng: np.random.Generator) -> np.ndarray:
    """Elemento de SU(2) (U τ-fijo) a partir de un cuaternión unitario"""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    a, b = q[0] + 1j * q[1], q[2] + 1j * q[3]
    return np.array([[a, -np.conj(b)], [b, np.conj(a)]])
