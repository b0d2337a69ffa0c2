"""
Cálculo exacto de funciones holomorfas sobre Sp₁(ℂ)

U = [[u¹₊, u¹₋], [u²₊, u²₋]] con det U = u¹₊u²₋ − u²₊u¹₋ = 1. Un monomio
(α, β, γ, δ) es (u¹₊)^α (u²₊)^β (u¹₋)^γ (u²₋)^δ; la forma normal elimina el
producto u¹₊u²₋ con la reescritura u¹₊u²₋ → 1 + u²₊u¹₋.

Las derivaciones trabajan monomio a monomio sobre los cuatro primeros exponentes,
así que sirven igual para anillos con variables z adicionales (módulo jets).
"""
from functools import lru_cache
from math import comb
from typing import Dict, List, Optional, Tuple
import logging

import numpy as np
import scipy.linalg
from sympy.polys.domains import CC, QQ, QQ_I
from sympy.polys.matrices import DomainMatrix
from sympy.polys.orderings import lex
from sympy.polys.rings import PolyRing

from config import Config
from errors import ChargeMismatch, DegreeOverflow, DeterminantViolation, NoSolution

logger = logging.getLogger(__name__)

U_SYMBOLS = ("u1p", "u2p", "u1m", "u2m")


@lru_cache(maxsize=None)
def u_ring(domain) -> PolyRing:
    return PolyRing(U_SYMBOLS, domain, lex)


def is_exact(domain) -> bool:
    return domain != CC


def to_complex(c, domain) -> complex:
    if domain == QQ:
        return complex(float(c))
    if domain == QQ_I:
        return complex(float(c.x), float(c.y))
    return complex(c)


def u_charge(monom) -> int:
    return monom[0] + monom[1] - monom[2] - monom[3]


def u_weight(monom) -> int:
    """Peso izquierdo α + γ − β − δ, preservado por H₀, H±± y la reescritura"""
    return monom[0] + monom[2] - monom[1] - monom[3]


def u_degree(monom) -> int:
    return monom[0] + monom[1] + monom[2] + monom[3]


# ============= FORMA NORMAL Y DERIVACIONES (monomio a monomio) =============

def _add_term(out, monom, coeff, zero):
    value = out.get(monom, zero) + coeff
    if value:
        out[monom] = value
    elif monom in out:
        del out[monom]


def normalize(p):
    """Forma normal de un PolyElement cuyos cuatro primeros generadores son u"""
    R = p.ring
    K = R.domain
    out = R.zero
    for monom, c in p.items():
        m = min(monom[0], monom[3])
        if m == 0:
            _add_term(out, monom, c, K.zero)
            continue
        a, b, g, d = monom[0] - m, monom[1], monom[2], monom[3] - m
        rest = monom[4:]
        for j in range(m + 1):
            _add_term(out, (a, b + j, g + j, d) + rest, c * K.convert(comb(m, j)), K.zero)
    return out


def is_normal(p) -> bool:
    return all(min(monom[0], monom[3]) == 0 for monom in p.keys())


def raise_u(p):
    """Parte en u de H₊₊ = uⁱ₊ ∂/∂uⁱ₋ (sin normalizar)"""
    R = p.ring
    K = R.domain
    out = R.zero
    for monom, c in p.items():
        a, b, g, d = monom[:4]
        rest = monom[4:]
        if g:
            _add_term(out, (a + 1, b, g - 1, d) + rest, c * K.convert(g), K.zero)
        if d:
            _add_term(out, (a, b + 1, g, d - 1) + rest, c * K.convert(d), K.zero)
    return out


def lower_u(p):
    """Parte en u de H₋₋ = uⁱ₋ ∂/∂uⁱ₊ (sin normalizar)"""
    R = p.ring
    K = R.domain
    out = R.zero
    for monom, c in p.items():
        a, b, g, d = monom[:4]
        rest = monom[4:]
        if a:
            _add_term(out, (a - 1, b, g + 1, d) + rest, c * K.convert(a), K.zero)
        if b:
            _add_term(out, (a, b - 1, g, d + 1) + rest, c * K.convert(b), K.zero)
    return out


def grade_u(p):
    """Parte en u de H₀: multiplica cada monomio por su carga en u"""
    R = p.ring
    K = R.domain
    out = R.zero
    for monom, c in p.items():
        k = u_charge(monom)
        if k:
            out[monom] = c * K.convert(k)
    return out


def psi_u(p):
    """Pull-back por ψ(U) = (Uᵀ)⁻¹: u¹₊→u²₋, u¹₋→−u²₊, u²₊→−u¹₋, u²₋→u¹₊"""
    R = p.ring
    K = R.domain
    out = R.zero
    for monom, c in p.items():
        a, b, g, d = monom[:4]
        sign = -1 if (b + g) % 2 else 1
        _add_term(out, (d, g, b, a) + monom[4:], c * K.convert(sign), K.zero)
    return normalize(out)


# ============= HarmonicPoly =============

class HarmonicPoly:
    """Polinomio en forma normal sobre Sp₁(ℂ)"""

    __slots__ = ("poly",)

    def __init__(self, poly, normalized: bool = False):
        self.poly = poly if normalized else normalize(poly)

    @classmethod
    def from_terms(cls, terms: Dict[Tuple[int, int, int, int], object], domain=QQ) -> "HarmonicPoly":
        R = u_ring(domain)
        raw = R.zero
        for monom, c in terms.items():
            _add_term(raw, tuple(monom), domain.convert(c), domain.zero)
        return cls(raw)

    @classmethod
    def constant(cls, value, domain=QQ) -> "HarmonicPoly":
        return cls.from_terms({(0, 0, 0, 0): value}, domain)

    @classmethod
    def zero(cls, domain=QQ) -> "HarmonicPoly":
        return cls(u_ring(domain).zero, normalized=True)

    @property
    def domain(self):
        return self.poly.ring.domain

    @property
    def terms(self) -> Dict[Tuple[int, int, int, int], object]:
        return dict(self.poly.items())

    def is_zero(self) -> bool:
        return not self.poly

    def charges(self) -> set:
        return {u_charge(m) for m in self.poly.keys()}

    def charge(self) -> Optional[int]:
        """Carga si es homogéneo (0 para el polinomio nulo), None si es mixto"""
        charges = self.charges()
        if not charges:
            return 0
        return charges.pop() if len(charges) == 1 else None

    def degree(self) -> int:
        return max((u_degree(m) for m in self.poly.keys()), default=0)

    def __add__(self, other: "HarmonicPoly") -> "HarmonicPoly":
        return HarmonicPoly(self.poly + other.poly, normalized=True)

    def __sub__(self, other: "HarmonicPoly") -> "HarmonicPoly":
        return HarmonicPoly(self.poly - other.poly, normalized=True)

    def __neg__(self) -> "HarmonicPoly":
        return HarmonicPoly(-self.poly, normalized=True)

    def __mul__(self, other) -> "HarmonicPoly":
        if isinstance(other, HarmonicPoly):
            return HarmonicPoly(self.poly * other.poly)
        return HarmonicPoly(self.poly * self.domain.convert(other), normalized=True)

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        if isinstance(other, HarmonicPoly):
            return self.poly == other.poly
        return NotImplemented

    def __hash__(self):
        return hash(frozenset(self.poly.items()))

    def __repr__(self) -> str:
        return f"HarmonicPoly({self.poly})"


def reduce(raw: Dict[Tuple[int, int, int, int], object], domain=QQ) -> HarmonicPoly:
    """Forma normal módulo det U = 1 de un mapa de términos"""
    return HarmonicPoly.from_terms(raw, domain)


def d_H0(h: HarmonicPoly) -> HarmonicPoly:
    return HarmonicPoly(grade_u(h.poly), normalized=True)


def d_Hpp(h: HarmonicPoly) -> HarmonicPoly:
    return HarmonicPoly(raise_u(h.poly))


def d_Hmm(h: HarmonicPoly) -> HarmonicPoly:
    return HarmonicPoly(lower_u(h.poly))


def psi_pullback(h: HarmonicPoly) -> HarmonicPoly:
    return HarmonicPoly(psi_u(h.poly), normalized=True)


def check_psi_symmetry(h: HarmonicPoly) -> bool:
    return psi_pullback(h) == h


def eval_at(h: HarmonicPoly, U) -> complex:
    """Evalúa h en una matriz U numérica con det U = 1"""
    U = np.asarray(U, dtype=complex)
    check_determinant(U)
    values = (U[0, 0], U[1, 0], U[0, 1], U[1, 1])
    total = 0j
    for monom, c in h.poly.items():
        term = to_complex(c, h.domain)
        for value, power in zip(values, monom):
            if power:
                term *= value ** power
        total += term
    return total


def check_determinant(U: np.ndarray):
    det = U[0, 0] * U[1, 1] - U[0, 1] * U[1, 0]
    if abs(det - 1) >= Config.DET_TOL:
        raise DeterminantViolation(f"det U = {det} ≠ 1")


# ============= ECUACIONES DE SUBIDA =============

def block_monomials(charge: int, weight: int, bound: int) -> List[Tuple[int, int, int, int]]:
    """
    Monomios en forma normal de carga y peso dados con grado ≤ bound

    Con s = (c + w)/2 y t = (c − w)/2: α = max(s, 0), δ = max(−s, 0), β = γ + t;
    el parámetro libre es γ.
    """
    if (charge + weight) % 2:
        return []
    s = (charge + weight) // 2
    t = (charge - weight) // 2
    a, d = max(s, 0), max(-s, 0)
    monoms = []
    gamma = max(0, -t)
    while a + d + 2 * gamma + t <= bound:
        monoms.append((a, gamma + t, gamma, d))
        gamma += 1
    return monoms


def _operator_matrix(op, source, target, domain):
    """Matriz (filas: target, columnas: source) de un operador sobre bloques de monomios"""
    R = u_ring(domain)
    position = {m: i for i, m in enumerate(target)}
    rows = [[domain.zero] * len(source) for _ in target]
    for j, monom in enumerate(source):
        image = op(R({monom: domain.one}))
        for m, c in image.items():
            rows[position[m]][j] = c
    return rows


def _hpp(p):
    return normalize(raise_u(p))


def _hmm(p):
    return normalize(lower_u(p))


def _hpp_hmm(p):
    return _hpp(_hmm(p))


@lru_cache(maxsize=None)
def _raising_solver(charge: int, weight: int, bound: int, domain):
    """
    Resolvente de (H₊₊∘H₋₋) h = g sobre el bloque (carga, peso)

    Devuelve (monomios, datos) donde datos es (P, pivotes, rango) en exacto
    o la pseudoinversa en flotante.
    """
    monoms = block_monomials(charge, weight, bound)
    size = len(monoms)
    if not size:
        return monoms, None
    rows = _operator_matrix(_hpp_hmm, monoms, monoms, domain)
    if not is_exact(domain):
        M = np.array([[complex(x) for x in row] for row in rows])
        return monoms, np.linalg.pinv(M, rcond=1e-12)
    M = DomainMatrix(rows, (size, size), domain)
    augmented = M.hstack(DomainMatrix.eye(size, domain))
    reduced, pivots = augmented.rref()
    reduced = reduced.to_list()
    pivots = [p for p in pivots if p < size]
    P = [row[size:] for row in reduced]
    return monoms, (P, tuple(pivots), len(pivots))


def _solve_block(g_block, charge, weight, bound, domain):
    """h con (H₊₊∘H₋₋) h = g dentro de un bloque; None si el sistema es incompatible"""
    monoms, data = _raising_solver(charge, weight, bound, domain)
    R = u_ring(domain)
    index = {m: i for i, m in enumerate(monoms)}
    vec = [domain.zero] * len(monoms)
    for m, c in g_block.items():
        vec[index[m]] = c
    h = R.zero
    if not is_exact(domain):
        g_np = np.array([complex(x) for x in vec])
        sol = data @ g_np
        for m, value in zip(monoms, sol):
            if abs(value) > 1e-14:
                h[m] = domain.convert(complex(value))
        return h
    P, pivots, rank = data
    y = []
    for row in P:
        acc = domain.zero
        for coeff, value in zip(row, vec):
            if coeff and value:
                acc += coeff * value
        y.append(acc)
    if any(y[i] for i in range(rank, len(y))):
        return None
    for i, col in enumerate(pivots):
        if y[i]:
            h[monoms[col]] = y[i]
    return h


def _check_raising_input(g: HarmonicPoly, k: int, bound: int):
    if not g.is_zero():
        if g.charges() != {k + 2}:
            raise ChargeMismatch(f"H₀g ≠ ({k}+2)g: cargas presentes {sorted(g.charges())}")
        if g.degree() > bound:
            raise DegreeOverflow(f"Grado {g.degree()} supera la cota {bound}")


def raising_particular(g: HarmonicPoly, k: int, bound: int = None) -> HarmonicPoly:
    """Solución canónica f = H₋₋h de H₊₊f = g (ortogonal al núcleo)"""
    bound = Config.degree_bound() if bound is None else bound
    _check_raising_input(g, k, bound)
    domain = g.domain
    R = u_ring(domain)
    by_weight: Dict[int, dict] = {}
    for m, c in g.poly.items():
        by_weight.setdefault(u_weight(m), {})[m] = c
    h_total = R.zero
    for weight in sorted(by_weight):
        h = _solve_block(by_weight[weight], k + 2, weight, bound, domain)
        if h is None:
            raise NoSolution(f"g no está en la imagen de H₊₊ (peso {weight}, carga {k})")
        h_total = h_total + h
    f = _hmm(h_total)
    residual = _hpp(f) - g.poly
    if is_exact(domain):
        if residual:
            raise NoSolution(f"g no está en la imagen de H₊₊ (carga {k})")
    elif any(abs(complex(c)) > Config.FLOAT_TOL for c in residual.values()):
        raise NoSolution(f"g no está en la imagen de H₊₊ (carga {k})")
    return HarmonicPoly(f, normalized=True)


@lru_cache(maxsize=None)
def raising_kernel(k: int, bound: int, domain=QQ) -> Tuple[HarmonicPoly, ...]:
    """Base del núcleo de H₊₊ entre polinomios de carga k y grado ≤ bound"""
    R = u_ring(domain)
    basis = []
    for weight in range(-bound, bound + 1):
        source = block_monomials(k, weight, bound)
        if not source:
            continue
        target = block_monomials(k + 2, weight, bound)
        if not target:
            vectors = [[domain.one if i == j else domain.zero for i in range(len(source))]
                       for j in range(len(source))]
        else:
            rows = _operator_matrix(_hpp, source, target, domain)
            if is_exact(domain):
                A = DomainMatrix(rows, (len(target), len(source)), domain)
                vectors = A.nullspace().to_list()
            else:
                A = np.array([[complex(x) for x in row] for row in rows])
                vectors = [[domain.convert(complex(x)) for x in col] for col in scipy.linalg.null_space(A).T]
        for vec in vectors:
            lead = next(c for c in vec if c)
            p = R.zero
            for m, c in zip(source, vec):
                if c:
                    p[m] = c / lead
            basis.append(HarmonicPoly(p, normalized=True))
    return tuple(basis)


def solve_raising(g: HarmonicPoly, k: int, bound: int = None) -> Tuple[HarmonicPoly, List[HarmonicPoly]]:
    """
    Resuelve H₊₊f = g con H₀f = kf

    Args:
        g: polinomio homogéneo de carga k + 2
        k: carga buscada
        bound: cota de grado (por defecto Config.degree_bound())

    Returns:
        (solución particular, base del núcleo)
    """
    bound = Config.degree_bound() if bound is None else bound
    particular = raising_particular(g, k, bound)
    kernel = list(raising_kernel(k, bound, g.domain))
    logger.debug(f"solve_raising: carga {k}, núcleo de dimensión {len(kernel)}")
    return particular, kernel


def kernel_dimension(k: int, bound: int) -> int:
    return len(raising_kernel(k, bound, QQ))
