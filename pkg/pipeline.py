"""
Receta completa: prepotencial → H₊₊ → puente → marco canónico → carta → métrica,
y la construcción inversa marco → prepotencial
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np
from sympy.polys.domains import QQ

from algebra import (Dimensions, E, HMM, HPP, e, eta_numeric, jhat0_numeric, omega_lower,
                     omega_upper, random_sp_pq_element, random_su2, sp_decompose)
from config import Config
from errors import (DependsOnZPlus, FlowDiverged, HKError, NoFixedPoint, NonzeroAtOrigin, NotCharge4,
                    NotClosed, OutOfChart, RankDeficient, ResidualNonzero, RoundTripMismatch, RouteMismatch,
                    ShapeMismatch, SingularFrame, SingularJacobian)
from frames import (FrameField, HKFrame, check_canonical, check_hk_axioms, check_potentials_identities,
                    curvature_symmetry, extract_curvature, flat_frame, lie_bracket)
from harmonic import HarmonicPoly, block_monomials, is_exact, to_complex
from jets import (ChargedSeries, CompiledMap, CompiledSeries, Matrix, apply_flat_field, central_var,
                  compose, d_z, invert_map_numeric, invert_series, join_domains, mat_identity, mat_mul,
                  mat_tag, matrix_inverse, matrix_log, max_abs_coefficient, monom_charge, series_is_zero,
                  series_ring, solve_charged, solve_coupled, substitute, uvar, zdeg, zvar, MIXED, UPPER)
from jets import SCALAR as SCALAR_TAG

logger = logging.getLogger(__name__)


# ============= TIPOS =============

@dataclass
class Prepotential:
    dims: Dimensions
    L: ChargedSeries
    order: int

    @property
    def n(self) -> int:
        return self.dims.n


@dataclass
class Bridge:
    """
    Componentes del puente φ restringidas al corte B = I

    phi_plus, phi_minus: φ^{±a} (cargas −1 y +1); phi_B: φᵃ_b; psi = log φ_B
    """
    phi_plus: List[ChargedSeries]
    phi_minus: List[ChargedSeries]
    phi_B: Matrix
    psi: Matrix
    iterations: int = 0
    residuals: Dict[str, float] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.phi_plus[0].n

    @property
    def phi_ia(self) -> List[List[ChargedSeries]]:
        """φ^{ia} = uⁱ₊φ⁺ᵃ + uⁱ₋φ⁻ᵃ"""
        n, order = self.n, self.phi_plus[0].order
        u = {name: uvar(name, n, order) for name in ("u1p", "u2p", "u1m", "u2m")}
        rows = []
        for plus_name, minus_name in (("u1p", "u1m"), ("u2p", "u2m")):
            rows.append([u[plus_name] * p + u[minus_name] * m
                         for p, m in zip(self.phi_plus, self.phi_minus)])
        return rows

    def components(self) -> List[ChargedSeries]:
        return list(self.phi_plus) + list(self.phi_minus)


# ============= VALIDACIÓN =============

def validate_prepotential(L: ChargedSeries, dims: Dimensions, order: Optional[int] = None) -> Prepotential:
    """
    Verifica carga 4, independencia de z⁺ y anulación en el origen

    Raises:
        NotCharge4, DependsOnZPlus, NonzeroAtOrigin
    """
    if L.n != dims.n:
        raise ShapeMismatch(f"El prepotencial es de n={L.n}, las dimensiones de n={dims.n}")
    wrong = [m for m in L.poly.keys() if monom_charge(m, L.n) != 4]
    if wrong:
        raise NotCharge4(f"{len(wrong)} términos con carga distinta de 4 (p. ej. {wrong[0]})")
    if L.depends_on_zplus():
        raise DependsOnZPlus("El prepotencial depende de z⁺")
    if L.has_constant_term():
        raise NonzeroAtOrigin("El prepotencial no se anula en z = 0")
    L = L.like(L.poly, charge=4)
    return Prepotential(dims, L, L.order if order is None else order)


def zero_prepotential(dims: Dimensions, order: int) -> Prepotential:
    return Prepotential(dims, ChargedSeries.zero(dims.n, order, QQ, charge=4), order)


# ============= H₊₊ =============

def _dminus(b: int, s: ChargedSeries) -> ChargedSeries:
    return d_z(-1, b, s)


def _potential_derivatives(L: ChargedSeries) -> Tuple[List[ChargedSeries], Matrix]:
    """Yᵃ = ωᵃᵇ∂_bL y Mᵃ_b = ωᵃᶜ∂_b∂_cL como series en z⁻"""
    n = L.n
    size = 2 * n
    up = omega_upper(n)
    first = [_dminus(b, L) for b in range(size)]
    second = [[_dminus(b, first[c]) for c in range(size)] for b in range(size)]
    Y = []
    for a in range(size):
        acc = ChargedSeries.zero(n, L.order, L.domain, charge=3)
        for b in range(size):
            if up[a][b]:
                acc = acc + first[b] * up[a][b]
        Y.append(acc)
    M = []
    for a in range(size):
        row = []
        for b in range(size):
            acc = ChargedSeries.zero(n, L.order, L.domain, charge=2, tag=MIXED)
            for c in range(size):
                if up[a][c]:
                    acc = acc + second[b][c] * up[a][c]
            row.append(acc.like(acc.poly, tag=MIXED))
        M.append(row)
    return Y, M


def build_Hpp(P: Prepotential) -> FrameField:
    """
    H₊₊ = H⁰₊₊ + v⁻ᵇe⁰₋b + v⁺ᵇe⁰₊b + A^B E⁰_B con
    v⁻ᵇ = ωᵇᶜ∂L/∂z⁻ᶜ, A(E)ᵃ_b = ωᵃᶜ∂²L/∂z⁻ᵇ∂z⁻ᶜ, v⁺ᵃ = A(E)ᵃ_b z⁺ᵇ
    """
    n, order = P.n, P.order
    size = 2 * n
    L = P.L
    Y, M = _potential_derivatives(L)
    coefficients = {HPP: ChargedSeries.constant(1, n, order, L.domain)}
    for b in range(size):
        coefficients[e(-1, b)] = Y[b].like(Y[b].poly, tag=UPPER)
    for a in range(size):
        acc = ChargedSeries.zero(n, order, L.domain, charge=1, tag=UPPER)
        for b in range(size):
            acc = acc + M[a][b] * zvar(+1, b, n, order)
        coefficients[e(+1, a)] = acc.like(acc.poly, tag=UPPER)
    for A, coeff in enumerate(sp_decompose(M, n)):
        coefficients[E(A)] = coeff.like(coeff.poly, tag=SCALAR_TAG)
    coefficients = {k: v for k, v in coefficients.items() if not v.is_zero()}
    logger.info(f"✅ H₊₊ construido: {len(coefficients)} componentes no nulas")
    return FrameField(coefficients, 2, n, order, label=HPP)



# ============= PUENTE =============

def _analytic_from_central(F: List[List[ChargedSeries]]) -> Tuple[List[ChargedSeries], List[ChargedSeries]]:
    """φ⁺ᵃ = u²₋F¹ᵃ − u¹₋F²ᵃ,  φ⁻ᵃ = −u²₊F¹ᵃ + u¹₊F²ᵃ"""
    n, order = F[0][0].n, F[0][0].order
    u1p, u2p, u1m, u2m = (uvar(name, n, order) for name in ("u1p", "u2p", "u1m", "u2m"))
    plus = [u2m * f1 - u1m * f2 for f1, f2 in zip(F[0], F[1])]
    minus = [u1p * f2 - u2p * f1 for f1, f2 in zip(F[0], F[1])]
    return plus, minus


def _constant_part(M: Matrix) -> List[List[HarmonicPoly]]:
    n = M[0][0].n
    zeros = (0,) * (2 * n)
    return [[x.coefficient(zeros, zeros) for x in row] for row in M]


def _along(series_list: Sequence[ChargedSeries], phi_minus: Sequence[ChargedSeries]) -> List[ChargedSeries]:
    return [substitute(s, phi_minus) for s in series_list]


def _times_constant(C: List[List[HarmonicPoly]], v: Sequence[ChargedSeries]) -> List[ChargedSeries]:
    out = []
    for row in C:
        acc = None
        for c, x in zip(row, v):
            if c.is_zero():
                continue
            term = x * c
            acc = term if acc is None else acc + term
        out.append(acc)
    return out


def _solve_linear(rhs: List[ChargedSeries], M0, init: List[ChargedSeries], coupled: bool, bound) -> List[ChargedSeries]:
    if coupled:
        return solve_coupled(rhs, M0, init, bound)
    return [solve_charged(r, 0, i, bound) for r, i in zip(rhs, init)]


def _stable(new: Sequence[ChargedSeries], old: Sequence[ChargedSeries]) -> bool:
    return all(series_is_zero((x - y).truncated(x.order)) for x, y in zip(new, old))


def _sum_or_zero(terms, like: ChargedSeries, charge: int) -> ChargedSeries:
    acc = ChargedSeries.zero(like.n, like.order, like.domain, charge=charge)
    for t in terms:
        if t is not None:
            acc = acc + t
    return acc


def solve_bridge(P: Prepotential, Hpp: Optional[FrameField] = None, bound: Optional[int] = None) -> Bridge:
    """
    Resuelve el sistema del puente con datos iniciales φ^{ia}(I₂, z) = z^{ia}, φ_B(I₂, z) = 1

    La parte afín (acoplamiento M₀ = ω·Hess L₂) se resuelve de una vez; el resto,
    de grado ≥ 2 en φ, se itera hasta estabilizarse.

    Raises:
        NoFixedPoint: la iteración no se estabiliza en orden + 2 pasos
        ResidualNonzero: el resultado no satisface las ecuaciones
    """
    n, order = P.n, P.order
    size = 2 * n
    L = P.L
    domain = L.domain
    Y, M = _potential_derivatives(L)
    M0 = _constant_part(M)
    coupled = any(not c.is_zero() for row in M0 for c in row)
    if coupled:
        logger.info("Parte cuadrática no nula: sistema acoplado")

    init = [[central_var(i, a, n, order, domain) for a in range(size)] for i in (0, 1)]
    u_plus = [uvar("u1p", n, order), uvar("u2p", n, order)]
    u_minus = [uvar("u1m", n, order), uvar("u2m", n, order)]
    F = init
    cap = order + 2
    for iteration in range(1, cap + 1):
        phi_plus, phi_minus = _analytic_from_central(F)
        Y_phi = _along(Y, phi_minus)
        M_phi = [_along(row, phi_minus) for row in M]
        X = [_sum_or_zero((m * p for m, p in zip(M_phi[a], phi_plus)), phi_plus[0], 1) for a in range(size)]
        rhs = []
        for i in (0, 1):
            lin = _times_constant(M0, F[i])
            rhs.append([u_plus[i] * X[a] + u_minus[i] * Y_phi[a] - (lin[a] if lin[a] is not None else 0)
                        for a in range(size)])
        F_new = [_solve_linear(rhs[i], M0, init[i], coupled, bound) for i in (0, 1)]
        done = _stable(F_new[0] + F_new[1], F[0] + F[1])
        F = F_new
        if done:
            break
    else:
        raise NoFixedPoint(f"El puente no se estabiliza en {cap} iteraciones")
    phi_plus, phi_minus = _analytic_from_central(F)
    logger.info(f"✅ φ^(ia) estabilizado en {iteration} iteraciones")

    M_phi = [_along(row, phi_minus) for row in M]
    G = mat_identity(size, n, order, domain)
    for step in range(1, cap + 1):
        columns = []
        for j in range(size):
            col = [G[a][j] for a in range(size)]
            lin = _times_constant(M0, col)
            full = [_sum_or_zero((M_phi[a][b] * col[b] for b in range(size)), col[0], 0) for a in range(size)]
            rhs = [full[a] - lin[a] if lin[a] is not None else full[a] for a in range(size)]
            pins = [ChargedSeries.constant(1 if a == j else 0, n, order, domain) for a in range(size)]
            columns.append(_solve_linear(rhs, M0, pins, coupled, bound))
        G_new = mat_tag([[columns[j][a] for j in range(size)] for a in range(size)], MIXED)
        done = _stable([x for row in G_new for x in row], [x for row in G for x in row])
        G = G_new
        if done:
            break
    else:
        raise NoFixedPoint(f"φ_B no se estabiliza en {cap} iteraciones")

    bridge = Bridge(phi_plus, phi_minus, G, mat_tag(matrix_log(G), MIXED), iteration)
    bridge.residuals = bridge_residuals(P, bridge)
    worst = max(bridge.residuals.values(), default=0.0)
    tol = 0.0 if is_exact(domain) else Config.FLOAT_TOL
    if worst > tol:
        raise ResidualNonzero(f"Residuo del puente {worst:.3e}", residuals=bridge.residuals)
    logger.info(f"✅ Puente resuelto (φ_B en {step} iteraciones)")
    return bridge


def bridge_residuals(P: Prepotential, bridge: Bridge) -> Dict[str, float]:
    """Residuos de H⁰₊₊φ⁻ = Y(φ⁻), H⁰₊₊φ⁺ = M(φ⁻)φ⁺ − φ⁻ y H⁰₊₊φ_B = M(φ⁻)φ_B"""
    size = 2 * P.n
    Y, M = _potential_derivatives(P.L)
    phi_plus, phi_minus = bridge.phi_plus, bridge.phi_minus
    Y_phi = _along(Y, phi_minus)
    M_phi = [_along(row, phi_minus) for row in M]
    res = {"phi_minus": 0.0, "phi_plus": 0.0, "phi_B": 0.0}
    for a in range(size):
        lhs = apply_flat_field(HPP, phi_minus[a])
        res["phi_minus"] = max(res["phi_minus"], max_abs_coefficient(lhs - Y_phi[a]))
        X = _sum_or_zero((m * p for m, p in zip(M_phi[a], phi_plus)), phi_plus[0], 1)
        lhs = apply_flat_field(HPP, phi_plus[a])
        res["phi_plus"] = max(res["phi_plus"], max_abs_coefficient(lhs - (X - phi_minus[a])))
    MG = mat_mul(M_phi, bridge.phi_B)
    for a in range(size):
        for b in range(size):
            lhs = apply_flat_field(HPP, bridge.phi_B[a][b])
            res["phi_B"] = max(res["phi_B"], max_abs_coefficient(lhs - MG[a][b]))
    return res


# ============= MARCO CANÓNICO =============

def build_frame(bridge: Bridge, Hpp: FrameField) -> HKFrame:
    """
    H₋₋ = φ_*(H⁰₋₋), e₊a = e⁰₊a, e₋a = [H₋₋, e⁰₊a]

    Sobre el corte: v⁺ᵃ₋₋ = (H⁰₋₋φ⁺ᵃ)∘Φ, v⁻ᵃ₋₋ = (H⁰₋₋φ⁻ᵃ + φ⁺ᵃ)∘Φ y
    A₋₋(E) = (H⁰₋₋φ_B·φ_B⁻¹)∘Φ con Φ = φ⁻¹, la misma forma
    de Maurer-Cartan por la derecha que define A₊₊ = M en el puente.
    """
    n, order = Hpp.n, Hpp.order
    size = 2 * n
    Phi = invert_series(bridge.components())
    coefficients = {HMM: ChargedSeries.constant(1, n, order, Hpp.domain)}
    for a in range(size):
        lowered_plus = apply_flat_field(HMM, bridge.phi_plus[a])
        lowered_minus = apply_flat_field(HMM, bridge.phi_minus[a]) + bridge.phi_plus[a]
        coefficients[e(+1, a)] = compose(lowered_plus, Phi)
        coefficients[e(-1, a)] = compose(lowered_minus, Phi)
    dphi = [[apply_flat_field(HMM, x) for x in row] for row in bridge.phi_B]
    Ahat = mat_mul(dphi, matrix_inverse(bridge.phi_B))
    Ahat = [[compose(x, Phi) for x in row] for row in Ahat]
    for A, coeff in enumerate(sp_decompose(Ahat, n)):
        coefficients[E(A)] = coeff
    coefficients = {k: v.like(v.poly, tag=SCALAR_TAG) for k, v in coefficients.items() if not v.is_zero()}
    Hmm = FrameField(coefficients, -2, n, order, label=HMM)

    base = flat_frame(n, order, Hpp.domain)
    e_minus = []
    for a in range(size):
        bracket = lie_bracket(Hmm, base.e_plus[a])
        e_minus.append(bracket)
    frame = HKFrame(n=n, order=order, H0=base.H0, Hpp=Hpp, Hmm=Hmm, E=base.E,
                    e_plus=base.e_plus, e_minus=e_minus, kind="canonical")
    logger.info(f"✅ Marco canónico construido (orden válido {frame.valid()})")
    return frame


# ============= CONSTRUCCIÓN INVERSA =============

def extract_prepotential(frame: HKFrame, dims: Optional[Dimensions] = None) -> Prepotential:
    """
    Integra la 1-forma cerrada ω_ab v⁻ᵇ₊₊ dz⁻ᵃ con L(0) = 0

    Raises:
        NotClosed: la simetría que garantiza la exactitud no se cumple
    """
    n, order = frame.n, frame.order
    dims = Dimensions.definite(n) if dims is None else dims
    size = 2 * n
    identities = check_potentials_identities(frame)
    tol = 0.0 if is_exact(frame.Hpp.domain) else Config.FLOAT_TOL
    if identities["symplectic"] > tol:
        raise NotClosed(f"La 1-forma no es cerrada (residuo {identities['symplectic']:.3e})")
    if identities["e+v-"] > tol:
        raise DependsOnZPlus("El v-potencial depende de z⁺")
    low = omega_lower(n)
    v = [frame.Hpp.coefficient(e(-1, b)) for b in range(size)]
    domain = join_domains(*(x.domain for x in v))
    v = [x.to_domain(domain) for x in v]
    out = series_ring(n, domain).zero
    for c in range(size):
        pos = 4 + 2 * n + c
        for b in range(size):
            if not low[c][b]:
                continue
            for m, coeff in v[b].poly.items():
                degree = zdeg(m)
                new = m[:pos] + (m[pos] + 1,) + m[pos + 1:]
                value = coeff * domain.convert(low[c][b]) / domain.convert(degree + 1)
                out[new] = out.get(new, domain.zero) + value
    out.strip_zero()
    L = ChargedSeries(out, n, order, 4, tag=SCALAR_TAG)
    logger.info(f"✅ Prepotencial extraído: {len(out)} términos")
    return validate_prepotential(L, dims, order)


def random_prepotential(n: int, degree: int, rng: np.random.Generator, order: Optional[int] = None,
                        terms: int = 3) -> Prepotential:
    """Términos cúbicos y cuárticos en z⁻ con monomios en u de carga complementaria"""
    order = max(degree, 3) if order is None else order
    size = 2 * n
    degrees = [d for d in (3, 4) if d <= degree]
    if not degrees:
        raise ShapeMismatch(f"Grado {degree} insuficiente para términos cúbicos")
    raw = {}
    for _ in range(terms):
        d = int(rng.choice(degrees))
        zminus = tuple(int(x) for x in rng.multinomial(d, [1.0 / size] * size))
        charge = 4 - d
        candidates = [m for w in range(-2, 3) for m in block_monomials(charge, w, 2)]
        u4 = candidates[int(rng.integers(len(candidates)))]
        coeff = QQ(int(rng.integers(-9, 10)) or 1, int(rng.integers(1, 10)))
        key = (u4, (0,) * size, zminus)
        raw[key] = raw.get(key, QQ(0)) + coeff
    L = ChargedSeries.from_terms(raw, n, order)
    return validate_prepotential(L, Dimensions.definite(n), order)


def series_mismatches(found: ChargedSeries, expected: ChargedSeries) -> List[str]:
    """Términos de found − expected; con el backend flotante se ignoran los menores que HK_FLOAT_TOL"""
    diff = found - expected
    domain = diff.domain
    tol = 0.0 if is_exact(domain) else Config.FLOAT_TOL
    return [f"{m}: {c}" for m, c in sorted(diff.poly.items()) if abs(to_complex(c, domain)) > tol]


def roundtrip(P: Prepotential, corrupt: bool = False) -> Tuple[Prepotential, List[str]]:
    """
    L → H₊₊ → puente → marco → L′

    Args:
        corrupt: altera H₊₊ del marco con el gradiente de (z⁻¹)³u¹₊ antes de extraer

    Returns:
        (L′, lista de términos discrepantes)
    """
    Hpp = build_Hpp(P)
    bridge = solve_bridge(P, Hpp)
    frame = build_frame(bridge, Hpp)
    if corrupt:
        size = 2 * P.n
        zminus = (3,) + (0,) * (size - 1)
        delta = ChargedSeries.from_terms({((1, 0, 0, 0), (0,) * size, zminus): 1}, P.n, P.order)
        extra = build_Hpp(Prepotential(P.dims, delta, P.order))
        coefficients = dict(frame.Hpp.coefficients)
        for lab, coeff in extra.coefficients.items():
            if lab == HPP:
                continue
            coefficients[lab] = coefficients[lab] + coeff if lab in coefficients else coeff
        frame = HKFrame(n=frame.n, order=frame.order, H0=frame.H0,
                        Hpp=FrameField(coefficients, 2, frame.n, frame.order), Hmm=frame.Hmm,
                        E=frame.E, e_plus=frame.e_plus, e_minus=frame.e_minus, kind=frame.kind)
        logger.warning("⚠️ H₊₊ alterado antes de la extracción")
    extracted = extract_prepotential(frame, P.dims)
    mismatches = series_mismatches(extracted.L, P.L)
    if mismatches:
        logger.error(f"❌ Ida y vuelta con {len(mismatches)} términos distintos")
    else:
        logger.info("✅ Ida y vuelta exacta")
    return extracted, mismatches


def order_warnings(P: Prepotential, supplied_degree: Optional[int] = None) -> List[str]:
    """Avisos de orden de truncamiento insuficiente"""
    warnings = []
    degree = P.L.max_zdeg() if supplied_degree is None else supplied_degree
    if degree > P.order:
        warnings.append(f"términos de grado {degree} descartados al orden {P.order}")
    if not P.L.is_zero() and P.order < max(degree, 4):
        warnings.append("curvatura no resoluble a este orden")
    for w in warnings:
        logger.warning(f"⚠️ {w}")
    return warnings


# ============= EVALUACIÓN NUMÉRICA DEL MARCO =============

def _e_labels(n: int):
    return [e(+1, a) for a in range(2 * n)] + [e(-1, a) for a in range(2 * n)]


def _compiled_or_none(s: Optional[ChargedSeries]) -> Optional[CompiledSeries]:
    if s is None or s.is_zero():
        return None
    return CompiledSeries(s)


class FrameEvaluator:
    """
    Marco central numérico Fc(U, ζ) en el corte B = I

    Columnas: campos e₊c, e₋c; filas: componentes en ζ^{ia} (z¹ᵃ, luego z²ᵃ).
    Fc = (U ⊗ 1)·Dφ⁻¹·Eq(U, φ)·(1₂ ⊗ φ_B)
    """

    def __init__(self, frame: HKFrame, bridge: Bridge):
        self.n = frame.n
        size = 2 * self.n
        components = bridge.components()
        self.phi = [CompiledSeries(c) for c in components]
        self.jacobian = [[_compiled_or_none(d_z(sign, a, c)) for sign in (+1, -1) for a in range(size)]
                         for c in components]
        self.phi_B = [[_compiled_or_none(x) for x in row] for row in bridge.phi_B]
        fields = list(frame.e_plus) + list(frame.e_minus)
        self.coefficients = [[_compiled_or_none(f.coefficients.get(lab)) for f in fields]
                             for lab in _e_labels(self.n)]

    @staticmethod
    def _table(table, U, z) -> np.ndarray:
        out = np.zeros((z.shape[0], len(table), len(table[0])), dtype=complex)
        for i, row in enumerate(table):
            for j, f in enumerate(row):
                if f is not None:
                    out[:, i, j] = f(U, z)
        return out

    def central(self, U, zeta) -> np.ndarray:
        """Fc en un lote de puntos: ζ de forma (P, 4n) → (P, 4n, 4n)"""
        size = 2 * self.n
        U = np.asarray(U, dtype=complex)
        zeta = np.atleast_2d(np.asarray(zeta, dtype=complex))
        K = np.kron(U, np.eye(size))
        z_an = zeta @ np.linalg.inv(K).T
        w = np.stack([f(U, z_an) for f in self.phi], axis=1)
        D = self._table(self.jacobian, U, z_an)
        B = self._table(self.phi_B, U, z_an)
        Eq = self._table(self.coefficients, U, w)
        X = np.concatenate([Eq[:, :, :size] @ B, Eq[:, :, size:] @ B], axis=2)
        if np.any(np.abs(np.linalg.det(D)) < Config.DET_TOL):
            raise SingularJacobian("Dφ singular en la carta")
        return K[None, :, :] @ np.linalg.solve(D, X)


def pairing_matrix(dims: Dimensions) -> np.ndarray:
    """Columnas v₊a = e₊a + Ĵ₀[a][b]e₋b y v₋a = i(e₊a − Ĵ₀[a][b]e₋b)"""
    J = jhat0_numeric(dims)
    paired = J.T if Config.JHAT_PAIRING == "row" else J
    I = np.eye(2 * dims.n)
    return np.block([[I, 1j * I], [paired, -1j * paired]])


def norm_matrix(dims: Dimensions) -> np.ndarray:
    return np.kron(np.eye(4), eta_numeric(dims))


def real_rank(M: np.ndarray) -> int:
    stacked = np.vstack([M.real, M.imag])
    singular = np.linalg.svd(stacked, compute_uv=False)
    if not len(singular) or singular[0] == 0:
        return 0
    return int(np.sum(singular > Config.RANK_TOL * singular[0]))


# ============= CARTA =============

@dataclass
class ManifoldChart:
    """
    Carta de segunda especie: ζ(x) = flujo_{x_{4n}} ∘ … ∘ flujo_{x_1}(0)

    generators: (U_k, columna de la matriz de emparejamiento) por coordenada
    """
    evaluator: FrameEvaluator
    dims: Dimensions
    generators: List[Tuple[np.ndarray, int]]
    pairing: np.ndarray
    radius: float
    steps: int
    twist: complex = 1.0
    points: List[Tuple[np.ndarray, Tuple[np.ndarray, np.ndarray, np.ndarray]]] = field(default_factory=list)
    flow_log: List[Dict] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return 4 * self.dims.n

    def vector_field(self, k: int, zeta) -> np.ndarray:
        U, column = self.generators[k]
        F = self.evaluator.central(U, zeta)
        return self.twist * (F @ self.pairing[:, column])

    def _flow(self, k: int, zeta: np.ndarray, t: np.ndarray) -> np.ndarray:
        h = 1.0 / self.steps
        scale = t[:, None]
        for _ in range(self.steps):
            k1 = scale * self.vector_field(k, zeta)
            k2 = scale * self.vector_field(k, zeta + 0.5 * h * k1)
            k3 = scale * self.vector_field(k, zeta + 0.5 * h * k2)
            k4 = scale * self.vector_field(k, zeta + h * k3)
            zeta = zeta + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
            if not np.all(np.isfinite(zeta)) or np.max(np.abs(zeta)) > Config.DIVERGENCE_BOUND:
                raise FlowDiverged(f"El flujo del generador {k} diverge")
        return zeta

    def locate(self, x) -> np.ndarray:
        """Coordenadas de la carta (P, 4n) → ζ (P, 4n)"""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        zeta = np.zeros(x.shape, dtype=complex)
        for k in range(self.dim):
            if np.any(x[:, k]):
                zeta = self._flow(k, zeta, x[:, k])
        return zeta

    def tangent(self, x) -> np.ndarray:
        """T = ∂ζ/∂x por diferencias centradas"""
        return self.tangents(x)[0]

    def tangents(self, xs) -> np.ndarray:
        """T en un lote de puntos: (P, 4n) → (P, 4n, 4n)"""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        h = Config.JACOBIAN_STEP
        shifts = h * np.eye(self.dim)
        zeta = self.locate(np.concatenate([np.vstack([x + shifts, x - shifts]) for x in xs]))
        zeta = zeta.reshape(len(xs), 2 * self.dim, self.dim)
        return np.swapaxes(zeta[:, :self.dim] - zeta[:, self.dim:], 1, 2) / (2 * h)

    def embed(self, x) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Punto (U, B, z) del fibrado con z de forma (2, 2n)"""
        x = np.asarray(x, dtype=float)
        if np.max(np.abs(x)) > self.radius:
            raise OutOfChart(f"|x| = {np.max(np.abs(x)):.3g} fuera del radio {self.radius}")
        zeta = self.locate(x)[0]
        point = (np.eye(2, dtype=complex), np.eye(2 * self.dims.n, dtype=complex),
                 zeta.reshape(2, 2 * self.dims.n))
        self.points.append((x, point))
        return point

    def closure_defect(self, i: int, j: int, size: float = None) -> float:
        """
        Componente de ζ_{ij} − ζ_{ji} (flujos conmutados) fuera del plano tangente en el origen,
        dividida por size²
        """
        size = self.radius / 4 if size is None else size
        start = np.zeros((1, self.dim), dtype=complex)
        t = np.array([size])
        ij = self._flow(j, self._flow(i, start, t), t)
        ji = self._flow(i, self._flow(j, start, t), t)
        d = ((ij - ji)[0]) / size ** 2
        G = np.stack([self.vector_field(k, start)[0] for k in range(self.dim)], axis=1)
        A = np.vstack([G.real, G.imag])
        b = np.concatenate([d.real, d.imag])
        coeffs, *_ = np.linalg.lstsq(A, b, rcond=None)
        return float(np.linalg.norm(A @ coeffs - b))


def integrate_manifold(frame: HKFrame, bridge: Bridge, dims: Optional[Dimensions] = None,
                       radius: Optional[float] = None, steps: Optional[int] = None,
                       rng: Optional[np.random.Generator] = None, twist: complex = 1.0) -> ManifoldChart:
    """
    Elige 4n generadores reales con rango 4n en el origen: primero U = I₂, luego U ∈ SU(2)
    pseudoaleatorios hasta Config.U_SAMPLE_CAP

    Raises:
        RankDeficient: la muestra de U no alcanza rango 4n
    """
    dims = Dimensions.definite(frame.n) if dims is None else dims
    radius = Config.CHART_RADIUS if radius is None else radius
    steps = Config.CHART_STEPS if steps is None else steps
    rng = np.random.default_rng(Config.SEED) if rng is None else rng
    dim = 4 * dims.n
    evaluator = FrameEvaluator(frame, bridge)
    pairing = pairing_matrix(dims)
    origin = np.zeros((1, dim), dtype=complex)

    chosen: List[Tuple[np.ndarray, int]] = []
    columns: List[np.ndarray] = []
    samples = [np.eye(2, dtype=complex)]
    while True:
        U = samples[-1]
        candidates = twist * (evaluator.central(U, origin)[0] @ pairing)
        for column in range(dim):
            trial = columns + [candidates[:, column]]
            if real_rank(np.stack(trial, axis=1)) == len(trial):
                columns = trial
                chosen.append((U, column))
            if len(chosen) == dim:
                break
        if len(chosen) == dim:
            break
        if len(samples) > Config.U_SAMPLE_CAP:
            raise RankDeficient(f"Rango {len(chosen)} < {dim} tras {len(samples)} muestras de U")
        samples.append(random_su2(rng))
        logger.debug(f"Rango {len(chosen)}: se añade otra muestra de U")

    chart = ManifoldChart(evaluator, dims, chosen, pairing, radius, steps, twist)
    chart.flow_log = [{"generator": k, "column": col, "u_sample": next(i for i, s in enumerate(samples) if s is U),
                       "steps": steps} for k, (U, col) in enumerate(chosen)]
    chart.embed(np.zeros(dim))
    logger.info(f"✅ Carta construida con {len(samples)} muestra(s) de U, radio {radius}")
    return chart


# ============= MÉTRICA =============

@dataclass
class MetricSample:
    point: np.ndarray
    zeta: np.ndarray
    g: np.ndarray
    coframe: np.ndarray
    signature: Tuple[int, int]
    g_vielbein: np.ndarray
    route_gap: float
    section_gap: float
    imag_metric: float
    imag_vielbein: float
    tangent_rank: int

    @property
    def symmetric_gap(self) -> float:
        return float(np.max(np.abs(self.g - self.g.T)))


def coframe_metric(alpha: np.ndarray, n: int) -> np.ndarray:
    """g = −½ ω_ab (α⁺ᵃ ⊗ α⁻ᵇ − α⁻ᵃ ⊗ α⁺ᵇ)"""
    size = 2 * n
    w = np.array(omega_lower(n), dtype=float)
    P = alpha[:size].T @ w @ alpha[size:]
    return -0.5 * (P + P.T)


def random_section(dims: Dimensions, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    return random_su2(rng), random_sp_pq_element(dims, rng)


def vielbein_metric(chart: ManifoldChart, zeta: np.ndarray, T: np.ndarray,
                    section: Tuple[np.ndarray, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """g = Re(Cᵀ (1₄ ⊗ η) C) con T = V·C y V el vielbein en la sección (U_σ, B_σ)"""
    U, B = section
    F = chart.evaluator.central(U, zeta)[0]
    V = F @ np.kron(np.eye(2), B) @ chart.pairing
    if abs(np.linalg.det(V)) < Config.DET_TOL:
        raise SingularFrame("Vielbein singular")
    C = np.linalg.solve(V, T)
    return (C.T @ norm_matrix(chart.dims) @ C).real, C


def metric_at(chart: ManifoldChart, x, rng: Optional[np.random.Generator] = None,
              strict: bool = True) -> MetricSample:
    """
    Métrica en el punto x de la carta por la ruta del cocampo y por la del vielbein

    Raises:
        OutOfChart, SingularFrame, RouteMismatch (sólo con strict)
    """
    x = np.asarray(x, dtype=float)
    if np.max(np.abs(x)) > chart.radius:
        raise OutOfChart(f"|x| = {np.max(np.abs(x)):.3g} fuera del radio {chart.radius}")
    rng = np.random.default_rng(Config.SEED) if rng is None else rng
    n = chart.dims.n
    zeta = chart.locate(x)[0]
    T = chart.tangent(x)
    F = chart.evaluator.central(np.eye(2), zeta)[0]
    if abs(np.linalg.det(F)) < Config.DET_TOL:
        raise SingularFrame(f"Marco singular en x = {x}")
    alpha = np.linalg.solve(F, T)
    g_complex = coframe_metric(alpha, n)
    g = g_complex.real

    g_first, C_first = vielbein_metric(chart, zeta, T, random_section(chart.dims, rng))
    g_second, C_second = vielbein_metric(chart, zeta, T, random_section(chart.dims, rng))
    scale = max(1.0, float(np.max(np.abs(g))))
    route_gap = float(np.max(np.abs(g - g_first)))
    section_gap = float(np.max(np.abs(g_first - g_second)))
    if strict and max(route_gap, section_gap) > Config.ROUTE_TOL * scale:
        raise RouteMismatch(f"Las rutas de la métrica difieren en {max(route_gap, section_gap):.3e}",
                            route_gap=route_gap, section_gap=section_gap)
    eigenvalues = np.linalg.eigvalsh(0.5 * (g + g.T))
    signature = (int(np.sum(eigenvalues > 0)), int(np.sum(eigenvalues < 0)))
    return MetricSample(
        point=x, zeta=zeta, g=g, coframe=alpha, signature=signature, g_vielbein=g_first,
        route_gap=route_gap, section_gap=section_gap,
        imag_metric=float(np.max(np.abs(g_complex.imag))),
        imag_vielbein=float(max(np.max(np.abs(C_first.imag)), np.max(np.abs(C_second.imag)))),
        tangent_rank=real_rank(T),
    )


def chart_metric(chart: ManifoldChart, xs) -> np.ndarray:
    """g(x) de la ruta del cocampo en un lote de puntos de la carta: (P, 4n) → (P, 4n, 4n)"""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    size = 2 * chart.dims.n
    F = chart.evaluator.central(np.eye(2), chart.locate(xs))
    if np.any(np.abs(np.linalg.det(F)) < Config.DET_TOL):
        raise SingularFrame("Marco singular en la carta")
    alpha = np.linalg.solve(F, chart.tangents(xs))
    w = np.array(omega_lower(chart.dims.n), dtype=float)
    P = np.swapaxes(alpha[:, :size, :], 1, 2) @ w @ alpha[:, size:, :]
    return (-0.5 * (P + np.swapaxes(P, 1, 2))).real


def sample_chart_points(dims: Dimensions, count: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Origen más `count − 1` puntos uniformes en el cubo de lado radio/2"""
    dim = 4 * dims.n
    points = [np.zeros(dim)]
    for _ in range(max(count - 1, 0)):
        points.append(rng.uniform(-radius / 2, radius / 2, size=dim))
    return np.array(points)


def reality_report(chart: ManifoldChart, samples: Sequence[MetricSample]) -> Dict[str, object]:
    """Realidad, simetría, transversalidad y signatura sobre una muestra (sólo informa)"""
    expected = (4 * chart.dims.p, 4 * chart.dims.q)
    report = {
        "imag_metric": max((s.imag_metric for s in samples), default=0.0),
        "imag_vielbein": max((s.imag_vielbein for s in samples), default=0.0),
        "symmetry": max((s.symmetric_gap for s in samples), default=0.0),
        "transversal": all(s.tangent_rank == chart.dim for s in samples),
        "signature": all(s.signature == expected for s in samples),
    }
    report["passed"] = bool(report["imag_metric"] <= Config.REALITY_TOL
                            and report["imag_vielbein"] <= Config.REALITY_TOL
                            and report["symmetry"] <= Config.REALITY_TOL
                            and report["transversal"] and report["signature"])
    if report["passed"]:
        logger.info(f"✅ Realidad verificada en {len(samples)} puntos")
    else:
        logger.warning(f"⚠️ Falla la realidad: {report}")
    return report


# ============= RICCI =============

def _christoffel(metric: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float) -> np.ndarray:
    dim = x.shape[0]
    shifts = h * np.eye(dim)
    G = metric(np.vstack([x[None, :], x + shifts, x - shifts]))
    g0 = G[0]
    dg = (G[1:1 + dim] - G[1 + dim:]) / (2 * h)
    term = np.einsum("jlk->ljk", dg) + np.einsum("klj->ljk", dg) - dg
    return 0.5 * np.einsum("il,ljk->ijk", np.linalg.inv(g0), term)


def ricci_tensor(metric: Callable[[np.ndarray], np.ndarray], x, h: float = None) -> Tuple[np.ndarray, float]:
    """
    Ricci de una métrica dada en lotes de puntos, por diferencias finitas centradas

    Args:
        metric: lote (P, d) → g de forma (P, d, d)

    Returns:
        (R_jk, escala max|∂Γ|)
    """
    h = Config.RICCI_STEP if h is None else h
    x = np.asarray(x, dtype=float)
    dim = x.shape[0]
    gamma = _christoffel(metric, x, h)
    plus = np.array([_christoffel(metric, x + h * unit, h) for unit in np.eye(dim)])
    minus = np.array([_christoffel(metric, x - h * unit, h) for unit in np.eye(dim)])
    dgamma = (plus - minus) / (2 * h)
    R = (np.einsum("iijk->jk", dgamma) - np.einsum("kiji->jk", dgamma)
         + np.einsum("iil,ljk->jk", gamma, gamma) - np.einsum("ikl,lji->jk", gamma, gamma))
    return R, float(np.max(np.abs(dgamma)))


def ricci_check(chart: ManifoldChart, points, h: float = None) -> List[Dict[str, object]]:
    """Tabla de max|Ric| de la métrica de la carta; los puntos se reparten en HK_THREADS hilos"""
    metric = partial(chart_metric, chart)

    def at(x):
        R, scale = ricci_tensor(metric, x, h)
        logger.debug(f"Ricci en x = {x}: {np.max(np.abs(R)):.3e}")
        return {"point": x, "max_ricci": float(np.max(np.abs(R))), "curvature_scale": scale}

    xs = list(np.atleast_2d(np.asarray(points, dtype=float)))
    if Config.THREADS <= 1 or len(xs) <= 1:
        return [at(x) for x in xs]
    with ThreadPoolExecutor(max_workers=Config.THREADS) as pool:
        return list(pool.map(at, xs))


# ============= INVERSA NUMÉRICA =============

def inverse_consistency(bridge: Bridge, count: int = 5, rng: Optional[np.random.Generator] = None,
                        radius: float = None) -> float:
    """Diferencia máxima entre la inversa en serie Φ y Newton sobre φ en puntos pseudoaleatorios"""
    rng = np.random.default_rng(Config.SEED) if rng is None else rng
    radius = Config.CHART_RADIUS if radius is None else radius
    dim = 4 * bridge.n
    components = bridge.components()
    Phi = [CompiledSeries(c) for c in invert_series(components)]
    mapping = CompiledMap(components)
    worst = 0.0
    for _ in range(count):
        U = random_su2(rng)
        target = radius * (rng.normal(size=dim) + 1j * rng.normal(size=dim)) / 4
        newton = invert_map_numeric(mapping, U, target)
        series = np.array([f(U, target) for f in Phi])
        worst = max(worst, float(np.max(np.abs(newton - series))))
    logger.info(f"Inversa en serie frente a Newton: {worst:.3e}")
    return worst


# ============= ORQUESTACIÓN =============

def _residual_entries(report, values: Dict[str, float], prefix: str, exact: bool):
    from schemas import ResidualEntry, round_float

    tol = 0.0 if exact else Config.FLOAT_TOL
    for family, value in sorted(values.items()):
        report.residuals.append(ResidualEntry(family=f"{prefix}{family}", max_abs=round_float(value),
                                              passed=value <= tol))


def run_job(spec, points: Optional[Sequence[Sequence[float]]] = None, timings: bool = False,
            corrupt: bool = False):
    """
    Ejecuta la receta completa sobre un JobSpec y devuelve el Report

    Los errores del motor se registran en la etapa donde ocurren; el informe queda
    marcado como fallido con el código de salida de la familia del error.
    """
    import time

    from schemas import (MetricEntry, Report, ResidualEntry, RicciEntry, StageOutcome, round_float, round_matrix,
                         series_table)

    report = Report(job=spec)
    dims = spec.dims.to_dimensions()
    exact = spec.backend == "exact"
    rng = np.random.default_rng(spec.seed)
    state: Dict[str, object] = {}

    def stage(name, action):
        start = time.perf_counter()
        try:
            detail = action() or ""
        except HKError as e:
            logger.error(f"❌ Etapa {name}: {str(e)}")
            report.fail(name, e, e.exit_code)
            return False
        elapsed = round_float(time.perf_counter() - start) if timings else None
        report.stages.append(StageOutcome(stage=name, status="ok", detail=detail, seconds=elapsed))
        return True

    def validate():
        P = validate_prepotential(spec.prepotential_series(), dims, spec.order)
        state["P"] = P
        report.warnings.extend(order_warnings(P, spec.max_supplied_degree))
        return f"{len(P.L.poly)} términos"

    def hpp():
        state["Hpp"] = build_Hpp(state["P"])
        report.v_potential = {str(e(-1, b)): series_table(state["Hpp"].coefficient(e(-1, b)))
                              for b in range(2 * dims.n)}

    def bridge():
        B = solve_bridge(state["P"], state["Hpp"])
        state["bridge"] = B
        _residual_entries(report, B.residuals, "bridge:", exact)
        tables = {f"phi-{a}": series_table(s) for a, s in enumerate(B.phi_minus)}
        tables.update({f"phi+{a}": series_table(s) for a, s in enumerate(B.phi_plus)})
        report.bridge = tables
        return f"{B.iterations} iteraciones"

    def frame():
        F = build_frame(state["bridge"], state["Hpp"])
        state["frame"] = F
        _residual_entries(report, check_hk_axioms(F).residuals, "axiom:", exact)
        _residual_entries(report, check_potentials_identities(F), "potential:", exact)
        canonical = check_canonical(F)
        report.residuals.append(ResidualEntry(family="canonical", max_abs=float(len(canonical.failures)),
                                              passed=canonical.is_canonical))
        curvature = extract_curvature(F)
        size = 2 * dims.n
        report.curvature = {f"R[{a}][{b}]E{A}": series_table(c)
                            for a in range(size) for b in range(size)
                            for A, c in curvature.R[a][b].items() if not c.is_zero()}
        report.curvature_symmetry = {k: round_float(v) for k, v in curvature_symmetry(curvature).items()}
        return f"orden válido {F.valid()}"

    def extraction():
        extracted, mismatches = roundtrip(state["P"], corrupt=corrupt) if corrupt else (
            extract_prepotential(state["frame"], dims), None)
        if mismatches is None:
            mismatches = series_mismatches(extracted.L, state["P"].L)
        report.roundtrip_mismatches = mismatches
        if mismatches:
            raise RoundTripMismatch(f"{len(mismatches)} términos distintos tras la ida y vuelta")

    def inverse():
        report.inverse_gap = round_float(inverse_consistency(state["bridge"], rng=rng, radius=spec.chart.radius))

    def chart():
        C = integrate_manifold(state["frame"], state["bridge"], dims, spec.chart.radius, spec.chart.steps, rng)
        state["chart"] = C
        report.chart = {"radius": spec.chart.radius, "steps": spec.chart.steps, "generators": C.flow_log,
                        "closure_defect": round_float(C.closure_defect(0, 1))}

    def metric():
        C = state["chart"]
        xs = np.asarray(points, dtype=float) if points is not None else \
            sample_chart_points(dims, spec.sample_points, spec.chart.radius, rng)
        samples = [metric_at(C, x, rng) for x in xs]
        for s in samples:
            report.metric.append(MetricEntry(
                point=[round_float(v) for v in s.point], g=round_matrix(s.g), signature=s.signature,
                route_gap=round_float(s.route_gap), section_gap=round_float(s.section_gap),
                imag_metric=round_float(s.imag_metric), symmetric_gap=round_float(s.symmetric_gap)))
        reality = reality_report(C, samples)
        report.reality = {k: (v if isinstance(v, bool) else round_float(v)) for k, v in reality.items()}
        if not reality["passed"]:
            raise ResidualNonzero("Falla la verificación de realidad")
        return f"{len(samples)} puntos"

    def ricci():
        C = state["chart"]
        if not spec.ricci_points:
            return "omitido"
        xs = sample_chart_points(dims, spec.ricci_points, spec.chart.radius, rng)
        for row in ricci_check(C, xs):
            report.ricci.append(RicciEntry(point=[round_float(v) for v in row["point"]],
                                           max_ricci=round_float(row["max_ricci"]),
                                           curvature_scale=round_float(row["curvature_scale"])))

    for name, action in (("validate", validate), ("build_Hpp", hpp), ("solve_bridge", bridge),
                         ("build_frame", frame), ("extract_prepotential", extraction),
                         ("inverse", inverse), ("integrate_manifold", chart), ("metric", metric),
                         ("ricci", ricci)):
        if not stage(name, action):
            break

    if report.status == "ok" and not all(r.passed for r in report.residuals):
        report.status = "failed"
        report.exit_code = ResidualNonzero.exit_code
        logger.error("❌ Hay residuos no nulos en el informe")
    if report.status == "ok":
        logger.info("✅ Trabajo completado")
    return report
