"""
Campos vectoriales sobre 𝒫 desarrollados en el marco plano

Los coeficientes se guardan restringidos al corte B = I. La acción de E⁰_A sobre
un coeficiente se reconstruye algebraicamente a partir de la etiqueta nominal del
campo: E⁰_A x^J = Σ_L [E_A, X⁰_label]^L x_L^J − Σ_K x^K [E_A, X⁰_K]^J.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple
import logging

import numpy as np

from algebra import (BasisIndex, E, H0, HMM, HPP, basis_labels, bracket_labels, omega_lower,
                     random_su2, sp_basis, sp_dimension)
from config import Config
from errors import ChargeMismatch, MissingEquivariance, NonzeroTorsion, ShapeMismatch, SingularFrame
from jets import (ChargedSeries, CompiledSeries, _min_valid, apply_flat_field, max_abs_coefficient,
                  series_mul, zdeg)

logger = logging.getLogger(__name__)

# ============= CAMPOS =============


@dataclass(eq=False)
class FrameField:
    """
    X = Σ_J x^J X⁰_J con coeficientes ChargedSeries

    Args:
        coefficients: etiqueta del marco plano -> coeficiente
        declared_charge: carga de X bajo H₀
        n, order: dimensión cuaterniónica y orden de truncamiento
        label: etiqueta nominal dentro de un marco (determina la equivarianza)
        invariant: campo 𝔰𝔭ₙ-invariante sin etiqueta
    """
    coefficients: Dict[BasisIndex, ChargedSeries]
    declared_charge: int
    n: int
    order: int
    label: Optional[BasisIndex] = None
    invariant: bool = False
    siblings: Optional[Dict[BasisIndex, "FrameField"]] = field(default=None, repr=False)

    def __post_init__(self):
        for lab, coeff in self.coefficients.items():
            expected = self.declared_charge - lab.charge
            if coeff.is_zero() or coeff.charge is None:
                continue
            if coeff.charge != expected:
                raise ChargeMismatch(
                    f"Coeficiente {lab} de carga {coeff.charge}, se esperaba {expected}")

    @property
    def domain(self):
        for coeff in self.coefficients.values():
            return coeff.domain
        from sympy.polys.domains import QQ
        return QQ

    def coefficient(self, lab: BasisIndex) -> ChargedSeries:
        coeff = self.coefficients.get(lab)
        if coeff is not None:
            return coeff
        return ChargedSeries.zero(self.n, self.order, self.domain, self.declared_charge - lab.charge)

    def valid(self) -> Optional[int]:
        return _min_valid(*(c.valid for c in self.coefficients.values()))

    def scaled(self, c) -> "FrameField":
        return FrameField({k: v * c for k, v in self.coefficients.items()}, self.declared_charge,
                          self.n, self.order, invariant=self.invariant)

    def __add__(self, other: "FrameField") -> "FrameField":
        return combine([(1, self), (1, other)])

    def __sub__(self, other: "FrameField") -> "FrameField":
        return combine([(1, self), (-1, other)])


def combine(terms: List[Tuple[object, FrameField]]) -> FrameField:
    """Combinación lineal con coeficientes escalares"""
    first = terms[0][1]
    out: Dict[BasisIndex, ChargedSeries] = {}
    for c, fld in terms:
        for lab, coeff in fld.coefficients.items():
            term = coeff * c
            out[lab] = out[lab] + term if lab in out else term
    return FrameField(_prune(out), first.declared_charge, first.n, first.order,
                      invariant=all(f.invariant or (f.label is not None and f.label.kind == "H")
                                    for _, f in terms))


def _prune(coefficients: Dict[BasisIndex, ChargedSeries]) -> Dict[BasisIndex, ChargedSeries]:
    return {k: v for k, v in coefficients.items() if not v.is_zero()}


def flat_field(lab: BasisIndex, n: int, order: int, domain=None) -> FrameField:
    from sympy.polys.domains import QQ
    one = ChargedSeries.constant(1, n, order, domain or QQ)
    return FrameField({lab: one}, lab.charge, n, order, label=lab)


def _is_invariant_label(lab: Optional[BasisIndex]) -> bool:
    return lab is not None and lab.kind in ("H0", "Hpp", "Hmm")


def _E_derivative(A: int, X: FrameField, J: BasisIndex) -> ChargedSeries:
    """E⁰_A aplicado al coeficiente x^J, vía la equivarianza de X"""
    n = X.n
    out = X.coefficient(J)
    out = out.like(out.ring.zero)
    if X.label is None and not X.invariant:
        raise MissingEquivariance("El campo no tiene etiqueta ni es invariante")
    if X.label is not None and not _is_invariant_label(X.label):
        if X.siblings is None:
            raise MissingEquivariance(f"{X.label} necesita a su familia completa")
        for L, c in bracket_labels(E(A), X.label, n).items():
            out = out + X.siblings[L].coefficient(J) * c
    for K, xK in X.coefficients.items():
        c = bracket_labels(E(A), K, n).get(J)
        if c:
            out = out - xK * c
    return out


def _derive_along(X: FrameField, Y: FrameField, J: BasisIndex) -> Optional[ChargedSeries]:
    """Σ_I x^I X⁰_I(y^J)"""
    total = None
    for I, xI in X.coefficients.items():
        if I.kind == "E":
            d = _E_derivative(I.index, Y, J)
        else:
            yJ = Y.coefficients.get(J)
            if yJ is None:
                continue
            d = apply_flat_field(I, yJ)
        if d.is_zero():
            continue
        term = series_mul(xI, d)
        total = term if total is None else total + term
    return total


def lie_bracket(X: FrameField, Y: FrameField) -> FrameField:
    """
    [X, Y] = Σ x^I y^J [X⁰_I, X⁰_J] + Σ_J (X(y^J) − Y(x^J)) X⁰_J
    """
    if X.n != Y.n:
        raise ShapeMismatch(f"Campos de dimensiones distintas: {X.n} y {Y.n}")
    n = X.n
    result: Dict[BasisIndex, ChargedSeries] = {}

    def accumulate(J, s):
        if s is None or s.is_zero():
            return
        result[J] = result[J] + s if J in result else s

    for I, xI in X.coefficients.items():
        for J, yJ in Y.coefficients.items():
            structure = bracket_labels(I, J, n)
            if not structure:
                continue
            product = series_mul(xI, yJ)
            for K, c in structure.items():
                accumulate(K, product * c)

    for J in basis_labels(n):
        accumulate(J, _derive_along(X, Y, J))
        back = _derive_along(Y, X, J)
        if back is not None:
            accumulate(J, -back)

    invariant = (X.invariant or _is_invariant_label(X.label)) and (Y.invariant or _is_invariant_label(Y.label))
    return FrameField(_prune(result), X.declared_charge + Y.declared_charge, n,
                      min(X.order, Y.order), invariant=invariant)


def field_residual(X: FrameField, Y: FrameField, ignore_kind: Optional[str] = None) -> float:
    """Mayor coeficiente de X − Y hasta el orden válido (opcionalmente ignorando un tipo de etiqueta)"""
    worst = 0.0
    for lab in set(X.coefficients) | set(Y.coefficients):
        if ignore_kind is not None and lab.kind == ignore_kind:
            continue
        diff = X.coefficient(lab) - Y.coefficient(lab)
        worst = max(worst, max_abs_coefficient(diff))
    return worst


# ============= MARCOS =============

@dataclass(eq=False)
class HKFrame:
    n: int
    order: int
    H0: FrameField
    Hpp: FrameField
    Hmm: FrameField
    E: List[FrameField]
    e_plus: List[FrameField]
    e_minus: List[FrameField]
    kind: str = "general"

    def __post_init__(self):
        if len(self.E) != sp_dimension(self.n) or len(self.e_plus) != 2 * self.n or len(self.e_minus) != 2 * self.n:
            raise ShapeMismatch(f"Marco incompleto para n={self.n}")
        fields = self.fields()
        for lab, fld in fields.items():
            fld.label = lab
            fld.siblings = fields

    def fields(self) -> Dict[BasisIndex, FrameField]:
        out = {H0: self.H0, HPP: self.Hpp, HMM: self.Hmm}
        out.update({E(A): f for A, f in enumerate(self.E)})
        out.update({BasisIndex("e", 1, a): f for a, f in enumerate(self.e_plus)})
        out.update({BasisIndex("e", -1, a): f for a, f in enumerate(self.e_minus)})
        return out

    def field(self, lab: BasisIndex) -> FrameField:
        return self.fields()[lab]

    def valid(self) -> Optional[int]:
        return _min_valid(*(f.valid() for f in self.fields().values()))

    def expected(self, I: BasisIndex, J: BasisIndex) -> FrameField:
        """Combinación Σ c_K X_K dictada por las constantes de estructura del marco plano"""
        structure = bracket_labels(I, J, self.n)
        if not structure:
            return FrameField({}, I.charge + J.charge, self.n, self.order, invariant=True)
        return combine([(c, self.field(K)) for K, c in structure.items()])


def flat_frame(n: int, order: int, domain=None) -> HKFrame:
    """Marco hiperkähler plano: todos los campos son los del marco de referencia"""
    return HKFrame(
        n=n, order=order,
        H0=flat_field(H0, n, order, domain),
        Hpp=flat_field(HPP, n, order, domain),
        Hmm=flat_field(HMM, n, order, domain),
        E=[flat_field(E(A), n, order, domain) for A in range(sp_dimension(n))],
        e_plus=[flat_field(BasisIndex("e", 1, a), n, order, domain) for a in range(2 * n)],
        e_minus=[flat_field(BasisIndex("e", -1, a), n, order, domain) for a in range(2 * n)],
        kind="flat",
    )


# ============= AXIOMAS =============

@dataclass
class AxiomReport:
    residuals: Dict[str, float]
    valid: Optional[int]

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values(), default=0.0)

    def passed(self, tol: float = 0.0) -> bool:
        return self.max_residual <= tol


def _bracket_families(n: int) -> Dict[str, List[Tuple[BasisIndex, BasisIndex]]]:
    size = 2 * n
    Es = [E(A) for A in range(sp_dimension(n))]
    ep = [BasisIndex("e", 1, a) for a in range(size)]
    em = [BasisIndex("e", -1, a) for a in range(size)]
    return {
        "[H0,Hpp]": [(H0, HPP)],
        "[H0,Hmm]": [(H0, HMM)],
        "[Hpp,Hmm]": [(HPP, HMM)],
        "[E,E]": [(x, y) for i, x in enumerate(Es) for y in Es[i + 1:]],
        "[H,E]": [(h, x) for h in (H0, HPP, HMM) for x in Es],
        "[H0,e+]": [(H0, x) for x in ep],
        "[H0,e-]": [(H0, x) for x in em],
        "[Hpp,e+]": [(HPP, x) for x in ep],
        "[Hmm,e-]": [(HMM, x) for x in em],
        "[Hpp,e-]": [(HPP, x) for x in em],
        "[Hmm,e+]": [(HMM, x) for x in ep],
        "[E,e+]": [(x, y) for x in Es for y in ep],
        "[E,e-]": [(x, y) for x in Es for y in em],
        "[e+,e+]": [(x, y) for i, x in enumerate(ep) for y in ep[i + 1:]],
        "[e-,e-]": [(x, y) for i, x in enumerate(em) for y in em[i + 1:]],
        "[e+,e-]": [(x, y) for x in ep for y in em],
    }


def check_hk_axioms(frame: HKFrame) -> AxiomReport:
    """
    Residuos de las relaciones de corchete del marco hiperkähler

    Cada familia reporta el mayor coeficiente residual hasta el orden válido;
    en [e₊a, e₋b] sólo cuentan las componentes fuera de las E.
    """
    residuals: Dict[str, float] = {}
    for name, pairs in _bracket_families(frame.n).items():
        worst = 0.0
        for I, J in pairs:
            bracket = lie_bracket(frame.field(I), frame.field(J))
            if name == "[e+,e-]":
                zero = FrameField({}, bracket.declared_charge, frame.n, frame.order, invariant=True)
                worst = max(worst, field_residual(bracket, zero, ignore_kind="E"))
            else:
                worst = max(worst, field_residual(bracket, frame.expected(I, J)))
        residuals[name] = worst
        if worst:
            logger.debug(f"check_hk_axioms: {name} residuo {worst:.3e}")
    report = AxiomReport(residuals, frame.valid())
    if report.passed(0.0 if frame.H0.domain.is_Exact else Config.FLOAT_TOL):
        logger.info(f"✅ Axiomas del marco verificados (orden válido {report.valid})")
    else:
        logger.warning(f"⚠️ Axiomas con residuo {report.max_residual:.3e}")
    return report


# ============= CURVATURA =============

@dataclass
class CurvatureData:
    """R[a][b][A]: componente E_A de [e₊a, e₋b]"""
    n: int
    R: List[List[Dict[int, ChargedSeries]]]

    def component(self, a: int, b: int, A: int) -> ChargedSeries:
        return self.R[a][b][A]

    def endomorphism(self, a: int, b: int) -> List[List[ChargedSeries]]:
        """Σ_A R^A_ab E_A como matriz 2n × 2n de series"""
        size = 2 * self.n
        basis = sp_basis(self.n)
        sample = next(iter(self.R[a][b].values()))
        out = [[sample.like(sample.ring.zero) for _ in range(size)] for _ in range(size)]
        for A, coeff in self.R[a][b].items():
            mat = basis[A]
            for i in range(size):
                for j in range(size):
                    if mat[i][j]:
                        out[i][j] = out[i][j] + coeff * mat[i][j]
        return out

    def lowered(self, a: int, b: int) -> List[List[ChargedSeries]]:
        """ω · R_ab (simétrica si R_ab ∈ 𝔰𝔭ₙ)"""
        size = 2 * self.n
        omega = omega_lower(self.n)
        end = self.endomorphism(a, b)
        out = []
        for i in range(size):
            row = []
            for j in range(size):
                acc = end[0][j].like(end[0][j].ring.zero)
                for k in range(size):
                    if omega[i][k]:
                        acc = acc + end[k][j] * omega[i][k]
                row.append(acc)
            out.append(row)
        return out

    def is_flat(self) -> bool:
        return all(c.is_zero() for row in self.R for entry in row for c in entry.values())


def extract_curvature(frame: HKFrame) -> CurvatureData:
    """
    Lee R^A_ab de [e₊a, e₋b] = R^A_ab E_A

    Raises:
        NonzeroTorsion: el corchete tiene componentes fuera de las E
    """
    n = frame.n
    size = 2 * n
    R = []
    for a in range(size):
        row = []
        for b in range(size):
            bracket = lie_bracket(frame.e_plus[a], frame.e_minus[b])
            for lab, coeff in bracket.coefficients.items():
                if lab.kind != "E" and max_abs_coefficient(coeff) > _tolerance(coeff):
                    raise NonzeroTorsion(f"[e₊{a}, e₋{b}] tiene componente {lab}")
            row.append({A: bracket.coefficient(E(A)) for A in range(sp_dimension(n))})
        R.append(row)
    return CurvatureData(n, R)


def _tolerance(s: ChargedSeries) -> float:
    return 0.0 if s.domain.is_Exact else Config.FLOAT_TOL


def curvature_symmetry(curv: CurvatureData) -> Dict[str, float]:
    """
    Residuos de simetría de la curvatura

    sp: ω·R_ab simétrica; ab: R_ab = R_ba; total: ω_ce R^e_{d,ab} totalmente simétrico.
    """
    size = 2 * curv.n
    lowered = {(a, b): curv.lowered(a, b) for a in range(size) for b in range(size)}
    sp_res = ab_res = total_res = 0.0
    for (a, b), W in lowered.items():
        for i in range(size):
            for j in range(size):
                sp_res = max(sp_res, max_abs_coefficient(W[i][j] - W[j][i]))
                ab_res = max(ab_res, max_abs_coefficient(W[i][j] - lowered[(b, a)][i][j]))
                total_res = max(total_res, max_abs_coefficient(W[i][j] - lowered[(i, j)][a][b]))
    return {"sp": sp_res, "ab": ab_res, "total": total_res}


# ============= FORMA CANÓNICA =============

@dataclass
class CanonicalReport:
    is_canonical: bool
    failures: List[str]
    v_potential: List[ChargedSeries]


def _is_flat_field(fld: FrameField, lab: BasisIndex) -> bool:
    for key, coeff in fld.coefficients.items():
        if key == lab:
            if max_abs_coefficient(coeff - ChargedSeries.constant(1, fld.n, fld.order, coeff.domain)) > _tolerance(coeff):
                return False
        elif max_abs_coefficient(coeff) > _tolerance(coeff):
            return False
    return lab in fld.coefficients


def restrict_zplus_zero(s: ChargedSeries) -> ChargedSeries:
    n2 = 2 * s.n
    p = s.ring.zero
    for m, c in s.poly.items():
        if not any(m[4:4 + n2]):
            p[m] = c
    return s.like(p)


def check_canonical(frame: HKFrame) -> CanonicalReport:
    """Comprueba la forma canónica y extrae el v-potencial v⁻ᵃ₊₊"""
    n = frame.n
    size = 2 * n
    failures = []
    if not _is_flat_field(frame.H0, H0):
        failures.append("H0")
    for A, fld in enumerate(frame.E):
        if not _is_flat_field(fld, E(A)):
            failures.append(f"E{A}")
    for a, fld in enumerate(frame.e_plus):
        if not _is_flat_field(fld, BasisIndex("e", 1, a)):
            failures.append(f"e+{a}")

    Hpp = frame.Hpp
    one = ChargedSeries.constant(1, n, frame.order, Hpp.domain)
    if max_abs_coefficient(Hpp.coefficient(HPP) - one) > _tolerance(one):
        failures.append("Hpp")
    for lab in (H0, HMM):
        if max_abs_coefficient(Hpp.coefficient(lab)) > _tolerance(one):
            failures.append(f"Hpp:{lab}")
    for b in range(size):
        v_plus = Hpp.coefficient(BasisIndex("e", 1, b))
        if max_abs_coefficient(restrict_zplus_zero(v_plus)) > _tolerance(one):
            failures.append(f"v+{b}|z+=0")

    for b, fld in enumerate(frame.e_minus):
        for c in range(size):
            coeff = fld.coefficient(BasisIndex("e", -1, c))
            if c == b:
                coeff = coeff - one
            if max_abs_coefficient(coeff) > _tolerance(one):
                failures.append(f"v-{c}_-{b}")

    potential = [Hpp.coefficient(BasisIndex("e", -1, a)) for a in range(size)]
    if failures:
        logger.info(f"Marco no canónico: {', '.join(failures[:6])}")
    return CanonicalReport(not failures, failures, potential)


def check_potentials_identities(frame: HKFrame) -> Dict[str, float]:
    """
    Identidades que determinan H₊₊ a partir del v-potencial:
    e⁰₊a v⁻ᵇ = 0, A₊₊(E)ᵇ_a = e⁰₋a v⁻ᵇ, e⁰₊a v⁺ᵇ = e⁰₋a v⁻ᵇ y la simetría simpléctica
    """
    from jets import d_z

    n = frame.n
    size = 2 * n
    Hpp = frame.Hpp
    omega = omega_lower(n)
    basis = sp_basis(n)
    v_minus = [Hpp.coefficient(BasisIndex("e", -1, b)) for b in range(size)]
    v_plus = [Hpp.coefficient(BasisIndex("e", 1, b)) for b in range(size)]
    dm = [[d_z(-1, a, v_minus[b]) for b in range(size)] for a in range(size)]

    A_matrix = [[None] * size for _ in range(size)]
    for row in range(size):
        for col in range(size):
            acc = dm[0][0].like(dm[0][0].ring.zero)
            for A in range(sp_dimension(n)):
                if basis[A][row][col]:
                    acc = acc + Hpp.coefficient(E(A)) * basis[A][row][col]
            A_matrix[row][col] = acc

    res = {"e+v-": 0.0, "A=e-v-": 0.0, "e+v+=e-v-": 0.0, "symplectic": 0.0}
    for a in range(size):
        for b in range(size):
            res["e+v-"] = max(res["e+v-"], max_abs_coefficient(d_z(+1, a, v_minus[b])))
            res["A=e-v-"] = max(res["A=e-v-"], max_abs_coefficient(A_matrix[b][a] - dm[a][b]))
            res["e+v+=e-v-"] = max(res["e+v+=e-v-"], max_abs_coefficient(d_z(+1, a, v_plus[b]) - dm[a][b]))
            sym = dm[a][0].like(dm[a][0].ring.zero)
            for c in range(size):
                if omega[c][b]:
                    sym = sym + dm[a][c] * omega[c][b]
                if omega[c][a]:
                    sym = sym - dm[b][c] * omega[c][a]
            res["symplectic"] = max(res["symplectic"], max_abs_coefficient(sym))
    return res


# ============= INDEPENDENCIA LINEAL =============

def sample_points(n: int, count: int = 8, seed: int = None) -> List[Tuple[np.ndarray, np.ndarray]]:
    """I₂ en el origen más `count` puntos pseudoaleatorios (U ∈ SU(2), z pequeño)"""
    rng = np.random.default_rng(Config.SEED if seed is None else seed)
    points = [(np.eye(2, dtype=complex), np.zeros(4 * n, dtype=complex))]
    for _ in range(count):
        U = random_su2(rng)
        z = Config.CHART_RADIUS * (rng.normal(size=4 * n) + 1j * rng.normal(size=4 * n))
        points.append((U, z))
    return points


def frame_matrix(frame: HKFrame, U, z) -> np.ndarray:
    """Matriz de coeficientes (filas: campos, columnas: etiquetas planas) en un punto"""
    labels = basis_labels(frame.n)
    fields = frame.fields()
    out = np.zeros((len(labels), len(labels)), dtype=complex)
    for i, lab in enumerate(labels):
        fld = fields[lab]
        for j, key in enumerate(labels):
            coeff = fld.coefficients.get(key)
            if coeff is not None and not coeff.is_zero():
                out[i, j] = CompiledSeries(coeff)(U, z)
    return out


def check_independence(frame: HKFrame, points=None) -> float:
    """
    Menor valor singular de la matriz del marco sobre la muestra

    Raises:
        SingularFrame: la matriz pierde rango en algún punto
    """
    points = sample_points(frame.n) if points is None else points
    smallest = np.inf
    for U, z in points:
        singular = np.linalg.svd(frame_matrix(frame, U, z), compute_uv=False)
        smallest = min(smallest, float(singular[-1]))
        if singular[-1] < Config.RANK_TOL * max(1.0, singular[0]):
            raise SingularFrame(f"El marco es degenerado en z = {z}")
    return smallest
