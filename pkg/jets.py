"""
Series truncadas con carga en las coordenadas analíticas z^{±a}

Cada serie es un PolyElement de sympy en el anillo
    u1p, u2p, u1m, u2m, zp0..zp{2n-1}, zm0..zm{2n-1}
con coeficientes en forma normal respecto de det U = 1. El orden válido
(`valid`) indica hasta qué grado total en z la serie es exacta; None significa
que nunca hubo truncamiento.

Carga de un monomio: (carga en u) − Σ grado(z⁺) + Σ grado(z⁻).
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np
from sympy.polys.domains import CC, QQ, QQ_I
from sympy.polys.orderings import lex
from sympy.polys.rings import PolyRing

from config import Config
from errors import (ChargeMismatch, DependsOnZPlus, Inconsistent, MissingEquivariance,
                    NoConvergence, NotTriangular, ShapeMismatch, SingularJacobian,
                    Underdetermined)
from harmonic import (HarmonicPoly, U_SYMBOLS, _add_term, block_monomials, check_determinant, grade_u, is_exact,
                      lower_u, normalize, raise_u, raising_particular, to_complex, u_charge,
                      u_ring)

logger = logging.getLogger(__name__)

AUTO = "auto"


# ============= ANILLOS Y DOMINIOS =============

@lru_cache(maxsize=None)
def series_ring(n: int, domain) -> PolyRing:
    symbols = list(U_SYMBOLS)
    symbols += [f"zp{a}" for a in range(2 * n)]
    symbols += [f"zm{a}" for a in range(2 * n)]
    return PolyRing(symbols, domain, lex)


_DOMAIN_RANK = {QQ: 0, QQ_I: 1, CC: 2}


def join_domains(*domains):
    return max(domains, key=lambda d: _DOMAIN_RANK.get(d, 2))


def zpos(sign: int, a: int, n: int) -> int:
    """Posición del generador z^{±a} dentro del monomio"""
    return 4 + a if sign > 0 else 4 + 2 * n + a


def zdeg(monom) -> int:
    return sum(monom[4:])


def monom_charge(monom, n: int) -> int:
    return u_charge(monom) - sum(monom[4:4 + 2 * n]) + sum(monom[4 + 2 * n:])


def _min_valid(*values):
    finite = [v for v in values if v is not None]
    return min(finite) if finite else None


# ============= ETIQUETAS DE EQUIVARIANZA =============

@dataclass(frozen=True)
class EquivarianceTag:
    """Índices fundamentales superiores e inferiores de un arreglo de componentes"""
    upper: Tuple[str, ...] = ()
    lower: Tuple[str, ...] = ()

    @property
    def is_scalar(self) -> bool:
        return not self.upper and not self.lower

    @property
    def rank(self) -> int:
        return len(self.upper) + len(self.lower)


SCALAR = EquivarianceTag()
UPPER = EquivarianceTag(upper=("a",))
LOWER = EquivarianceTag(lower=("a",))
MIXED = EquivarianceTag(upper=("a",), lower=("b",))


# ============= ChargedSeries =============

class ChargedSeries:
    """Serie truncada en z con coeficientes HarmonicPoly"""

    __slots__ = ("poly", "n", "order", "valid", "charge", "tag")

    def __init__(self, poly, n: int, order: int, charge=AUTO, valid: Optional[int] = None,
                 tag: Optional[EquivarianceTag] = SCALAR, check: bool = True):
        self.poly = poly
        self.n = n
        self.order = order
        self.valid = valid
        self.tag = tag
        if charge == AUTO:
            charges = {monom_charge(m, n) for m in poly.keys()}
            charge = charges.pop() if len(charges) == 1 else (0 if not charges else None)
        self.charge = charge
        if check:
            self._check()

    def _check(self):
        for monom in self.poly.keys():
            if zdeg(monom) > self.order:
                raise ShapeMismatch(f"Término de grado {zdeg(monom)} > orden {self.order}")
            if self.charge is not None and monom_charge(monom, self.n) != self.charge:
                raise ChargeMismatch(
                    f"Monomio {monom} con carga {monom_charge(monom, self.n)}, declarada {self.charge}")

    # ----- constructores -----

    @classmethod
    def zero(cls, n: int, order: int, domain=QQ, charge=0, tag=SCALAR, valid=None) -> "ChargedSeries":
        return cls(series_ring(n, domain).zero, n, order, charge, valid, tag, check=False)

    @classmethod
    def constant(cls, value, n: int, order: int, domain=QQ) -> "ChargedSeries":
        R = series_ring(n, domain)
        return cls(R(domain.convert(value)), n, order, 0)

    @classmethod
    def from_harmonic(cls, h: HarmonicPoly, n: int, order: int) -> "ChargedSeries":
        R = series_ring(n, h.domain)
        tail = (0,) * (4 * n)
        p = R.zero
        for m, c in h.poly.items():
            p[m + tail] = c
        return cls(p, n, order)

    @classmethod
    def from_terms(cls, terms: Dict[tuple, object], n: int, order: int, domain=QQ,
                   charge=AUTO, tag=SCALAR) -> "ChargedSeries":
        """
        Construye una serie a partir de {(u4, zplus, zminus): coeficiente}

        Args:
            terms: exponentes en u (4), en z⁺ (2n) y en z⁻ (2n) por término
        """
        R = series_ring(n, domain)
        raw = R.zero
        for (u4, zp, zm), c in terms.items():
            monom = tuple(u4) + tuple(zp) + tuple(zm)
            if len(monom) != 4 + 4 * n:
                raise ShapeMismatch(f"Exponentes de longitud {len(monom)}, se esperaba {4 + 4 * n}")
            if zdeg(monom) <= order:
                _add_term(raw, monom, domain.convert(c), domain.zero)
        return cls(normalize(raw), n, order, charge, tag=tag)

    @property
    def ring(self):
        return self.poly.ring

    @property
    def domain(self):
        return self.poly.ring.domain

    def like(self, poly, charge=AUTO, valid=AUTO, tag=AUTO, check: bool = False) -> "ChargedSeries":
        return ChargedSeries(poly, self.n, self.order,
                             self.charge if charge == AUTO else charge,
                             self.valid if valid == AUTO else valid,
                             self.tag if tag == AUTO else tag, check=check)

    def to_domain(self, domain) -> "ChargedSeries":
        if domain == self.domain:
            return self
        return self.like(self.poly.set_ring(series_ring(self.n, domain)))

    def is_zero(self) -> bool:
        return not self.poly

    def max_zdeg(self) -> int:
        return max((zdeg(m) for m in self.poly.keys()), default=0)

    def has_constant_term(self) -> bool:
        return any(zdeg(m) == 0 for m in self.poly.keys())

    def depends_on_zplus(self) -> bool:
        n2 = 2 * self.n
        return any(any(m[4:4 + n2]) for m in self.poly.keys())

    def truncated(self, v: Optional[int]) -> "ChargedSeries":
        if v is None or v >= self.max_zdeg():
            return self
        p = self.ring.zero
        for m, c in self.poly.items():
            if zdeg(m) <= v:
                p[m] = c
        return self.like(p, valid=_min_valid(self.valid, v))

    def homogeneous_part(self, degree: int) -> "ChargedSeries":
        p = self.ring.zero
        for m, c in self.poly.items():
            if zdeg(m) == degree:
                p[m] = c
        return self.like(p)

    def coefficient(self, zplus: Sequence[int], zminus: Sequence[int]) -> HarmonicPoly:
        """Coeficiente en u de un monomio z dado"""
        key = tuple(zplus) + tuple(zminus)
        U = u_ring(self.domain)
        p = U.zero
        for m, c in self.poly.items():
            if m[4:] == key:
                p[m[:4]] = c
        return HarmonicPoly(p, normalized=True)

    def items_by_z(self) -> Dict[tuple, HarmonicPoly]:
        U = u_ring(self.domain)
        groups: Dict[tuple, object] = {}
        for m, c in self.poly.items():
            groups.setdefault(m[4:], U.zero)[m[:4]] = c
        return {k: HarmonicPoly(v, normalized=True) for k, v in groups.items()}

    # ----- aritmética -----

    def _coerce(self, other: "ChargedSeries"):
        if self.n != other.n:
            raise ShapeMismatch(f"Dimensiones distintas: n={self.n} y n={other.n}")
        domain = join_domains(self.domain, other.domain)
        return self.to_domain(domain), other.to_domain(domain)

    def _sum_charge(self, other: "ChargedSeries"):
        if self.is_zero():
            return other.charge
        if other.is_zero():
            return self.charge
        if self.charge is None or other.charge is None:
            return None
        if self.charge != other.charge:
            raise ChargeMismatch(f"Suma de cargas distintas: {self.charge} y {other.charge}")
        return self.charge

    def __add__(self, other) -> "ChargedSeries":
        if isinstance(other, int) and other == 0:
            return self
        if not isinstance(other, ChargedSeries):
            return NotImplemented
        a, b = self._coerce(other)
        return ChargedSeries(a.poly + b.poly, a.n, min(a.order, b.order), a._sum_charge(b),
                             _min_valid(a.valid, b.valid), a.tag if a.tag == b.tag else None,
                             check=False)

    __radd__ = __add__

    def __neg__(self) -> "ChargedSeries":
        return self.like(-self.poly)

    def __sub__(self, other) -> "ChargedSeries":
        if isinstance(other, int) and other == 0:
            return self
        return self + (-other)

    def __rsub__(self, other) -> "ChargedSeries":
        return (-self) + other

    def __mul__(self, other) -> "ChargedSeries":
        if isinstance(other, ChargedSeries):
            return series_mul(self, other)
        if isinstance(other, HarmonicPoly):
            return series_mul(self, ChargedSeries.from_harmonic(other, self.n, self.order))
        return series_scale(self, other)

    def __rmul__(self, other) -> "ChargedSeries":
        if isinstance(other, HarmonicPoly):
            return series_mul(ChargedSeries.from_harmonic(other, self.n, self.order), self)
        return series_scale(self, other)

    def __truediv__(self, other) -> "ChargedSeries":
        K = self.domain
        return self.like(self.poly * (K.one / K.convert(other)))

    def __bool__(self) -> bool:
        return bool(self.poly)

    def __eq__(self, other) -> bool:
        if isinstance(other, ChargedSeries):
            a, b = self._coerce(other)
            return a.poly == b.poly
        if isinstance(other, int) and other == 0:
            return self.is_zero()
        return NotImplemented

    def __hash__(self):
        return hash(frozenset(self.poly.items()))

    def equals_up_to(self, other: "ChargedSeries", v: Optional[int] = AUTO, tol: float = None) -> bool:
        """Igualdad hasta el orden válido común (con tolerancia en flotante)"""
        if v == AUTO:
            v = _min_valid(self.valid, other.valid)
        diff = (self - other).truncated(v)
        return series_is_zero(diff, tol)

    def __repr__(self) -> str:
        return f"ChargedSeries(charge={self.charge}, valid={self.valid}, {self.poly})"


def series_is_zero(s: ChargedSeries, tol: float = None) -> bool:
    if is_exact(s.domain):
        return s.is_zero()
    tol = Config.FLOAT_TOL if tol is None else tol
    return all(abs(complex(c)) <= tol for c in s.poly.values())


def max_abs_coefficient(s: ChargedSeries, v: Optional[int] = AUTO) -> float:
    """Mayor coeficiente en valor absoluto hasta el orden válido"""
    if v == AUTO:
        v = s.valid
    values = [abs(to_complex(c, s.domain)) for m, c in s.poly.items() if v is None or zdeg(m) <= v]
    return max(values, default=0.0)


def zvar(sign: int, a: int, n: int, order: int, domain=QQ) -> ChargedSeries:
    R = series_ring(n, domain)
    monom = [0] * (4 + 4 * n)
    monom[zpos(sign, a, n)] = 1
    return ChargedSeries(R({tuple(monom): domain.one}), n, order, -1 if sign > 0 else 1)


def uvar(name: str, n: int, order: int, domain=QQ) -> ChargedSeries:
    R = series_ring(n, domain)
    monom = [0] * (4 + 4 * n)
    monom[U_SYMBOLS.index(name)] = 1
    return ChargedSeries(R({tuple(monom): domain.one}), n, order)


# ============= OPERACIONES BÁSICAS =============

def series_add(a: ChargedSeries, b: ChargedSeries) -> ChargedSeries:
    return a + b


def series_scale(s: ChargedSeries, c) -> ChargedSeries:
    K = s.domain
    try:
        factor = K.convert(c)
    except Exception:
        factor = None
    if factor is None:
        K = CC
        s = s.to_domain(K)
        factor = K.convert(c)
    if not factor:
        return ChargedSeries.zero(s.n, s.order, K, s.charge, s.tag, s.valid)
    return s.like(s.poly * factor)


def _mul_polys(p1, p2, cutoff: int):
    """Producto truncado al estilo rs_mul: corta cuando el grado en z supera el límite"""
    R = p1.ring
    zero = R.domain.zero
    out = R.zero
    get = out.get
    items2 = sorted(((m, c, zdeg(m)) for m, c in p2.items()), key=lambda t: t[2])
    monomial_mul = R.monomial_mul
    dropped = False
    for m1, c1 in p1.items():
        d1 = zdeg(m1)
        for m2, c2, d2 in items2:
            if d1 + d2 > cutoff:
                dropped = True
                break
            m = monomial_mul(m1, m2)
            out[m] = get(m, zero) + c1 * c2
    out.strip_zero()
    return normalize(out), dropped


def series_mul(a: ChargedSeries, b: ChargedSeries, order: Optional[int] = None) -> ChargedSeries:
    """Producto truncado; la carga es la suma y el orden válido el mínimo"""
    a, b = a._coerce(b)
    top = min(a.order, b.order)
    cutoff = _min_valid(top, order, a.valid, b.valid)
    poly, dropped = _mul_polys(a.poly, b.poly, cutoff)
    valid = _min_valid(a.valid, b.valid, cutoff if dropped else None, order)
    charge = None if a.charge is None or b.charge is None else a.charge + b.charge
    tag = a.tag if b.tag is not None and b.tag.is_scalar else (b.tag if a.tag is not None and a.tag.is_scalar else None)
    return ChargedSeries(poly, a.n, top, charge, valid, tag, check=False)


def series_pow(s: ChargedSeries, k: int) -> ChargedSeries:
    result = ChargedSeries.constant(1, s.n, s.order, s.domain)
    for _ in range(k):
        result = series_mul(result, s)
    return result


# ============= DERIVACIONES DEL MARCO PLANO =============

def d_z(sign: int, a: int, s: ChargedSeries) -> ChargedSeries:
    """Derivada parcial respecto de z^{±a}; el orden válido baja en 1"""
    if not 0 <= a < 2 * s.n:
        raise ShapeMismatch(f"Índice {a} fuera de rango para n={s.n}")
    pos = zpos(sign, a, s.n)
    K = s.domain
    out = s.ring.zero
    for m, c in s.poly.items():
        power = m[pos]
        if power:
            new = m[:pos] + (power - 1,) + m[pos + 1:]
            out[new] = c * K.convert(power)
    charge = None if s.charge is None else s.charge + (1 if sign > 0 else -1)
    valid = None if s.valid is None else s.valid - 1
    return ChargedSeries(out, s.n, s.order, charge, valid, s.tag, check=False)


def _shift_z(p, n: int, source_sign: int):
    """Σ_a z^{∓a} ∂/∂z^{±a} aplicado monomio a monomio (sin signo)"""
    R = p.ring
    K = R.domain
    out = R.zero
    for m, c in p.items():
        for a in range(2 * n):
            src = zpos(source_sign, a, n)
            power = m[src]
            if power:
                dst = zpos(-source_sign, a, n)
                new = list(m)
                new[src] -= 1
                new[dst] += 1
                _add_term(out, tuple(new), c * K.convert(power), K.zero)
    return out


def raise_analytic(p, n: int):
    """H₊₊ en coordenadas analíticas: (subida en u) − z⁻ᵃ ∂/∂z⁺ᵃ"""
    return normalize(raise_u(p)) - _shift_z(p, n, +1)


def lower_analytic(p, n: int):
    """H₋₋ en coordenadas analíticas: (bajada en u) − z⁺ᵃ ∂/∂z⁻ᵃ"""
    return normalize(lower_u(p)) - _shift_z(p, n, -1)


def grade_analytic(p, n: int):
    R = p.ring
    K = R.domain
    out = R.zero
    for m, c in p.items():
        k = monom_charge(m, n)
        if k:
            out[m] = c * K.convert(k)
    return out


def apply_E(A: int, family: Dict[tuple, ChargedSeries], index: tuple, tag: EquivarianceTag) -> ChargedSeries:
    """
    Acción algebraica de E_A sobre la componente `index` de un arreglo equivariante

    Índices superiores: −(E_A)ᵃ_c T^c; inferiores: +(E_A)ᶜ_b T_c.
    """
    from algebra import sp_basis

    sample = family[index]
    if tag is None:
        raise MissingEquivariance("La serie no tiene etiqueta de equivarianza")
    result = ChargedSeries.zero(sample.n, sample.order, sample.domain, sample.charge, tag, sample.valid)
    if tag.is_scalar:
        return result
    mat = sp_basis(sample.n)[A]
    size = 2 * sample.n
    n_upper = len(tag.upper)
    for slot, idx in enumerate(index):
        for c in range(size):
            if slot < n_upper:
                coeff = -mat[idx][c]
            else:
                coeff = mat[c][idx]
            if not coeff:
                continue
            other = index[:slot] + (c,) + index[slot + 1:]
            if other not in family:
                raise MissingEquivariance(f"Falta la componente {other} del arreglo equivariante")
            result = result + family[other] * coeff
    return result


def apply_flat_field(label, s: ChargedSeries, family: Dict[tuple, ChargedSeries] = None,
                     index: tuple = None) -> ChargedSeries:
    """
    Acción de un campo del marco plano sobre una serie

    Args:
        label: BasisIndex (H0, Hpp, Hmm, E(A), e(±, a))
        s: serie
        family, index: arreglo equivariante y posición de s, necesarios para E(A)
    """
    kind = label.kind
    n = s.n
    if kind == "H0":
        return s.like(grade_analytic(s.poly, n))
    if kind == "Hpp":
        charge = None if s.charge is None else s.charge + 2
        return s.like(raise_analytic(s.poly, n), charge=charge)
    if kind == "Hmm":
        charge = None if s.charge is None else s.charge - 2
        return s.like(lower_analytic(s.poly, n), charge=charge)
    if kind == "e":
        return d_z(label.sign, label.index, s)
    if kind == "E":
        if s.tag is None:
            raise MissingEquivariance(f"{label} necesita la etiqueta de equivarianza de la serie")
        if s.tag.is_scalar:
            return ChargedSeries.zero(n, s.order, s.domain, s.charge, s.tag, s.valid)
        if family is None or index is None:
            raise MissingEquivariance(f"{label} sobre un arreglo necesita la familia completa")
        return apply_E(label.index, family, index, s.tag)
    raise ShapeMismatch(f"Etiqueta desconocida: {label}")


# ============= COORDENADAS CENTRALES =============

class CentralSeries:
    """
    Serie en coordenadas centrales z^{ia}

    Reutiliza el anillo de las series analíticas: la casilla zp guarda z¹ᵃ y la
    casilla zm guarda z²ᵃ. Las z centrales tienen carga 0.
    """

    __slots__ = ("poly", "n", "order", "valid")

    def __init__(self, poly, n: int, order: int, valid: Optional[int] = None):
        self.poly = poly
        self.n = n
        self.order = order
        self.valid = valid

    def raised(self) -> "CentralSeries":
        return CentralSeries(normalize(raise_u(self.poly)), self.n, self.order, self.valid)

    def lowered(self) -> "CentralSeries":
        return CentralSeries(normalize(lower_u(self.poly)), self.n, self.order, self.valid)

    def graded(self) -> "CentralSeries":
        return CentralSeries(grade_u(self.poly), self.n, self.order, self.valid)

    def items_by_z(self) -> Dict[tuple, HarmonicPoly]:
        U = u_ring(self.poly.ring.domain)
        groups: Dict[tuple, object] = {}
        for m, c in self.poly.items():
            groups.setdefault(m[4:], U.zero)[m[:4]] = c
        return {k: HarmonicPoly(v, normalized=True) for k, v in groups.items()}


def _linear_substitute(p, images: List[object]):
    """
    Sustituye cada variable z por una forma lineal con coeficientes en u

    Agrupa por exponente en z y reutiliza potencias (estilo rs_subs).
    """
    R = p.ring
    groups: Dict[tuple, object] = {}
    width = len(images)
    for m, c in p.items():
        key = m[4:]
        bucket = groups.get(key)
        if bucket is None:
            bucket = groups[key] = R.zero
        bucket[m[:4] + (0,) * width] = c
    powers: Dict[Tuple[int, int], object] = {}

    def power(i, e):
        if (i, e) not in powers:
            powers[(i, e)] = images[i] if e == 1 else power(i, e - 1) * images[i]
        return powers[(i, e)]

    out = R.zero
    for key, upoly in groups.items():
        term = upoly
        for i, e in enumerate(key):
            if e:
                term = term * power(i, e)
        out += term
    return normalize(out)


def _u_gen(R, name):
    return R.gens[U_SYMBOLS.index(name)]


def to_central(s: ChargedSeries) -> CentralSeries:
    """z⁺ᵃ = u²₋z¹ᵃ − u¹₋z²ᵃ,  z⁻ᵃ = −u²₊z¹ᵃ + u¹₊z²ᵃ"""
    R = s.ring
    n2 = 2 * s.n
    u1p, u2p, u1m, u2m = (_u_gen(R, name) for name in U_SYMBOLS)
    Z1 = R.gens[4:4 + n2]
    Z2 = R.gens[4 + n2:]
    images = [u2m * Z1[a] - u1m * Z2[a] for a in range(n2)]
    images += [-u2p * Z1[a] + u1p * Z2[a] for a in range(n2)]
    return CentralSeries(_linear_substitute(s.poly, images), s.n, s.order, s.valid)


def from_central(c: CentralSeries, charge=AUTO, tag=SCALAR) -> ChargedSeries:
    """zⁱᵃ = uⁱ₊z⁺ᵃ + uⁱ₋z⁻ᵃ"""
    R = c.poly.ring
    n2 = 2 * c.n
    u1p, u2p, u1m, u2m = (_u_gen(R, name) for name in U_SYMBOLS)
    Zp = R.gens[4:4 + n2]
    Zm = R.gens[4 + n2:]
    images = [u1p * Zp[a] + u1m * Zm[a] for a in range(n2)]
    images += [u2p * Zp[a] + u2m * Zm[a] for a in range(n2)]
    return ChargedSeries(_linear_substitute(c.poly, images), c.n, c.order, charge, c.valid, tag,
                         check=False)


def central_var(i: int, a: int, n: int, order: int, domain=QQ) -> ChargedSeries:
    """zⁱᵃ (i ∈ {0, 1}) expresada en coordenadas analíticas"""
    R = series_ring(n, domain)
    monom = [0] * (4 + 4 * n)
    monom[zpos(+1 if i == 0 else -1, a, n)] = 1
    return from_central(CentralSeries(R({tuple(monom): domain.one}), n, order), charge=0)


def restrict_identity(s) -> ChargedSeries:
    """
    Restricción exacta a U = I₂ (u¹₊ = u²₋ = 1, u²₊ = u¹₋ = 0)

    En U = I₂ las coordenadas analíticas y las centrales coinciden.
    """
    R = s.poly.ring
    K = R.domain
    out = R.zero
    for m, c in s.poly.items():
        if m[1] or m[2]:
            continue
        _add_term(out, (0, 0, 0, 0) + m[4:], c, K.zero)
    order = s.order
    return ChargedSeries(out, s.n, order, None, s.valid, getattr(s, "tag", SCALAR), check=False)


def value_at_identity(h: HarmonicPoly):
    K = h.domain
    total = K.zero
    for m, c in h.poly.items():
        if not m[1] and not m[2]:
            total += c
    return total


# ============= ECUACIONES DE SUBIDA SOBRE SERIES =============

def _pin_values(init: Optional[ChargedSeries], domain) -> Dict[tuple, object]:
    if init is None:
        return {}
    restricted = restrict_identity(init.to_domain(domain))
    return {m[4:]: c for m, c in restricted.poly.items()}


def _same_value(x, y, domain) -> bool:
    if is_exact(domain):
        return x == y
    return abs(complex(x) - complex(y)) <= Config.FLOAT_TOL


def solve_charged(g: ChargedSeries, k: int, init: Optional[ChargedSeries] = None,
                  bound: Optional[int] = None) -> ChargedSeries:
    """
    Resuelve H₊₊f = g para f de carga k, coeficiente a coeficiente en z central

    Args:
        g: serie de carga k + 2
        k: carga de la incógnita; k = 0 se fija con el valor en U = I₂,
           k < 0 sólo admite comprobar la compatibilidad de `init`
        init: dato inicial f(I₂, z)
        bound: cota de grado en u

    Raises:
        Underdetermined: k > 0 (núcleo de dimensión k + 1 con un solo dato)
        Inconsistent: k < 0 y el dato inicial no coincide con la solución única
    """
    if not g.is_zero() and g.charge is not None and g.charge != k + 2:
        raise ChargeMismatch(f"Lado derecho de carga {g.charge}, se esperaba {k + 2}")
    if k > 0:
        raise Underdetermined(f"Carga {k}: el núcleo tiene dimensión {k + 1} y sólo hay un dato por monomio")
    bound = Config.degree_bound(g.order) if bound is None else bound
    domain = join_domains(g.domain, init.domain if init is not None else QQ)
    g = g.to_domain(domain)
    groups = to_central(g).items_by_z()
    pins = _pin_values(init, domain)

    R = g.ring
    out = R.zero
    for key in set(groups) | set(pins):
        rhs = groups.get(key) or HarmonicPoly.zero(domain)
        f = raising_particular(rhs, k, bound)
        at_identity = value_at_identity(f)
        target = pins.get(key, domain.zero)
        if k == 0:
            f = f + HarmonicPoly.constant(target - at_identity, domain)
        elif not _same_value(at_identity, target, domain):
            raise Inconsistent(f"Carga {k}: el dato inicial no es compatible (monomio {key})")
        for m, c in f.poly.items():
            _add_term(out, m + key, c, domain.zero)

    valid = _min_valid(g.valid, init.valid if init is not None else None)
    central = CentralSeries(out, g.n, g.order, valid)
    return from_central(central, charge=k, tag=g.tag)


@lru_cache(maxsize=None)
def _charge0_monomials(bound: int) -> Tuple[tuple, ...]:
    return tuple(m for w in range(-bound, bound + 1) for m in block_monomials(0, w, bound))


def solve_coupled(rhs: Sequence[ChargedSeries], coupling: Sequence[Sequence[HarmonicPoly]],
                  init: Sequence[Optional[ChargedSeries]], bound: Optional[int] = None) -> List[ChargedSeries]:
    """
    Resuelve el sistema lineal acoplado H₊₊fᵃ − Cᵃ_b(u) fᵇ = rᵃ con fᵃ(I₂) dado

    Las incógnitas tienen carga 0 y C tiene carga 2 y no depende de z. La matriz
    del sistema es la misma para cada monomio central, así que se reduce una sola
    vez con todas las columnas de lado derecho.
    """
    size = len(rhs)
    if len(coupling) != size or any(len(row) != size for row in coupling) or len(init) != size:
        raise ShapeMismatch(f"Sistema acoplado de tamaño {size} con acoplamiento o datos incompatibles")
    sample = rhs[0]
    n, order = sample.n, sample.order
    domain = join_domains(*(r.domain for r in rhs), *(c.domain for row in coupling for c in row),
                          *(i.domain for i in init if i is not None))
    bound = Config.degree_bound(order) if bound is None else bound
    U = u_ring(domain)

    unknowns = [(b, m) for b in range(size) for m in _charge0_monomials(bound)]
    n_unknowns = len(unknowns)
    rows: Dict[tuple, int] = {}
    columns: List[Dict[int, object]] = []

    def row(key):
        if key not in rows:
            rows[key] = len(rows)
        return rows[key]

    for b, m in unknowns:
        col: Dict[int, object] = {}
        unit = U({m: domain.one})
        for mm, c in normalize(raise_u(unit)).items():
            r = row((b, mm))
            col[r] = col.get(r, domain.zero) + c
        for a in range(size):
            cab = coupling[a][b]
            if cab.is_zero():
                continue
            for mm, c in normalize(cab.poly.set_ring(U) * unit).items():
                r = row((a, mm))
                col[r] = col.get(r, domain.zero) - c
        if not m[1] and not m[2]:
            col[row(("pin", b))] = domain.one
        columns.append(col)

    rhs_central = [to_central(r.to_domain(domain)).items_by_z() for r in rhs]
    pins = [_pin_values(i, domain) for i in init]
    keys = sorted(set().union(*rhs_central, *pins))
    rhs_columns = []
    for key in keys:
        col = {}
        for a in range(size):
            part = rhs_central[a].get(key)
            if part is not None:
                for mm, c in part.poly.items():
                    col[row((a, mm))] = c
            col[row(("pin", a))] = pins[a].get(key, domain.zero)
        rhs_columns.append(col)

    n_rows = len(rows)
    dense = [[domain.zero] * (n_unknowns + len(keys)) for _ in range(n_rows)]
    for j, col in enumerate(columns + rhs_columns):
        for r, c in col.items():
            dense[r][j] = c

    solutions = _solve_dense(dense, n_rows, n_unknowns, len(keys), domain)

    R = series_ring(n, domain)
    outs = [R.zero for _ in range(size)]
    for j, key in enumerate(keys):
        for (b, m), value in zip(unknowns, solutions[j]):
            if value:
                _add_term(outs[b], m + key, value, domain.zero)
    valid = _min_valid(*(r.valid for r in rhs), *(i.valid for i in init if i is not None))
    logger.debug(f"solve_coupled: {n_unknowns} incógnitas, {len(keys)} monomios centrales")
    return [from_central(CentralSeries(p, n, order, valid), charge=0, tag=sample.tag) for p in outs]


def _solve_dense(dense, n_rows: int, n_unknowns: int, n_rhs: int, domain) -> List[List[object]]:
    if not is_exact(domain):
        A = np.array([[complex(x) for x in r[:n_unknowns]] for r in dense])
        Bm = np.array([[complex(x) for x in r[n_unknowns:]] for r in dense]).reshape(n_rows, n_rhs)
        if np.linalg.matrix_rank(A, tol=Config.RANK_TOL) < n_unknowns:
            raise Underdetermined("El sistema acoplado no tiene solución única")
        X, *_ = np.linalg.lstsq(A, Bm, rcond=None)
        if np.abs(A @ X - Bm).max(initial=0.0) > Config.FLOAT_TOL:
            raise Inconsistent("El sistema acoplado es incompatible")
        return [[domain.convert(complex(X[i, j])) if abs(X[i, j]) > 1e-14 else domain.zero
                 for i in range(n_unknowns)] for j in range(n_rhs)]

    from sympy.polys.matrices import DomainMatrix
    reduced, pivots = DomainMatrix(dense, (n_rows, n_unknowns + n_rhs), domain).rref()
    if any(p >= n_unknowns for p in pivots):
        raise Inconsistent("El sistema acoplado es incompatible")
    if len(pivots) < n_unknowns:
        raise Underdetermined("El sistema acoplado no tiene solución única")
    reduced = reduced.to_list()
    solutions = []
    for j in range(n_rhs):
        x = [domain.zero] * n_unknowns
        for i, col in enumerate(pivots):
            x[col] = reduced[i][n_unknowns + j]
        solutions.append(x)
    return solutions


# ============= COMPOSICIÓN E INVERSIÓN =============

def compose(f: ChargedSeries, images: Sequence[ChargedSeries], order: Optional[int] = None) -> ChargedSeries:
    """
    f(u, z) ↦ f(u, Φ(u, z)) con Φ dado por sus 4n componentes (z⁺ᵃ, luego z⁻ᵃ)
    """
    n = f.n
    if len(images) != 4 * n:
        raise ShapeMismatch(f"Se esperaban {4 * n} componentes, llegaron {len(images)}")
    order = f.order if order is None else order
    domain = join_domains(f.domain, *(img.domain for img in images))
    f = f.to_domain(domain)
    images = [img.to_domain(domain) for img in images]
    if f.max_zdeg() == 0:
        return f
    if f.valid is not None and any(img.has_constant_term() for img in images):
        raise NotTriangular("Composición de una serie truncada con un mapa que no fija el origen")

    R = f.ring
    groups: Dict[tuple, object] = {}
    for m, c in f.poly.items():
        bucket = groups.get(m[4:])
        if bucket is None:
            bucket = groups[m[4:]] = R.zero
        bucket[m[:4] + (0,) * (4 * n)] = c

    powers: Dict[Tuple[int, int], ChargedSeries] = {}

    def power(i, e):
        if (i, e) not in powers:
            powers[(i, e)] = images[i] if e == 1 else series_mul(power(i, e - 1), images[i], order)
        return powers[(i, e)]

    out = R.zero
    valid = f.valid
    for key, upoly in groups.items():
        term = ChargedSeries(upoly, n, f.order, None, None, SCALAR, check=False)
        for i, e in enumerate(key):
            if e:
                term = series_mul(term, power(i, e), order)
        out += term.poly
        valid = _min_valid(valid, term.valid)
    return ChargedSeries(out, n, f.order, AUTO, valid, f.tag, check=False)


def substitute(f: ChargedSeries, args: Sequence[ChargedSeries], order: Optional[int] = None) -> ChargedSeries:
    """f(u, z⁻) ↦ f(u, args); f no puede depender de z⁺ y cada argumento tiene carga +1"""
    n = f.n
    if len(args) != 2 * n:
        raise ShapeMismatch(f"Se esperaban {2 * n} argumentos, llegaron {len(args)}")
    if any(any(m[4:4 + 2 * n]) for m in f.poly.monoms()):
        raise DependsOnZPlus("substitute solo admite series en z⁻")
    for a, arg in enumerate(args):
        if arg.charge != 1:
            raise ChargeMismatch(f"El argumento {a} tiene carga {arg.charge}, se esperaba +1")
    images = [zvar(+1, a, n, f.order) for a in range(2 * n)] + list(args)
    return compose(f, images, order)


def identity_map(n: int, order: int, domain=QQ) -> List[ChargedSeries]:
    return [zvar(+1, a, n, order, domain) for a in range(2 * n)] + \
           [zvar(-1, a, n, order, domain) for a in range(2 * n)]


def invert_series(components: Sequence[ChargedSeries]) -> List[ChargedSeries]:
    """
    Inversa formal Φ de un mapa analítico φ (φ∘Φ = id hasta el orden)

    Iteración Φ ← w − (φ − id)∘Φ; la parte lineal de φ − id debe ser nilpotente.
    Una traslación pura φ = id + c(u) se invierte como w − c(u).
    """
    n = components[0].n
    order = components[0].order
    domain = join_domains(*(c.domain for c in components))
    ident = identity_map(n, order, domain)
    remainder = [c.to_domain(domain) - w for c, w in zip(components, ident)]
    if all(r.max_zdeg() == 0 for r in remainder):
        return [w - r for w, r in zip(ident, remainder)]
    if any(r.has_constant_term() for r in remainder):
        raise NotTriangular("El mapa no fija el origen")
    current = list(ident)
    cap = (order + 1) * (4 * n + 1)
    for iteration in range(cap):
        updated = [w - compose(r, current) for w, r in zip(ident, remainder)]
        if all(series_is_zero((u - c).truncated(order)) for u, c in zip(updated, current)):
            logger.debug(f"invert_series: punto fijo en {iteration + 1} iteraciones")
            valid = _min_valid(*(c.valid for c in components))
            return [u.like(u.poly, valid=_min_valid(valid, u.valid)) for u in updated]
        current = updated
    raise NotTriangular(f"La inversión no se estabiliza en {cap} iteraciones")


# ============= MATRICES DE SERIES =============

Matrix = List[List[ChargedSeries]]


def mat_identity(size: int, n: int, order: int, domain=QQ, tag=MIXED) -> Matrix:
    R = series_ring(n, domain)
    return [[ChargedSeries(R.one if i == j else R.zero, n, order, 0, None, tag, check=False)
             for j in range(size)] for i in range(size)]


def mat_tag(M: Matrix, tag: EquivarianceTag) -> Matrix:
    return [[x.like(x.poly, tag=tag) for x in row] for row in M]


def mat_add(A: Matrix, B: Matrix) -> Matrix:
    return [[x + y for x, y in zip(ra, rb)] for ra, rb in zip(A, B)]


def mat_sub(A: Matrix, B: Matrix) -> Matrix:
    return [[x - y for x, y in zip(ra, rb)] for ra, rb in zip(A, B)]


def mat_scale(A: Matrix, c) -> Matrix:
    return [[series_scale(x, c) for x in row] for row in A]


def mat_mul(A: Matrix, B: Matrix, tag=MIXED) -> Matrix:
    size, inner, cols = len(A), len(B), len(B[0])
    if len(A[0]) != inner:
        raise ShapeMismatch(f"Producto {size}x{len(A[0])} por {inner}x{cols}")
    out = []
    for i in range(size):
        row = []
        for j in range(cols):
            acc = sum((series_mul(A[i][k], B[k][j]) for k in range(inner)), 0)
            if isinstance(acc, int):
                acc = A[i][0].like(A[i][0].ring.zero)
            row.append(acc.like(acc.poly, tag=tag))
        out.append(row)
    return out


def mat_is_zero(A: Matrix, v: Optional[int] = None) -> bool:
    return all(series_is_zero(x.truncated(v) if v is not None else x) for row in A for x in row)


def _nilpotent_tail(M: Matrix) -> Matrix:
    size = len(M)
    sample = M[0][0]
    ident = mat_identity(size, sample.n, sample.order, sample.domain)
    return mat_sub(M, ident)


def _power_series(N: Matrix, coefficient, label: str) -> Matrix:
    """Σ_{k≥0} c_k N^k hasta que N^k se anula al orden de truncamiento"""
    size = len(N)
    sample = N[0][0]
    order = sample.order
    result = mat_identity(size, sample.n, order, sample.domain)
    result = mat_scale(result, coefficient(0))
    term = mat_identity(size, sample.n, order, sample.domain)
    cap = (order + 1) * (size + 1)
    for k in range(1, cap + 1):
        term = mat_mul(term, N)
        if mat_is_zero(term, order):
            return result
        c = coefficient(k)
        if c:
            result = mat_add(result, mat_scale(term, c))
    raise NotTriangular(f"{label}: la serie no termina en {cap} términos")


def matrix_inverse(M: Matrix) -> Matrix:
    return _power_series(_nilpotent_tail(M), lambda k: (-1) ** k, "Inversa")


def matrix_log(M: Matrix) -> Matrix:
    return _power_series(_nilpotent_tail(M),
                         lambda k: QQ(0) if k == 0 else QQ((-1) ** (k + 1), k), "Logaritmo")


def matrix_exp(X: Matrix) -> Matrix:
    factorials = [1]

    def coefficient(k):
        while len(factorials) <= k:
            factorials.append(factorials[-1] * len(factorials))
        return QQ(1, factorials[k])

    return _power_series(X, coefficient, "Exponencial")


# ============= EVALUACIÓN NUMÉRICA =============

class CompiledSeries:
    """Evaluador numpy de una serie: exponentes enteros y coeficientes complejos"""

    def __init__(self, s: ChargedSeries):
        self.n = s.n
        items = list(s.poly.items())
        width = 4 + 4 * s.n
        self.exps = np.array([m for m, _ in items], dtype=int).reshape(len(items), width)
        self.coeffs = np.array([to_complex(c, s.domain) for _, c in items], dtype=complex)

    def __call__(self, U, z):
        U = np.asarray(U, dtype=complex)
        z = np.asarray(z, dtype=complex)
        single = z.ndim == 1
        if single:
            z = z[None, :]
        if U.ndim == 2:
            U = np.broadcast_to(U, (z.shape[0], 2, 2))
        uvals = np.stack([U[:, 0, 0], U[:, 1, 0], U[:, 0, 1], U[:, 1, 1]], axis=1)
        values = np.concatenate([uvals, z], axis=1)
        if not len(self.coeffs):
            out = np.zeros(z.shape[0], dtype=complex)
        else:
            out = np.prod(values[:, None, :] ** self.exps[None, :, :], axis=2) @ self.coeffs
        return out[0] if single else out


def compile_series(s: ChargedSeries) -> CompiledSeries:
    return CompiledSeries(s)


def eval_series(s: ChargedSeries, U, z) -> complex:
    """
    Evalúa la serie en (U, z) con z en coordenadas analíticas (z⁺ᵃ, luego z⁻ᵃ)

    Raises:
        DeterminantViolation: det U ≠ 1
    """
    check_determinant(np.asarray(U, dtype=complex))
    z = np.asarray(z, dtype=complex)
    if z.shape != (4 * s.n,):
        raise ShapeMismatch(f"z debe tener {4 * s.n} componentes, tiene {z.shape}")
    return complex(compile_series(s)(U, z))


class CompiledMap:
    """Mapa analítico z ↦ φ(U, z) con su jacobiano simbólico compilado"""

    def __init__(self, components: Sequence[ChargedSeries]):
        self.n = components[0].n
        self.values = [compile_series(c) for c in components]
        self.jacobian = [[compile_series(d_z(sign, a, c))
                          for sign in (+1, -1) for a in range(2 * self.n)]
                         for c in components]

    def __call__(self, U, z) -> np.ndarray:
        return np.array([f(U, z) for f in self.values])

    def jacobian_at(self, U, z) -> np.ndarray:
        return np.array([[f(U, z) for f in row] for row in self.jacobian])


def invert_map_numeric(components, U, target, guess=None) -> np.ndarray:
    """
    Newton para φ(U, z) = target

    Raises:
        SingularJacobian: el jacobiano es singular en una iteración
        NoConvergence: no converge en Config.NEWTON_MAX_ITER iteraciones
    """
    mapping = components if isinstance(components, CompiledMap) else CompiledMap(components)
    target = np.asarray(target, dtype=complex)
    z = target.copy() if guess is None else np.asarray(guess, dtype=complex).copy()
    for _ in range(Config.NEWTON_MAX_ITER):
        residual = mapping(U, z) - target
        if np.linalg.norm(residual) <= Config.NEWTON_TOL:
            return z
        J = mapping.jacobian_at(U, z)
        if abs(np.linalg.det(J)) < Config.DET_TOL or np.linalg.cond(J) > 1.0 / Config.DET_TOL:
            raise SingularJacobian(f"Jacobiano singular en z = {z}")
        z = z - np.linalg.solve(J, residual)
        if not np.all(np.isfinite(z)) or np.linalg.norm(z) > Config.DIVERGENCE_BOUND:
            raise NoConvergence("Newton diverge")
    raise NoConvergence(f"Newton no converge en {Config.NEWTON_MAX_ITER} iteraciones")
