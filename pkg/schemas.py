"""
Esquemas JSON de trabajos e informes
"""
from typing import Any, Dict, List, Literal, Optional, Tuple, Union
import json
import logging

from pydantic import (BaseModel, ConfigDict, Field, NonNegativeInt, ValidationError, field_validator,
                      model_validator)
from sympy import I, Rational
from sympy.polys.domains import CC, QQ, QQ_I

from algebra import Dimensions
from config import Config
from errors import JobParseError
from jets import ChargedSeries

logger = logging.getLogger(__name__)

Scalar = List[Union[int, float]]


# ============= TRABAJOS =============

class Dims(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n: int = Field(ge=1)
    p: int = Field(ge=0)
    q: int = 0

    @model_validator(mode="after")
    def check_signature(self):
        if self.p + self.q != self.n:
            raise ValueError(f"p + q debe ser n (p={self.p}, q={self.q}, n={self.n})")
        return self

    def to_dimensions(self) -> Dimensions:
        return Dimensions(self.n, self.p, self.q)


class PrepotentialTerm(BaseModel):
    """Término coeff · u-monomio · z⁻-monomio; no admite exponentes en z⁺"""
    model_config = ConfigDict(extra="forbid")

    coeff: List[int] = Field(min_length=4, max_length=4)
    u_exponents: List[NonNegativeInt] = Field(min_length=4, max_length=4)
    zminus_exponents: List[NonNegativeInt]

    @field_validator("coeff")
    @classmethod
    def check_denominators(cls, v):
        if v[1] == 0 or v[3] == 0:
            raise ValueError("denominador nulo en el coeficiente")
        return v

    @property
    def degree(self) -> int:
        return sum(self.zminus_exponents)


class ChartSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    radius: float = Field(default_factory=lambda: Config.CHART_RADIUS, gt=0)
    steps: int = Field(default_factory=lambda: Config.CHART_STEPS, ge=1)


class JobSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dims: Dims
    order: int = Field(default_factory=lambda: Config.ORDER, ge=1)
    prepotential: List[PrepotentialTerm] = Field(default_factory=list)
    chart: ChartSpec = Field(default_factory=ChartSpec)
    sample_points: int = Field(default=5, ge=1)
    ricci_points: int = Field(default=3, ge=0)
    backend: Literal["exact", "float"] = Field(default_factory=lambda: Config.BACKEND)
    seed: int = Field(default_factory=lambda: Config.SEED)

    @model_validator(mode="after")
    def check_term_shapes(self):
        width = 2 * self.dims.n
        for k, term in enumerate(self.prepotential):
            if len(term.zminus_exponents) != width:
                raise ValueError(f"término {k}: se esperaban {width} exponentes en z⁻")
        return self

    @property
    def max_supplied_degree(self) -> int:
        return max((t.degree for t in self.prepotential), default=0)

    def domain(self):
        if self.backend == "float":
            return CC
        if any(t.coeff[2] for t in self.prepotential):
            return QQ_I
        return QQ

    def prepotential_series(self) -> ChargedSeries:
        """L como serie; la carga se comprueba después, en la validación"""
        n = self.dims.n
        domain = self.domain()
        terms = {}
        for t in self.prepotential:
            key = (tuple(t.u_exponents), (0,) * (2 * n), tuple(t.zminus_exponents))
            value = exact_scalar(t.coeff, domain)
            terms[key] = terms[key] + value if key in terms else value
        return ChargedSeries.from_terms(terms, n, self.order, domain, charge=None)


def exact_scalar(c: List[int], domain):
    re, im = Rational(c[0], c[1]), Rational(c[2], c[3])
    if domain == CC:
        return CC.convert(complex(float(re), float(im)))
    if domain == QQ_I:
        return QQ_I.from_sympy(re + I * im)
    return QQ.from_sympy(re)


def scalar_to_json(c, domain) -> Scalar:
    """[re_num, re_den, im_num, im_den] en exacto; [re, im] en flotante"""
    if domain == QQ:
        return [int(c.numerator), int(c.denominator), 0, 1]
    if domain == QQ_I:
        return [int(c.x.numerator), int(c.x.denominator), int(c.y.numerator), int(c.y.denominator)]
    z = complex(c)
    return [round_float(z.real), round_float(z.imag)]


def parse_job(text: str) -> JobSpec:
    """
    Raises:
        JobParseError: JSON mal formado (con línea y columna) o esquema inválido
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise JobParseError(f"JSON inválido: {e.msg}", line=e.lineno, column=e.colno)
    try:
        return JobSpec.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(x) for x in first["loc"])
        raise JobParseError(f"Esquema inválido en {location}: {first['msg']}")


def load_job(path: str) -> JobSpec:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise JobParseError(f"No se puede leer {path}: {str(e)}")
    return parse_job(text)


def load_points(path: str, dim: int) -> List[List[float]]:
    """Archivo JSON con una lista de puntos de la carta de longitud 4n"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise JobParseError(f"JSON inválido en {path}: {e.msg}", line=e.lineno, column=e.colno)
    except OSError as e:
        raise JobParseError(f"No se puede leer {path}: {str(e)}")
    if not isinstance(raw, list) or any(not isinstance(p, list) or len(p) != dim for p in raw):
        raise JobParseError(f"{path}: se esperaba una lista de puntos de longitud {dim}")
    return [[float(x) for x in p] for p in raw]


# ============= INFORMES =============

def round_float(x: float) -> float:
    return float(f"{float(x):.15g}")


def round_matrix(M) -> List[List[float]]:
    return [[round_float(x) for x in row] for row in M]


def series_table(s: ChargedSeries) -> Dict[str, Scalar]:
    """Tabla monomio → coeficiente; la clave lista exponentes u | z⁺ | z⁻"""
    n2 = 2 * s.n
    table = {}
    for m, c in sorted(s.poly.items()):
        key = f"u{list(m[:4])} z+{list(m[4:4 + n2])} z-{list(m[4 + n2:])}"
        table[key] = scalar_to_json(c, s.domain)
    return table


class StageOutcome(BaseModel):
    stage: str
    status: Literal["ok", "failed", "skipped"]
    detail: str = ""
    seconds: Optional[float] = None


class ResidualEntry(BaseModel):
    family: str
    max_abs: float
    passed: bool


class MetricEntry(BaseModel):
    point: List[float]
    g: List[List[float]]
    signature: Tuple[int, int]
    route_gap: float
    section_gap: float
    imag_metric: float
    symmetric_gap: float


class RicciEntry(BaseModel):
    point: List[float]
    max_ricci: float
    curvature_scale: float


class Report(BaseModel):
    job: JobSpec
    status: Literal["ok", "failed"] = "ok"
    exit_code: int = 0
    stages: List[StageOutcome] = Field(default_factory=list)
    residuals: List[ResidualEntry] = Field(default_factory=list)
    warnings: List[str] = Field(default_factory=list)
    v_potential: Dict[str, Dict[str, Scalar]] = Field(default_factory=dict)
    bridge: Dict[str, Dict[str, Scalar]] = Field(default_factory=dict)
    curvature: Dict[str, Dict[str, Scalar]] = Field(default_factory=dict)
    curvature_symmetry: Dict[str, float] = Field(default_factory=dict)
    roundtrip_mismatches: List[str] = Field(default_factory=list)
    inverse_gap: Optional[float] = None
    chart: Dict[str, Any] = Field(default_factory=dict)
    metric: List[MetricEntry] = Field(default_factory=list)
    reality: Dict[str, Union[bool, float]] = Field(default_factory=dict)
    ricci: List[RicciEntry] = Field(default_factory=list)

    def fail(self, stage: str, error: Exception, exit_code: int):
        self.stages.append(StageOutcome(stage=stage, status="failed", detail=str(error)))
        self.status = "failed"
        self.exit_code = exit_code

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True, ensure_ascii=False)

    def write(self, path: str):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_json())
        logger.info(f"Informe escrito en {path}")

