"""
Jerarquía de errores del motor

Cada familia lleva el código de salida que usa la línea de comandos:
1 validación, 2 parseo/esquema, 3 residuos o ida y vuelta, 4 numérico.
"""


class HKError(Exception):
    """Error base del motor"""
    exit_code = 1

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.__class__.__name__)
        self.details = details


# ============= VALIDACIÓN (exit 1) =============

class ValidationFailure(HKError):
    exit_code = 1


class NotCharge4(ValidationFailure):
    pass


class DependsOnZPlus(ValidationFailure):
    pass


class NonzeroAtOrigin(ValidationFailure):
    pass


class ChargeMismatch(ValidationFailure):
    pass


class DegreeOverflow(ValidationFailure):
    pass


class NotClosed(ValidationFailure):
    pass


class NonzeroTorsion(ValidationFailure):
    pass


class MissingEquivariance(ValidationFailure):
    pass


class ShapeMismatch(ValidationFailure):
    pass


class IndexOutOfRange(ValidationFailure):
    pass


class OutOfChart(ValidationFailure):
    pass


# ============= ESQUEMA (exit 2) =============

class SchemaFailure(HKError):
    exit_code = 2


class JobParseError(SchemaFailure):
    def __init__(self, message: str, line: int = None, column: int = None):
        location = f" (línea {line}, columna {column})" if line is not None else ""
        super().__init__(f"{message}{location}", line=line, column=column)
        self.line = line
        self.column = column


# ============= RESIDUOS (exit 3) =============

class ResidualFailure(HKError):
    exit_code = 3


class ResidualNonzero(ResidualFailure):
    pass


class RoundTripMismatch(ResidualFailure):
    pass


class RouteMismatch(ResidualFailure):
    pass


class Inconsistent(ResidualFailure):
    pass


class Underdetermined(ResidualFailure):
    pass


class NoFixedPoint(ResidualFailure):
    pass


class NoSolution(ResidualFailure):
    pass


# ============= NUMÉRICOS (exit 4) =============

class NumericFailure(HKError):
    exit_code = 4


class NoConvergence(NumericFailure):
    pass


class SingularJacobian(NumericFailure):
    pass


class SingularFrame(NumericFailure):
    pass


class SingularMatrix(NumericFailure):
    pass


class RankDeficient(NumericFailure):
    pass


class FlowDiverged(NumericFailure):
    pass


class DeterminantViolation(NumericFailure):
    pass


class NotTriangular(NumericFailure):
    pass
