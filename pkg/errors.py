"""
Hiérarchie d'exceptions du toolkit.

Les échecs numériques d'un suivi (durée de vie finie, sortie du domaine...)
sont des résultats, pas des exceptions : on ne lève que lorsque les
hypothèses de travail sont violées (jacobienne singulière en un point
accepté, valeurs non finies, point hors domaine, texte mal formé).
"""

from typing import Optional, Sequence


class WazError(Exception):
    """Erreur de base du toolkit"""

    error_type = "WAZ_ERROR"

    def to_dict(self) -> dict:
        """Enveloppe d'erreur commune au CLI et à l'API"""
        return {"status": "error", "error_type": self.error_type, "message": str(self)}


def _fmt_point(point: Optional[Sequence[float]]) -> str:
    if point is None:
        return "?"
    return "(" + ", ".join(f"{float(v):.6g}" for v in point) + ")"


class DomainViolation(WazError):
    """Point hors du domaine de la carte"""

    error_type = "DomainViolation"

    def __init__(self, point: Optional[Sequence[float]] = None, message: str = ""):
        self.point = None if point is None else [float(v) for v in point]
        super().__init__(message or f"point {_fmt_point(point)} is outside the domain")


class NonFinite(WazError):
    """Évaluation NaN/Inf, pôle, logarithme d'un réel négatif..."""

    error_type = "NonFinite"

    def __init__(self, where: str = ""):
        self.where = where
        super().__init__(f"non-finite value: {where}" if where else "non-finite value")


class SingularJacobian(WazError):
    """f' n'est pas inversible au point (hors hypothèse de difféomorphisme local)"""

    error_type = "SingularJacobian"

    def __init__(self, point: Optional[Sequence[float]] = None, message: str = ""):
        self.point = None if point is None else [float(v) for v in point]
        if not message:
            message = "singular Jacobian" if point is None else f"singular Jacobian at {_fmt_point(point)}"
        super().__init__(message)


class DimensionMismatch(WazError):
    error_type = "DimensionMismatch"


class ExprSyntaxError(WazError):
    """Erreur de syntaxe avec position en octets dans le texte source"""

    error_type = "SyntaxError"

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} at offset {offset}")


class ArityError(WazError):
    error_type = "ArityError"


class UnknownIdentifier(WazError):
    error_type = "UnknownIdentifier"

    def __init__(self, name: str, offset: int):
        self.name = name
        self.offset = offset
        super().__init__(f"unknown identifier '{name}' at offset {offset}")


class NotDifferentiable(WazError):
    error_type = "NotDifferentiable"


class ConfigError(WazError):
    """Configuration invalide (code de sortie 2 côté CLI)"""

    error_type = "ConfigError"
