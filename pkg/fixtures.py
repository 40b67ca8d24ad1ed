"""
Cartes intégrées : chacune exerce un côté des théorèmes d'inversion globale.

Chaque fixture porte sa jacobienne analytique (source par défaut, rapide) et
son texte dans le langage d'expressions, ce qui permet de recouper
analytique / différentiation automatique / différences finies.
"""

import dataclasses
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

import expr
from errors import ConfigError, SingularJacobian
from map_core import DomainSpec, JacobianKind, JacobianSource, MapSpec, factorize

logger = logging.getLogger(__name__)

SQUARE_EXCLUSION_RADIUS = 1e-6
DEFAULT_LINEAR_MATRIX = ((2.0, 0.0), (0.0, 4.0))


@dataclass(frozen=True)
class FixtureInfo:
    """Fiche descriptive (list-fixtures, GET /fixtures)"""
    name: str
    dim: int
    x0: Tuple[float, ...]
    domain: str
    label: str
    source: str

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class MapRecipe:
    """Description picklable d'une carte ; un worker en processus la reconstruit par appel"""
    fixture: Optional[str] = None
    matrix: Optional[Tuple[Tuple[float, ...], ...]] = None
    source: Optional[str] = None
    dim: Optional[int] = None
    x0: Optional[Tuple[float, ...]] = None
    jacobian: str = "analytic"

    def __call__(self) -> MapSpec:
        if self.fixture is not None:
            return build_fixture(self.fixture, self.matrix, self.x0, self.jacobian)
        return expression_map(self.source, self.dim, self.x0, self.jacobian)


# ============================================================================
# CONSTRUCTEURS
# ============================================================================

def _make(
    dim: int,
    evaluate: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    source: str,
    x0: Sequence[float],
    label: str,
    domain: Optional[DomainSpec] = None,
) -> MapSpec:
    return MapSpec(
        dim=dim,
        evaluate=evaluate,
        jacobian_source=JacobianSource.from_function(jacobian),
        domain=domain or DomainSpec.whole(dim),
        x0=tuple(float(v) for v in x0),
        label=label,
        asts=expr.parse(source, dim),
    )


def _identity(n: int) -> MapSpec:
    source = "; ".join(f"x{i + 1}" for i in range(n))
    return _make(n, lambda x: np.array(x, dtype=float), lambda x: np.eye(n), source, [0.0] * n,
                 f"identity on R^{n}")


def _linear(matrix: Tuple[Tuple[float, ...], ...]) -> MapSpec:
    try:
        A = np.asarray(matrix, dtype=float)
    except ValueError:
        raise ConfigError("linear fixture matrix rows must all have the same length")
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigError(f"linear fixture needs a square matrix, got shape {A.shape}")
    if factorize(A).singular:
        raise SingularJacobian(message="linear fixture matrix is singular")
    n = A.shape[0]
    source = "; ".join(
        " + ".join(f"{float(A[i, j])!r}*x{j + 1}" for j in range(n)) for i in range(n)
    )
    return _make(n, lambda x: A @ x, lambda x: A.copy(), source, [0.0] * n, f"linear map A={A.tolist()}")


def _square2d() -> MapSpec:
    def evaluate(x):
        a, b = x
        return np.array([a * a - b * b, 2.0 * a * b])

    def jacobian(x):
        a, b = x
        return np.array([[2.0 * a, -2.0 * b], [2.0 * b, 2.0 * a]])

    domain = DomainSpec.punctured(
        lo=(-np.inf, -np.inf), hi=(np.inf, np.inf), excluded=[(0.0, 0.0)],
        exclusion_radius=SQUARE_EXCLUSION_RADIUS,
    )
    return _make(2, evaluate, jacobian, "x1^2 - x2^2; 2*x1*x2", (1.0, 0.0),
                 "complex square z^2 on the punctured plane", domain)


def _exp1d() -> MapSpec:
    return _make(1, lambda x: np.exp(x), lambda x: np.array([[np.exp(x[0])]]), "exp(x1)", (0.0,),
                 "exponential on R")


def _exp2d() -> MapSpec:
    def evaluate(x):
        r = np.exp(x[0])
        return np.array([r * np.cos(x[1]), r * np.sin(x[1])])

    def jacobian(x):
        r = np.exp(x[0])
        c, s = np.cos(x[1]), np.sin(x[1])
        return np.array([[r * c, -r * s], [r * s, r * c]])

    return _make(2, evaluate, jacobian, "exp(x1)*cos(x2); exp(x1)*sin(x2)", (0.0, 0.0),
                 "complex exponential e^z")


def _shear10() -> MapSpec:
    return _make(
        2,
        lambda x: np.array([x[0], x[1] + 10.0 * x[0] ** 2]),
        lambda x: np.array([[1.0, 0.0], [20.0 * x[0], 1.0]]),
        "x1; x2 + 10*x1^2",
        (0.0, 0.0),
        "shear (x, y + 10x^2)",
    )


def _sinperturb() -> MapSpec:
    return _make(
        2,
        lambda x: x + 0.5 * np.sin(x),
        lambda x: np.diag(1.0 + 0.5 * np.cos(x)),
        "x1 + 0.5*sin(x1); x2 + 0.5*sin(x2)",
        (0.0, 0.0),
        "x + 0.5 sin(x) componentwise",
    )


def _cubic1d() -> MapSpec:
    return _make(1, lambda x: x ** 3 + x, lambda x: np.array([[3.0 * x[0] ** 2 + 1.0]]), "x1^3 + x1",
                 (0.0,), "cubic x^3 + x")


FIXTURE_BUILDERS: Dict[str, Callable[[], MapSpec]] = {
    "identity1d": lambda: _identity(1),
    "identity2d": lambda: _identity(2),
    "linear": lambda: _linear(DEFAULT_LINEAR_MATRIX),
    "square2d": _square2d,
    "exp1d": _exp1d,
    "exp2d": _exp2d,
    "shear10": _shear10,
    "sinperturb": _sinperturb,
    "cubic1d": _cubic1d,
}

JACOBIAN_CHOICES = ("analytic", "autodiff", "fd")


@lru_cache(maxsize=64)
def build_fixture(
    name: str,
    matrix: Optional[Tuple[Tuple[float, ...], ...]] = None,
    x0: Optional[Tuple[float, ...]] = None,
    jacobian: str = "analytic",
) -> MapSpec:
    """Construit une fixture ; matrix ne vaut que pour 'linear'"""
    if name not in FIXTURE_BUILDERS:
        raise ConfigError(f"unknown fixture '{name}' (known: {', '.join(sorted(FIXTURE_BUILDERS))})")
    if matrix is not None and name != "linear":
        raise ConfigError("a matrix can only be given for the 'linear' fixture")
    m = _linear(matrix) if matrix is not None else FIXTURE_BUILDERS[name]()
    if x0 is not None:
        m = dataclasses.replace(m, x0=tuple(float(v) for v in x0))
    if jacobian == "autodiff":
        m = dataclasses.replace(m, jacobian_source=JacobianSource.autodiff())
    elif jacobian == "fd":
        m = dataclasses.replace(m, jacobian_source=JacobianSource.finite_difference())
    elif jacobian != "analytic":
        raise ConfigError(f"unknown Jacobian source '{jacobian}' (choose from {', '.join(JACOBIAN_CHOICES)})")
    m = dataclasses.replace(m, recipe=MapRecipe(fixture=name, matrix=matrix, x0=x0, jacobian=jacobian))
    logger.debug("built fixture %s (%s Jacobian)", name, m.jacobian_source.kind.value)
    return m


@lru_cache(maxsize=64)
def expression_map(
    source: str,
    dim: int,
    x0: Optional[Tuple[float, ...]] = None,
    jacobian: str = "autodiff",
) -> MapSpec:
    """Carte définie par expression ; pas de jacobienne analytique (autodiff ou fd)"""
    if jacobian == "analytic":
        raise ConfigError("expression maps have no analytic Jacobian; use autodiff or fd")
    if jacobian not in JACOBIAN_CHOICES:
        raise ConfigError(f"unknown Jacobian source '{jacobian}' (choose from {', '.join(JACOBIAN_CHOICES)})")
    jacobian_source = JacobianSource.finite_difference() if jacobian == "fd" else JacobianSource.autodiff()
    m = MapSpec.from_expression(source, dim, x0 or (0.0,) * dim, jacobian_source=jacobian_source)
    return dataclasses.replace(m, recipe=MapRecipe(source=source, dim=dim, x0=x0, jacobian=jacobian))


def with_source(m: MapSpec, kind: JacobianKind) -> MapSpec:
    """Même carte, autre source de jacobienne"""
    sources = {
        JacobianKind.AUTODIFF: JacobianSource.autodiff(),
        JacobianKind.FINITE_DIFFERENCE: JacobianSource.finite_difference(),
    }
    if kind is JacobianKind.ANALYTIC:
        if m.jacobian_source.kind is not JacobianKind.ANALYTIC:
            raise ConfigError("no analytic Jacobian attached to this map")
        return m
    choice = "autodiff" if kind is JacobianKind.AUTODIFF else "fd"
    recipe = None if m.recipe is None else dataclasses.replace(m.recipe, jacobian=choice)
    return dataclasses.replace(m, jacobian_source=sources[kind], recipe=recipe)


def fixture_catalog() -> list:
    catalog = []
    for name in sorted(FIXTURE_BUILDERS):
        m = build_fixture(name)
        catalog.append(FixtureInfo(name, m.dim, m.x0, m.domain.kind_label, m.label,
                                   expr.components_to_source(m.asts)))
    return catalog
