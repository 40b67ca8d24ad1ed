"""
Cartes, domaines et jacobiennes, plus l'algèbre linéaire dense utilisée par
tous les autres modules (résolution pivotée, norme de l'inverse).

Tout ici est pur et en lecture seule après construction : une MapSpec peut
être partagée entre threads sans synchronisation.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import eigvalsh, lu_factor, lu_solve

import expr
from errors import DimensionMismatch, DomainViolation, NonFinite, SingularJacobian

logger = logging.getLogger(__name__)

MACHINE_EPS = float(np.finfo(float).eps)
PIVOT_THRESHOLD = 1e-12
POWER_MAX_ITER = 50
POWER_RTOL = 1e-10
DIRECT_NORM_MAX_DIM = 8

# ============================================================================
# DOMAINES
# ============================================================================

class DomainShape(Enum):
    """Formes de domaine supportées"""
    BOX = "box"
    BALL = "ball"
    PUNCTURED_BOX = "punctured_box"
    PREDICATE = "predicate"


class BoundaryKind(Enum):
    OUTER = "outer"
    EXCLUDED = "excluded"


@dataclass(frozen=True)
class DomainSpec:
    """Ouvert D de R^n ; margin(x) > 0 à l'intérieur, <= 0 dehors"""
    shape: DomainShape
    lo: Optional[Tuple[float, ...]] = None
    hi: Optional[Tuple[float, ...]] = None
    center: Optional[Tuple[float, ...]] = None
    radius: float = 0.0
    excluded: Tuple[Tuple[float, ...], ...] = ()
    exclusion_radius: float = 0.0
    membership: Optional[Callable[[np.ndarray], bool]] = None
    margin_fn: Optional[Callable[[np.ndarray], float]] = None
    predicate_scale: float = 1.0
    eps: Optional[float] = None

    # ---- constructeurs ------------------------------------------------------

    @classmethod
    def whole(cls, n: int, eps: Optional[float] = None) -> "DomainSpec":
        """R^n entier (boîte aux bornes infinies)"""
        return cls(DomainShape.BOX, lo=(-math.inf,) * n, hi=(math.inf,) * n, eps=eps)

    @classmethod
    def box(cls, lo: Sequence[float], hi: Sequence[float], eps: Optional[float] = None) -> "DomainSpec":
        return cls(DomainShape.BOX, lo=tuple(map(float, lo)), hi=tuple(map(float, hi)), eps=eps)

    @classmethod
    def ball(cls, center: Sequence[float], radius: float, eps: Optional[float] = None) -> "DomainSpec":
        return cls(DomainShape.BALL, center=tuple(map(float, center)), radius=float(radius), eps=eps)

    @classmethod
    def punctured(
        cls,
        lo: Sequence[float],
        hi: Sequence[float],
        excluded: Sequence[Sequence[float]],
        exclusion_radius: float,
        eps: Optional[float] = None,
    ) -> "DomainSpec":
        return cls(
            DomainShape.PUNCTURED_BOX,
            lo=tuple(map(float, lo)),
            hi=tuple(map(float, hi)),
            excluded=tuple(tuple(map(float, p)) for p in excluded),
            exclusion_radius=float(exclusion_radius),
            eps=eps,
        )

    @classmethod
    def predicate(
        cls,
        membership: Callable[[np.ndarray], bool],
        margin_fn: Callable[[np.ndarray], float],
        scale: float = 1.0,
        eps: Optional[float] = None,
    ) -> "DomainSpec":
        return cls(DomainShape.PREDICATE, membership=membership, margin_fn=margin_fn, predicate_scale=scale, eps=eps)

    # ---- géométrie ----------------------------------------------------------

    @property
    def scale(self) -> float:
        """Diamètre si borné, 1 sinon ; sert d'unité de longueur au domaine"""
        if self.shape is DomainShape.BALL:
            return 2.0 * self.radius
        if self.shape is DomainShape.PREDICATE:
            return self.predicate_scale
        width = np.asarray(self.hi) - np.asarray(self.lo)
        if not np.all(np.isfinite(width)):
            return 1.0
        return float(np.linalg.norm(width))

    @property
    def epsilon(self) -> float:
        """Marge ε_D en deçà de laquelle un point « quitte » le domaine"""
        if self.eps is not None:
            return self.eps
        eps = 1e-9 * (1.0 + self.scale)
        if self.shape is DomainShape.PUNCTURED_BOX:
            eps = max(eps, self.exclusion_radius)
        return eps

    def _box_margin(self, x: np.ndarray) -> float:
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return float(min(np.min(x - lo), np.min(hi - x)))

    def _excluded_margin(self, x: np.ndarray) -> float:
        if not self.excluded:
            return math.inf
        points = np.asarray(self.excluded)
        return float(np.min(np.linalg.norm(points - x, axis=1)) - self.exclusion_radius)

    def margin(self, x: Sequence[float]) -> float:
        """Distance (signée) à la frontière : > 0 dedans"""
        x = np.asarray(x, dtype=float)
        if self.shape is DomainShape.BOX:
            return self._box_margin(x)
        if self.shape is DomainShape.BALL:
            return float(self.radius - np.linalg.norm(x - np.asarray(self.center)))
        if self.shape is DomainShape.PUNCTURED_BOX:
            return min(self._box_margin(x), self._excluded_margin(x))
        if not self.membership(x):
            return -1.0
        return float(self.margin_fn(x))

    def contains(self, x: Sequence[float]) -> bool:
        return self.margin(x) > 0.0

    def nearest_boundary(self, x: Sequence[float]) -> BoundaryKind:
        """Morceau de frontière le plus proche : face extérieure ou point exclu"""
        x = np.asarray(x, dtype=float)
        if self.shape is DomainShape.PUNCTURED_BOX and self._excluded_margin(x) <= self._box_margin(x):
            return BoundaryKind.EXCLUDED
        if self.shape is DomainShape.PREDICATE:
            return BoundaryKind.EXCLUDED
        return BoundaryKind.OUTER

    def nearest_excluded(self, x: Sequence[float]) -> Optional[np.ndarray]:
        if not self.excluded:
            return None
        points = np.asarray(self.excluded)
        return points[int(np.argmin(np.linalg.norm(points - np.asarray(x), axis=1)))]

    def is_box_bounded(self, lo: Sequence[float], hi: Sequence[float]) -> bool:
        """La boîte gonflée de ε_D reste dans le domaine (« bornée dans D »)"""
        lo = np.asarray(lo, dtype=float) - self.epsilon
        hi = np.asarray(hi, dtype=float) + self.epsilon
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            return False
        if self.shape in (DomainShape.BOX, DomainShape.PUNCTURED_BOX):
            if np.any(lo <= np.asarray(self.lo)) or np.any(hi >= np.asarray(self.hi)):
                return False
            for p in self.excluded:
                nearest = np.clip(np.asarray(p), lo, hi)
                if np.linalg.norm(nearest - np.asarray(p)) <= self.exclusion_radius:
                    return False
            return True
        if self.shape is DomainShape.BALL:
            c = np.asarray(self.center)
            farthest = np.where(np.abs(lo - c) > np.abs(hi - c), lo, hi)
            return bool(np.linalg.norm(farthest - c) < self.radius)
        # prédicat : contrôle sur une grille 5^n de la boîte
        axes = [np.linspace(a, b, 5) for a, b in zip(lo, hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))
        return all(self.margin(p) > 0.0 for p in grid)

    @property
    def kind_label(self) -> str:
        return self.shape.value


# ============================================================================
# SOURCES DE JACOBIENNE
# ============================================================================

class JacobianKind(Enum):
    AUTODIFF = "autodiff"
    ANALYTIC = "analytic"
    FINITE_DIFFERENCE = "finite_difference"


@dataclass(frozen=True)
class JacobianSource:
    kind: JacobianKind
    analytic: Optional[Callable[[np.ndarray], np.ndarray]] = None
    step_scale: float = math.sqrt(MACHINE_EPS)

    @classmethod
    def autodiff(cls) -> "JacobianSource":
        return cls(JacobianKind.AUTODIFF)

    @classmethod
    def from_function(cls, jacobian: Callable[[np.ndarray], np.ndarray]) -> "JacobianSource":
        return cls(JacobianKind.ANALYTIC, analytic=jacobian)

    @classmethod
    def finite_difference(cls, h0: Optional[float] = None) -> "JacobianSource":
        return cls(JacobianKind.FINITE_DIFFERENCE, step_scale=math.sqrt(MACHINE_EPS) if h0 is None else h0)


# ============================================================================
# CARTE
# ============================================================================

@dataclass(frozen=True)
class MapSpec:
    """Carte f: D ⊆ R^n -> R^n avec sa source de jacobienne et son point base x0"""
    dim: int
    evaluate: Callable[[np.ndarray], np.ndarray]
    jacobian_source: JacobianSource
    domain: DomainSpec
    x0: Tuple[float, ...]
    label: str = ""
    asts: Optional[Tuple[expr.Node, ...]] = field(default=None, compare=False)
    # reconstruction picklable (sans argument) pour les workers en processus séparés
    recipe: Optional[Callable[[], "MapSpec"]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.dim < 1:
            raise DimensionMismatch(f"dimension must be positive, got {self.dim}")
        if len(self.x0) != self.dim:
            raise DimensionMismatch(f"x0 has {len(self.x0)} coordinates, expected {self.dim}")
        if self.domain.margin(self.x0) < self.domain.epsilon:
            raise DomainViolation(self.x0, f"base point {list(self.x0)} is not inside the domain with margin eps_D")

    @classmethod
    def from_expression(
        cls,
        src: str,
        dim: int,
        x0: Sequence[float],
        domain: Optional[DomainSpec] = None,
        label: str = "",
        jacobian_source: Optional[JacobianSource] = None,
    ) -> "MapSpec":
        """Construit une carte depuis le langage d'expressions (jacobienne AD par défaut)"""
        nodes = expr.parse(src, dim)
        return cls(
            dim=dim,
            evaluate=lambda x: expr.evaluate_all(nodes, x),
            jacobian_source=jacobian_source or JacobianSource.autodiff(),
            domain=domain or DomainSpec.whole(dim),
            x0=tuple(float(v) for v in x0),
            label=label or src,
            asts=nodes,
        )

    @property
    def base_point(self) -> np.ndarray:
        return np.asarray(self.x0, dtype=float)

    @property
    def y0(self) -> np.ndarray:
        return self(self.x0)

    @property
    def scale(self) -> float:
        return self.domain.scale

    def __call__(self, x: Sequence[float]) -> np.ndarray:
        """f(x) sans contrôle de domaine, avec contrôle de dimension et de finitude"""
        value = np.asarray(self.evaluate(np.asarray(x, dtype=float)), dtype=float).reshape(-1)
        if value.shape != (self.dim,):
            raise DimensionMismatch(f"evaluate returned {value.shape[0]} values, expected {self.dim}")
        if not np.all(np.isfinite(value)):
            raise NonFinite(f"f({np.asarray(x).tolist()})")
        return value

    def eval_checked(self, x: Sequence[float]) -> np.ndarray:
        """f(x) pour x dans le domaine"""
        if not self.domain.contains(x):
            raise DomainViolation(x)
        return self(x)


# ============================================================================
# JACOBIENNES
# ============================================================================

def _dual_sweep(m: MapSpec, x: np.ndarray) -> np.ndarray:
    """Différentiation directe d'une carte Python via un tableau d'objets Dual"""
    seeded = np.empty(m.dim, dtype=object)
    for i, v in enumerate(x):
        seeded[i] = expr.Dual.variable(float(v), i, m.dim)
    out = np.asarray(m.evaluate(seeded), dtype=object).reshape(-1)
    rows = []
    for item in out:
        if isinstance(item, expr.Dual):
            if not item.is_finite():
                raise NonFinite("derivative")
            rows.append(item.grad)
        else:
            rows.append(np.zeros(m.dim))
    return np.vstack(rows)


def _central_differences(m: MapSpec, x: np.ndarray) -> np.ndarray:
    h = m.jacobian_source.step_scale * (1.0 + float(np.linalg.norm(x)))
    columns = []
    for j in range(m.dim):
        step = np.zeros(m.dim)
        step[j] = h
        columns.append((m(x + step) - m(x - step)) / (2.0 * h))
    return np.column_stack(columns)


def eval_jacobian(m: MapSpec, x: Sequence[float]) -> np.ndarray:
    """Jf(x) depuis la source configurée (AD, analytique ou différences centrées)"""
    x = np.asarray(x, dtype=float)
    if not m.domain.contains(x):
        raise DomainViolation(x)
    source = m.jacobian_source
    if source.kind is JacobianKind.ANALYTIC:
        jac = np.asarray(source.analytic(x), dtype=float)
    elif source.kind is JacobianKind.AUTODIFF:
        jac = expr.ad_jacobian(m.asts, x) if m.asts is not None else _dual_sweep(m, x)
    else:
        jac = _central_differences(m, x)
    jac = jac.reshape(m.dim, m.dim) if jac.size == m.dim * m.dim else jac
    if jac.shape != (m.dim, m.dim):
        raise DimensionMismatch(f"Jacobian has shape {jac.shape}, expected {(m.dim, m.dim)}")
    if not np.all(np.isfinite(jac)):
        raise NonFinite(f"Jf({x.tolist()})")
    return jac


# ============================================================================
# ALGÈBRE LINÉAIRE
# ============================================================================

@dataclass(frozen=True)
class LinearSolve:
    """Facteurs LU pivotés par lignes (format scipy) et diagnostic de singularité"""
    lu: np.ndarray
    piv: np.ndarray
    singular: bool
    min_pivot: float
    threshold: float

    def solve(self, b: np.ndarray, trans: int = 0) -> np.ndarray:
        if self.singular:
            raise SingularJacobian()
        return lu_solve((self.lu, self.piv), np.asarray(b, dtype=float), trans=trans, check_finite=False)


def factorize(A: np.ndarray) -> LinearSolve:
    """Factorisation LU ; singulière si un pivot < 1e-12 · max norme de ligne"""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"matrix must be square, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NonFinite("matrix entries")
    row_norm = float(np.max(np.sum(np.abs(A), axis=1)))
    threshold = PIVOT_THRESHOLD * row_norm
    if row_norm == 0.0:
        return LinearSolve(A.copy(), np.arange(A.shape[0]), True, 0.0, 0.0)
    lu, piv = lu_factor(A, check_finite=False)
    min_pivot = float(np.min(np.abs(np.diag(lu))))
    return LinearSolve(lu, piv, min_pivot < threshold, min_pivot, threshold)


def solve_linear(A: np.ndarray, b: Sequence[float]) -> np.ndarray:
    """x tel que Ax = b ; lève SingularJacobian sous le seuil de pivot"""
    factors = factorize(A)
    if factors.singular:
        raise SingularJacobian(message=f"singular matrix (min pivot {factors.min_pivot:.3g} < {factors.threshold:.3g})")
    return factors.solve(np.asarray(b, dtype=float))


def inverse_norm_of(A: np.ndarray) -> float:
    """‖A⁻¹‖₂ = 1/σ_min(A), à partir de la factorisation LU stockée.

    Jusqu'à DIRECT_NORM_MAX_DIM : plus grande valeur propre de A⁻ᵀA⁻¹ (2n
    résolutions triangulaires). Au-delà : itération de puissance (deux
    résolutions par pas).
    """
    factors = factorize(A)
    if factors.singular:
        raise SingularJacobian(message="singular matrix in operator-norm estimate")
    n = factors.lu.shape[0]
    if n <= DIRECT_NORM_MAX_DIM:
        inverse = factors.solve(np.eye(n))
        gram = factors.solve(inverse, trans=1)
        return math.sqrt(float(np.max(eigvalsh(0.5 * (gram + gram.T)))))
    v = np.random.default_rng(0).standard_normal(n)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(POWER_MAX_ITER):
        w = factors.solve(v)
        u = factors.solve(w, trans=1)
        new_estimate = float(np.linalg.norm(u))
        if new_estimate == 0.0:
            break
        v = u / new_estimate
        if abs(new_estimate - estimate) <= POWER_RTOL * new_estimate:
            estimate = new_estimate
            break
        estimate = new_estimate
    return math.sqrt(estimate)


def inv_operator_norm(m: MapSpec, x: Sequence[float]) -> float:
    """‖Jf(x)⁻¹‖ en norme spectrale euclidienne"""
    try:
        return inverse_norm_of(eval_jacobian(m, x))
    except SingularJacobian:
        raise SingularJacobian(x)
