"""
Sondes de certification par échantillonnage et estimation du bassin d'attraction.

Aucune sonde n'est une preuve : chacune produit un « certificate (sampled) »,
c'est-à-dire une évidence numérique pour ou contre une hypothèse des
théorèmes d'inversion globale (critère en étoile, fonction de Lyapunov,
coercivité, croissance affine de ‖f'(x)⁻¹‖).
"""

import concurrent.futures
import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog
from scipy.stats import norm, qmc

from errors import ConfigError, DimensionMismatch, DomainViolation, NonFinite, SingularJacobian, WazError
from map_core import MapSpec, eval_jacobian, inv_operator_norm, solve_linear
from flow_engine import (
    DEFAULT_OPTIONS,
    OutcomeKind,
    TrackingOptions,
    Trajectory,
    integrate_flow,
)

logger = logging.getLogger(__name__)

CERTIFICATE_WORDING = "certificate (sampled)"
DEFAULT_RADII = (1.0, 2.0, 4.0, 8.0, 16.0)
DEFAULT_SPHERE_SAMPLES = 256
AFFINE_FIT_TOLERANCE = 1e-6
SUPERLINEAR_RATIO = 1.5
MAX_DEFAULT_WORKERS = 4

# ============================================================================
# ÉCHANTILLONNAGE (Sobol brouillé, graine fixe)
# ============================================================================

def _sobol(d: int, count: int, seed: int) -> np.ndarray:
    if count < 1:
        raise ConfigError(f"sample count must be positive, got {count}")
    m = max(0, math.ceil(math.log2(count)))
    points = qmc.Sobol(d, scramble=True, seed=seed).random_base2(m)[:count]
    return np.clip(points, 1e-12, 1.0 - 1e-12)


def _directions(u: np.ndarray) -> np.ndarray:
    g = norm.ppf(u)
    lengths = np.linalg.norm(g, axis=1, keepdims=True)
    lengths[lengths == 0.0] = 1.0
    return g / lengths


def sphere_points(dim: int, radius: float, count: int, seed: int = 0) -> np.ndarray:
    """Points quasi uniformes sur la sphère ‖x‖ = radius"""
    return radius * _directions(_sobol(dim, count, seed))


def ball_points(center: Sequence[float], radius: float, count: int, seed: int = 0) -> np.ndarray:
    """Points quasi uniformes dans la boule ouverte B(center, radius)"""
    center = np.asarray(center, dtype=float)
    n = center.shape[0]
    u = _sobol(n + 1, count, seed)
    radii = radius * u[:, n] ** (1.0 / n)
    return center + radii[:, None] * _directions(u[:, :n])


def box_points(lo: Sequence[float], hi: Sequence[float], count: int, seed: int = 0) -> np.ndarray:
    """Échantillons de la boîte, plus ses coins et son centre"""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = lo.shape[0]
    inner = qmc.scale(_sobol(n, count, seed), lo, hi)
    corners = np.array(np.meshgrid(*[[a, b] for a, b in zip(lo, hi)], indexing="ij")).reshape(n, -1).T
    return np.vstack([inner, corners, (lo + hi) / 2.0])


def _check_radii(radii: Sequence[float]) -> np.ndarray:
    s = np.asarray(radii, dtype=float)
    if s.ndim != 1 or s.size == 0 or np.any(s <= 0.0) or np.any(np.diff(s) <= 0.0):
        raise ConfigError(f"radii must be positive and strictly increasing, got {list(radii)}")
    return s


# ============================================================================
# CRITÈRE EN ÉTOILE
# ============================================================================

def star_criterion_value(m: MapSpec, x: Sequence[float]) -> float:
    """(x - x0) · f'(x)⁻¹ (f(x) - f(x0)) : l'opposé de la dérivée de ½‖x - x0‖² le long du flot"""
    x = np.asarray(x, dtype=float)
    fx = m.eval_checked(x)
    try:
        w = solve_linear(eval_jacobian(m, x), fx - m.y0)
    except SingularJacobian:
        raise SingularJacobian(x)
    return float(np.dot(x - m.base_point, w))


@dataclass(frozen=True)
class Violation:
    point: Tuple[float, ...]
    value: float

    def to_dict(self) -> dict:
        return {"point": list(self.point), "value": self.value}


@dataclass
class StarCriterionResult:
    r0: float
    n_samples: int
    evaluated: int
    violations: List[Violation]
    singular_count: int
    min_value: Optional[float]
    min_point: Optional[Tuple[float, ...]]

    @property
    def passed(self) -> bool:
        return not self.violations and self.singular_count == 0


def check_star_criterion(m: MapSpec, r0: float, n_samples: int, seed: int = 0) -> StarCriterionResult:
    """Évalue le critère en n_samples points de B(x0; r0) et liste les valeurs < -1e-12·échelle"""
    if not r0 > 0.0:
        raise ConfigError(f"r0 must be positive, got {r0}")
    if m.domain.margin(m.x0) < r0:
        raise DomainViolation(m.x0, f"ball of radius {r0} around x0 is not inside the domain")
    threshold = -1e-12 * m.scale
    violations: List[Violation] = []
    singular = 0
    evaluated = 0
    best_value, best_point = None, None
    for p in ball_points(m.x0, r0, n_samples, seed):
        try:
            value = star_criterion_value(m, p)
        except SingularJacobian:
            singular += 1
            continue
        evaluated += 1
        point = tuple(float(v) for v in p)
        if best_value is None or value < best_value:
            best_value, best_point = value, point
        if value < threshold:
            violations.append(Violation(point, value))
    if singular:
        logger.warning("star criterion: %d singular samples skipped", singular)
    logger.info("star criterion on B(x0, %g): %d samples, %d violations", r0, evaluated, len(violations))
    return StarCriterionResult(r0, n_samples, evaluated, violations, singular, best_value, best_point)


# ============================================================================
# FONCTIONS DE LYAPUNOV
# ============================================================================

def half_squared_distance(x0: Sequence[float]) -> Callable[[np.ndarray], float]:
    """k(x) = ½‖x - x0‖²"""
    center = np.asarray(x0, dtype=float)

    def k(x: np.ndarray) -> float:
        d = np.asarray(x, dtype=float) - center
        return 0.5 * float(np.dot(d, d))

    return k


@dataclass
class LyapunovResult:
    x_start: Tuple[float, ...]
    outcome: str
    n_samples: int
    monotone: bool
    first_violation: Optional[dict] = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class LyapunovReport:
    results: List[LyapunovResult]

    @property
    def all_monotone(self) -> bool:
        return all(r.monotone for r in self.results)

    def to_dict(self) -> dict:
        return {"all_monotone": self.all_monotone, "trajectories": [r.to_dict() for r in self.results]}


def check_lyapunov(
    m: MapSpec, k: Optional[Callable[[np.ndarray], float]], trajectories: Sequence[Trajectory]
) -> LyapunovReport:
    """t -> k(Φ(x,t)) doit décroître (au sens large, tolérance 1e-8(1+|k|)) sur chaque trajectoire"""
    k = k or half_squared_distance(m.x0)
    results = []
    for trajectory in trajectories:
        values = [k(s.x) for s in trajectory.samples]
        violation = None
        for i in range(1, len(values)):
            if values[i] > values[i - 1] + 1e-8 * (1.0 + abs(values[i - 1])):
                violation = {
                    "index": i,
                    "t": trajectory.samples[i].t,
                    "k_before": values[i - 1],
                    "k_after": values[i],
                }
                break
        results.append(LyapunovResult(
            tuple(float(v) for v in trajectory.x_start), trajectory.outcome.tag, len(values),
            violation is None, violation,
        ))
    report = LyapunovReport(results)
    logger.info("lyapunov: %d trajectories, all monotone=%s", len(results), report.all_monotone)
    return report


# ============================================================================
# COERCIVITÉ ET CROISSANCE DE ‖f'(x)⁻¹‖
# ============================================================================

class CoercivityVerdict(Enum):
    COERCIVE = "CoerciveEvidence"
    NOT_COERCIVE = "NotCoerciveEvidence"
    INCONCLUSIVE = "Inconclusive"


@dataclass
class CoercivityTrend:
    radii: List[float]
    minima: List[float]
    maxima: List[float]
    slope: Optional[float]
    verdict: CoercivityVerdict

    def to_dict(self) -> dict:
        return {
            "radii": self.radii,
            "minima": self.minima,
            "maxima": self.maxima,
            "slope": self.slope,
            "verdict": self.verdict.value,
        }


def _sphere_values(
    m: MapSpec, radius: float, n_samples: int, seed: int, fn: Callable[[np.ndarray], float]
) -> Tuple[List[float], int]:
    """Valeurs de fn sur la sphère (points hors domaine ignorés) et nombre de points singuliers"""
    values, singular = [], 0
    for p in sphere_points(m.dim, radius, n_samples, seed):
        if not m.domain.contains(p):
            continue
        try:
            values.append(fn(p))
        except SingularJacobian:
            singular += 1
        except NonFinite:
            continue
    if not values and not singular:
        raise DomainViolation(message=f"sphere of radius {radius} does not meet the domain")
    return values, singular


def _loglog_slope(x: np.ndarray, y: np.ndarray) -> Optional[float]:
    if x.size < 2 or np.any(y <= 0.0):
        return None
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def coercivity_probe(
    m: MapSpec, radii: Sequence[float] = DEFAULT_RADII, n_samples: int = DEFAULT_SPHERE_SAMPLES, seed: int = 0
) -> CoercivityTrend:
    """min et max de ‖f‖ sur des sphères ‖x‖ = R croissantes"""
    s = _check_radii(radii)
    minima, maxima = [], []
    for radius in s:
        values, _ = _sphere_values(m, radius, n_samples, seed, lambda p: float(np.linalg.norm(m(p))))
        minima.append(min(values))
        maxima.append(max(values))
    lows = np.asarray(minima)
    top = lows[lows.size // 2:]
    if lows.size >= 2 and np.all(np.diff(lows) > 0.0):
        verdict = CoercivityVerdict.COERCIVE
    elif lows.size >= 2 and top.size >= 2 and np.all(np.diff(top) < 0.0) and lows[-1] < lows[0]:
        verdict = CoercivityVerdict.NOT_COERCIVE
    else:
        verdict = CoercivityVerdict.INCONCLUSIVE
    trend = CoercivityTrend(s.tolist(), minima, maxima, _loglog_slope(s, lows), verdict)
    logger.info("coercivity: minima %s -> %s", [f"{v:.3g}" for v in minima], verdict.value)
    return trend


class GrowthVerdict(Enum):
    AFFINE_BOUND_HOLDS = "AffineBoundHolds"
    SUPERLINEAR_GROWTH = "SuperlinearGrowth"
    INCONCLUSIVE = "Inconclusive"


@dataclass
class GrowthModel:
    """g_i = max échantillonné de ‖f'(x)⁻¹‖ sur ‖x‖ = s_i, et la droite d'appui a + b·s"""
    radii: List[float]
    g: List[float]
    a: float
    b: float
    fit_quality: float
    verdict: GrowthVerdict
    slope: Optional[float] = None
    singular_count: int = 0

    def bound(self, s: float) -> float:
        return self.a + self.b * s

    def to_dict(self) -> dict:
        return {
            "a": self.a,
            "b": self.b,
            "verdict": self.verdict.value,
            "fit_quality": self.fit_quality,
            "radii": self.radii,
            "g": self.g,
            "slope": self.slope,
            "singular_count": self.singular_count,
        }


def fit_support_line(s: np.ndarray, g: np.ndarray) -> Tuple[float, float]:
    """a, b >= 0 minimisant Σ(a + b s_i) sous a + b s_i >= g_i"""
    result = linprog(
        c=[float(s.size), float(np.sum(s))],
        A_ub=-np.column_stack([np.ones_like(s), s]),
        b_ub=-g,
        bounds=[(0.0, None), (0.0, None)],
        method="highs",
    )
    if not result.success:
        logger.warning("support-line fit failed (%s); using the constant bound", result.message)
        return float(np.max(g)), 0.0
    a, b = (float(v) for v in result.x)
    return a, b


def growth_probe(
    m: MapSpec, radii: Sequence[float] = DEFAULT_RADII, n_samples: int = DEFAULT_SPHERE_SAMPLES, seed: int = 0
) -> GrowthModel:
    s = _check_radii(radii)
    g, singular = [], 0
    for radius in s:
        values, bad = _sphere_values(m, radius, n_samples, seed, lambda p: inv_operator_norm(m, p))
        singular += bad
        g.append(max(values) if values else math.inf)
    if singular:
        logger.warning("growth probe: %d singular Jacobian samples skipped", singular)
    g_arr = np.asarray(g)
    if not np.all(np.isfinite(g_arr)):
        return GrowthModel(s.tolist(), g, math.inf, math.inf, math.inf, GrowthVerdict.INCONCLUSIVE, None, singular)

    a, b = fit_support_line(s, g_arr)
    bound = a + b * s
    with np.errstate(divide="ignore", invalid="ignore"):
        excess = np.where(bound > 0.0, (g_arr - bound) / bound, np.where(g_arr > 0.0, math.inf, 0.0))
    fit_quality = max(0.0, float(np.max(excess)))

    mid = s.size // 2
    slope = None
    if s.size >= 2 and g_arr[mid] > 0.0 and g_arr[-1] > 0.0 and mid < s.size - 1:
        slope = float((math.log(g_arr[-1]) - math.log(g_arr[mid])) / (math.log(s[-1]) - math.log(s[mid])))
    if slope is not None and slope >= SUPERLINEAR_RATIO:
        verdict = GrowthVerdict.SUPERLINEAR_GROWTH
    elif fit_quality <= AFFINE_FIT_TOLERANCE:
        verdict = GrowthVerdict.AFFINE_BOUND_HOLDS
    else:
        verdict = GrowthVerdict.INCONCLUSIVE
    logger.info("growth probe: a=%.6g b=%.6g slope=%s -> %s", a, b, slope, verdict.value)
    return GrowthModel(s.tolist(), g, a, b, fit_quality, verdict, slope, singular)


@dataclass
class BoxGrowth:
    lo: List[float]
    hi: List[float]
    sup: float
    argmax: Optional[List[float]]
    n_samples: int
    singular_count: int

    @property
    def bounded(self) -> bool:
        return self.singular_count == 0

    def to_dict(self) -> dict:
        return {**dataclasses.asdict(self), "bounded": self.bounded}


def bounded_growth_on_box(
    m: MapSpec, lo: Sequence[float], hi: Sequence[float], n_samples: int = DEFAULT_SPHERE_SAMPLES, seed: int = 0
) -> BoxGrowth:
    """sup échantillonné de ‖f'(x)⁻¹‖ sur une boîte bornée dans D"""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.shape != (m.dim,) or hi.shape != (m.dim,):
        raise DimensionMismatch(f"box corners must have {m.dim} coordinates")
    if np.any(hi <= lo):
        raise ConfigError("box must satisfy lo < hi in every coordinate")
    if not m.domain.is_box_bounded(lo, hi):
        raise DomainViolation(message=f"box {lo.tolist()}..{hi.tolist()} is not bounded in the domain")
    points = box_points(lo, hi, n_samples, seed)
    best, argmax, singular = 0.0, None, 0
    for p in points:
        try:
            value = inv_operator_norm(m, p)
        except SingularJacobian:
            singular += 1
            continue
        if value > best:
            best, argmax = value, p.tolist()
    if singular:
        logger.warning("box growth: %d singular samples, boundedness of f'(x)^-1 is refuted on this box", singular)
    return BoxGrowth(lo.tolist(), hi.tolist(), best, argmax, len(points), singular)


# ============================================================================
# BASSIN D'ATTRACTION
# ============================================================================

class CellCode(Enum):
    IN_BASIN = "InBasin"
    OUT = "Out"
    UNDETERMINED = "Undetermined"
    OUTSIDE_DOMAIN = "OutsideDomain"


OUT_KINDS = frozenset([OutcomeKind.FINITE_LIFE, OutcomeKind.LEFT_DOMAIN, OutcomeKind.CONVERGED_ELSEWHERE])


@dataclass(frozen=True)
class GridSpec:
    """Grille plane ; les cellules sont repérées par leur centre"""
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    res: int

    def __post_init__(self):
        if self.res < 1:
            raise ConfigError(f"grid resolution must be positive, got {self.res}")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ConfigError("grid bounds must satisfy min < max on both axes")

    @classmethod
    def from_bounds(cls, bounds: Sequence[float], res: int) -> "GridSpec":
        if len(bounds) != 4:
            raise ConfigError("bounds must be xmin,xmax,ymin,ymax")
        return cls(*(float(b) for b in bounds), res=int(res))

    def center(self, i: int, j: int) -> Tuple[float, float]:
        return (
            self.x_min + (i + 0.5) * (self.x_max - self.x_min) / self.res,
            self.y_min + (j + 0.5) * (self.y_max - self.y_min) / self.res,
        )

    @property
    def cell_count(self) -> int:
        return self.res * self.res


@dataclass(frozen=True)
class BasinCell:
    i: int
    j: int
    x: Tuple[float, float]
    code: CellCode
    outcome: Optional[str] = None
    note: str = ""


@dataclass
class BasinGrid:
    grid: GridSpec
    x0: Tuple[float, ...]
    cells: List[BasinCell]

    def cell(self, i: int, j: int) -> BasinCell:
        return self.cells[j * self.grid.res + i]

    def counts(self) -> Dict[str, int]:
        totals = {code.value: 0 for code in CellCode}
        for c in self.cells:
            totals[c.code.value] += 1
        return totals

    def outcome_counts(self) -> Dict[str, int]:
        totals: Dict[str, int] = {}
        for c in self.cells:
            if c.outcome is not None:
                totals[c.outcome] = totals.get(c.outcome, 0) + 1
        return dict(sorted(totals.items()))


def classify_cell(m: MapSpec, i: int, j: int, x: Tuple[float, float], opts: TrackingOptions) -> BasinCell:
    """Classe un centre de cellule d'après l'issue de integrate_flow(t_end = +∞)"""
    if not m.domain.contains(x):
        return BasinCell(i, j, x, CellCode.OUTSIDE_DOMAIN)
    try:
        trajectory = integrate_flow(m, x, math.inf, opts)
    except WazError as e:
        logger.warning("cell (%d, %d) at %s undetermined: %s", i, j, x, e)
        return BasinCell(i, j, x, CellCode.UNDETERMINED, None, f"{e.error_type}: {e}")
    kind = trajectory.outcome.kind
    if kind is OutcomeKind.CONVERGED_TO_BASE:
        code = CellCode.IN_BASIN
    elif kind in OUT_KINDS:
        code = CellCode.OUT
    else:
        code = CellCode.UNDETERMINED
    return BasinCell(i, j, x, code, kind.value, trajectory.outcome.note)


def resolve_workers(requested: Optional[int] = None) -> int:
    """Nombre de processus : argument explicite, sinon WAZ_THREADS, sinon min(cpu, 4)"""
    default = min(os.cpu_count() or 1, MAX_DEFAULT_WORKERS)
    if requested is not None:
        return max(1, int(requested))
    raw = os.getenv("WAZ_THREADS")
    if raw is None:
        return default
    try:
        value = int(raw)
        if value < 1:
            raise ValueError(raw)
    except ValueError:
        logger.warning("invalid WAZ_THREADS=%r, using %d workers", raw, default)
        return default
    return value


def _recheck(m: MapSpec, cell: BasinCell, opts: TrackingOptions) -> BasinCell:
    if cell.code not in (CellCode.IN_BASIN, CellCode.OUT):
        return cell
    tighter = dataclasses.replace(opts, dt_min=opts.dt_min / 10.0)
    again = classify_cell(m, cell.i, cell.j, cell.x, tighter)
    if again.code is cell.code:
        return cell
    return BasinCell(cell.i, cell.j, cell.x, CellCode.UNDETERMINED, cell.outcome,
                     f"classification flips under dt_min/10 ({cell.code.value} -> {again.code.value})")


def _classify_indices(
    m: MapSpec, grid: GridSpec, opts: TrackingOptions, recheck: bool, indices: Sequence[int]
) -> List[BasinCell]:
    cells = []
    for index in indices:
        j, i = divmod(index, grid.res)
        cell = classify_cell(m, i, j, grid.center(i, j), opts)
        if recheck:
            cell = _recheck(m, cell, opts)
        logger.debug("cell (%d, %d): %s", i, j, cell.code.value)
        cells.append(cell)
    return cells


def _classify_chunk(
    recipe: Callable[[], MapSpec], grid: GridSpec, opts: TrackingOptions, recheck: bool, bounds: Tuple[int, int]
) -> List[BasinCell]:
    """Point d'entrée d'un worker : reconstruit la carte et classe les cellules [start, stop)"""
    return _classify_indices(recipe(), grid, opts, recheck, range(*bounds))


def estimate_basin(
    m: MapSpec,
    grid: GridSpec,
    opts: Optional[TrackingOptions] = None,
    workers: Optional[int] = None,
    recheck: bool = False,
) -> BasinGrid:
    """Rastérise le bassin de x0 ; l'ordre des cellules ne dépend pas de l'ordonnancement

    Une ligne de la grille par tâche ; chaque processus reconstruit la carte à
    partir de m.recipe. Sans recette (carte construite à la main), le calcul
    reste séquentiel.
    """
    if m.dim != 2:
        raise DimensionMismatch(f"basin rasters are planar, map has dimension {m.dim}")
    opts = dataclasses.replace(opts or DEFAULT_OPTIONS, keep_samples=False)
    workers = resolve_workers(workers)
    if workers > 1 and m.recipe is None:
        logger.warning("map %r has no picklable recipe; classifying %d cells serially", m.label, grid.cell_count)
        workers = 1

    if workers == 1:
        cells = _classify_indices(m, grid, opts, recheck, range(grid.cell_count))
    else:
        rows = [(j * grid.res, (j + 1) * grid.res) for j in range(grid.res)]
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as executor:
            futures = [executor.submit(_classify_chunk, m.recipe, grid, opts, recheck, row) for row in rows]
            cells = [cell for f in futures for cell in f.result()]

    basin = BasinGrid(grid, tuple(m.x0), cells)
    logger.info("basin %dx%d with %d workers: %s", grid.res, grid.res, workers, basin.counts())
    return basin


def basin_image_gap(m: MapSpec, basin: BasinGrid) -> Optional[float]:
    """min ‖f(x) - y0‖ sur les cellules Out voisines (4-connexité) d'une cellule InBasin"""
    res = basin.grid.res
    y0 = m.y0
    gap = None
    for c in basin.cells:
        if c.code is not CellCode.OUT:
            continue
        neighbours = [(c.i + di, c.j + dj) for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1))]
        if not any(0 <= i < res and 0 <= j < res and basin.cell(i, j).code is CellCode.IN_BASIN
                   for i, j in neighbours):
            continue
        try:
            distance = float(np.linalg.norm(m(c.x) - y0))
        except NonFinite:
            continue
        gap = distance if gap is None else min(gap, distance)
    return gap


# ============================================================================
# TRAJECTOIRES PIÉGÉES
# ============================================================================

@dataclass(frozen=True)
class TrappedDeath:
    """Trajectoire restée dans la boîte mais terminée en temps fini"""
    x_start: Tuple[float, ...]
    outcome: str
    time: float
    point: Optional[Tuple[float, ...]]

    def to_dict(self) -> dict:
        return {
            "x_start": list(self.x_start),
            "outcome": self.outcome,
            "time": self.time,
            "point": None if self.point is None else list(self.point),
        }


@dataclass
class TrappedReport:
    lo: List[float]
    hi: List[float]
    n_starts: int
    trapped: int
    deaths: List[TrappedDeath]
    bounded_in_domain: bool

    @property
    def refutes(self) -> bool:
        # dans un compact de D, une trajectoire vit indéfiniment
        return self.bounded_in_domain and bool(self.deaths)

    def to_dict(self) -> dict:
        return {
            "lo": self.lo,
            "hi": self.hi,
            "n_starts": self.n_starts,
            "trapped": self.trapped,
            "deaths": [d.to_dict() for d in self.deaths],
            "bounded_in_domain": self.bounded_in_domain,
            "refutes": self.refutes,
        }


DEATH_KINDS = frozenset([OutcomeKind.FINITE_LIFE, OutcomeKind.STEP_COLLAPSE])


def check_trapped_trajectories(
    m: MapSpec,
    lo: Sequence[float],
    hi: Sequence[float],
    n_starts: int = 64,
    seed: int = 0,
    opts: TrackingOptions = DEFAULT_OPTIONS,
) -> TrappedReport:
    """Suit le flot depuis des points de la boîte et relève les trajectoires
    qui n'en sortent jamais et meurent pourtant (FiniteLife, StepCollapse).

    Sur une boîte bornée dans D, une telle mort contredit le suivi numérique.
    Une boîte qui touche le bord de D peut en contenir légitimement.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.shape != (m.dim,) or hi.shape != (m.dim,):
        raise DimensionMismatch(f"box corners must have {m.dim} coordinates")
    if np.any(hi <= lo):
        raise ConfigError("box must satisfy lo < hi in every coordinate")
    opts = dataclasses.replace(opts, keep_samples=True)
    tried, trapped = 0, 0
    deaths: List[TrappedDeath] = []
    for p in box_points(lo, hi, n_starts, seed + 2):
        if not m.domain.contains(p):
            continue
        tried += 1
        try:
            trajectory = integrate_flow(m, p, math.inf, opts)
        except WazError as e:
            logger.warning("trapped check: start %s skipped: %s", p.tolist(), e)
            continue
        points = trajectory.points
        if not (np.all(points >= lo) and np.all(points <= hi)):
            continue
        trapped += 1
        outcome = trajectory.outcome
        if outcome.kind in DEATH_KINDS:
            deaths.append(TrappedDeath(tuple(float(v) for v in p), outcome.tag, outcome.time, outcome.point))
    report = TrappedReport(lo.tolist(), hi.tolist(), tried, trapped, deaths, m.domain.is_box_bounded(lo, hi))
    if report.refutes:
        logger.warning("trapped check: %d trajectories die inside a box bounded in the domain", len(deaths))
    logger.info("trapped check on %s..%s: %d starts, %d trapped, %d deaths",
                report.lo, report.hi, tried, trapped, len(deaths))
    return report


# ============================================================================
# RAPPORT
# ============================================================================

@dataclass
class CertReport:
    label: str
    x0: Tuple[float, ...]
    seed: int
    star: StarCriterionResult
    growth: GrowthModel
    coercivity: CoercivityTrend
    box_growth: Optional[BoxGrowth] = None
    lyapunov: Optional[LyapunovReport] = None
    trapped: Optional[TrappedReport] = None
    flags: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "map": self.label,
            "x0": list(self.x0),
            "seed": self.seed,
            "criterion_r0": self.star.r0,
            "criterion_samples": self.star.evaluated,
            "criterion_singular": self.star.singular_count,
            "criterion_min": None if self.star.min_value is None else
            {"point": list(self.star.min_point), "value": self.star.min_value},
            "criterion_violations": [v.to_dict() for v in self.star.violations],
            "growth_fit": self.growth.to_dict(),
            "coercivity_trend": self.coercivity.to_dict(),
            "box_growth": None if self.box_growth is None else self.box_growth.to_dict(),
            "lyapunov": None if self.lyapunov is None else self.lyapunov.to_dict(),
            "trapped_trajectories": None if self.trapped is None else self.trapped.to_dict(),
            "flags": self.flags,
        }


def narrative_flags(
    star: StarCriterionResult,
    growth: GrowthModel,
    coercivity: CoercivityTrend,
    box: Optional[BoxGrowth],
    trapped: Optional[TrappedReport] = None,
) -> Dict[str, object]:
    singular = star.singular_count + growth.singular_count + (box.singular_count if box else 0)
    flags = {
        "hadamard_caccioppoli_evidence": coercivity.verdict is CoercivityVerdict.COERCIVE and singular == 0,
        "hadamard_levy_evidence": growth.verdict is GrowthVerdict.AFFINE_BOUND_HOLDS,
        "star_shaped_evidence": not star.violations,
    }
    narrative = []
    if flags["hadamard_caccioppoli_evidence"]:
        narrative.append(f"coercive with invertible derivative on all samples: global injectivity, {CERTIFICATE_WORDING}")
    if flags["hadamard_levy_evidence"]:
        narrative.append(
            f"|f'(x)^-1| <= {growth.a:.6g} + {growth.b:.6g}|x|: global diffeomorphism, {CERTIFICATE_WORDING}")
    if flags["star_shaped_evidence"]:
        narrative.append(f"f(B(x0, {star.r0:g})) star-shaped about f(x0), {CERTIFICATE_WORDING}")
    else:
        narrative.append(f"{len(star.violations)} star-criterion violations in B(x0, {star.r0:g})")
    if trapped is not None:
        flags["trapped_death_refutation"] = trapped.refutes
        if trapped.refutes:
            narrative.append(f"{len(trapped.deaths)} trajectories die inside a box bounded in the domain")
    flags["wording"] = CERTIFICATE_WORDING
    flags["narrative"] = narrative
    return flags


def build_report(
    m: MapSpec,
    r0: float,
    n_samples: int = 10_000,
    seed: int = 0,
    radii: Sequence[float] = DEFAULT_RADII,
    sphere_samples: int = DEFAULT_SPHERE_SAMPLES,
    box: Optional[Tuple[Sequence[float], Sequence[float]]] = None,
    lyapunov_starts: int = 0,
    opts: TrackingOptions = DEFAULT_OPTIONS,
    trapped_starts: int = 0,
) -> CertReport:
    """Enchaîne toutes les sondes ; la boîte par défaut est le cube de demi-côté r0/2 autour de x0"""
    star = check_star_criterion(m, r0, n_samples, seed)
    growth = growth_probe(m, radii, sphere_samples, seed)
    coercivity = coercivity_probe(m, radii, sphere_samples, seed)

    if box is None:
        lo, hi = m.base_point - r0 / 2.0, m.base_point + r0 / 2.0
        box_growth = bounded_growth_on_box(m, lo, hi, sphere_samples, seed) \
            if m.domain.is_box_bounded(lo, hi) else None
    else:
        lo, hi = box
        box_growth = bounded_growth_on_box(m, lo, hi, sphere_samples, seed)

    lyapunov = None
    if lyapunov_starts > 0:
        starts = ball_points(m.x0, r0, lyapunov_starts, seed + 1)
        trajectories = [integrate_flow(m, p, math.inf, opts) for p in starts]
        lyapunov = check_lyapunov(m, None, trajectories)

    trapped = None
    if trapped_starts > 0:
        trapped = check_trapped_trajectories(m, lo, hi, trapped_starts, seed, opts)

    flags = narrative_flags(star, growth, coercivity, box_growth, trapped)
    return CertReport(m.label, tuple(m.x0), seed, star, growth, coercivity, box_growth, lyapunov, trapped, flags)
