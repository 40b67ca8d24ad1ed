"""
Suivi du flot auxiliaire Φ et des relèvements maximaux de segments.

Le flot est défini implicitement par l'invariant f(Φ(x,t)) = Ψ(f(x),t) avec
Ψ(y,t) = y0 + e^{-t}(y - y0). Le suivi est un prédicteur-correcteur : un pas
d'Euler sur le champ F(x) = -f'(x)^{-1}(f(x) - y0), puis Newton amorti sur la
cible algébrique Ψ(f(x_start), t). Le même moteur relève le segment
s -> f(x_a) + s(y_b - f(x_a)) pour résoudre f(x) = y.

Chaque appel possède son état : plusieurs suivis sur une même MapSpec
peuvent tourner en parallèle.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import DomainViolation, NonFinite, SingularJacobian
from map_core import BoundaryKind, DomainSpec, LinearSolve, MapSpec, eval_jacobian, factorize

logger = logging.getLogger(__name__)

# rapport de résidus au-delà duquel la jacobienne du correcteur est réévaluée
CHORD_CONTRACTION = 0.5

# ============================================================================
# OPTIONS ET TYPES
# ============================================================================

@dataclass(frozen=True)
class TrackingOptions:
    """Paramètres du prédicteur-correcteur (valeurs par défaut documentées dans --help)"""
    dt0: float = 0.1
    dt_min: float = 1e-12
    dt_max: float = 2.0
    max_newton: int = 8
    grow_after: int = 3
    budget: int = 100_000
    horizon: float = 50.0
    arc_max: float = 0.25
    blowup_factor: float = 1e6
    tol_conv: Optional[float] = None
    eta_inv: Optional[float] = None
    keep_samples: bool = True

    def convergence_tolerance(self, m: MapSpec) -> float:
        if self.tol_conv is not None:
            return self.tol_conv
        return 1e-8 * (1.0 + float(np.linalg.norm(m.base_point)))

    def invariant_tolerance(self, image_distance: float) -> float:
        if self.eta_inv is not None:
            return self.eta_inv
        return 1e-9 * (1.0 + image_distance)


DEFAULT_OPTIONS = TrackingOptions()


class OutcomeKind(Enum):
    """Cycle de vie d'un suivi"""
    CONVERGED_TO_BASE = "ConvergedToBase"
    CONVERGED_ELSEWHERE = "ConvergedElsewhere"
    FINITE_LIFE = "FiniteLife"
    LEFT_DOMAIN = "LeftDomain"
    STEP_COLLAPSE = "StepCollapse"
    BUDGET_EXHAUSTED = "BudgetExhausted"
    HORIZON_REACHED = "HorizonReached"


@dataclass(frozen=True)
class Outcome:
    kind: OutcomeKind
    time: float
    point: Optional[Tuple[float, ...]] = None
    note: str = ""

    @property
    def tag(self) -> str:
        return self.kind.value

    def to_dict(self) -> dict:
        return {
            "tag": self.tag,
            "time": self.time,
            "point": None if self.point is None else list(self.point),
            "note": self.note,
        }


@dataclass(frozen=True)
class Sample:
    """t est le temps du flot, ou le paramètre s d'un relèvement"""
    t: float
    x: np.ndarray
    residual: float


@dataclass
class Trajectory:
    x_start: np.ndarray
    samples: List[Sample]
    outcome: Outcome
    steps: int = 0
    rejected: int = 0

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])

    @property
    def points(self) -> np.ndarray:
        return np.vstack([s.x for s in self.samples])

    @property
    def residuals(self) -> np.ndarray:
        return np.array([s.residual for s in self.samples])

    @property
    def last(self) -> Sample:
        return self.samples[-1]


@dataclass
class LiftOutcome:
    x_start: np.ndarray
    y_target: np.ndarray
    samples: List[Sample]
    complete: bool
    s_max: float
    failure: Optional[Outcome] = None
    steps: int = 0
    rejected: int = 0

    @property
    def parameters(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])

    @property
    def points(self) -> np.ndarray:
        return np.vstack([s.x for s in self.samples])

    @property
    def residuals(self) -> np.ndarray:
        return np.array([s.residual for s in self.samples])

    @property
    def last(self) -> Sample:
        return self.samples[-1]


@dataclass(frozen=True)
class RayFlow:
    """Ψ(y,t) = y0 + e^{-t}(y - y0) : demi-droites vers y0 à paramètre exponentiel"""
    y0: np.ndarray

    def __call__(self, y: Sequence[float], t: float) -> np.ndarray:
        return psi(y, t, self.y0)


def psi(y: Sequence[float], t: float, y0: Sequence[float]) -> np.ndarray:
    y0 = np.asarray(y0, dtype=float)
    return y0 + math.exp(-t) * (np.asarray(y, dtype=float) - y0)


# ============================================================================
# CHAMP ET CORRECTEUR
# ============================================================================

def flow_field(m: MapSpec, x: Sequence[float]) -> np.ndarray:
    """F(x) = -f'(x)^{-1}(f(x) - y0)"""
    x = np.asarray(x, dtype=float)
    fx = m.eval_checked(x)
    return -_factors_at(m, x).solve(fx - m.y0)


def _factors_at(m: MapSpec, x: np.ndarray) -> LinearSolve:
    factors = factorize(eval_jacobian(m, x))
    if factors.singular:
        raise SingularJacobian(x)
    return factors


def _damped_step(
    m: MapSpec, x: np.ndarray, delta: np.ndarray, target: np.ndarray, res: float
) -> Optional[Tuple[np.ndarray, np.ndarray, np.ndarray, float]]:
    """Recherche linéaire λ = 1, 1/2, ..., 1/16 ; premier essai qui fait baisser le résidu"""
    lam = 1.0
    while lam >= 1.0 / 16.0:
        trial = x + lam * delta
        if m.domain.margin(trial) > 0.0:
            try:
                f_trial = m(trial)
            except NonFinite:
                f_trial = None
            if f_trial is not None:
                r_trial = f_trial - target
                res_trial = float(np.linalg.norm(r_trial))
                if res_trial < res:
                    return trial, f_trial, r_trial, res_trial
        lam *= 0.5
    return None


def _newton_correct(
    m: MapSpec,
    x: np.ndarray,
    target: np.ndarray,
    eta: float,
    opts: TrackingOptions,
    factors: Optional[LinearSolve] = None,
) -> Optional[Tuple[np.ndarray, float, np.ndarray]]:
    """Newton amorti vers f(x) = target ; None si échec (itérations ou stagnation)

    factors : LU d'une jacobienne voisine (celle du prédicteur). Elle sert de
    corde tant que le rapport de deux résidus successifs reste sous
    CHORD_CONTRACTION ; sinon, et pour l'itération de polissage, la jacobienne
    est réévaluée au point courant.
    """
    try:
        fx = m(x)
    except NonFinite:
        return None
    r = fx - target
    res = float(np.linalg.norm(r))
    polished = False
    current = False
    iterations = 0
    while iterations < opts.max_newton:
        if res <= eta and polished:
            break
        if factors is None or (res <= eta and not current):
            try:
                factors = _factors_at(m, x)
            except (SingularJacobian, NonFinite, DomainViolation):
                if res <= eta:
                    break
                return None
            current = True
        moved = _damped_step(m, x, factors.solve(-r), target, res)
        if moved is None:
            if current:
                if res <= eta:
                    break
                return None
            factors = None
            continue
        if moved[3] > CHORD_CONTRACTION * res:
            factors = None
        iterations += 1
        # une itération de plus après convergence ramène le résidu à l'arrondi
        polished = res <= eta
        x, fx, r, res = moved
        current = False
    if res > eta:
        return None
    return x, res, fx


def _classify_collapse(m: MapSpec, x: np.ndarray, speed: float, t: float, opts: TrackingOptions) -> Outcome:
    """Effondrement du pas : durée de vie finie, sortie du domaine, ou échec numérique"""
    point = tuple(float(v) for v in x)
    if speed > opts.blowup_factor * m.scale:
        return Outcome(OutcomeKind.FINITE_LIFE, t, point, f"field norm {speed:.3g} exploded")
    margin = m.domain.margin(x)
    if margin < m.domain.epsilon:
        if m.domain.nearest_boundary(x) is BoundaryKind.OUTER:
            return Outcome(OutcomeKind.LEFT_DOMAIN, t, point, f"margin {margin:.3g} to outer boundary")
        return Outcome(OutcomeKind.FINITE_LIFE, t, point, f"margin {margin:.3g} to excluded set")
    return Outcome(OutcomeKind.STEP_COLLAPSE, t, point, "step size collapsed away from the boundary")


def _record(samples: List[Sample], sample: Sample, keep: bool) -> None:
    if keep or len(samples) < 2:
        samples.append(sample)
    else:
        samples[-1] = sample


# ============================================================================
# FLOT AUXILIAIRE
# ============================================================================

def integrate_flow(
    m: MapSpec,
    x_start: Sequence[float],
    t_end: float = math.inf,
    opts: TrackingOptions = DEFAULT_OPTIONS,
) -> Trajectory:
    """Suit t -> Φ(x_start, t) en imposant f(x_k) = Ψ(f(x_start), t_k) à chaque pas"""
    x = np.asarray(x_start, dtype=float).copy()
    if not m.domain.contains(x):
        raise DomainViolation(x)
    if not t_end > 0.0:
        raise ValueError(f"t_end must be positive, got {t_end}")
    y0 = m.y0
    x0 = m.base_point
    fx = m(x)
    d = fx - y0
    eta = opts.invariant_tolerance(float(np.linalg.norm(d)))
    tol = opts.convergence_tolerance(m)
    unbounded = math.isinf(t_end)
    horizon = opts.horizon if unbounded else t_end

    samples: List[Sample] = [Sample(0.0, x.copy(), 0.0)]
    t = 0.0
    dt = opts.dt0
    streak = 0
    steps = 0
    rejected = 0

    def finish(outcome: Outcome) -> Trajectory:
        logger.debug("flow from %s: %s at t=%.6g (%d steps, %d rejected)",
                     np.asarray(x_start).tolist(), outcome.tag, outcome.time, steps, rejected)
        return Trajectory(np.asarray(x_start, dtype=float), samples, outcome, steps, rejected)

    factors = None
    while True:
        if factors is None:
            factors = _factors_at(m, x)
            F = -factors.solve(fx - y0)
        speed = float(np.linalg.norm(F))
        here = tuple(float(v) for v in x)
        at_base = float(np.linalg.norm(x - x0)) <= tol and float(np.linalg.norm(fx - y0)) <= tol
        if unbounded:
            if at_base:
                return finish(Outcome(OutcomeKind.CONVERGED_TO_BASE, t, here))
            if float(np.linalg.norm(fx - y0)) <= tol and speed <= tol \
                    and float(np.linalg.norm(x - x0)) > 100.0 * tol:
                return finish(Outcome(OutcomeKind.CONVERGED_ELSEWHERE, t, here, "image reached y0 away from x0"))
            if t >= horizon:
                return finish(Outcome(OutcomeKind.BUDGET_EXHAUSTED, t, here, "time horizon exceeded"))
        elif horizon - t <= opts.dt_min:
            kind = OutcomeKind.CONVERGED_TO_BASE if at_base else OutcomeKind.HORIZON_REACHED
            return finish(Outcome(kind, t, here))
        if steps >= opts.budget:
            return finish(Outcome(OutcomeKind.BUDGET_EXHAUSTED, t, here, "step budget exhausted"))

        step = min(dt, opts.dt_max)
        if speed > 0.0:
            step = min(step, opts.arc_max / speed)
        if not unbounded:
            step = min(step, horizon - t)
        if step < opts.dt_min:
            return finish(_classify_collapse(m, x, speed, t, opts))

        t_new = horizon if (not unbounded and step == horizon - t) else t + step
        target = y0 + math.exp(-t_new) * d
        predicted = x + step * F
        steps += 1
        corrected = None
        if m.domain.margin(predicted) > 0.0:
            corrected = _newton_correct(m, predicted, target, eta, opts, factors)
        if corrected is None:
            rejected += 1
            streak = 0
            dt = step / 2.0
            continue

        x, residual, fx = corrected
        factors = None
        t = t_new
        _record(samples, Sample(t, x.copy(), residual), opts.keep_samples)
        streak += 1
        if streak >= opts.grow_after:
            dt = min(2.0 * dt, opts.dt_max)
            streak = 0


def phi(m: MapSpec, x: Sequence[float], t: float, opts: TrackingOptions = DEFAULT_OPTIONS) -> Optional[np.ndarray]:
    """Φ(x, t) pour t > 0 fini ; None si (x, t) n'est pas dans le domaine du flot"""
    trajectory = integrate_flow(m, x, t, opts)
    if trajectory.outcome.kind in (OutcomeKind.HORIZON_REACHED, OutcomeKind.CONVERGED_TO_BASE) \
            and abs(trajectory.last.t - t) <= opts.dt_min:
        return trajectory.last.x
    return None


def finite_life_bound(m: MapSpec, x: Sequence[float], eps: float) -> float:
    """Majorant ln(‖f(x) - y0‖ / ε) de la durée de vie d'un point du bord du bassin"""
    distance = float(np.linalg.norm(m(x) - m.y0))
    if eps <= 0.0:
        return math.inf
    return max(0.0, math.log(distance / eps)) if distance > 0.0 else 0.0


# ============================================================================
# RELÈVEMENT DE SEGMENTS
# ============================================================================

def lift_segment(
    m: MapSpec,
    x_a: Sequence[float],
    y_b: Sequence[float],
    opts: TrackingOptions = DEFAULT_OPTIONS,
) -> LiftOutcome:
    """Relève ℓ(s) = f(x_a) + s(y_b - f(x_a)), s ∈ [0,1], par prédicteur-correcteur"""
    x = np.asarray(x_a, dtype=float).copy()
    if not m.domain.contains(x):
        raise DomainViolation(x)
    y_b = np.asarray(y_b, dtype=float)
    y_a = m(x)
    v = y_b - y_a
    eta = opts.invariant_tolerance(float(np.linalg.norm(v)))
    eta_final = min(eta, opts.convergence_tolerance(m))

    samples: List[Sample] = [Sample(0.0, x.copy(), 0.0)]
    s = 0.0
    ds = opts.dt0
    streak = 0
    steps = 0
    rejected = 0

    def finish(failure: Optional[Outcome]) -> LiftOutcome:
        complete = failure is None
        logger.debug("lift from %s: %s at s=%.6g", np.asarray(x_a).tolist(),
                     "complete" if complete else failure.tag, s)
        return LiftOutcome(np.asarray(x_a, dtype=float), y_b, samples, complete,
                           1.0 if complete else s, failure, steps, rejected)

    if not np.any(v):
        _record(samples, Sample(1.0, x.copy(), 0.0), True)
        s = 1.0
        return finish(None)

    factors = None
    while True:
        if steps >= opts.budget:
            return finish(Outcome(OutcomeKind.BUDGET_EXHAUSTED, s, tuple(map(float, x)), "step budget exhausted"))
        if factors is None:
            factors = _factors_at(m, x)
            tangent = factors.solve(v)
        speed = float(np.linalg.norm(tangent))
        remaining = 1.0 - s
        step = min(ds, remaining)
        if speed > 0.0:
            step = min(step, opts.arc_max / speed)
        if remaining <= opts.dt_min:
            step = remaining
        elif step < opts.dt_min:
            return finish(_classify_collapse(m, x, speed, s, opts))

        last_step = step >= remaining
        s_new = 1.0 if last_step else s + step
        target = y_b if last_step else y_a + s_new * v
        predicted = x + (s_new - s) * tangent
        steps += 1
        corrected = None
        if m.domain.margin(predicted) > 0.0:
            corrected = _newton_correct(m, predicted, target, eta_final if last_step else eta, opts, factors)
        if corrected is None:
            rejected += 1
            if last_step and remaining <= opts.dt_min:
                # pas final déjà au minimum
                return finish(_classify_collapse(m, x, speed, s, opts))
            streak = 0
            ds = step / 2.0
            continue

        x, residual, _ = corrected
        factors = None
        s = s_new
        _record(samples, Sample(s, x.copy(), residual), opts.keep_samples)
        if last_step:
            return finish(None)
        streak += 1
        if streak >= opts.grow_after:
            ds = 2.0 * ds
            streak = 0


@dataclass
class Inversion:
    """Résultat de invert_at : un antécédent, ou l'échec du relèvement depuis x0"""
    x: Optional[np.ndarray]
    residual: Optional[float]
    lift: LiftOutcome

    @property
    def ok(self) -> bool:
        return self.x is not None

    @property
    def failure(self) -> Optional[Outcome]:
        return self.lift.failure


def invert_at(m: MapSpec, y: Sequence[float], opts: TrackingOptions = DEFAULT_OPTIONS) -> Inversion:
    """Résout f(x) = y en relevant le segment [y0, y] depuis x0"""
    lift = lift_segment(m, m.base_point, y, opts)
    if not lift.complete:
        return Inversion(None, None, lift)
    x = lift.last.x
    residual = float(np.linalg.norm(m(x) - np.asarray(y, dtype=float)))
    return Inversion(x, residual, lift)


# ============================================================================
# ω-LIMITE
# ============================================================================

class OmegaKind(Enum):
    CLUSTER_POINT = "ClusterPoint"
    EMPTY_DIVERGENT = "EmptyDivergent"
    BOUNDARY_CLUSTER = "BoundaryCluster"
    INCONCLUSIVE = "Inconclusive"


@dataclass
class OmegaProbeResult:
    kind: OmegaKind
    point: Optional[np.ndarray]
    window: int
    tail_norms: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "classification": self.kind.value,
            "point": None if self.point is None else self.point.tolist(),
            "window": self.window,
            "tail_norms": self.tail_norms,
        }


def omega_probe(
    path: Union[Trajectory, LiftOutcome],
    window: int = 5,
    domain: Optional[DomainSpec] = None,
    tol_cluster: Optional[float] = None,
) -> OmegaProbeResult:
    """Classe la queue d'un suivi : point d'accumulation, fuite, ou amas au bord exclu"""
    if window < 2 or len(path.samples) < window:
        return OmegaProbeResult(OmegaKind.INCONCLUSIVE, None, window)
    tail = np.vstack([s.x for s in path.samples[-window:]])
    last = tail[-1]
    norms = np.linalg.norm(tail, axis=1)

    if domain is not None and domain.excluded:
        nearest = domain.nearest_excluded(last)
        distances = np.linalg.norm(tail - nearest, axis=1)
        if distances[-1] <= domain.exclusion_radius + domain.epsilon and np.all(np.diff(distances) <= 0.0):
            return OmegaProbeResult(OmegaKind.BOUNDARY_CLUSTER, np.asarray(nearest), window, norms.tolist())

    scale = domain.scale if domain is not None else 1.0
    if np.all(np.diff(norms) > 0.0) and norms[-1] > 10.0 * scale:
        return OmegaProbeResult(OmegaKind.EMPTY_DIVERGENT, None, window, norms.tolist())

    diameter = float(np.max(np.linalg.norm(tail[:, None, :] - tail[None, :, :], axis=-1)))
    if tol_cluster is None:
        tol_cluster = 1e-3 * (1.0 + float(np.linalg.norm(last)))
    if diameter <= tol_cluster:
        return OmegaProbeResult(OmegaKind.CLUSTER_POINT, last.copy(), window, norms.tolist())
    return OmegaProbeResult(OmegaKind.INCONCLUSIVE, None, window, norms.tolist())
