"""
Documents de sortie (modèles pydantic) et écrivains CSV / JSON / PGM.

Les noms de champs sont stables : docs/schemas/*.schema.json les reprend un
pour un. Aucune sortie ne contient d'horodatage, deux exécutions identiques
produisent les mêmes octets.
"""

import csv
import io
import json
import logging
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, TextIO, Type, Union

import jsonschema
from pydantic import BaseModel, Field

from certify import BasinGrid, CellCode, CertReport
from flow_engine import Inversion, LiftOutcome, OmegaProbeResult, Sample, Trajectory

logger = logging.getLogger(__name__)

CODE_LEVELS: Dict[CellCode, int] = {
    CellCode.IN_BASIN: 255,
    CellCode.OUT: 0,
    CellCode.UNDETERMINED: 128,
    CellCode.OUTSIDE_DOMAIN: 64,
}

# ============================================================================
# MODÈLES
# ============================================================================

OutcomeTag = Literal["ConvergedToBase", "ConvergedElsewhere", "FiniteLife", "LeftDomain", "StepCollapse",
                    "BudgetExhausted", "HorizonReached"]


class OutcomeModel(BaseModel):
    tag: OutcomeTag
    time: float
    point: Optional[List[float]] = None
    note: str = ""


class SampleModel(BaseModel):
    t: float
    x: List[float]
    residual: float


class OmegaModel(BaseModel):
    classification: str
    point: Optional[List[float]] = None
    window: int
    tail_norms: List[float] = Field(default_factory=list)


class LiftModel(BaseModel):
    complete: bool
    s_max: float
    steps: int
    rejected: int
    n_samples: int
    failure: Optional[OutcomeModel] = None


class InvertDocument(BaseModel):
    status: Literal["ok", "failed"]
    map: str
    x0: List[float]
    target: List[float]
    x: Optional[List[float]] = None
    residual: Optional[float] = None
    reason: Optional[str] = None
    lift: LiftModel
    omega: Optional[OmegaModel] = None


class TraceDocument(BaseModel):
    map: str
    start: List[float]
    t_end: Optional[float] = None
    outcome: OutcomeModel
    steps: int
    rejected: int
    samples: List[SampleModel]
    omega: Optional[OmegaModel] = None


class BasinDocument(BaseModel):
    map: str
    x0: List[float]
    bounds: List[float] = Field(min_length=4, max_length=4)
    res: int = Field(ge=1)
    counts: Dict[str, int]
    outcome_counts: Dict[str, int]
    image_gap: Optional[float] = None
    outputs: List[str] = Field(default_factory=list)


class ViolationModel(BaseModel):
    point: List[float]
    value: float = Field(lt=0.0)


class GrowthFitModel(BaseModel):
    """a, b, fit_quality et g valent null quand l'estimation diverge"""
    a: Optional[float]
    b: Optional[float]
    verdict: Literal["AffineBoundHolds", "SuperlinearGrowth", "Inconclusive"]
    fit_quality: Optional[float] = None
    radii: List[float] = Field(default_factory=list)
    g: List[Optional[float]] = Field(default_factory=list)
    slope: Optional[float] = None
    singular_count: int = 0


class CoercivityModel(BaseModel):
    radii: List[float]
    minima: List[float]
    maxima: List[float] = Field(default_factory=list)
    slope: Optional[float] = None
    verdict: Literal["CoerciveEvidence", "NotCoerciveEvidence", "Inconclusive"]


class FlagsModel(BaseModel):
    hadamard_caccioppoli_evidence: bool
    hadamard_levy_evidence: bool
    star_shaped_evidence: bool
    trapped_death_refutation: Optional[bool] = None
    wording: Literal["certificate (sampled)"]
    narrative: List[str] = Field(default_factory=list)


class CertReportDocument(BaseModel):
    map: str
    x0: List[float]
    seed: int
    criterion_r0: float
    criterion_samples: int
    criterion_singular: int
    criterion_min: Optional[dict] = None
    criterion_violations: List[ViolationModel]
    growth_fit: GrowthFitModel
    coercivity_trend: CoercivityModel
    box_growth: Optional[dict] = None
    lyapunov: Optional[dict] = None
    trapped_trajectories: Optional[dict] = None
    flags: FlagsModel


class FixtureModel(BaseModel):
    name: str
    dim: int
    x0: List[float]
    domain: str
    label: str
    source: str


class FixtureListDocument(BaseModel):
    fixtures: List[FixtureModel]


class ErrorDocument(BaseModel):
    """Enveloppe d'erreur ; status « failed » et reason pour les échecs numériques"""
    status: Literal["error", "failed"] = "error"
    error_type: str
    message: str
    reason: Optional[str] = None


SCHEMA_MODELS = {
    "invert": InvertDocument,
    "trace": TraceDocument,
    "basin": BasinDocument,
    "certify": CertReportDocument,
    "fixtures": FixtureListDocument,
    "error": ErrorDocument,
}

# ============================================================================
# CONVERSIONS
# ============================================================================

def _samples(samples: Sequence[Sample]) -> List[SampleModel]:
    return [SampleModel(t=s.t, x=s.x.tolist(), residual=s.residual) for s in samples]


def _omega(omega: Optional[OmegaProbeResult]) -> Optional[OmegaModel]:
    return None if omega is None else OmegaModel(**omega.to_dict())


def _lift(lift: LiftOutcome) -> LiftModel:
    return LiftModel(
        complete=lift.complete,
        s_max=lift.s_max,
        steps=lift.steps,
        rejected=lift.rejected,
        n_samples=len(lift.samples),
        failure=None if lift.failure is None else OutcomeModel(**lift.failure.to_dict()),
    )


def invert_document(label: str, x0: Sequence[float], target: Sequence[float], inversion: Inversion,
                    omega: Optional[OmegaProbeResult] = None) -> InvertDocument:
    return InvertDocument(
        status="ok" if inversion.ok else "failed",
        map=label,
        x0=list(x0),
        target=[float(v) for v in target],
        x=None if inversion.x is None else inversion.x.tolist(),
        residual=inversion.residual,
        reason=None if inversion.ok else inversion.failure.tag,
        lift=_lift(inversion.lift),
        omega=_omega(omega),
    )


def trace_document(label: str, trajectory: Trajectory, t_end: Optional[float] = None,
                   omega: Optional[OmegaProbeResult] = None) -> TraceDocument:
    return TraceDocument(
        map=label,
        start=trajectory.x_start.tolist(),
        t_end=t_end,
        outcome=OutcomeModel(**trajectory.outcome.to_dict()),
        steps=trajectory.steps,
        rejected=trajectory.rejected,
        samples=_samples(trajectory.samples),
        omega=_omega(omega),
    )


def basin_document(label: str, basin: BasinGrid, image_gap: Optional[float], outputs: Sequence[str]) -> BasinDocument:
    g = basin.grid
    return BasinDocument(
        map=label,
        x0=list(basin.x0),
        bounds=[g.x_min, g.x_max, g.y_min, g.y_max],
        res=g.res,
        counts=basin.counts(),
        outcome_counts=basin.outcome_counts(),
        image_gap=image_gap,
        outputs=list(outputs),
    )


def cert_document(report: CertReport) -> CertReportDocument:
    return CertReportDocument.model_validate(report.to_dict())


def to_json(document: BaseModel) -> str:
    return document.model_dump_json(indent=2)


def error_json(error_type: str, message: str, status: str = "error", reason: Optional[str] = None) -> str:
    document = ErrorDocument(status=status, error_type=error_type, message=message, reason=reason)
    return document.model_dump_json(indent=2, exclude_none=True)


# ============================================================================
# SCHÉMAS
# ============================================================================

def document_schema(name: str) -> dict:
    """Schéma JSON généré depuis le modèle pydantic du document `name`"""
    if name not in SCHEMA_MODELS:
        raise KeyError(f"unknown document '{name}' (known: {', '.join(sorted(SCHEMA_MODELS))})")
    model: Type[BaseModel] = SCHEMA_MODELS[name]
    return model.model_json_schema()


def export_schemas(directory: Union[str, Path]) -> List[str]:
    """Écrit <name>.schema.json pour chaque document"""
    directory = Path(directory)
    written = []
    for name in sorted(SCHEMA_MODELS):
        text = json.dumps(document_schema(name), indent=2, sort_keys=True) + "\n"
        written.append(write_output(directory / f"{name}.schema.json", text))
    return written


def validate_document(name: str, payload: Union[str, dict], schema: Optional[dict] = None) -> dict:
    """Valide une sortie (texte JSON ou dict) ; lève jsonschema.ValidationError"""
    instance = json.loads(payload) if isinstance(payload, str) else payload
    jsonschema.validate(instance=instance, schema=schema if schema is not None else document_schema(name))
    return instance


# ============================================================================
# ÉCRIVAINS
# ============================================================================

def write_samples_csv(stream: TextIO, samples: Sequence[Sample], dim: int, parameter: str = "t",
                      outcome: Optional[str] = None) -> None:
    """Colonnes t (ou s), x1..xn, residual ; ligne de commentaire initiale avec l'issue"""
    if outcome is not None:
        stream.write(f"# outcome={outcome}\n")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow([parameter] + [f"x{i + 1}" for i in range(dim)] + ["residual"])
    for s in samples:
        writer.writerow([repr(float(s.t))] + [repr(float(v)) for v in s.x] + [repr(float(s.residual))])


def samples_csv(samples: Sequence[Sample], dim: int, parameter: str = "t", outcome: Optional[str] = None) -> str:
    buffer = io.StringIO()
    write_samples_csv(buffer, samples, dim, parameter, outcome)
    return buffer.getvalue()


def pgm_bytes(basin: BasinGrid) -> bytes:
    """PGM binaire P5, ligne du haut = plus grand y"""
    res = basin.grid.res
    header = f"P5\n{res} {res}\n255\n".encode("ascii")
    rows = bytearray()
    for j in reversed(range(res)):
        rows.extend(CODE_LEVELS[basin.cell(i, j).code] for i in range(res))
    return header + bytes(rows)


def basin_csv(basin: BasinGrid) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["x", "y", "code"])
    for c in basin.cells:
        writer.writerow([repr(c.x[0]), repr(c.x[1]), CODE_LEVELS[c.code]])
    return buffer.getvalue()


def write_output(path: Union[str, Path], payload: Union[str, bytes]) -> str:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(payload, bytes):
        path.write_bytes(payload)
    else:
        path.write_text(payload, encoding="utf-8")
    logger.info("wrote %s (%d bytes)", path, len(payload))
    return str(path)
