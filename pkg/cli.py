"""
Interface en ligne de commande : invert, trace, basin, certify, list-fixtures.

Codes de sortie : 0 succès, 1 échec numérique (champ « reason »), 2 erreur de
configuration (enveloppe d'erreur JSON). Les résultats vont sur stdout, les
journaux sur stderr.
"""

import argparse
import dataclasses
import logging
import math
import sys
from typing import List, Literal, Optional, Sequence, Tuple

from pydantic import BaseModel, ValidationError, model_validator

import certify
import reports
from errors import ConfigError, DimensionMismatch, WazError
from fixtures import JACOBIAN_CHOICES, build_fixture, expression_map, fixture_catalog
from flow_engine import DEFAULT_OPTIONS, TrackingOptions, integrate_flow, invert_at, omega_probe
from map_core import MapSpec

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_CONFIG = 2

# erreurs imputables à l'appelant (code 2) ; les autres WazError sont numériques (code 1)
CONFIG_ERRORS = ("ConfigError", "SyntaxError", "ArityError", "UnknownIdentifier", "DimensionMismatch",
                 "DomainViolation")

# ============================================================================
# CONFIGURATION
# ============================================================================

class RunConfig(BaseModel):
    """Configuration validée d'une commande (CLI ou corps de requête API)"""
    command: Literal["invert", "trace", "basin", "certify", "list-fixtures"]
    map: Optional[str] = None
    expr: Optional[str] = None
    dim: Optional[int] = None
    jacobian: Optional[str] = None
    matrix: Optional[List[List[float]]] = None
    x0: Optional[List[float]] = None
    target: Optional[List[float]] = None
    start: Optional[List[float]] = None
    t_end: Optional[float] = None
    bounds: Optional[List[float]] = None
    res: int = 101
    radii: List[float] = list(certify.DEFAULT_RADII)
    samples: int = 10_000
    sphere_samples: int = certify.DEFAULT_SPHERE_SAMPLES
    seed: int = 0
    r0: float = 1.0
    box: Optional[List[float]] = None
    lyapunov: int = 0
    trapped: int = 0
    window: int = 5
    workers: Optional[int] = None
    recheck: bool = False
    tol_conv: Optional[float] = None
    eta_inv: Optional[float] = None
    dt_min: Optional[float] = None
    budget: Optional[int] = None
    out: Optional[str] = None
    format: Optional[Literal["json", "csv", "pgm"]] = None

    @model_validator(mode="after")
    def check_consistency(self) -> "RunConfig":
        if self.command != "list-fixtures" and (self.map is None) == (self.expr is None):
            raise ValueError("exactly one map source is required: --map NAME or --expr TEXT --dim N")
        if self.expr is not None and (self.dim is None or self.dim < 1):
            raise ValueError("--expr needs a positive --dim")
        for name in ("tol_conv", "eta_inv", "dt_min", "r0", "t_end"):
            value = getattr(self, name)
            if value is not None and not value > 0.0:
                raise ValueError(f"{name} must be positive")
        for name in ("res", "samples", "sphere_samples", "window"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.budget is not None and self.budget < 1:
            raise ValueError("budget must be positive")
        if self.lyapunov < 0 or self.trapped < 0:
            raise ValueError("start counts cannot be negative")
        if self.jacobian is not None and self.jacobian not in JACOBIAN_CHOICES:
            raise ValueError(f"jacobian must be one of {', '.join(JACOBIAN_CHOICES)}")
        return self

    def tracking_options(self) -> TrackingOptions:
        overrides = {name: getattr(self, name) for name in ("tol_conv", "eta_inv", "dt_min", "budget")
                     if getattr(self, name) is not None}
        return dataclasses.replace(DEFAULT_OPTIONS, **overrides)


def build_map(config: RunConfig) -> MapSpec:
    """MapSpec décrite par la configuration (fixture ou expression)"""
    x0 = None if config.x0 is None else tuple(config.x0)
    if config.map is not None:
        matrix = None if config.matrix is None else tuple(tuple(row) for row in config.matrix)
        return build_fixture(config.map, matrix, x0, config.jacobian or "analytic")
    if config.matrix is not None:
        raise ConfigError("--matrix only applies to the 'linear' fixture")
    return expression_map(config.expr, config.dim, x0, config.jacobian or "autodiff")


def require_point(values: Optional[Sequence[float]], m: MapSpec, flag: str) -> Tuple[float, ...]:
    if values is None:
        raise ConfigError(f"{flag} is required for this command")
    if len(values) != m.dim:
        raise DimensionMismatch(f"{flag} has {len(values)} coordinates, map dimension is {m.dim}")
    return tuple(float(v) for v in values)


def _emit(config: RunConfig, text: str) -> str:
    if config.out:
        reports.write_output(config.out, text)
    return text

# ============================================================================
# COMMANDES
# ============================================================================

def cmd_invert(config: RunConfig) -> Tuple[int, str]:
    m = build_map(config)
    target = require_point(config.target, m, "--target")
    opts = config.tracking_options()
    inversion = invert_at(m, target, opts)
    omega = None if inversion.ok else omega_probe(inversion.lift, config.window, m.domain)
    doc = reports.invert_document(m.label, m.x0, target, inversion, omega)
    if inversion.ok:
        logger.info("invert %s at %s: x=%s residual=%.3g", m.label, list(target), doc.x, inversion.residual)
    else:
        logger.info("invert %s at %s failed: %s at s=%.6g", m.label, list(target), doc.reason, inversion.lift.s_max)
    return (EXIT_OK if inversion.ok else EXIT_NUMERICAL), _emit(config, reports.to_json(doc))


def cmd_trace(config: RunConfig) -> Tuple[int, str]:
    m = build_map(config)
    start = require_point(config.start, m, "--start")
    trajectory = integrate_flow(m, start, config.t_end or math.inf, config.tracking_options())
    logger.info("trace %s from %s: %s at t=%.6g", m.label, list(start), trajectory.outcome.tag, trajectory.outcome.time)
    if config.format == "json":
        omega = omega_probe(trajectory, config.window, m.domain)
        text = reports.to_json(reports.trace_document(m.label, trajectory, config.t_end, omega))
    elif config.format in (None, "csv"):
        text = reports.samples_csv(trajectory.samples, m.dim, "t", trajectory.outcome.tag)
    else:
        raise ConfigError("trace writes csv or json")
    return EXIT_OK, _emit(config, text)


def _basin_paths(out: str, fmt: Optional[str]) -> List[Tuple[str, str]]:
    stem = out[:-4] if out.endswith((".pgm", ".csv")) else out
    if fmt == "json":
        raise ConfigError("basin writes pgm and/or csv")
    formats = [fmt] if fmt else ["pgm", "csv"]
    return [(f, f"{stem}.{f}") for f in formats]


def cmd_basin(config: RunConfig) -> Tuple[int, str]:
    m = build_map(config)
    if m.dim != 2:
        raise DimensionMismatch(f"basin rasters need a planar map, dimension is {m.dim}")
    if config.bounds is None or config.out is None:
        raise ConfigError("basin needs --bounds xmin,xmax,ymin,ymax and --out PREFIX")
    paths = _basin_paths(config.out, config.format)
    grid = certify.GridSpec.from_bounds(config.bounds, config.res)
    basin = certify.estimate_basin(m, grid, config.tracking_options(), config.workers, config.recheck)
    written = []
    for fmt, path in paths:
        payload = reports.pgm_bytes(basin) if fmt == "pgm" else reports.basin_csv(basin)
        written.append(reports.write_output(path, payload))
    doc = reports.basin_document(m.label, basin, certify.basin_image_gap(m, basin), written)
    return EXIT_OK, reports.to_json(doc)


def run_certify(config: RunConfig, m: MapSpec) -> certify.CertReport:
    box = None
    if config.box is not None:
        if len(config.box) != 2 * m.dim:
            raise DimensionMismatch(f"--box needs {2 * m.dim} values (lower corner then upper corner)")
        box = (config.box[:m.dim], config.box[m.dim:])
    return certify.build_report(
        m, config.r0, config.samples, config.seed, config.radii, config.sphere_samples, box,
        config.lyapunov, config.tracking_options(), config.trapped,
    )


def cmd_certify(config: RunConfig) -> Tuple[int, str]:
    m = build_map(config)
    report = run_certify(config, m)
    logger.info("certify %s: %d violations, growth %s, coercivity %s", m.label,
                len(report.star.violations), report.growth.verdict.value, report.coercivity.verdict.value)
    return EXIT_OK, _emit(config, reports.to_json(reports.cert_document(report)))


def cmd_list_fixtures(config: RunConfig) -> Tuple[int, str]:
    catalog = fixture_catalog()
    if config.format == "json":
        doc = reports.FixtureListDocument(fixtures=[reports.FixtureModel(**f.to_dict()) for f in catalog])
        return EXIT_OK, reports.to_json(doc)
    lines = [f"{'name':<12} {'dim':>3}  {'x0':<12} {'domain':<14} label"]
    for f in catalog:
        x0 = ",".join(f"{v:g}" for v in f.x0)
        lines.append(f"{f.name:<12} {f.dim:>3}  {x0:<12} {f.domain:<14} {f.label}")
    return EXIT_OK, "\n".join(lines)


COMMANDS = {
    "invert": cmd_invert,
    "trace": cmd_trace,
    "basin": cmd_basin,
    "certify": cmd_certify,
    "list-fixtures": cmd_list_fixtures,
}

# ============================================================================
# ARGUMENTS
# ============================================================================

def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _matrix(text: str) -> List[List[float]]:
    return [_floats(row) for row in text.split(";") if row.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="waz",
        description="Global inversion of local diffeomorphisms via the auxiliary flow, with sampled certificates. "
                    "Negative coordinates must be attached with '=' (e.g. --target=-1,2).",
    )
    parser.add_argument("-q", "--quiet", action="store_true", help="log warnings only")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-step details")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--map", help="built-in fixture name (see list-fixtures)")
        p.add_argument("--expr", help="components separated by ';' over x1..xn, e.g. 'x1^2 - x2^2; 2*x1*x2'")
        p.add_argument("--dim", type=int, help="dimension of an --expr map")
        p.add_argument("--jacobian", choices=JACOBIAN_CHOICES,
                       help="Jacobian source (fixtures default to analytic, expressions to autodiff)")
        p.add_argument("--matrix", type=_matrix, help="matrix of the 'linear' fixture, rows separated by ';'")
        p.add_argument("--x0", type=_floats, help="base point (default: fixture base point, or 0)")
        p.add_argument("--tol-conv", dest="tol_conv", type=float,
                       help="convergence tolerance (default 1e-8(1+|x0|))")
        p.add_argument("--eta-inv", dest="eta_inv", type=float,
                       help="invariant residual tolerance (default 1e-9(1+|f(x)-y0|))")
        p.add_argument("--dt-min", dest="dt_min", type=float,
                       help=f"smallest step before collapse (default {DEFAULT_OPTIONS.dt_min:g})")
        p.add_argument("--budget", type=int, help=f"step budget (default {DEFAULT_OPTIONS.budget})")
        p.add_argument("--out", help="output file (basin: path prefix for .pgm/.csv)")
        p.add_argument("--format", choices=["json", "csv", "pgm"])
        p.add_argument("--window", type=int, default=5, help="tail length of the omega-limit probe")

    p = sub.add_parser("invert", help="solve f(x) = y by lifting the segment [f(x0), y]")
    common(p)
    p.add_argument("--target", type=_floats, help="y")

    p = sub.add_parser("trace", help="follow the auxiliary flow from a start point")
    common(p)
    p.add_argument("--start", type=_floats)
    p.add_argument("--t-end", dest="t_end", type=float, help="stop at this time (default: run to convergence)")

    p = sub.add_parser("basin", help="rasterize the attraction basin of x0 (planar maps)")
    common(p)
    p.add_argument("--bounds", type=_floats, help="xmin,xmax,ymin,ymax")
    p.add_argument("--res", type=int, default=101)
    p.add_argument("--workers", type=int, help="worker processes (default WAZ_THREADS, else min(cpu, 4))")
    p.add_argument("--recheck", action="store_true", help="mark cells that flip under dt_min/10 Undetermined")

    p = sub.add_parser("certify", help="sampled certificates: star criterion, growth, coercivity, Lyapunov")
    common(p)
    p.add_argument("--r0", type=float, default=1.0, help="radius of the criterion ball around x0")
    p.add_argument("--samples", type=int, default=10_000, help="criterion samples in the ball")
    p.add_argument("--sphere-samples", dest="sphere_samples", type=int, default=certify.DEFAULT_SPHERE_SAMPLES)
    p.add_argument("--radii", type=_floats, default=list(certify.DEFAULT_RADII))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--box", type=_floats, help="lo1,..,lon,hi1,..,hin (default: cube of half-side r0/2 at x0)")
    p.add_argument("--lyapunov", type=int, default=0, metavar="N",
                   help="check k(x)=|x-x0|^2/2 along N seeded trajectories")
    p.add_argument("--trapped", type=int, default=0, metavar="N",
                   help="flow from N box samples; report trajectories that stay in the box yet die")

    p = sub.add_parser("list-fixtures", help="list the built-in maps")
    p.add_argument("--format", choices=["json"])
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(levelname)s:%(name)s:%(message)s",
        handlers=[logging.StreamHandler(sys.stderr)],
        force=True,
    )


def _error_text(error_type: str, message: str) -> str:
    return reports.error_json(error_type, message)


def run(argv: Optional[Sequence[str]] = None) -> Tuple[int, str]:
    """Exécute une commande et renvoie (code de sortie, texte pour stdout)"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return (EXIT_OK if e.code == 0 else EXIT_CONFIG), ""
    _configure_logging(args)
    values = {k: v for k, v in vars(args).items() if v is not None and k not in ("quiet", "verbose")}
    try:
        config = RunConfig(**values)
        return COMMANDS[config.command](config)
    except ValidationError as e:
        message = "; ".join(err["msg"] for err in e.errors())
        logger.error("invalid configuration: %s", message)
        return EXIT_CONFIG, _error_text("ConfigError", message)
    except WazError as e:
        if e.error_type in CONFIG_ERRORS:
            logger.error("%s: %s", e.error_type, e)
            return EXIT_CONFIG, _error_text(e.error_type, str(e))
        logger.error("numerical failure %s: %s", e.error_type, e)
        return EXIT_NUMERICAL, reports.error_json(e.error_type, str(e), status="failed", reason=e.error_type)


def main(argv: Optional[Sequence[str]] = None) -> int:
    code, text = run(argv)
    if text:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
