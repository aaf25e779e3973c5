import sys
import math
import logging
import functools

import click
import numpy as np

from typing import Any, Dict, List, Optional, Sequence
from pydantic import ValidationError
from models.errors import ConvergenceError, ModelError
from models.walks.jump_model import JumpDistribution, ModelValidator, y_marginal
from models.walks.utils.model_file_utils import load_model
from models.geometry.dual_geometry import BoundaryClass, DualGeometry, Direction
from models.harmonic.harmonic_function import (
    HarmonicBuilder,
    explicit_left_continuous,
    harmonic_residual,
    normalised_marginal,
)
from models.green.green_solver import FreeGreenSolver, GreenKind, KilledGreenSolver
from models.green.experiments import BoxPolicy, ConvergenceTable, ExperimentRunner, ld_slope, target_norms
from models.deviations.rate_functions import PiecewiseLinearPath, RateFunctional
from models.sampling.path_sampler import PathSampler
from utils.validators import ExperimentConfig, InputValidator
from utils.app_utils import (
    load_config,
    open_output,
    setup_logger,
    write_csv,
    write_key_values,
)

logger = logging.getLogger(__name__)

CONVERGENCE_HEADER = ["n", "abs_zn", "kernel", "limit", "abs_err"]


def _checked(result: Dict[str, Any], param: str) -> Any:
    """Turn a validator result into its value or a click usage error."""
    if not result["valid"]:
        raise click.BadParameter(result["error"], param_hint=param)
    return result["value"]


def _with_verbose(config: Dict[str, Any]) -> Dict[str, Any]:
    return {k: ({**v, "verbose": True} if isinstance(v, dict) else v) for k, v in config.items()}


class Session:
    """Model, configuration and output target shared by one subcommand run."""

    def __init__(self, model_path: str, config_path: Optional[str], verbose: bool, out: Optional[str]):
        config = load_config(config_path)
        self.config = _with_verbose(config) if verbose else config
        self.model: JumpDistribution = load_model(model_path)
        self.model_path = model_path
        self.out = out
        self.geometry = DualGeometry(self.model, self.config.get("geometry", {}))

    def section(self, name: str) -> Dict[str, Any]:
        return self.config.get(name, {})

    def vector(self, text: str, param: str, integer: bool = True) -> tuple:
        return _checked(InputValidator.validate_vector(text, self.model.dim, integer=integer), param)

    def direction(self, text: str, param: str = "--q") -> tuple:
        return _checked(InputValidator.validate_direction(text, self.model.dim), param)

    def experiment(self, command: str, **kwargs) -> ExperimentConfig:
        return ExperimentConfig(model_path=self.model_path, command=command, out=self.out, **kwargs)


def common_options(fn):
    """--model, --tol, --seed, --out, --config and --verbose for every subcommand."""

    @click.option("--model", "model_path", required=True, type=click.Path(dir_okay=False), help="Model file")
    @click.option("--tol", type=float, default=None, help="Solver tolerance (> 0)")
    @click.option("--seed", type=int, default=None, help="Root seed for Monte Carlo")
    @click.option("--out", type=click.Path(dir_okay=False, writable=True), default=None, help="Output path")
    @click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="Configuration file")
    @click.option("--verbose", is_flag=True, help="Verbose logging on standard error")
    @functools.wraps(fn)
    def wrapper(model_path, tol, seed, out, config_path, verbose, **kwargs):
        _checked(InputValidator.validate_tolerance(tol), "--tol")
        _checked(InputValidator.validate_seed(seed), "--seed")
        session = Session(model_path, config_path, verbose, out)
        return fn(session, tol=tol, seed=seed, **kwargs)

    return wrapper


def _write_tables(stream, tables: Sequence[ConvergenceTable]) -> None:
    for table in tables:
        if len(tables) > 1:
            stream.write(f"# z={','.join(str(c) for c in table.z)}\n")
        rows = [(r.n, r.abs_zn, r.kernel, r.limit, r.abs_err) for r in table.rows]
        write_csv(stream, CONVERGENCE_HEADER, rows)


@click.group()
def cli():
    """Killed lattice walks on a half-space: dual geometry, harmonic functions and Green kernels."""


@cli.command()
@common_options
@click.option("--search-bound", type=int, default=None, help="Largest number of steps explored")
def validate(session: Session, tol, seed, search_bound):
    """Check the standing hypotheses; exits 2 when one fails."""
    report = ModelValidator(session.section("jump_model")).validate(session.model, search_bound)
    with open_output(session.out) as stream:
        write_key_values(
            stream,
            [
                ("irreducible", report.irreducible),
                ("mean", report.mean),
                ("mean_nonzero", report.mean_nonzero),
                ("y_aperiodic", report.y_aperiodic),
                ("left_continuous", report.left_continuous),
                ("period", report.period),
                ("search_bound", report.search_bound),
                ("ok", report.ok),
            ],
        )
    for failure in report.failures():
        click.echo(f"hypothesis failed: {failure}", err=True)
    return 0 if report.ok else 2


@cli.command()
@common_options
@click.option("--q", "q_text", default=None, help="Direction, e.g. 1,0")
@click.option("--alpha", "alpha_text", default=None, help="Horizontal tilt for the vertical section")
@click.option("--K", "truncation", type=int, default=None, help="Truncation size for the Feynman-Kac radius")
def geometry(session: Session, tol, seed, q_text, alpha_text, truncation):
    """Boundary point a(q), its class and conjugate; or the vertical section at alpha.

    Output: key=value lines.
    """
    geo = session.geometry
    pairs: List[tuple] = []
    if q_text is None and alpha_text is None:
        raise click.UsageError("geometry needs --q or --alpha")

    if q_text is not None:
        q = session.direction(q_text)
        a = geo.a_of_q(q, tol)
        boundary_class = geo.classify(a) if q[-1] >= 0.0 else None
        pairs += [
            ("q", q),
            ("a", a.coords.tolist()),
            ("phi", geo.phi(a)),
            ("direction_residual", geo.direction_residual(a, q)),
            ("cost", float(a.coords @ np.asarray(q))),
        ]
        if boundary_class is not None:
            pairs.append(("class", boundary_class.value))
            pairs.append(("conjugate", geo.conjugate_point(a).coords.tolist()))

    if alpha_text is not None:
        alpha = _checked(InputValidator.validate_vector(alpha_text, session.model.dim - 1), "--alpha")
        beta0, lam = geo.beta_min(alpha)
        pairs += [("alpha", alpha), ("beta_min", beta0), ("lambda_plus", lam)]
        if lam <= geo.boundary_tol:
            pairs.append(("boundary_point", geo.boundary_point_for_alpha(alpha).coords.tolist()))
        if truncation is not None:
            pairs.append(("lambda_truncated", geo.spectral_radius_truncated(alpha, truncation)))

    with open_output(session.out) as stream:
        write_key_values(stream, pairs)
    return 0


def _tilt(session: Session, q_text: Optional[str], a_text: Optional[str], tol) -> np.ndarray:
    if (q_text is None) == (a_text is None):
        raise click.UsageError("give exactly one of --q and --a")
    if q_text is not None:
        return session.geometry.a_of_q(session.direction(q_text), tol).coords
    return np.asarray(session.vector(a_text, "--a", integer=False), dtype=float)


@cli.command()
@common_options
@click.option("--q", "q_text", default=None, help="Direction selecting a = a(q)")
@click.option("--a", "a_text", default=None, help="Boundary point a")
@click.option("--z", "z_texts", multiple=True, required=True, help="Evaluation point (repeatable)")
def harmonic(session: Session, tol, seed, q_text, a_text, z_texts):
    """h_{a,+}(z) with the closed form (when left-continuous) and the harmonic residual.

    Output CSV header: z,h,explicit,residual
    """
    a = _tilt(session, q_text, a_text, None)
    zs = [session.vector(t, "--z") for t in z_texts]
    builder = HarmonicBuilder(
        session.section("harmonic"),
        geometry_config=session.section("geometry"),
        ladder_config=session.section("ladder"),
    )
    evaluator = builder.build(session.model, a, tol, geometry=session.geometry)

    rows = []
    for z in zs:
        explicit = math.nan
        if session.model.is_left_continuous():
            explicit = explicit_left_continuous(session.model, a, z, session.geometry)
        residual = harmonic_residual(session.model, evaluator, z) if z[-1] >= 1 else math.nan
        rows.append((z, evaluator.evaluate(z), explicit, residual))

    with open_output(session.out) as stream:
        write_csv(stream, ["z", "h", "explicit", "residual"], rows)
    return 0


@cli.command()
@common_options
@click.option("--target", "target_text", required=True, help="Target point z'")
@click.option("--kind", type=click.Choice([k.value for k in GreenKind]), default="killed")
@click.option("--z", "z_texts", multiple=True, required=True, help="Source point (repeatable)")
def green(session: Session, tol, seed, target_text, kind, z_texts):
    """Green function G(z, target) on the default truncation box.

    Output CSV header: z,green
    """
    target = session.vector(target_text, "--target")
    zs = [session.vector(t, "--z") for t in z_texts]
    kind = GreenKind(kind)
    policy = BoxPolicy.from_config(session.section("experiments"))
    solver = KilledGreenSolver if kind is GreenKind.KILLED else FreeGreenSolver
    field = solver(session.section("green")).solve(session.model, target, policy.box_for(target, kind), tol)
    logger.info(f"Green field residual {field.residual:.3e} after {field.iterations} sweeps")

    with open_output(session.out) as stream:
        write_csv(stream, ["z", "green"], [(z, field.value(z)) for z in zs])
    return 0


def _schedule(session: Session, text: str, q: Optional[tuple] = None, killed: bool = True) -> list:
    return _checked(InputValidator.validate_schedule(text, session.model.dim, q, killed), "--targets")


@cli.command()
@common_options
@click.option("--q", "q_text", required=True, help="Limit direction")
@click.option("--z", "z_texts", multiple=True, required=True, help="Source point (repeatable)")
@click.option("--z0", "z0_text", required=True, help="Reference point")
@click.option("--targets", "targets_text", required=True, help="diag:a..b:s, wall:a..b:s, ray:a..b:s or list:x,y;...")
@click.option("--ld-check", is_flag=True, help="Append the Green decay check against -a(q).q")
def ratio(session: Session, tol, seed, q_text, z_texts, z0_text, targets_text, ld_check):
    """Killed Martin kernels K(z, z_n) against h(z)/h(z0) along a target schedule.

    Output CSV header: n,abs_zn,kernel,limit,abs_err (one block per --z).
    """
    q = session.direction(q_text)
    params = session.experiment(
        "ratio",
        q=q,
        targets=_schedule(session, targets_text, q),
        zs=[session.vector(t, "--z") for t in z_texts],
        z0=session.vector(z0_text, "--z0"),
        tol=tol,
    )
    runner = ExperimentRunner(session.model, session.config)
    tables = runner.ratio_limit_experiment(params.q, params.targets, params.zs, params.z0, params.tol)

    with open_output(session.out) as stream:
        _write_tables(stream, tables)
        if ld_check:
            slopes = ld_slope(runner.last_fields, params.z0)
            norms = target_norms(runner.last_fields) if len(slopes) >= 3 else None
            report = RateFunctional(
                session.model, session.section("deviations"), session.geometry
            ).green_ld_bound_check(params.q, slopes, norms)
            stream.write(f"# ld_final_slope={report.final_slope:.17g}\n")
            stream.write(f"# ld_threshold={report.threshold:.17g}\n")
            stream.write(f"# ld_final_passed={str(report.final_passed).lower()}\n")
            if report.fitted_rate is not None:
                stream.write(f"# ld_fitted_rate={report.fitted_rate:.17g}\n")
            stream.write(f"# ld_passed={str(report.passed).lower()}\n")
    return 0


@cli.command()
@common_options
@click.option("--z", "z_text", required=True, help="Source point")
@click.option("--w", "w_text", required=True, help="Horizontal shift (last coordinate 0)")
@click.option("--k-hat", type=int, default=None, help="Shift multiplier; defaults to the period")
@click.option("--targets", "targets_text", required=True, help="Target schedule")
def shiftcheck(session: Session, tol, seed, z_text, w_text, k_hat, targets_text):
    """G(z + k w, z_n) / G(z, z_n) along a target schedule.

    Output CSV header: n,abs_zn,kernel,limit,abs_err
    """
    params = session.experiment(
        "shiftcheck",
        targets=_schedule(session, targets_text),
        zs=[session.vector(z_text, "--z")],
        tol=tol,
    )
    w = session.vector(w_text, "--w")
    table = ExperimentRunner(session.model, session.config).shift_ratio_check(
        params.targets, params.zs[0], w, k_hat, params.tol
    )
    with open_output(session.out) as stream:
        _write_tables(stream, [table])
    return 0


@cli.command()
@common_options
@click.option("--q", "q_text", required=True, help="Limit direction")
@click.option("--z", "z_texts", multiple=True, required=True, help="Source point (repeatable)")
@click.option("--targets", "targets_text", required=True, help="Target schedule")
def neyspitzer(session: Session, tol, seed, q_text, z_texts, targets_text):
    """Free-walk kernels G(z, z_n) / G(0, z_n) against exp(a(q).z).

    Output CSV header: n,abs_zn,kernel,limit,abs_err (one block per --z).
    """
    q = _checked(InputValidator.validate_direction(q_text, session.model.dim, upper=False), "--q")
    params = session.experiment(
        "neyspitzer",
        q=q,
        targets=_schedule(session, targets_text, q, killed=False),
        zs=[session.vector(t, "--z") for t in z_texts],
        tol=tol,
    )
    tables = ExperimentRunner(session.model, session.config).neyspitzer(
        params.q, params.targets, params.zs, params.tol
    )
    with open_output(session.out) as stream:
        _write_tables(stream, tables)
    return 0


def _parse_path(text: str, dim: int) -> PiecewiseLinearPath:
    breakpoints = []
    for item in filter(None, text.split(";")):
        time_text, _, position_text = item.partition(":")
        position = _checked(InputValidator.validate_vector(position_text, dim), "--path")
        try:
            breakpoints.append((float(time_text), position))
        except ValueError:
            raise click.BadParameter(f"time {time_text!r} is not a number", param_hint="--path")
    return PiecewiseLinearPath.from_breakpoints(breakpoints)


@cli.command()
@common_options
@click.option("--q", "q_text", default=None, help="Direction for the optimal cost a(q).q")
@click.option("--path", "path_text", default=None, help="Breakpoints t:x,y;t:x,y;...")
def rate(session: Session, tol, seed, q_text, path_text):
    """Rate functionals of a piecewise-linear path, or the optimal cost in a direction.

    Output: key=value lines.
    """
    if q_text is None and path_text is None:
        raise click.UsageError("rate needs --q or --path")
    functional = RateFunctional(session.model, session.section("deviations"), session.geometry)
    pairs: List[tuple] = []
    if q_text is not None:
        report = functional.optimal_cost(session.direction(q_text))
        pairs += [
            ("q", report.q),
            ("a", report.a),
            ("cost", report.cost),
            ("conjugate_side", report.conjugate_side),
            ("gradient_side", report.gradient_side),
            ("identity_gap", report.identity_gap),
        ]
    if path_text is not None:
        path = _parse_path(path_text, session.model.dim)
        pairs += [("rate_free", functional.rate_free(path)), ("rate_killed", functional.rate_killed(path))]
    with open_output(session.out) as stream:
        write_key_values(stream, pairs)
    return 0


@cli.command()
@common_options
@click.option("--oracle", type=click.Choice(["boundary", "green", "harmonic"]), required=True)
@click.option("--paths", "n_paths", type=int, default=100000, help="Number of paths")
@click.option("--horizon", type=int, default=100000, help="Largest number of steps per path")
@click.option("--q", "q_text", default=None, help="Tilt a(q) for the boundary and harmonic oracles")
@click.option("--a", "a_text", default=None, help="Tilt a for the harmonic oracle")
@click.option("--y0", type=int, default=1, help="Start height for the boundary oracle")
@click.option("--source", "source_text", default=None, help="Start point for green and harmonic")
@click.option("--target", "target_text", default=None, help="Target point for green")
@click.option("--kind", type=click.Choice([k.value for k in GreenKind]), default="killed")
def mc(session: Session, tol, seed, oracle, n_paths, horizon, q_text, a_text, y0, source_text, target_text, kind):
    """Seeded Monte Carlo oracles; --seed is required.

    Output: key=value lines (estimate, std_error, n_paths, censored_fraction).
    """
    params = session.experiment("mc", seed=seed, monte_carlo=True, n_paths=n_paths, horizon=horizon)
    sampler = PathSampler({**session.section("monte_carlo"), "max_workers": session.config.get("max_workers")})

    if oracle == "boundary":
        law = y_marginal(session.model)
        if q_text is not None:
            a = session.geometry.a_of_q(session.direction(q_text), tol).coords
            if session.geometry.classify(a) is BoundaryClass.TANGENT:
                beta0, _ = session.geometry.beta_min(a[:-1])
                a = np.append(a[:-1], beta0)
            law = normalised_marginal(session.model, a, session.geometry.boundary_tol)
        result = sampler.mc_boundary_oracle(law, y0, params.n_paths, params.horizon, params.seed)
    else:
        if source_text is None:
            raise click.UsageError(f"the {oracle} oracle needs --source")
        source = session.vector(source_text, "--source")
        if oracle == "green":
            if target_text is None:
                raise click.UsageError("the green oracle needs --target")
            target = session.vector(target_text, "--target")
            result = sampler.mc_green(
                session.model, source, target, kind, params.n_paths, params.horizon, params.seed
            )
        else:
            a = _tilt(session, q_text, a_text, tol)
            result = sampler.harmonic_estimate(
                session.model, a, source, params.n_paths, params.horizon, params.seed, session.geometry
            )

    with open_output(session.out) as stream:
        write_key_values(
            stream,
            [
                ("estimate", result.estimate),
                ("std_error", result.std_error),
                ("n_paths", result.n_paths),
                ("censored_fraction", result.censored_fraction),
            ],
        )
    return 0


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one subcommand and map the outcome onto an exit code:
    0 success, 2 invalid input or failed hypotheses, 1 numerical non-convergence.
    """
    setup_logger()
    try:
        code = cli.main(args=list(argv) if argv is not None else None, prog_name="martin", standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return 2
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 2
    except ConvergenceError as e:
        logger.error(f"Numerical failure: {e}")
        click.echo(f"error: {e.args[0] if e.args else e}", err=True)
        for key, value in e.diagnostics.items():
            click.echo(f"{key}={value}", err=True)
        return 1
    except (ModelError, ValidationError, RuntimeError) as e:
        logger.error(f"Invalid input: {e}")
        click.echo(f"error: {e}", err=True)
        return 2
    return code if isinstance(code, int) else 0


if __name__ == "__main__":
    sys.exit(run())
