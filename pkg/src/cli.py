"""
Command-line front end

    python src/cli.py solve <file> [--out csv] [--report json]
    python src/cli.py certify <file>
    python src/cli.py residual <file> --solution csv
    python src/cli.py gronwall <file>
    python src/cli.py specfun <name> <args...>
    python src/cli.py converge <file> --grids 128,256,512

Exit codes: 0 success, 1 usage or input error, 2 numerical failure,
3 certificate failure.
"""
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np
import typer

from certificates import certify as certify_constants, corollary_bound, estimate_constants, gronwall_bound, verify_gronwall
from config import config
from errors import (
    ConvergenceError, DomainError, EvalError, GridMismatchError, NonFiniteError, ParseError,
    PoleError, ProblemFileError, SemigroupOverflowError,
)
from problem_file import (
    build_constants, build_grid, build_problem, build_psi, load_problem_file, read_trajectory_csv,
    report_json, time_profile, trajectory_csv,
)
from run_logger import RunLogger
from solver import initial_condition_check, mild_solve, refinement_study, strong_residual
from specfun import gamma, mainardi_wright, mittag_leffler, wright_moment

logger = logging.getLogger(__name__)

EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_CERTIFICATE = 3
# exit status typer uses for bad arguments and unknown commands
TYPER_USAGE_STATUS = 2

USAGE_ERRORS = (ParseError, ProblemFileError, DomainError, GridMismatchError, OSError)
NUMERICAL_ERRORS = (PoleError, ConvergenceError, NonFiniteError, SemigroupOverflowError, EvalError, ArithmeticError)

app = typer.Typer(add_completion=False, help="Nonlocal Hilfer fractional integro-differential toolkit")


def _configure_logging(verbose: bool):
    level = logging.DEBUG if verbose else getattr(logging, config.log_level.upper(), logging.WARNING)
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(level)


def _emit(text: str, path: Optional[Path]):
    if path is None:
        typer.echo(text, nl=False)
    else:
        path.write_text(text, encoding='utf-8')


@app.callback()
def main(verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging on stderr")):
    _configure_logging(verbose)


@app.command()
def solve(
    file: Path = typer.Argument(..., help="Problem file (JSON)"),
    out: Optional[Path] = typer.Option(None, "--out", help="Trajectory CSV (default: stdout)"),
    report: Optional[Path] = typer.Option(None, "--report", help="SolveReport JSON"),
    n: Optional[int] = typer.Option(None, "--n", help="Override the grid size"),
    log: Optional[Path] = typer.Option(None, "--log", help="Per-iteration JSON run log"),
):
    """Solve the mild formulation by successive approximation"""
    pf = load_problem_file(file)
    problem = build_problem(pf)
    grid = build_grid(pf, n)

    run_logger = None
    if log is not None:
        run_logger = RunLogger(str(log))
        run_logger.clear_log()
        run_logger.set_problem_info(pf.name, problem.mu, problem.nu, problem.dim, grid.n)

    result = mild_solve(problem, grid, pf.solver.tol, pf.solver.max_iter, run_logger=run_logger)
    if not result.converged:
        logger.warning("%s: not converged after %d iterations", pf.name, result.iterations)
    _emit(trajectory_csv(result.final), out)
    if report is not None:
        report.write_text(report_json(result.to_dict()), encoding='utf-8')


@app.command()
def certify(
    file: Path = typer.Argument(..., help="Problem file (JSON)"),
    sharp_gamma: bool = typer.Option(False, "--sharp-gamma", help="Use Gamma(mu)Gamma(mu+1) instead of Gamma(mu)^2"),
    samples: int = typer.Option(config.estimate_samples, "--samples", help="Samples when estimating constants"),
    radius: float = typer.Option(1.0, "--radius", help="Ball radius when estimating constants"),
):
    """Evaluate Conditions I/II; exit 3 when the certificate fails"""
    pf = load_problem_file(file)
    constants = build_constants(pf)
    if constants is None:
        constants = estimate_constants(build_problem(pf), r=radius, samples=samples)
    result = certify_constants(constants, sharp_gamma)
    typer.echo(report_json(result.to_dict()), nl=False)
    if not result.passed:
        logger.warning("certificate failed: q = %.6g, ball_lhs = %.6g, r = %.6g", result.q, result.ball_lhs, constants.r)
        raise typer.Exit(EXIT_CERTIFICATE)


@app.command()
def residual(
    file: Path = typer.Argument(..., help="Problem file (JSON)"),
    solution: Path = typer.Option(..., "--solution", help="Trajectory CSV written by solve"),
    layer: float = typer.Option(config.residual_layer, "--layer", help="Excluded fraction of the horizon near t0"),
):
    """Strong-solution residual and nonlocal initial condition of a solution"""
    pf = load_problem_file(file)
    problem = build_problem(pf)
    grid = build_grid(pf)
    u = read_trajectory_csv(solution, grid, problem.gamma)
    path = strong_residual(problem, u, layer)
    norms = np.linalg.norm(path.values_weighted, axis=1)
    typer.echo(report_json({
        'sup_norm': path.sup_norm,
        'layer': layer,
        'initial_condition': initial_condition_check(problem, u),
        't': grid.nodes.tolist(),
        'residual_norm': norms.tolist(),
    }), nl=False)


@app.command()
def gronwall(file: Path = typer.Argument(..., help="Problem file with a gronwall section")):
    """Gronwall series bound, Mittag-Leffler envelope and (optionally) a verdict"""
    pf = load_problem_file(file)
    if pf.gronwall is None:
        raise ProblemFileError(f"{file} has no gronwall section")
    section = pf.gronwall
    grid = build_grid(pf)
    psi = build_psi(pf.psi)
    v = time_profile(section.v_expr, grid)
    g = time_profile(section.g_expr, grid)

    bound = gronwall_bound(v, g, section.alpha, psi, grid)
    out = {
        'alpha': section.alpha,
        't': grid.nodes.tolist(),
        'bound': bound.values.tolist(),
        'tail': bound.tail.tolist(),
        'terms': bound.terms,
    }
    try:
        out['corollary'] = corollary_bound(v, g, section.alpha, psi, grid).tolist()
    except DomainError as e:
        out['corollary'] = None
        logger.info("corollary bound skipped: %s", e)
    if section.u_expr is not None:
        u = time_profile(section.u_expr, grid)
        out['verdict'] = verify_gronwall(u, v, g, section.alpha, psi, grid).to_dict()
    typer.echo(report_json(out), nl=False)


SPECFUN_ARITY = {'ml': 3, 'mw': 2, 'gamma': 1, 'moment': 2}


@app.command(context_settings={"ignore_unknown_options": True})
def specfun(
    name: str = typer.Argument(..., help="ml | mw | gamma | moment"),
    args: list[float] = typer.Argument(..., help="Numeric arguments"),
):
    """Evaluate one special function and print it with 15 significant digits"""
    if name not in SPECFUN_ARITY:
        raise typer.BadParameter(f"unknown function {name!r}, expected one of {sorted(SPECFUN_ARITY)}")
    if len(args) != SPECFUN_ARITY[name]:
        raise typer.BadParameter(f"{name} takes {SPECFUN_ARITY[name]} arguments, got {len(args)}")
    if name == 'ml':
        value = mittag_leffler(*args)
    elif name == 'mw':
        value = mainardi_wright(*args)
    elif name == 'gamma':
        value = gamma(*args)
    else:
        value = wright_moment(*args)
    typer.echo(format(value, '.15g'))


@app.command()
def converge(
    file: Path = typer.Argument(..., help="Problem file (JSON)"),
    grids: str = typer.Option("128,256,512", "--grids", help="Comma-separated grid sizes"),
):
    """Grid refinement study on consecutive levels"""
    try:
        levels = [int(x) for x in grids.split(',') if x.strip()]
    except ValueError as e:
        raise typer.BadParameter(f"--grids must be comma-separated integers: {e}") from e
    pf = load_problem_file(file)
    study = refinement_study(build_problem(pf), levels, pf.solver.tol, pf.solver.max_iter)
    typer.echo(report_json(study.to_dict()), nl=False)


def run(argv: Optional[list[str]] = None) -> int:
    """
    Dispatch argv and map failures to exit codes; diagnostics go to stderr

    typer runs in standalone mode and reports its own usage errors with
    exit status 2, which is folded into EXIT_USAGE here. Domain errors are
    not handled by typer and arrive as exceptions.
    """
    try:
        app(args=argv, prog_name="cli.py")
    except SystemExit as e:
        code = e.code if isinstance(e.code, int) else (0 if e.code is None else EXIT_USAGE)
        return EXIT_USAGE if code == TYPER_USAGE_STATUS else code
    except NUMERICAL_ERRORS as e:
        typer.echo(f"numerical failure: {e}", err=True)
        return EXIT_NUMERICAL
    except USAGE_ERRORS as e:
        typer.echo(f"error: {e}", err=True)
        return EXIT_USAGE
    return 0


def entrypoint():
    sys.exit(run())


if __name__ == '__main__':
    entrypoint()
