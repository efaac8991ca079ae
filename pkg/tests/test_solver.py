import json
import math
import time

import numpy as np
import pytest

from certificates import certify, estimate_constants
from errors import DomainError, GridMismatchError, NonFiniteError
from frac_ops import Grid, Trajectory, weighted_distance, weighted_norm
from operators import Generator, s_operator_on_grid
from problem_file import build_constants
from run_logger import RunLogger
from solver import (
    MildOperator, ProblemSpec, apply_F, initial_condition_check, measured_ratio, mild_solve,
    refinement_study, strong_residual,
)
from specfun import mittag_leffler


def scalar_problem(mu=0.5, nu=0.5, lam=1.0, u0=1.0, a=1.0, **kwargs):
    return ProblemSpec(mu=mu, nu=nu, t0=0.0, a=a, A=Generator.scalar(lam), u0=np.array([u0]), **kwargs)


# ============================================================================
# PROBLEM DEFINITION
# ============================================================================

def test_problem_validation():
    with pytest.raises(DomainError):
        ProblemSpec(mu=0.5, nu=0.5, t0=1.0, a=1.0, A=Generator.scalar(1.0), u0=np.array([1.0]))
    with pytest.raises(DomainError):
        scalar_problem(mu=0.0)
    with pytest.raises(DomainError):
        ProblemSpec(mu=0.5, nu=1.0, t0=0.0, a=1.0, A=Generator.scalar(1.0), u0=np.array([1.0, 2.0]))
    with pytest.raises(DomainError):
        scalar_problem(nonlocal_points=(0.5, 0.2), nonlocal_g=lambda v: v.sum(axis=0))
    with pytest.raises(DomainError):
        scalar_problem(nonlocal_points=(0.5,))
    with pytest.raises(DomainError):
        scalar_problem(nonlocal_points=(1.5,), nonlocal_g=lambda v: v.sum(axis=0))


def test_problem_gamma():
    assert scalar_problem(mu=0.5, nu=0.5).gamma == pytest.approx(0.75)
    assert scalar_problem(mu=0.5, nu=1.0).gamma == 1.0
    assert scalar_problem(mu=0.5, nu=0.0).gamma == 0.5


def test_operator_rejects_foreign_grid():
    problem = scalar_problem()
    with pytest.raises(GridMismatchError):
        MildOperator(problem, Grid(0.0, 2.0, 32))


# ============================================================================
# MILD OPERATOR
# ============================================================================

def test_apply_F_without_sources_is_homogeneous():
    problem = scalar_problem(nu=1.0)
    grid = problem.grid(64)
    first = apply_F(problem, Trajectory.constant(grid, 1.0, [0.0]))
    second = apply_F(problem, Trajectory.constant(grid, 1.0, [5.0]))
    assert np.array_equal(first.values_weighted, second.values_weighted)
    expected = s_operator_on_grid(problem.A, 0.5, 1.0, grid)[:, 0, 0]
    assert np.allclose(first.values_weighted[:, 0], expected, rtol=0, atol=1e-14)


def test_apply_F_caputo_value():
    problem = scalar_problem(nu=1.0)
    grid = problem.grid(256)
    out = apply_F(problem, Trajectory.constant(grid, 1.0, [1.0]))
    assert out.values_weighted[-1, 0] == pytest.approx(0.4275836, abs=1e-4)


def test_apply_F_constant_nonlocal_map():
    problem = scalar_problem(nu=1.0, nonlocal_g=lambda values: np.array([0.3]))
    grid = problem.grid(64)
    out = apply_F(problem, Trajectory.constant(grid, 1.0, [1.0]))
    expected = 0.7 * s_operator_on_grid(problem.A, 0.5, 1.0, grid)[:, 0, 0]
    assert np.allclose(out.values_weighted[:, 0], expected, rtol=0, atol=1e-14)


def test_apply_F_non_finite():
    problem = ProblemSpec(
        mu=0.5, nu=1.0, t0=0.0, a=1.0, A=Generator.scalar(0.0), u0=np.array([20.0]),
        f=lambda t, u: np.exp(50 * u),
    )
    grid = problem.grid(32)
    with np.errstate(all='ignore'), pytest.raises(NonFiniteError):
        apply_F(problem, Trajectory.constant(grid, 1.0, [20.0]))


# ============================================================================
# PICARD ITERATION
# ============================================================================

def test_measured_ratio():
    assert measured_ratio([1.0, 0.5, 0.25, 0.1]) == pytest.approx(0.5)
    assert measured_ratio([1.0, 0.5]) is None
    assert measured_ratio([1.0, 0.0, 0.0]) is None


def test_solve_argument_checks():
    problem = scalar_problem()
    with pytest.raises(DomainError):
        mild_solve(problem, problem.grid(32), tol=0.0)
    with pytest.raises(DomainError):
        mild_solve(problem, problem.grid(32), max_iter=0)


def test_homogeneous_solve_stops_after_two_iterations():
    problem = scalar_problem()
    report = mild_solve(problem, problem.grid(64))
    assert report.converged
    assert report.iterations == 2
    assert report.residuals[1] == 0.0
    assert report.measured_ratio is None
    data = report.to_dict()
    assert data['grid'] == {'t0': 0.0, 'a': 1.0, 'n': 64}
    assert data['gamma'] == pytest.approx(0.75)


def test_scalar_hilfer_linear_oracle(acceptance_n):
    problem = scalar_problem(mu=0.5, nu=0.5)
    grid = problem.grid(acceptance_n)
    start = time.perf_counter()
    report = mild_solve(problem, grid)
    elapsed = time.perf_counter() - start
    assert report.converged
    assert elapsed < 30.0

    expected = np.array([mittag_leffler(0.5, 0.75, -t ** 0.5) for t in grid.nodes])
    computed = report.final.values_weighted[:, 0]
    assert np.all(np.abs(computed - expected) <= 1e-3 * np.abs(expected))


@pytest.mark.parametrize("nu,oracle", [(1.0, 0.4275836), (0.0, 0.1366065)])
def test_limit_cases(nu, oracle):
    problem = scalar_problem(mu=0.5, nu=nu)
    grid = problem.grid(256)
    report = mild_solve(problem, grid)
    assert report.final.values_weighted[-1, 0] == pytest.approx(oracle, abs=1e-3)

    gamma = problem.gamma
    expected = np.array([mittag_leffler(0.5, gamma, -t ** 0.5) for t in grid.nodes])
    assert np.allclose(report.final.values_weighted[:, 0], expected, rtol=0, atol=1e-3)


@pytest.mark.parametrize("mu", [0.85, 0.9, 0.95])
def test_orders_close_to_one(mu):
    problem = scalar_problem(mu=mu, nu=1.0)
    grid = problem.grid(256)
    report = mild_solve(problem, grid)
    assert report.converged
    expected = np.array([mittag_leffler(mu, 1.0, -t ** mu) for t in grid.nodes])
    assert np.allclose(report.final.values_weighted[:, 0], expected, rtol=0, atol=1e-3)


def test_contractive_instance_iterates_below_certificate(load_problem):
    pf, problem = load_problem("contractive")
    report = mild_solve(problem, problem.grid(pf.grid.n), pf.solver.tol, pf.solver.max_iter)
    assert report.converged
    assert report.iterations >= 5
    assert report.measured_ratio is not None
    assert report.measured_ratio <= 0.79
    assert report.error_bound is not None and report.error_bound >= 0

    # the converged iterate is a fixed point up to the stopping tolerance
    again = apply_F(problem, report.final)
    assert weighted_distance(again, report.final) < 2 * pf.solver.tol


@pytest.mark.parametrize("name", ["contractive", "gronwall", "hilfer_linear", "homogeneous", "nonlinear", "rotation"])
def test_bundled_examples_contract_within_certificate(load_problem, name):
    pf, problem = load_problem(name)
    constants = build_constants(pf) or estimate_constants(problem, samples=500)
    certificate = certify(constants)
    assert certificate.passed

    report = mild_solve(problem, problem.grid(pf.grid.n), pf.solver.tol, pf.solver.max_iter)
    assert report.converged
    if report.measured_ratio is not None:
        assert report.measured_ratio <= certificate.q + 0.1


def test_solution_is_unique_on_nonlinear_instance(load_problem):
    pf, problem = load_problem("nonlinear")
    grid = problem.grid(pf.grid.n)
    tol = pf.solver.tol
    from_zero = mild_solve(problem, grid, tol, initial=Trajectory.constant(grid, problem.gamma, [0.0]))
    from_edge = mild_solve(problem, grid, tol, initial=Trajectory.constant(grid, problem.gamma, [2.0]))
    assert from_zero.converged and from_edge.converged
    assert weighted_distance(from_zero.final, from_edge.final) <= 10 * tol


def test_rejects_initial_iterate_with_other_gamma():
    problem = scalar_problem(nu=0.5)
    grid = problem.grid(32)
    with pytest.raises(DomainError):
        mild_solve(problem, grid, initial=Trajectory.constant(grid, 1.0, [1.0]))


def test_run_logger_records_iterations(tmp_path, load_problem):
    pf, problem = load_problem("contractive")
    log_file = tmp_path / "run.json"
    run_logger = RunLogger(str(log_file))
    run_logger.clear_log()
    run_logger.set_problem_info(pf.name, problem.mu, problem.nu, problem.dim, 64)
    report = mild_solve(problem, problem.grid(64), run_logger=run_logger)

    assert len(run_logger.logs['iterations']) == report.iterations
    assert run_logger.get_iteration(1)['ratio'] is None
    assert run_logger.get_iteration(report.iterations + 1) is None

    saved = json.loads(log_file.read_text())
    assert saved['problem_info']['name'] == "contractive"
    assert saved['problem_info']['gamma'] == pytest.approx(1.0)
    assert saved['solve_end']['converged'] is True
    assert len(saved['iterations']) == report.iterations


def test_run_logger_without_file():
    run_logger = RunLogger()
    run_logger.clear_log()
    run_logger.log_iteration(1, 0.5, None)
    run_logger.log_iteration(2, 0.1, 0.2)
    assert run_logger.get_iteration(2)['residual'] == 0.1


# ============================================================================
# STRONG-SOLUTION CHECKS
# ============================================================================

def test_residual_of_exact_solution():
    problem = scalar_problem(mu=0.5, nu=1.0)
    grid = problem.grid(512)
    exact = np.array([mittag_leffler(0.5, 1.0, -t ** 0.5) for t in grid.nodes])
    path = strong_residual(problem, Trajectory(grid, 1.0, exact))
    assert path.sup_norm <= 0.05
    assert not path.included[0]
    assert path.included[-1]


def test_residual_of_zero_trajectory():
    problem = scalar_problem(u0=0.0)
    grid = problem.grid(64)
    path = strong_residual(problem, Trajectory.constant(grid, problem.gamma, [0.0]))
    assert path.sup_norm == 0.0
    assert np.all(path.values_weighted[path.included] == 0.0)


def test_residual_layer_validation():
    problem = scalar_problem()
    grid = problem.grid(32)
    with pytest.raises(DomainError):
        strong_residual(problem, Trajectory.constant(grid, problem.gamma, [0.0]), layer=1.0)


def test_residual_decreases_under_refinement():
    problem = scalar_problem(mu=0.5, nu=0.5)
    norms = []
    for n in (256, 512):
        report = mild_solve(problem, problem.grid(n))
        norms.append(strong_residual(problem, report.final).sup_norm)
    assert norms[0] / norms[1] >= 1.5
    assert initial_condition_check(problem, report.final) <= 0.02


def test_initial_condition_riemann_liouville_case():
    problem = scalar_problem(mu=0.5, nu=0.0)
    report = mild_solve(problem, problem.grid(512))
    assert initial_condition_check(problem, report.final) <= 0.02
    plain = initial_condition_check(problem, report.final, extrapolate=False)
    # J(h) - 1 is close to -h^mu / Gamma(1 + mu) at the first node
    assert 0.03 < plain < 0.07


def test_initial_condition_of_homogeneous_caputo_solution():
    problem = scalar_problem(nu=1.0)
    report = mild_solve(problem, problem.grid(64))
    assert initial_condition_check(problem, report.final) < 1e-12


@pytest.mark.parametrize("nu", [0.5, 1.0])
def test_initial_condition_balanced_by_nonlocal_term(nu):
    problem = scalar_problem(nu=nu, u0=0.4, nonlocal_g=lambda values: np.array([0.4]))
    grid = problem.grid(32)
    zero = Trajectory.constant(grid, problem.gamma, [0.0])
    assert initial_condition_check(problem, zero) == pytest.approx(0.0, abs=1e-15)


# ============================================================================
# GRID REFINEMENT
# ============================================================================

def test_refinement_differences_shrink(load_problem):
    _, problem = load_problem("contractive")
    study = refinement_study(problem, [64, 128, 256])
    assert len(study.differences) == 2
    assert study.differences[1] < study.differences[0]
    assert all(math.isfinite(order) for order in study.observed_orders)
    assert study.to_dict()['levels'] == [64, 128, 256]


def test_refinement_on_standard_levels(load_problem):
    _, problem = load_problem("contractive")
    study = refinement_study(problem, [128, 256, 512])
    assert study.differences[0] > study.differences[1] > 0


def test_refinement_levels_validated():
    problem = scalar_problem()
    with pytest.raises(DomainError):
        refinement_study(problem, [64])
    with pytest.raises(DomainError):
        refinement_study(problem, [64, 96])


def test_weighted_norm_of_solution_bounded(load_problem):
    pf, problem = load_problem("nonlinear")
    report = mild_solve(problem, problem.grid(pf.grid.n))
    assert weighted_norm(report.final) <= pf.constants.r
