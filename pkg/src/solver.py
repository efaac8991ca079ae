"""
Mild-solution solver for the nonlocal Hilfer integro-differential problem

    D^{mu,nu} u + A u = f(t, u) + (1/Gamma(mu)) int H^mu(t, s) K(t, s, u(s)) ds
    I^{1-gamma} u(t0+) + g(u(t_1), ..., u(t_p)) = u0

The mild form is iterated by successive approximation in the weighted norm
of C_{1-gamma}; the strong form is checked afterwards by a residual.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from config import config
from errors import DomainError, GridMismatchError, NonFiniteError
from frac_ops import (
    IDENTITY, Grid, PsiFunction, Trajectory, hilfer_derivative_path, l1_weights,
    product_weights, psi_frac_integral, weight_factor, weighted_distance,
)
from operators import (
    DEFAULT_SUBORDINATION, Generator, SubordinationControl, p_operator_lags, s_operator_on_grid,
)
from run_logger import RunLogger

logger = logging.getLogger(__name__)

# f(t (m,), u (m, d)) -> (m, d)
StateMap = Callable[[np.ndarray, np.ndarray], np.ndarray]
# K(t (m,), s (m,), u (m, d)) -> (m, d)
KernelMap = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
# g(u at the nonlocal points (p, d)) -> (d,)
NonlocalMap = Callable[[np.ndarray], np.ndarray]

# Dense convolution tensors are built only below this many entries
CONV_DENSE_LIMIT = 2 ** 25


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """
    One instance of the nonlocal problem. f, kernel and nonlocal_g may be
    None, meaning identically zero.
    """
    mu: float
    nu: float
    t0: float
    a: float
    A: Generator
    u0: np.ndarray
    f: Optional[StateMap] = None
    kernel: Optional[KernelMap] = None
    nonlocal_points: tuple[float, ...] = ()
    nonlocal_g: Optional[NonlocalMap] = None
    psi: PsiFunction = IDENTITY

    def __post_init__(self):
        if not 0 < self.mu <= 1:
            raise DomainError(f"mu must lie in (0, 1], got {self.mu}")
        if not 0 <= self.nu <= 1:
            raise DomainError(f"nu must lie in [0, 1], got {self.nu}")
        if not self.a > 0:
            raise DomainError(f"horizon a must be positive, got {self.a}")
        if self.t0 < 0:
            raise DomainError(f"t0 must be non-negative, got {self.t0}")
        if self.gamma < 1 and self.t0 != 0:
            raise DomainError(f"gamma = {self.gamma} < 1 requires t0 = 0, got t0 = {self.t0}")

        u0 = np.atleast_1d(np.asarray(self.u0, dtype=float))
        if u0.shape != (self.A.dim,):
            raise DomainError(f"u0 has shape {u0.shape}, generator dimension is {self.A.dim}")
        object.__setattr__(self, 'u0', u0)

        points = tuple(float(p) for p in self.nonlocal_points)
        if any(b <= a for a, b in zip(points, points[1:])):
            raise DomainError(f"nonlocal points must be strictly increasing, got {points}")
        if points and (points[0] < self.t0 or points[-1] > self.t0 + self.a):
            raise DomainError(f"nonlocal points {points} outside [{self.t0}, {self.t0 + self.a}]")
        if points and self.gamma < 1 and points[0] <= 0:
            raise DomainError("u is singular at t = 0 when gamma < 1; nonlocal points must be positive")
        if points and self.nonlocal_g is None:
            raise DomainError("nonlocal points given without a nonlocal map g")
        object.__setattr__(self, 'nonlocal_points', points)

    @property
    def gamma(self) -> float:
        return self.mu + self.nu * (1 - self.mu)

    @property
    def dim(self) -> int:
        return self.A.dim

    def grid(self, n: int) -> Grid:
        return Grid(self.t0, self.a, n)

    def nonlocal_value(self, u: Trajectory) -> np.ndarray:
        """g evaluated on u at the nonlocal points (zero when g is absent)"""
        if self.nonlocal_g is None:
            return np.zeros(self.dim)
        values = u.at(self.nonlocal_points) if self.nonlocal_points else np.zeros((0, self.dim))
        out = np.asarray(self.nonlocal_g(values), dtype=float)
        return np.broadcast_to(out, (self.dim,)).copy()


def _evaluate_state_map(fn, dim: int, *args) -> np.ndarray:
    m = args[0].shape[0]
    return np.broadcast_to(np.asarray(fn(*args), dtype=float), (m, dim))


class MildOperator:
    """
    The fixed-point map of the mild formulation on one grid

    Everything that does not depend on the iterate (solution operators,
    product weights, the mesh of Volterra pairs) is built once.
    """

    def __init__(self, problem: ProblemSpec, grid: Grid, ctl: SubordinationControl = DEFAULT_SUBORDINATION):
        if grid.t0 != problem.t0 or not math.isclose(grid.a, problem.a, rel_tol=1e-12):
            raise GridMismatchError(f"grid [{grid.t0}, {grid.end}] does not cover the problem horizon")
        self.problem = problem
        self.grid = grid
        self.ctl = ctl
        self.weights = weight_factor(grid, problem.gamma)

    @cached_property
    def p_lags(self) -> np.ndarray:
        return p_operator_lags(self.problem.A, self.problem.mu, self.grid.nodes - self.grid.t0, self.ctl)

    @cached_property
    def s_tilde(self) -> np.ndarray:
        p = self.problem
        return s_operator_on_grid(p.A, p.mu, p.nu, self.grid, self.ctl)

    @cached_property
    def conv_weights(self) -> np.ndarray:
        return product_weights(self.grid, self.problem.mu, IDENTITY, self.problem.gamma)

    @cached_property
    def _dense_conv(self) -> Optional[np.ndarray]:
        n, d = self.grid.n, self.problem.dim
        if (n + 1) ** 2 * d * d > CONV_DENSE_LIMIT:
            return None
        lag_index = np.subtract.outer(np.arange(n + 1), np.arange(n + 1)).clip(min=0)
        return self.conv_weights[:, :, None, None] * self.p_lags[lag_index]

    @cached_property
    def _volterra_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """(i, j) node pairs where the kernel is sampled"""
        n = self.grid.n
        rows, cols = [], []
        first = 0 if self.problem.gamma == 1 else 1
        for i in range(1, n + 1):
            last = i if first == 0 else max(i, 2)
            js = np.arange(first, last + 1)
            rows.append(np.full(js.size, i))
            cols.append(js)
        return np.concatenate(rows), np.concatenate(cols)

    @cached_property
    def volterra_weights(self) -> np.ndarray:
        p = self.problem
        return product_weights(self.grid, p.mu, p.psi, p.gamma)

    def convolve(self, phi: np.ndarray) -> np.ndarray:
        """t_i^{1-gamma} sum_j W[i, j] P(t_i - s_j) phi_j"""
        dense = self._dense_conv
        if dense is not None:
            out = np.einsum('ijab,jb->ia', dense, phi)
        else:
            out = np.zeros_like(phi)
            for i in range(1, self.grid.n + 1):
                out[i] = np.einsum('j,jab,jb->a', self.conv_weights[i, :i + 1], self.p_lags[i::-1], phi[:i + 1])
        return out * self.weights[:, None]

    def forcing(self, u: Trajectory) -> np.ndarray:
        """Weighted source s^{1-gamma} f(s, u(s)) at every node"""
        p, nodes = self.problem, self.grid.nodes
        phi = np.zeros((self.grid.n + 1, p.dim))
        if p.f is None:
            return phi
        unweighted = u.unweighted()
        start = 0 if p.gamma == 1 else 1
        values = _evaluate_state_map(p.f, p.dim, nodes[start:], unweighted[start:])
        phi[start:] = values * self.weights[start:, None]
        if start == 1:
            phi[0] = 2 * phi[1] - phi[2]
        return phi

    def volterra(self, u: Trajectory) -> np.ndarray:
        """Weighted s^{1-gamma} (1/Gamma(mu)) int H^mu(s, tau) K(s, tau, u(tau)) dtau"""
        p, nodes = self.problem, self.grid.nodes
        n = self.grid.n
        out = np.zeros((n + 1, p.dim))
        if p.kernel is None:
            return out
        rows, cols = self._volterra_pairs
        unweighted = u.unweighted()
        values = _evaluate_state_map(p.kernel, p.dim, nodes[rows], nodes[cols], unweighted[cols])
        values = values * self.weights[cols, None]

        if p.gamma < 1:
            # Column 0 extrapolated per row from columns 1 and 2
            first = np.flatnonzero(cols == 1)
            second = np.flatnonzero(cols == 2)
            column0 = 2 * values[first] - values[second]
            rows = np.concatenate([np.arange(1, n + 1), rows])
            cols = np.concatenate([np.zeros(n, dtype=int), cols])
            values = np.concatenate([column0, values])

        pair_weights = self.volterra_weights[rows, cols]
        for k in range(p.dim):
            out[:, k] = np.bincount(rows, weights=pair_weights * values[:, k], minlength=n + 1)
        return out * self.weights[:, None] / math.gamma(p.mu)

    def homogeneous(self, u: Trajectory) -> np.ndarray:
        start = self.problem.u0 - self.problem.nonlocal_value(u)
        return self.s_tilde @ start

    def __call__(self, u: Trajectory) -> Trajectory:
        self.grid.require_same(u.grid)
        if u.dim != self.problem.dim:
            raise DomainError(f"iterate dimension {u.dim} does not match problem dimension {self.problem.dim}")
        values = self.homogeneous(u)
        p = self.problem
        if p.f is not None or p.kernel is not None:
            values = values + self.convolve(self.forcing(u) + self.volterra(u))
        if not np.all(np.isfinite(values)):
            bad = int(np.argmax(~np.all(np.isfinite(values), axis=1)))
            raise NonFiniteError(f"iterate became non-finite at node {bad} (t = {self.grid.nodes[bad]})")
        return u.with_values(values)


def apply_F(problem: ProblemSpec, u: Trajectory, operator: Optional[MildOperator] = None) -> Trajectory:
    """One application of the mild-solution map to u"""
    operator = operator or MildOperator(problem, u.grid)
    return operator(u)


@dataclass
class SolveReport:
    iterations: int
    residuals: list[float]
    converged: bool
    measured_ratio: Optional[float]
    final: Trajectory
    error_bound: Optional[float] = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            'iterations': self.iterations,
            'residuals': list(self.residuals),
            'converged': self.converged,
            'measured_ratio': self.measured_ratio,
            'error_bound': self.error_bound,
            'grid': {'t0': self.final.grid.t0, 'a': self.final.grid.a, 'n': self.final.grid.n},
            'gamma': self.final.gamma,
            'notes': list(self.notes),
        }


def measured_ratio(residuals: Sequence[float]) -> Optional[float]:
    """max residuals[k+1] / residuals[k] over k >= 1; None with fewer than two such pairs"""
    ratios = [
        residuals[k + 1] / residuals[k]
        for k in range(1, len(residuals) - 1)
        if residuals[k] > 0
    ]
    return max(ratios) if ratios else None


def mild_solve(problem: ProblemSpec, grid: Grid, tol: float = config.solver_tol,
               max_iter: int = config.solver_max_iter, initial: Optional[Trajectory] = None,
               ctl: SubordinationControl = DEFAULT_SUBORDINATION,
               run_logger: Optional[RunLogger] = None) -> SolveReport:
    """
    Successive approximation u_{k+1} = F(u_k) from the weighted constant u0
    (or `initial`) until the weighted difference drops below tol
    """
    if not tol > 0:
        raise DomainError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise DomainError(f"max_iter must be at least 1, got {max_iter}")

    operator = MildOperator(problem, grid, ctl)
    current = initial if initial is not None else Trajectory.constant(grid, problem.gamma, problem.u0)
    grid.require_same(current.grid)
    if not math.isclose(current.gamma, problem.gamma):
        raise DomainError(f"initial iterate has gamma {current.gamma}, problem has {problem.gamma}")

    residuals: list[float] = []
    converged = False
    for k in range(1, max_iter + 1):
        following = operator(current)
        diff = weighted_distance(following, current)
        residuals.append(diff)
        current = following
        ratio = diff / residuals[-2] if len(residuals) > 1 and residuals[-2] > 0 else None
        logger.debug("iteration %d: weighted difference %.3e", k, diff)
        if run_logger is not None:
            run_logger.log_iteration(k, diff, ratio)
        if diff < tol:
            converged = True
            break

    if not converged:
        logger.warning("no convergence after %d iterations (last difference %.3e)", max_iter, residuals[-1])

    ratio = measured_ratio(residuals)
    error_bound = None
    if ratio is not None and ratio < 1:
        error_bound = residuals[-1] * ratio / (1 - ratio)

    report = SolveReport(
        iterations=len(residuals),
        residuals=residuals,
        converged=converged,
        measured_ratio=ratio,
        final=current,
        error_bound=error_bound,
    )
    if run_logger is not None:
        run_logger.log_solve_end(report)
    return report


# ============================================================================
# STRONG-SOLUTION CHECKS
# ============================================================================

@dataclass(frozen=True, eq=False)
class ResidualPath:
    """Weighted residual at the nodes; NaN where the node is excluded"""
    grid: Grid
    gamma: float
    values_weighted: np.ndarray
    layer: float

    @property
    def included(self) -> np.ndarray:
        return ~np.any(np.isnan(self.values_weighted), axis=1)

    @property
    def sup_norm(self) -> float:
        norms = np.linalg.norm(self.values_weighted[self.included], axis=1)
        return float(norms.max()) if norms.size else 0.0


def strong_residual(problem: ProblemSpec, u: Trajectory, layer: float = config.residual_layer,
                    operator: Optional[MildOperator] = None) -> ResidualPath:
    """
    t^{1-gamma} (D^{mu,nu} u + A u - f(t, u) - (1/Gamma(mu)) int H^mu K ds) on the grid

    Node 0 and the nodes with t - t0 < layer * a are left out: the derivative
    stencil loses its order next to the t^{gamma-1} singularity.
    """
    if not 0 <= layer < 1:
        raise DomainError(f"residual layer must lie in [0, 1), got {layer}")
    operator = operator or MildOperator(problem, u.grid)
    grid = u.grid

    if problem.mu == 1:
        derivative = l1_weights(grid, 0.0) @ u.unweighted()
    else:
        derivative = hilfer_derivative_path(problem.mu, problem.nu, u)

    weights = operator.weights
    with np.errstate(invalid='ignore'):
        residual = (
            derivative * weights[:, None]
            + u.values_weighted @ problem.A.matrix.T
            - operator.forcing(u)
            - operator.volterra(u)
        )
    excluded = (grid.nodes - grid.t0) < layer * grid.a
    excluded[0] = True
    residual[excluded] = np.nan
    return ResidualPath(grid, u.gamma, residual, layer)


def initial_condition_check(problem: ProblemSpec, u: Trajectory, extrapolate: bool = True) -> float:
    """
    |I^{1-gamma} u(t0+) + g(u(t_1), ..., u(t_p)) - u0|

    For gamma < 1 the fractional integral J = I^{1-gamma} u is evaluated at
    the first interior node. With extrapolate=True (the default) it is also
    taken at the second node and extrapolated to t0+ under the assumption
    J(t) = J(0) + c t^mu near t0, the leading behaviour of the homogeneous
    part. Where the sources add other powers of t the extrapolated value
    levels off at a small floor instead of shrinking with h; extrapolate=False
    returns the plain first-node value, which is O(h^mu).
    """
    g_value = problem.nonlocal_value(u)
    if problem.gamma == 1:
        start = u.values_weighted[0]
    else:
        order = 1 - problem.gamma
        j1 = psi_frac_integral(order, IDENTITY, u, 1)
        if extrapolate:
            j2 = psi_frac_integral(order, IDENTITY, u, 2)
            scale = 2 ** problem.mu
            start = (j1 * scale - j2) / (scale - 1)
        else:
            start = j1
    return float(np.linalg.norm(start + g_value - problem.u0))


# ============================================================================
# GRID REFINEMENT
# ============================================================================

@dataclass
class RefinementStudy:
    levels: list[int]
    reports: list[SolveReport]
    differences: list[float]

    @property
    def observed_orders(self) -> list[float]:
        return [
            math.log2(a / b) if a > 0 and b > 0 else math.nan
            for a, b in zip(self.differences, self.differences[1:])
        ]

    def to_dict(self) -> dict:
        return {
            'levels': list(self.levels),
            'differences': list(self.differences),
            'observed_orders': self.observed_orders,
            'iterations': [r.iterations for r in self.reports],
            'converged': [r.converged for r in self.reports],
        }


def refinement_study(problem: ProblemSpec, levels: Sequence[int], tol: float = config.solver_tol,
                     max_iter: int = config.solver_max_iter,
                     ctl: SubordinationControl = DEFAULT_SUBORDINATION) -> RefinementStudy:
    """Solve on each level; compare consecutive levels on the coarse nodes"""
    levels = list(levels)
    if len(levels) < 2:
        raise DomainError("a refinement study needs at least two grid levels")
    for coarse, fine in zip(levels, levels[1:]):
        if fine <= coarse or fine % coarse:
            raise DomainError(f"grid levels must refine by integer factors, got {coarse} -> {fine}")

    reports = [mild_solve(problem, problem.grid(n), tol, max_iter, ctl=ctl) for n in levels]
    differences = []
    for coarse, fine, rc, rf in zip(levels, levels[1:], reports, reports[1:]):
        restricted = rf.final.values_weighted[::fine // coarse]
        diff = np.linalg.norm(restricted - rc.final.values_weighted, axis=1).max()
        differences.append(float(diff))
        logger.info("refinement %d -> %d: weighted difference %.3e", coarse, fine, diff)
    return RefinementStudy(levels, reports, differences)
