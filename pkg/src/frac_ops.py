"""
Fractional operators on a uniform grid
psi-fractional integral by product integration, Hilfer derivative and the
weighted C_{1-gamma} norm
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property, lru_cache
from typing import Callable, Optional, Union

import numpy as np
from scipy import integrate, special

from errors import DomainError, GridMismatchError, NonFiniteError

logger = logging.getLogger(__name__)

# Tolerance for deciding that b + order - 1 vanishes in limits at the origin
ORIGIN_EXPONENT_TOL = 1e-12


class PsiKind(Enum):
    IDENTITY = "identity"
    POWER = "power"
    EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class PsiFunction:
    """Increasing kernel generator psi used by H^mu(t, s) = psi'(s)(psi(t) - psi(s))^(mu-1)"""
    kind: PsiKind = PsiKind.IDENTITY
    parameter: float = 1.0

    def __post_init__(self):
        if not self.parameter > 0:
            raise DomainError(f"psi parameter must be positive, got {self.parameter}")

    @classmethod
    def identity(cls) -> "PsiFunction":
        return cls(PsiKind.IDENTITY, 1.0)

    @classmethod
    def power(cls, p: float) -> "PsiFunction":
        return cls(PsiKind.POWER, p)

    @classmethod
    def exponential(cls, c: float) -> "PsiFunction":
        return cls(PsiKind.EXPONENTIAL, c)

    @property
    def is_identity(self) -> bool:
        return self.kind is PsiKind.IDENTITY or (self.kind is PsiKind.POWER and self.parameter == 1.0)

    def eval(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind is PsiKind.IDENTITY:
            return t
        if self.kind is PsiKind.POWER:
            return t ** self.parameter
        return np.exp(self.parameter * t)

    __call__ = eval

    def deriv(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind is PsiKind.IDENTITY:
            return np.ones_like(t)
        if self.kind is PsiKind.POWER:
            return self.parameter * t ** (self.parameter - 1)
        return self.parameter * np.exp(self.parameter * t)

    def check_increasing(self, grid: "Grid"):
        """psi' must be positive on the open working interval"""
        inner = grid.nodes[1:-1]
        if inner.size and not np.all(self.deriv(inner) > 0):
            raise DomainError(f"psi ({self.kind.value}, {self.parameter}) is not increasing on the grid")

    def to_dict(self) -> dict:
        return {'kind': self.kind.value, 'parameter': self.parameter}


IDENTITY = PsiFunction.identity()


@dataclass(frozen=True)
class Grid:
    """Uniform grid t0 = tau_0 < ... < tau_n = t0 + a"""
    t0: float
    a: float
    n: int

    def __post_init__(self):
        if not self.a > 0:
            raise DomainError(f"horizon length must be positive, got {self.a}")
        if self.n < 8:
            raise DomainError(f"grid needs at least 8 subintervals, got {self.n}")
        if self.t0 < 0:
            raise DomainError(f"start time must be non-negative, got {self.t0}")

    @property
    def h(self) -> float:
        return self.a / self.n

    @property
    def end(self) -> float:
        return self.t0 + self.a

    @cached_property
    def nodes(self) -> np.ndarray:
        nodes = self.t0 + self.h * np.arange(self.n + 1)
        nodes[-1] = self.end
        nodes.setflags(write=False)
        return nodes

    def refine(self, factor: int = 2) -> "Grid":
        return Grid(self.t0, self.a, self.n * factor)

    def require_same(self, other: "Grid"):
        if self != other:
            raise GridMismatchError(f"grid mismatch: {self} vs {other}")


def weight_factor(grid: Grid, gamma: float) -> np.ndarray:
    """t^{1-gamma} at the grid nodes"""
    if gamma == 1:
        return np.ones(grid.n + 1)
    return grid.nodes ** (1 - gamma)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    Grid-sampled state path stored in weighted form w(t) = t^{1-gamma} u(t)

    values_weighted has shape (n + 1, dim); every entry is finite, including
    the origin where u itself blows up when gamma < 1.
    """
    grid: Grid
    gamma: float
    values_weighted: np.ndarray

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise DomainError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.gamma < 1 and self.grid.t0 != 0:
            raise DomainError("weighted trajectories with gamma < 1 must start at t0 = 0")
        values = np.array(self.values_weighted, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != self.grid.n + 1:
            raise GridMismatchError(
                f"trajectory values of shape {values.shape} do not match a grid with {self.grid.n + 1} nodes"
            )
        if not np.all(np.isfinite(values)):
            bad = int(np.argmax(~np.all(np.isfinite(values), axis=1)))
            raise NonFiniteError(f"trajectory is not finite at node {bad} (t = {self.grid.nodes[bad]})")
        values.setflags(write=False)
        object.__setattr__(self, 'values_weighted', values)

    @property
    def dim(self) -> int:
        return self.values_weighted.shape[1]

    @classmethod
    def constant(cls, grid: Grid, gamma: float, weighted_value) -> "Trajectory":
        value = np.atleast_1d(np.asarray(weighted_value, dtype=float))
        return cls(grid, gamma, np.tile(value, (grid.n + 1, 1)))

    @classmethod
    def from_function(cls, grid: Grid, gamma: float, weighted: Callable[[np.ndarray], np.ndarray]) -> "Trajectory":
        """Build from a vectorized function of t returning the weighted values"""
        return cls(grid, gamma, np.asarray(weighted(grid.nodes), dtype=float))

    def with_values(self, values_weighted: np.ndarray) -> "Trajectory":
        return Trajectory(self.grid, self.gamma, values_weighted)

    def weights(self) -> np.ndarray:
        return weight_factor(self.grid, self.gamma)

    def unweighted(self) -> np.ndarray:
        """u at the nodes; NaN at t = 0 when gamma < 1"""
        out = np.full_like(self.values_weighted, np.nan)
        nodes = self.grid.nodes
        mask = nodes > 0 if self.gamma < 1 else np.ones(nodes.shape, dtype=bool)
        out[mask] = self.values_weighted[mask] * (nodes[mask] ** (self.gamma - 1))[:, None]
        return out

    def weighted_at(self, times) -> np.ndarray:
        """Linear interpolation of the weighted path at arbitrary times"""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if np.any(times < self.grid.t0) or np.any(times > self.grid.end):
            raise DomainError(f"interpolation times {times} outside [{self.grid.t0}, {self.grid.end}]")
        return np.column_stack([
            np.interp(times, self.grid.nodes, self.values_weighted[:, k]) for k in range(self.dim)
        ])

    def at(self, times) -> np.ndarray:
        """u at arbitrary times > 0, interpolated in the weighted variable"""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        w = self.weighted_at(times)
        if self.gamma == 1:
            return w
        if np.any(times <= 0):
            raise DomainError("u(t) is singular at t = 0 when gamma < 1")
        return w * (times ** (self.gamma - 1))[:, None]


GridFunction = Union[Trajectory, np.ndarray]


# ============================================================================
# PRODUCT INTEGRATION WEIGHTS
# ============================================================================

def _regular_panel_weights(x_nodes: np.ndarray, i: int, order: float) -> np.ndarray:
    """
    Weights for int_{X_0}^{X_i} (X_i - x)^{order-1} phi(x) dx with phi linear
    between consecutive X_j, all moments in closed form
    """
    u = x_nodes[i] - x_nodes[:i + 1]
    u[-1] = 0.0
    powered = u ** order / order
    powered_next = u ** (order + 1) / (order + 1)
    m0 = powered[:-1] - powered[1:]
    m1 = u[:-1] * m0 - (powered_next[:-1] - powered_next[1:])
    dx = np.diff(x_nodes[:i + 1])
    row = np.zeros(i + 1)
    row[:-1] += m0 - m1 / dx
    row[1:] += m1 / dx
    return row


def _singular_identity_weights(n: int, h: float, i: int, order: float, singular: float) -> np.ndarray:
    """
    Weights for int_0^{T} tau^{singular-1} (T - tau)^{order-1} w(tau) dtau,
    T = i h, with w linear per panel; moments from the incomplete Beta function
    """
    big_t = i * h
    ratios = np.arange(i + 1) / i
    ratios[-1] = 1.0
    scale0 = big_t ** (order + singular - 1) * special.beta(singular, order)
    scale1 = big_t ** (order + singular) * special.beta(singular + 1, order)
    m0 = scale0 * np.diff(special.betainc(singular, order, ratios))
    m1 = scale1 * np.diff(special.betainc(singular + 1, order, ratios))
    taus = h * np.arange(i + 1)
    row = np.zeros(i + 1)
    row[:-1] += (taus[1:] * m0 - m1) / h
    row[1:] += (m1 - taus[:-1] * m0) / h
    return row


def _singular_first_panel(grid: Grid, i: int, order: float, psi: PsiFunction, singular: float) -> tuple[float, float]:
    """Panel [t0, t0 + h] with the (s - t0)^{singular-1} factor, integrated numerically"""
    t0, h = grid.t0, grid.h
    t_i = grid.nodes[i]
    psi_t = float(psi(t_i))

    if i == 1:
        # Both ends singular: factor the kernel as (t - s)^{order-1} times a regular ratio
        def kernel(s):
            gap = t_i - s
            ratio = float(psi.deriv(t_i)) if gap <= 1e-15 * max(1.0, t_i) else (psi_t - float(psi(s))) / gap
            return float(psi.deriv(s)) * ratio ** (order - 1)
        wvar = (singular - 1, order - 1)
    else:
        def kernel(s):
            return float(psi.deriv(s)) * (psi_t - float(psi(s))) ** (order - 1)
        wvar = (singular - 1, 0.0)

    left, _ = integrate.quad(lambda s: kernel(s) * (t0 + h - s) / h, t0, t0 + h, weight="alg", wvar=wvar)
    right, _ = integrate.quad(lambda s: kernel(s) * (s - t0) / h, t0, t0 + h, weight="alg", wvar=wvar)
    return left, right


@lru_cache(maxsize=8)
def product_weights(grid: Grid, order: float, psi: PsiFunction = IDENTITY, singular: float = 1.0) -> np.ndarray:
    """
    Lower-triangular matrix W with

        int_{t0}^{t_i} psi'(s) (psi(t_i) - psi(s))^{order-1} (s - t0)^{singular-1} w(s) ds
            ~= sum_j W[i, j] w_j

    for w linear between nodes. No 1/Gamma(order) factor is applied.
    """
    if not order > 0:
        raise DomainError(f"integration order must be positive, got {order}")
    if not 0 < singular <= 1:
        raise DomainError(f"singular exponent must lie in (0, 1], got {singular}")
    psi.check_increasing(grid)

    n = grid.n
    weights = np.zeros((n + 1, n + 1))
    nodes = grid.nodes

    if singular == 1:
        x_nodes = psi(nodes)
        for i in range(1, n + 1):
            weights[i, :i + 1] = _regular_panel_weights(np.array(x_nodes), i, order)
    elif psi.is_identity:
        for i in range(1, n + 1):
            weights[i, :i + 1] = _singular_identity_weights(n, grid.h, i, order, singular)
    else:
        # Regular panels carry the singular factor at their nodes; the first
        # panel integrates it exactly
        x_nodes = np.array(psi(nodes))
        node_factor = np.zeros(n + 1)
        node_factor[1:] = (nodes[1:] - grid.t0) ** (singular - 1)
        for i in range(1, n + 1):
            row = np.zeros(i + 1)
            if i > 1:
                tail = _regular_panel_weights(x_nodes[1:], i - 1, order)
                row[1:] = tail * node_factor[1:i + 1]
            left, right = _singular_first_panel(grid, i, order, psi, singular)
            row[0] += left
            row[1] += right
            weights[i, :i + 1] = row

    weights.setflags(write=False)
    return weights


def _as_grid_function(f: GridFunction, grid: Optional[Grid]) -> tuple[Grid, np.ndarray, float]:
    """Split f into (grid, weighted values as 2-D array, singular exponent)"""
    if isinstance(f, Trajectory):
        if grid is not None:
            grid.require_same(f.grid)
        return f.grid, f.values_weighted, f.gamma
    if grid is None:
        raise GridMismatchError("a plain grid function needs its grid")
    values = np.asarray(f, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] != grid.n + 1:
        raise GridMismatchError(f"grid function has {values.shape[0]} samples, grid has {grid.n + 1} nodes")
    return grid, values, 1.0


def _check_integral_order(mu: float):
    if not 0 < mu <= 1:
        raise DomainError(f"fractional integral order must lie in (0, 1], got {mu}")


def psi_frac_integral_path(mu: float, psi: PsiFunction, f: GridFunction, grid: Optional[Grid] = None) -> np.ndarray:
    """I^{mu;psi} f at every node, shape (n + 1, dim); zero at t0"""
    _check_integral_order(mu)
    grid, values, singular = _as_grid_function(f, grid)
    weights = product_weights(grid, mu, psi, singular)
    return weights @ values / math.gamma(mu)


def psi_frac_integral(mu: float, psi: PsiFunction, f: GridFunction, t_index: int, grid: Optional[Grid] = None) -> np.ndarray:
    """
    Left-sided psi-fractional integral of f at node t_index

    f is linear between nodes (in the weighted variable for a Trajectory) and
    the kernel moments are exact, so the weak singularity at s = t costs no
    accuracy. At t_index = 0 the integral is over an empty interval.
    """
    _check_integral_order(mu)
    grid, values, singular = _as_grid_function(f, grid)
    if not 0 <= t_index <= grid.n:
        raise GridMismatchError(f"node index {t_index} outside 0..{grid.n}")
    weights = product_weights(grid, mu, psi, singular)
    return weights[t_index] @ values / math.gamma(mu)


# ============================================================================
# HILFER DERIVATIVE
# ============================================================================

def _inner_integral_path(order: float, grid: Grid, values: np.ndarray, singular: float) -> np.ndarray:
    """Riemann-Liouville integral of order `order` (possibly 0) of (s-t0)^{singular-1} w(s)"""
    if order == 0:
        if singular < 1:
            raise DomainError("the Caputo-type derivative needs a function regular at the origin")
        return values.copy()

    path = product_weights(grid, order, IDENTITY, singular) @ values / math.gamma(order)
    exponent = singular + order - 1
    if abs(exponent) <= ORIGIN_EXPONENT_TOL:
        # I^{1-b}[t^{b-1} w] -> Gamma(b) w(0) at the origin
        path[0] = math.gamma(singular) * values[0]
    elif exponent < 0:
        raise DomainError(
            f"inner integral of order {order} is unbounded at the origin for singular exponent {singular}"
        )
    else:
        path[0] = 0.0
    return path


def l1_weights(grid: Grid, order: float) -> np.ndarray:
    """
    Matrix D with (D J)_i = I^{order} J'(t_i) for J linear between nodes
    (the L1 stencil); order 0 gives central differences, backward at the end
    """
    n, h = grid.n, grid.h
    weights = np.zeros((n + 1, n + 1))
    if order == 0:
        for i in range(1, n):
            weights[i, i + 1] = 1 / (2 * h)
            weights[i, i - 1] = -1 / (2 * h)
        weights[n, n] = 1 / h
        weights[n, n - 1] = -1 / h
        return weights

    scale = 1 / (h * math.gamma(order + 1))
    for i in range(1, n + 1):
        gaps = (i - np.arange(i + 1)) * h
        b = (gaps[:-1] ** order - gaps[1:] ** order) * scale
        # sum_j b_j (J_{j+1} - J_j)
        weights[i, 1:i + 1] += b
        weights[i, :i] -= b
    return weights


def _check_hilfer_orders(mu: float, nu: float):
    if not 0 < mu < 1:
        raise DomainError(f"Hilfer order mu must lie in (0, 1), got {mu}")
    if not 0 <= nu <= 1:
        raise DomainError(f"Hilfer type nu must lie in [0, 1], got {nu}")


def hilfer_derivative_path(mu: float, nu: float, f: GridFunction, grid: Optional[Grid] = None) -> np.ndarray:
    """Hilfer derivative at every node; row 0 is NaN (undefined at t0)"""
    _check_hilfer_orders(mu, nu)
    grid, values, singular = _as_grid_function(f, grid)
    inner = _inner_integral_path((1 - nu) * (1 - mu), grid, values, singular)
    result = l1_weights(grid, nu * (1 - mu)) @ inner
    result[0] = np.nan
    return result


def hilfer_derivative(mu: float, nu: float, f: GridFunction, t_index: int, grid: Optional[Grid] = None) -> np.ndarray:
    """
    Hilfer derivative D^{mu,nu} f at node t_index: the Riemann-Liouville
    integral of order (1-nu)(1-mu), a grid-step difference of it, then the
    integral of order nu(1-mu). The last two steps are fused into the L1
    stencil so the derivative is never sampled at the singular origin.
    """
    _check_hilfer_orders(mu, nu)
    grid_, _, _ = _as_grid_function(f, grid)
    if not 1 <= t_index <= grid_.n:
        raise GridMismatchError(f"Hilfer derivative needs 1 <= t_index <= {grid_.n}, got {t_index}")
    return hilfer_derivative_path(mu, nu, f, grid)[t_index]


# ============================================================================
# WEIGHTED NORM
# ============================================================================

def weighted_norm(u: Trajectory) -> float:
    """sup over the nodes of |t^{1-gamma} u(t)|"""
    return float(np.max(np.linalg.norm(u.values_weighted, axis=1)))


def weighted_distance(u: Trajectory, v: Trajectory) -> float:
    u.grid.require_same(v.grid)
    return float(np.max(np.linalg.norm(u.values_weighted - v.values_weighted, axis=1)))
