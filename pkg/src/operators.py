"""
Solution operators of the abstract Hilfer problem

The generator is stored as A; the semigroup is e^{-tA}. The fractional family
is built by subordination against the Mainardi-Wright density:

    P_mu(t) = int_0^inf mu theta M_mu(theta) e^{-t^mu theta A} dtheta
    K_mu(t) = t^{mu-1} P_mu(t)
    S_{mu,nu}(t) = I^{nu(1-mu)} K_mu (t)

Values of S are handled in the weighted form t^{1-gamma} S(t), which is
bounded at the origin.
"""
import logging
import math
import threading
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Optional

import numpy as np
from scipy import linalg

from config import config
from errors import DomainError, SemigroupOverflowError
from frac_ops import IDENTITY, Grid, product_weights
from specfun import mainardi_wright_array, rgamma, wright_moment

logger = logging.getLogger(__name__)

# Eigenvector matrices worse conditioned than this fall back to expm
EIG_CONDITION_LIMIT = 1e8
# Truncated subordination mass above this is reported
TAIL_TOLERANCE = 1e-10
# Number of singular expansion terms subtracted in s_operator is capped here
MAX_SUBTRACTED_TERMS = 6
# Lags per block when evaluating P on many times
LAG_BLOCK = 256


@dataclass(frozen=True, eq=False)
class Generator:
    """Square real matrix A; -A generates the semigroup"""
    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=float)
        if matrix.ndim == 0:
            matrix = matrix.reshape(1, 1)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] < 1:
            raise DomainError(f"generator must be a non-empty square matrix, got shape {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise DomainError("generator has non-finite entries")
        matrix.setflags(write=False)
        object.__setattr__(self, 'matrix', matrix)

    @classmethod
    def scalar(cls, lam: float) -> "Generator":
        return cls(np.array([[lam]], dtype=float))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def key(self) -> bytes:
        return self.matrix.tobytes() + str(self.matrix.shape).encode()

    @cached_property
    def spectral(self) -> Optional[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """(eigenvalues, V, V^{-1}) or None when V is too ill-conditioned"""
        values, vectors = np.linalg.eig(self.matrix)
        if np.linalg.cond(vectors) > EIG_CONDITION_LIMIT:
            logger.info("generator eigenvectors ill-conditioned, using matrix exponentials")
            return None
        return values, vectors, np.linalg.inv(vectors)

    def powers(self, count: int) -> np.ndarray:
        """(-A)^k for k < count, shape (count, d, d)"""
        out = np.empty((count, self.dim, self.dim))
        out[0] = np.eye(self.dim)
        for k in range(1, count):
            out[k] = out[k - 1] @ (-self.matrix)
        return out


@dataclass(frozen=True)
class SubordinationControl:
    theta_max: float = config.theta_max
    theta_nodes: int = config.theta_nodes
    panel_nodes: int = 20

    def __post_init__(self):
        if not self.theta_max > 0:
            raise DomainError(f"theta_max must be positive, got {self.theta_max}")
        if self.theta_nodes < self.panel_nodes or self.panel_nodes < 2:
            raise DomainError(f"need at least one panel of {self.panel_nodes} nodes, got {self.theta_nodes}")


DEFAULT_SUBORDINATION = SubordinationControl()


def _check_order(mu: float):
    if not 0 < mu <= 1:
        raise DomainError(f"order mu must lie in (0, 1], got {mu}")


@lru_cache(maxsize=16)
def _theta_rule(mu: float, ctl: SubordinationControl) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes on [0, theta_max] with M_mu values"""
    panels = ctl.theta_nodes // ctl.panel_nodes
    base_x, base_w = np.polynomial.legendre.leggauss(ctl.panel_nodes)
    width = ctl.theta_max / panels
    starts = width * np.arange(panels)
    thetas = (starts[:, None] + width * (base_x[None, :] + 1) / 2).ravel()
    weights = np.tile(base_w * width / 2, panels)
    density = mainardi_wright_array(mu, thetas)
    for arr in (thetas, weights, density):
        arr.setflags(write=False)
    return thetas, weights, density


def subordination_weights(mu: float, ctl: SubordinationControl = DEFAULT_SUBORDINATION) -> tuple[np.ndarray, np.ndarray]:
    """theta nodes and weights omega_j = w_j mu theta_j M_mu(theta_j)"""
    thetas, weights, density = _theta_rule(mu, ctl)
    return thetas, weights * mu * thetas * density


@dataclass(frozen=True)
class SubordinationTail:
    mu: float
    mass0: float
    mass1: float

    @property
    def ok(self) -> bool:
        return max(abs(self.mass0), abs(self.mass1)) < TAIL_TOLERANCE


def subordination_tail(mu: float, ctl: SubordinationControl = DEFAULT_SUBORDINATION) -> SubordinationTail:
    """Moment mass missed by the truncated theta rule at delta = 0 and 1"""
    if not 0 < mu < 1:
        raise DomainError(f"subordination needs 0 < mu < 1, got {mu}")
    thetas, weights, density = _theta_rule(mu, ctl)
    tail = SubordinationTail(
        mu=mu,
        mass0=wright_moment(mu, 0.0) - float(np.sum(weights * density)),
        mass1=wright_moment(mu, 1.0) - float(np.sum(weights * thetas * density)),
    )
    if not tail.ok:
        logger.warning("subordination tail mass for mu=%s is %.2e / %.2e", mu, tail.mass0, tail.mass1)
    return tail


# ============================================================================
# SEMIGROUP
# ============================================================================

_expm_cache: dict[tuple[bytes, float], np.ndarray] = {}
_expm_lock = threading.Lock()
_EXPM_CACHE_LIMIT = 4096


def _checked_expm(matrix: np.ndarray) -> np.ndarray:
    with np.errstate(over='ignore', invalid='ignore'):
        result = linalg.expm(matrix)
    if not np.all(np.isfinite(result)):
        raise SemigroupOverflowError("matrix exponential left the representable range")
    return result


def semigroup_matrix(A: Generator, t: float) -> np.ndarray:
    """e^{-tA}, cached per (A, t)"""
    if t < 0:
        raise DomainError(f"semigroup time must be non-negative, got {t}")
    key = (A.key, float(t))
    with _expm_lock:
        cached = _expm_cache.get(key)
    if cached is not None:
        return cached
    result = np.eye(A.dim) if t == 0 else _checked_expm(-t * A.matrix)
    result.setflags(write=False)
    with _expm_lock:
        if len(_expm_cache) >= _EXPM_CACHE_LIMIT:
            _expm_cache.clear()
        _expm_cache.setdefault(key, result)
        return _expm_cache[key]


def semigroup_apply(A: Generator, t: float, x) -> np.ndarray:
    return semigroup_matrix(A, t) @ np.asarray(x, dtype=float)


# ============================================================================
# SUBORDINATED FAMILY
# ============================================================================

def _p_block_spectral(A: Generator, scaled: np.ndarray, thetas: np.ndarray, omegas: np.ndarray) -> np.ndarray:
    values, vectors, inverse = A.spectral
    exponent = -scaled[:, None, None] * thetas[None, :, None] * values[None, None, :]
    with np.errstate(over='ignore', invalid='ignore'):
        diag = np.einsum('mjd,j->md', np.exp(exponent), omegas)
    block = np.einsum('ik,mk,kl->mil', vectors, diag, inverse)
    if not np.all(np.isfinite(block)):
        raise SemigroupOverflowError("subordinated operator overflowed")
    return block.real if np.iscomplexobj(block) else block


def _p_block_expm(A: Generator, scaled: np.ndarray, thetas: np.ndarray, omegas: np.ndarray) -> np.ndarray:
    out = np.empty((scaled.size, A.dim, A.dim))
    for m, s in enumerate(scaled):
        stack = -(s * thetas)[:, None, None] * A.matrix[None, :, :]
        with np.errstate(over='ignore', invalid='ignore'):
            exps = linalg.expm(stack)
        out[m] = np.einsum('jab,j->ab', exps, omegas)
    if not np.all(np.isfinite(out)):
        raise SemigroupOverflowError("subordinated operator overflowed")
    return out


def p_operator_lags(A: Generator, mu: float, lags, ctl: SubordinationControl = DEFAULT_SUBORDINATION) -> np.ndarray:
    """P_mu at each lag, shape (m, d, d); mu = 1 gives the semigroup itself"""
    _check_order(mu)
    lags = np.atleast_1d(np.asarray(lags, dtype=float))
    if np.any(lags < 0):
        raise DomainError("operator lags must be non-negative")
    if mu == 1:
        return np.stack([semigroup_matrix(A, float(t)) for t in lags])

    thetas, omegas = subordination_weights(mu, ctl)
    scaled = lags ** mu
    block_fn = _p_block_spectral if A.spectral is not None else _p_block_expm
    blocks = [
        block_fn(A, scaled[start:start + LAG_BLOCK], thetas, omegas)
        for start in range(0, scaled.size, LAG_BLOCK)
    ]
    return np.concatenate(blocks, axis=0)


def p_operator(A: Generator, mu: float, t: float, x, ctl: SubordinationControl = DEFAULT_SUBORDINATION) -> np.ndarray:
    """P_mu(t) x by truncated theta quadrature; t = 0 gives the continuous limit x / Gamma(mu)"""
    if t < 0:
        raise DomainError(f"time must be non-negative, got {t}")
    return p_operator_lags(A, mu, [t], ctl)[0] @ np.asarray(x, dtype=float)


def k_operator(A: Generator, mu: float, t: float, x, ctl: SubordinationControl = DEFAULT_SUBORDINATION) -> np.ndarray:
    if not t > 0:
        raise DomainError(f"K_mu is singular at t = 0 (got t = {t})")
    return t ** (mu - 1) * p_operator(A, mu, t, x, ctl)


def _subtracted_terms(mu: float) -> int:
    return min(MAX_SUBTRACTED_TERMS, math.ceil(2 / mu))


def s_operator_on_grid(A: Generator, mu: float, nu: float, grid: Grid,
                       ctl: SubordinationControl = DEFAULT_SUBORDINATION) -> np.ndarray:
    """
    Weighted operators t^{1-gamma} S_{mu,nu}(t) at elapsed times t = tau_i - t0,
    shape (n + 1, d, d)

    The leading terms (-s^mu A)^k / Gamma(mu k + mu) of P_mu have exact
    fractional integrals; only the smoother remainder goes through product
    integration.
    """
    _check_order(mu)
    if not 0 <= nu <= 1:
        raise DomainError(f"nu must lie in [0, 1], got {nu}")
    elapsed = Grid(0.0, grid.a, grid.n)
    times = elapsed.nodes
    p_values = p_operator_lags(A, mu, times, ctl)
    alpha = nu * (1 - mu)
    if alpha == 0:
        return p_values

    gamma_index = mu + alpha
    terms = _subtracted_terms(mu)
    powers = A.powers(terms)
    orders = mu * np.arange(terms)

    # Remainder R(s) = P(s) - sum_k (-s^mu A)^k / Gamma(mu k + mu)
    coeffs = (times[:, None] ** orders[None, :]) * np.array([rgamma(o + mu) for o in orders])[None, :]
    remainder = p_values - np.einsum('ik,kab->iab', coeffs, powers)
    remainder[0] = 0.0

    weights = product_weights(elapsed, alpha, IDENTITY, mu)
    d = A.dim
    integrated = (weights @ remainder.reshape(grid.n + 1, d * d)).reshape(grid.n + 1, d, d) / math.gamma(alpha)
    integrated *= (times ** (1 - gamma_index))[:, None, None]

    exact_coeffs = (times[:, None] ** orders[None, :]) * np.array([rgamma(o + gamma_index) for o in orders])[None, :]
    exact = np.einsum('ik,kab->iab', exact_coeffs, powers)
    return exact + integrated


def s_operator(A: Generator, mu: float, nu: float, t: float, x, *, weighted: bool = False,
               n: int = 256, ctl: SubordinationControl = DEFAULT_SUBORDINATION) -> np.ndarray:
    """
    S_{mu,nu}(t) x, integrated on an n-panel grid over [0, t]

    With weighted=True the value t^{1-gamma} S(t) x is returned. At t = 0 the
    weighted limit x / Gamma(gamma) is returned in either mode.
    """
    if t < 0:
        raise DomainError(f"time must be non-negative, got {t}")
    x = np.asarray(x, dtype=float)
    gamma_index = mu + nu * (1 - mu)
    if t == 0:
        return x * rgamma(gamma_index)
    weighted_op = s_operator_on_grid(A, mu, nu, Grid(0.0, t, n), ctl)[-1]
    value = weighted_op @ x
    return value if weighted else value * t ** (gamma_index - 1)


def operator_bound_M(A: Generator, mu: float, nu: float, grid: Grid,
                     ctl: SubordinationControl = DEFAULT_SUBORDINATION) -> float:
    """max over the grid of the spectral norm of t^{1-gamma} S_{mu,nu}(t)"""
    ops = s_operator_on_grid(A, mu, nu, grid, ctl)
    return float(np.max(np.linalg.norm(ops, ord=2, axis=(1, 2))))
