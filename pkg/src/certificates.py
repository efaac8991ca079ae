"""
Well-posedness certificates and Gronwall-type bounds

Conditions I/II reduce to a handful of scalar constants; the contraction
constant q and the ball-invariance inequality are evaluated from them.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from config import config
from errors import DomainError
from frac_ops import IDENTITY, Grid, PsiFunction, product_weights
from operators import DEFAULT_SUBORDINATION, SubordinationControl, operator_bound_M
from solver import ProblemSpec
from specfun import mittag_leffler

logger = logging.getLogger(__name__)

INTERPRETATION_NOTES = (
    "K_mu(t) = t^(mu-1) P_mu(t): exponent taken from the existence proof, not the definition (t^(gamma-1))",
    "M is the bound of the weighted operator t^(1-gamma) S_{mu,nu}(t)",
    "G0 of Conditions II is the Lipschitz constant Q0 of g",
    "Condition I.5 read as the weighted sup-norm distance between the two trajectories",
    "Condition I.4 read as the condition on the Volterra kernel K",
)

# Grid resolution used when M is estimated for a certificate
BOUND_GRID_N = 128


@dataclass(frozen=True)
class ConditionConstants:
    M: float
    L: float
    K0: float
    K1: float
    H: float
    Q0: float
    G1_tilde: float
    r: float
    a: float
    mu: float
    psi: PsiFunction = IDENTITY
    t0: float = 0.0
    u0_norm: float = 0.0
    L_time: float = 0.0
    K0_time: float = 0.0
    estimated: bool = False

    def __post_init__(self):
        for name in ('M', 'L', 'K0', 'K1', 'H', 'Q0', 'G1_tilde', 'u0_norm', 'L_time', 'K0_time'):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise DomainError(f"constant {name} must be finite and non-negative, got {value}")
        if not self.r > 0:
            raise DomainError(f"ball radius r must be positive, got {self.r}")
        if not self.a > 0:
            raise DomainError(f"horizon a must be positive, got {self.a}")
        if not 0 < self.mu <= 1:
            raise DomainError(f"mu must lie in (0, 1], got {self.mu}")

    @property
    def G0(self) -> float:
        return self.Q0

    @property
    def psi_span(self) -> float:
        return float(self.psi(self.t0 + self.a) - self.psi(self.t0))

    def gamma_factor(self, sharp_gamma: bool = False) -> float:
        if sharp_gamma:
            return math.gamma(self.mu) * math.gamma(self.mu + 1)
        return math.gamma(self.mu) ** 2

    def volterra_factor(self, sharp_gamma: bool = False) -> float:
        """a (psi(t0 + a) - psi(t0))^mu / Gamma factor"""
        return self.a * self.psi_span ** self.mu / self.gamma_factor(sharp_gamma)

    def to_dict(self) -> dict:
        out = asdict(self)
        out['psi'] = self.psi.to_dict()
        return out


def contraction_constant(c: ConditionConstants, sharp_gamma: bool = False) -> float:
    """q = M Q0 + M L a + M K0 a (psi(t0+a) - psi(t0))^mu / Gamma(mu)^2"""
    return c.M * c.Q0 + c.M * c.L * c.a + c.M * c.K0 * c.volterra_factor(sharp_gamma)


def ball_invariance(c: ConditionConstants, sharp_gamma: bool = False) -> tuple[float, bool]:
    lhs = c.M * (
        c.u0_norm
        + c.G1_tilde
        + (c.L * c.r + c.H) * c.a
        + (c.K0 * c.r + c.K1) * c.volterra_factor(sharp_gamma)
    )
    return lhs, lhs <= c.r


def conditions_II_constant(c: ConditionConstants, sharp_gamma: bool = False) -> float:
    return c.M * (c.Q0 + c.L * c.a + c.K0 * c.volterra_factor(sharp_gamma))


def conditions_II_joint_q(c: ConditionConstants, sharp_gamma: bool = False) -> float:
    """Conditions II constant with the time-Lipschitz constants folded in"""
    return c.M * (c.Q0 + max(c.L, c.L_time) * c.a + max(c.K0, c.K0_time) * c.volterra_factor(sharp_gamma))


@dataclass
class CertificateReport:
    q: float
    ball_lhs: float
    ball_ok: bool
    contraction_ok: bool
    conditions_II_q: float
    conditions_II_joint_q: float
    constants: ConditionConstants
    sharp_gamma: bool = False
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.contraction_ok and self.ball_ok

    def to_dict(self) -> dict:
        return {
            'q': self.q,
            'ball_lhs': self.ball_lhs,
            'ball_ok': self.ball_ok,
            'contraction_ok': self.contraction_ok,
            'conditions_II_q': self.conditions_II_q,
            'conditions_II_joint_q': self.conditions_II_joint_q,
            'sharp_gamma': self.sharp_gamma,
            'constants': self.constants.to_dict(),
            'notes': list(self.notes),
        }


def certify(c: ConditionConstants, sharp_gamma: bool = False) -> CertificateReport:
    q = contraction_constant(c, sharp_gamma)
    q_ii = conditions_II_constant(c, sharp_gamma)
    if not math.isclose(q, q_ii, rel_tol=1e-12, abs_tol=1e-15):
        logger.warning("Conditions I and II constants disagree: %.17g vs %.17g", q, q_ii)
    lhs, ball_ok = ball_invariance(c, sharp_gamma)

    notes = list(INTERPRETATION_NOTES)
    if sharp_gamma:
        notes.append("Gamma(mu)^2 replaced by Gamma(mu) Gamma(mu+1)")
    if c.estimated:
        notes.append("constants are finite-sample estimates (lower bounds), not proofs")

    return CertificateReport(
        q=q,
        ball_lhs=lhs,
        ball_ok=ball_ok,
        contraction_ok=q < 1,
        conditions_II_q=q_ii,
        conditions_II_joint_q=conditions_II_joint_q(c, sharp_gamma),
        constants=c,
        sharp_gamma=sharp_gamma,
        notes=notes,
    )


# ============================================================================
# CONSTANT ESTIMATION
# ============================================================================

def _ball_samples(rng: np.random.Generator, count: int, dim: int, radius: float) -> np.ndarray:
    """Uniform samples from the Euclidean ball of the given radius"""
    directions = rng.standard_normal((count, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = radius * rng.random(count) ** (1 / dim)
    return directions * radii[:, None]


def _max_quotient(numerator: np.ndarray, denominator: np.ndarray) -> float:
    mask = denominator > 1e-12
    if not np.any(mask):
        return 0.0
    return float(np.max(np.linalg.norm(numerator[mask], axis=1) / denominator[mask]))


def estimate_constants(problem: ProblemSpec, r: float = 1.0, samples: int = config.estimate_samples,
                       seed: Optional[int] = None,
                       ctl: SubordinationControl = DEFAULT_SUBORDINATION) -> ConditionConstants:
    """
    Sampled lower estimates of the Lipschitz constants on the ball of radius r
    and of the sup constants on the horizon. Uses a seeded generator, so the
    same problem and seed always give the same constants.
    """
    if samples < 2:
        raise DomainError(f"need at least 2 samples, got {samples}")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    d, t0, a = problem.dim, problem.t0, problem.a
    # sup_t t^{1-gamma} over the horizon
    weight_bound = (t0 + a) ** (1 - problem.gamma)

    times = t0 + a * rng.random(samples)
    times2 = t0 + a * rng.random(samples)
    x = _ball_samples(rng, samples, d, r)
    y = _ball_samples(rng, samples, d, r)
    dist = np.linalg.norm(x - y, axis=1)
    zeros = np.zeros((samples, d))

    def sample(fn, *args) -> np.ndarray:
        return np.broadcast_to(np.asarray(fn(*args), dtype=float), (samples, d))

    L = L_time = H = 0.0
    if problem.f is not None:
        f = problem.f
        L = _max_quotient(sample(f, times, x) - sample(f, times, y), dist)
        L_time = _max_quotient(sample(f, times, x) - sample(f, times2, x), np.abs(times - times2))
        H = weight_bound * float(np.max(np.linalg.norm(sample(f, times, zeros), axis=1)))

    K0 = K0_time = K1 = 0.0
    if problem.kernel is not None:
        kernel = problem.kernel
        outer = np.maximum(times, times2)
        inner = np.minimum(times, times2)
        K0 = _max_quotient(sample(kernel, outer, inner, x) - sample(kernel, outer, inner, y), dist)
        shifted = inner + (outer - inner) * rng.random(samples)
        K0_time = _max_quotient(
            sample(kernel, outer, inner, x) - sample(kernel, shifted, inner, x),
            np.abs(outer - shifted),
        )
        K1 = weight_bound * float(np.max(np.linalg.norm(sample(kernel, outer, inner, zeros), axis=1)))

    Q0 = G1 = 0.0
    if problem.nonlocal_g is not None:
        points = np.asarray(problem.nonlocal_points, dtype=float)
        p = points.size
        unweight = points ** (problem.gamma - 1) if p else points
        gx, gy = [], []
        weighted_dist = np.empty(samples)
        for m in range(samples):
            wx = _ball_samples(rng, p, d, r) if p else np.zeros((0, d))
            wy = _ball_samples(rng, p, d, r) if p else np.zeros((0, d))
            gx.append(np.broadcast_to(problem.nonlocal_g(wx * unweight[:, None]), (d,)))
            gy.append(np.broadcast_to(problem.nonlocal_g(wy * unweight[:, None]), (d,)))
            weighted_dist[m] = np.linalg.norm(wx - wy, axis=1).max() if p else 0.0
        gx, gy = np.array(gx), np.array(gy)
        Q0 = _max_quotient(gx - gy, weighted_dist)
        G1 = weight_bound * float(np.max(np.linalg.norm(np.concatenate([gx, gy]), axis=1)))

    M = operator_bound_M(problem.A, problem.mu, problem.nu, problem.grid(BOUND_GRID_N), ctl)
    constants = ConditionConstants(
        M=M, L=L, K0=K0, K1=K1, H=H, Q0=Q0, G1_tilde=G1, r=r, a=a, mu=problem.mu,
        psi=problem.psi, t0=t0, u0_norm=weight_bound * float(np.linalg.norm(problem.u0)),
        L_time=L_time, K0_time=K0_time, estimated=True,
    )
    logger.info("estimated constants: %s", constants)
    return constants


# ============================================================================
# GRONWALL INEQUALITY
# ============================================================================

def _as_profile(values, grid: Grid, name: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim == 0:
        values = np.full(grid.n + 1, float(values))
    if values.shape != (grid.n + 1,):
        raise DomainError(f"{name} must be a scalar grid function with {grid.n + 1} samples, got {values.shape}")
    return values


def _is_nondecreasing(values: np.ndarray) -> bool:
    return bool(np.all(np.diff(values) >= -1e-14 * max(1.0, float(np.max(np.abs(values))))))


@dataclass
class GronwallBound:
    values: np.ndarray
    tail: np.ndarray
    terms: int

    def to_dict(self) -> dict:
        return {'values': self.values.tolist(), 'tail': self.tail.tolist(), 'terms': self.terms}


def gronwall_bound(v, g, alpha: float, psi: PsiFunction, grid: Grid, terms: int = config.gronwall_terms) -> GronwallBound:
    """
    v(t) + sum_{k=1}^{terms} (g(t) Gamma(alpha))^k / Gamma(k alpha)
           int psi'(s) (psi(t) - psi(s))^{k alpha - 1} v(s) ds

    The tail beyond the last term is estimated by a ratio test.
    """
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    if terms < 1:
        raise DomainError(f"need at least one term, got {terms}")
    v = _as_profile(v, grid, 'v')
    g = _as_profile(g, grid, 'g')
    if np.any(v < 0) or np.any(g < 0):
        raise DomainError("Gronwall bound needs non-negative v and g")
    if not _is_nondecreasing(g):
        raise DomainError("Gronwall bound needs a nondecreasing g")

    scale = g * math.gamma(alpha)
    total = v.copy()
    previous = last = np.zeros_like(v)
    for k in range(1, terms + 1):
        integral = product_weights(grid, k * alpha, psi, 1.0) @ v
        term = scale ** k * integral / math.gamma(k * alpha)
        total += term
        previous, last = last, term

    with np.errstate(divide='ignore', invalid='ignore'):
        ratio = np.where(previous > 0, last / previous, 0.0)
        tail = np.where(ratio < 1, last * ratio / (1 - ratio), np.inf)
    return GronwallBound(total, tail, terms)


def corollary_bound(v, g, alpha: float, psi: PsiFunction, grid: Grid) -> np.ndarray:
    """v(t) E_alpha(g(t) Gamma(alpha) (psi(t) - psi(t0))^alpha)"""
    v = _as_profile(v, grid, 'v')
    g = _as_profile(g, grid, 'g')
    if not _is_nondecreasing(v):
        raise DomainError("corollary bound needs a nondecreasing v")
    span = psi(grid.nodes) - psi(grid.t0)
    args = g * math.gamma(alpha) * span ** alpha
    return v * np.array([mittag_leffler(alpha, 1.0, float(z)) for z in args])


@dataclass
class GronwallVerdict:
    hypothesis_holds: bool
    series_ok: Optional[bool]
    corollary_ok: Optional[bool]

    @property
    def status(self) -> str:
        if not self.hypothesis_holds:
            return "not-applicable"
        if self.series_ok is False or self.corollary_ok is False:
            return "violation"
        return "pass"

    def to_dict(self) -> dict:
        return {
            'hypothesis_holds': self.hypothesis_holds,
            'series_ok': self.series_ok,
            'corollary_ok': self.corollary_ok,
            'status': self.status,
        }


def verify_gronwall(u, v, g, alpha: float, psi: PsiFunction, grid: Grid, tol: float = 1e-8,
                    terms: int = config.gronwall_terms) -> GronwallVerdict:
    """
    Check u <= v + g int psi'(s)(psi(t) - psi(s))^{alpha-1} u(s) ds node-wise;
    when it holds, check u against both bounds. A failed hypothesis is
    reported as not applicable, never as a violation.
    """
    u = _as_profile(u, grid, 'u')
    v = _as_profile(v, grid, 'v')
    g = _as_profile(g, grid, 'g')

    rhs = v + g * (product_weights(grid, alpha, psi, 1.0) @ u)
    slack = tol * (1 + np.abs(rhs))
    if not np.all(u <= rhs + slack):
        return GronwallVerdict(False, None, None)

    series = gronwall_bound(v, g, alpha, psi, grid, terms)
    tail = np.where(np.isfinite(series.tail), series.tail, 0.0)
    series_ok = bool(np.all(u <= series.values + tail + tol * (1 + np.abs(series.values))))

    corollary_ok = None
    if _is_nondecreasing(v):
        envelope = corollary_bound(v, g, alpha, psi, grid)
        corollary_ok = bool(np.all(u <= envelope + tol * (1 + np.abs(envelope))))
    return GronwallVerdict(True, series_ok, corollary_ok)
