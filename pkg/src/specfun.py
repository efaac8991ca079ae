"""
Special functions - Gamma, Mittag-Leffler and Mainardi-Wright
Everything else in the toolkit is built on these scalar evaluations
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from config import config
from errors import ConvergenceError, DomainError, PoleError

logger = logging.getLogger(__name__)

# Plain series is trusted up to this |z|; see mittag_leffler for the other regimes
ML_SERIES_RADIUS = 10.0
# Mainardi-Wright switches from the series to the integral form above this theta
MW_SERIES_CUTOFF = 2.0
# ... or once theta^{1/(1-mu)} passes this, where the series terms peak too late
MW_SERIES_SCALE = 20.0
# Clamp threshold for the Mainardi-Wright tail
MW_TAIL_FLOOR = 1e-15


@dataclass(frozen=True)
class SeriesControl:
    """Truncation rule shared by every series in this module"""
    rel_tol: float = config.series_rel_tol
    max_terms: int = config.series_max_terms

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise DomainError(f"rel_tol must be positive, got {self.rel_tol}")
        if self.max_terms < 1:
            raise DomainError(f"max_terms must be at least 1, got {self.max_terms}")


DEFAULT_SERIES = SeriesControl()


def _is_pole(x: float) -> bool:
    return x <= 0 and float(x).is_integer()


def gamma(x: float) -> float:
    """Gamma function; raises PoleError at non-positive integers"""
    if _is_pole(x):
        raise PoleError(f"Gamma has a pole at {x}")
    return float(special.gamma(x))


def rgamma(x: float) -> float:
    """Reciprocal Gamma, exactly zero at the poles"""
    return float(special.rgamma(x))


# ============================================================================
# MITTAG-LEFFLER
# ============================================================================

def _check_ml_orders(alpha: float, beta: float):
    if not 0 < alpha <= 1:
        raise DomainError(f"Mittag-Leffler alpha must lie in (0, 1], got {alpha}")
    if not beta > 0:
        raise DomainError(f"Mittag-Leffler beta must be positive, got {beta}")


def _ml_series(alpha: float, beta: float, z: float, ctl: SeriesControl) -> float:
    """Left-to-right summation of z^k / Gamma(alpha k + beta)"""
    total = 0.0
    log_abs_z = math.log(abs(z)) if z != 0 else -math.inf
    for k in range(ctl.max_terms):
        if k == 0:
            term = rgamma(beta)
        else:
            # |z|^k / Gamma(.) in log space so the powers never overflow
            magnitude = math.exp(k * log_abs_z - special.gammaln(alpha * k + beta))
            term = magnitude if (z > 0 or k % 2 == 0) else -magnitude
        total += term
        if k > 0 and abs(term) < ctl.rel_tol * abs(total):
            return total
    raise ConvergenceError(
        f"Mittag-Leffler series E_{{{alpha},{beta}}}({z}) not converged after {ctl.max_terms} terms"
    )


def _ml_real_line_kernel(chi: float, alpha: float, beta: float, z: float) -> float:
    if chi == 0.0:
        return 0.0
    numerator = chi * math.sin(math.pi * (1 - beta)) - z * math.sin(math.pi * (1 - beta + alpha))
    denominator = chi * chi - 2 * chi * z * math.cos(math.pi * alpha) + z * z
    weight = chi ** ((1 - beta) / alpha) * math.exp(-chi ** (1 / alpha))
    return weight * numerator / (alpha * math.pi * denominator)


def _ml_integral(alpha: float, beta: float, z: float) -> float:
    """Real-line integral representation for 0 < alpha < 1, |z| > 1, after lowering beta to (0, 1]"""
    if beta > 1:
        # E_{a,b}(z) = (E_{a,b-a}(z) - 1/Gamma(b-a)) / z
        return (_ml_integral(alpha, beta - alpha, z) - rgamma(beta - alpha)) / z

    chi_max = max(2 * abs(z), 750.0 ** alpha)
    value, abserr = integrate.quad(
        _ml_real_line_kernel, 0.0, chi_max, args=(alpha, beta, z),
        points=[abs(z)], limit=500, epsabs=1e-15, epsrel=1e-13,
    )
    if z > 0:
        value += z ** ((1 - beta) / alpha) * math.exp(z ** (1 / alpha)) / alpha
    logger.debug("E_{%s,%s}(%s) by integral representation, quad error %.2e", alpha, beta, z, abserr)
    return value


def _ml_alpha_one(beta: float, z: float) -> float:
    """E_{1,beta}(z) for |z| beyond the series radius"""
    if beta <= 1:
        # E_{1,b}(z) = 1/Gamma(b) + z E_{1,b+1}(z)
        return rgamma(beta) + z * _ml_alpha_one(beta + 1, z)
    # E_{1,b}(z) = 1/Gamma(b-1) * int_0^1 e^{z s} (1-s)^{b-2} ds
    value, _ = integrate.quad(
        lambda s: math.exp(z * s), 0.0, 1.0, weight="alg", wvar=(0.0, beta - 2),
    )
    return value * rgamma(beta - 1)


def mittag_leffler(alpha: float, beta: float, z: float, ctl: SeriesControl = DEFAULT_SERIES) -> float:
    """
    Two-parameter Mittag-Leffler function E_{alpha,beta}(z) for real z

    Regimes:
        z == 0                      -> 1/Gamma(beta)
        alpha == beta == 1          -> exp(z)
        |z| <= 1                    -> series
        alpha == 1, |z| <= 10       -> series
        alpha < 1, 0 < z <= 10      -> series, integral form if it does not converge
        alpha < 1, otherwise        -> real-line integral representation
        alpha == 1, |z| > 10        -> Euler integral over [0, 1]

    Negative arguments below -1 are never summed directly for alpha < 1: the
    alternating terms cancel catastrophically long before the series converges.
    """
    _check_ml_orders(alpha, beta)
    if z == 0:
        return rgamma(beta)
    if alpha == 1 and beta == 1:
        return math.exp(z)
    if abs(z) <= 1:
        return _ml_series(alpha, beta, z, ctl)
    if alpha == 1:
        if abs(z) <= ML_SERIES_RADIUS:
            return _ml_series(alpha, beta, z, ctl)
        return _ml_alpha_one(beta, z)
    if 0 < z <= ML_SERIES_RADIUS:
        try:
            return _ml_series(alpha, beta, z, ctl)
        except ConvergenceError:
            logger.debug("series for E_{%s,%s}(%s) too slow, using integral form", alpha, beta, z)
    return _ml_integral(alpha, beta, z)


# ============================================================================
# MAINARDI-WRIGHT
# ============================================================================

def _check_wright_order(mu: float):
    if not 0 < mu < 1:
        raise DomainError(f"Mainardi-Wright order must lie in (0, 1), got {mu}")


def _mw_series(mu: float, theta: float, ctl: SeriesControl) -> float:
    """Sum_{n>=1} (-theta)^{n-1} / ((n-1)! Gamma(1 - mu n))"""
    total = 0.0
    power = 1.0  # (-theta)^{n-1} / (n-1)!
    for n in range(1, ctl.max_terms + 1):
        if n > 1:
            power *= -theta / (n - 1)
        total += power * rgamma(1 - mu * n)
        # Terms at Gamma poles are exactly zero, so stop on the magnitude
        # envelope |1/Gamma(1-x)| <= Gamma(x)/pi instead of on the term itself
        envelope = abs(power) * special.gamma(mu * (n + 1)) * theta / (n * math.pi)
        if n > 1 and envelope < ctl.rel_tol * abs(total):
            return total
        if theta == 0:
            return total
    raise ConvergenceError(f"Mainardi-Wright series M_{mu}({theta}) not converged after {ctl.max_terms} terms")


def _mw_shape(phi: float, mu: float) -> float:
    sin_phi = math.sin(phi)
    if sin_phi <= 0:
        return math.inf
    return (math.sin(mu * phi) / sin_phi) ** (1 / (1 - mu)) * math.sin((1 - mu) * phi) / math.sin(mu * phi)


def _mw_integral(mu: float, theta: float) -> float:
    """Integral form over [0, pi], valid for theta > 0"""
    log_y = math.log(theta) / (1 - mu)
    if log_y > 700:
        return 0.0
    y = math.exp(log_y)
    prefactor = theta ** (mu / (1 - mu)) / (math.pi * (1 - mu))
    shape_min = mu ** (mu / (1 - mu)) * (1 - mu)
    if y * shape_min >= 1:
        bound = prefactor * math.pi * shape_min * math.exp(-y * shape_min)
        if bound < MW_TAIL_FLOOR:
            return 0.0

    def integrand(phi):
        shape = _mw_shape(phi, mu)
        if not math.isfinite(shape) or y * shape > 745:
            return 0.0
        return shape * math.exp(-y * shape)

    value, _ = integrate.quad(integrand, 0.0, math.pi, limit=200, epsabs=1e-16, epsrel=1e-12)
    return prefactor * value


def mainardi_wright(mu: float, theta: float, ctl: SeriesControl = DEFAULT_SERIES) -> float:
    """
    Mainardi-Wright density M_mu(theta), 0 < mu < 1, theta >= 0

    The series is used for theta <= 2 as long as theta^{1/(1-mu)} stays
    moderate; beyond that the alternating terms cancel (or, for mu near 1,
    keep growing past the term limit), so the integral representation takes
    over. Values whose analytic bound is below 1e-15 are returned as 0.
    """
    _check_wright_order(mu)
    if theta < 0:
        raise DomainError(f"Mainardi-Wright argument must be non-negative, got {theta}")
    if theta == 0:
        return _mw_series(mu, theta, ctl)
    if theta <= MW_SERIES_CUTOFF and math.log(theta) / (1 - mu) <= math.log(MW_SERIES_SCALE):
        try:
            return _mw_series(mu, theta, ctl)
        except ConvergenceError:
            logger.debug("series for M_%s(%s) too slow, using integral form", mu, theta)
    return _mw_integral(mu, theta)


def mainardi_wright_array(mu: float, thetas, ctl: SeriesControl = DEFAULT_SERIES) -> np.ndarray:
    thetas = np.asarray(thetas, dtype=float)
    return np.array([mainardi_wright(mu, float(th), ctl) for th in thetas.ravel()]).reshape(thetas.shape)


def wright_moment(mu: float, delta: float) -> float:
    """Closed form of int_0^inf theta^delta M_mu(theta) dtheta"""
    _check_wright_order(mu)
    if delta < 0:
        raise DomainError(f"moment order must be non-negative, got {delta}")
    return gamma(1 + delta) / gamma(1 + mu * delta)
