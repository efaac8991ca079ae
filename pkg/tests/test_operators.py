import math

import numpy as np
import pytest
from scipy import linalg

from errors import DomainError, SemigroupOverflowError
from frac_ops import Grid
from operators import (
    Generator, SubordinationControl, k_operator, operator_bound_M, p_operator, s_operator,
    s_operator_on_grid, semigroup_apply, semigroup_matrix, subordination_tail,
)
from specfun import mittag_leffler


def test_generator_validation():
    with pytest.raises(DomainError):
        Generator(np.ones((2, 3)))
    with pytest.raises(DomainError):
        Generator(np.array([[np.inf]]))
    assert Generator(2.0).dim == 1
    assert Generator.scalar(1.5).matrix[0, 0] == 1.5


def test_subordination_control_validation():
    with pytest.raises(DomainError):
        SubordinationControl(theta_max=0.0)
    with pytest.raises(DomainError):
        SubordinationControl(theta_nodes=10)


# ============================================================================
# SEMIGROUP
# ============================================================================

def test_semigroup_identity_at_zero():
    A = Generator(np.array([[1.0, 2.0], [0.0, 3.0]]))
    assert np.array_equal(semigroup_apply(A, 0.0, [1.0, -1.0]), [1.0, -1.0])


def test_semigroup_scalar_and_rotation():
    assert semigroup_apply(Generator.scalar(1.0), 1.0, [1.0])[0] == pytest.approx(math.exp(-1.0), rel=1e-14)
    rotation = Generator(np.array([[0.0, -1.0], [1.0, 0.0]]))
    assert np.allclose(semigroup_apply(rotation, math.pi / 2, [1.0, 0.0]), [0.0, -1.0], atol=1e-12)


def test_semigroup_law():
    rng = np.random.default_rng(5)
    A = Generator(rng.standard_normal((3, 3)) / 2)
    combined = semigroup_matrix(A, 0.3) @ semigroup_matrix(A, 0.7)
    assert np.allclose(combined, semigroup_matrix(A, 1.0), rtol=0, atol=1e-10)


def test_semigroup_cache_matches_direct_evaluation():
    A = Generator(np.array([[0.4, 1.0], [-0.2, 0.9]]))
    first = semigroup_matrix(A, 0.5)
    assert semigroup_matrix(A, 0.5) is first
    assert np.array_equal(first, linalg.expm(-0.5 * A.matrix))


def test_semigroup_overflow():
    with pytest.raises(SemigroupOverflowError):
        semigroup_matrix(Generator.scalar(-1000.0), 1.0)
    with pytest.raises(OverflowError):
        semigroup_matrix(Generator.scalar(-2000.0), 1.0)


def test_semigroup_negative_time():
    with pytest.raises(DomainError):
        semigroup_matrix(Generator.scalar(1.0), -0.1)


# ============================================================================
# SUBORDINATED FAMILY
# ============================================================================

@pytest.mark.parametrize("mu", [0.3, 0.5, 0.7])
def test_subordination_tail_negligible(mu):
    assert subordination_tail(mu).ok


@pytest.mark.parametrize("mu", [0.3, 0.5, 0.7, 0.85, 0.9, 0.95])
def test_p_operator_scalar_is_mittag_leffler(mu):
    value = p_operator(Generator.scalar(1.0), mu, 1.0, [1.0])[0]
    assert value == pytest.approx(mittag_leffler(mu, mu, -1.0), abs=1e-6)


def test_p_operator_zero_generator():
    value = p_operator(Generator.scalar(0.0), 0.5, 2.0, [1.0])[0]
    # mu Gamma(2) / Gamma(1 + mu) = 1 / Gamma(mu)
    assert value == pytest.approx(0.5641896, abs=1e-7)


def test_p_operator_small_time_limit():
    value = p_operator(Generator.scalar(1.0), 0.5, 1e-12, [1.0])[0]
    assert value == pytest.approx(0.5641896, abs=1e-5)


def test_p_operator_mu_one_is_semigroup():
    A = Generator(np.array([[0.5, -1.0], [1.0, 0.5]]))
    assert np.allclose(p_operator(A, 1.0, 0.8, [1.0, 2.0]), semigroup_apply(A, 0.8, [1.0, 2.0]), atol=1e-14)


def test_p_operator_defective_generator():
    # Jordan block: eigenvectors are parallel, so the expm fallback is used
    jordan = Generator(np.array([[1.0, 1.0], [0.0, 1.0]]))
    assert jordan.spectral is None
    mu, t = 0.5, 0.5
    c = t ** mu
    block = np.column_stack([p_operator(jordan, mu, t, [1.0, 0.0]), p_operator(jordan, mu, t, [0.0, 1.0])])

    assert block[0, 0] == pytest.approx(mittag_leffler(mu, mu, -c), abs=1e-6)
    assert block[1, 1] == pytest.approx(mittag_leffler(mu, mu, -c), abs=1e-6)
    assert block[1, 0] == pytest.approx(0.0, abs=1e-14)
    # off-diagonal entry is d/dlam E_{mu,mu}(-lam c) at lam = 1
    step = 1e-5
    derivative = (mittag_leffler(mu, mu, -(1 + step) * c) - mittag_leffler(mu, mu, -(1 - step) * c)) / (2 * step)
    assert block[0, 1] == pytest.approx(derivative, abs=1e-6)


def test_p_operator_negative_time():
    with pytest.raises(DomainError):
        p_operator(Generator.scalar(1.0), 0.5, -1.0, [1.0])


def test_k_operator():
    A = Generator.scalar(1.0)
    assert k_operator(A, 0.5, 1.0, [1.0])[0] == pytest.approx(p_operator(A, 0.5, 1.0, [1.0])[0], rel=1e-14)
    zero = Generator.scalar(0.0)
    assert k_operator(zero, 0.5, 4.0, [1.0])[0] == pytest.approx(0.2820948, abs=1e-7)
    ratio = k_operator(zero, 0.5, 1.0, [1.0])[0] / k_operator(zero, 0.5, 4.0, [1.0])[0]
    assert ratio == pytest.approx(4.0 ** 0.5, rel=1e-13)
    with pytest.raises(DomainError):
        k_operator(A, 0.5, 0.0, [1.0])


# ============================================================================
# S FAMILY
# ============================================================================

def test_s_operator_caputo_limit():
    value = s_operator(Generator.scalar(1.0), 0.5, 1.0, 1.0, [1.0])[0]
    assert value == pytest.approx(0.4275836, abs=1e-4)


def test_s_operator_riemann_liouville_limit():
    value = s_operator(Generator.scalar(1.0), 0.5, 0.0, 1.0, [1.0], weighted=True)[0]
    assert value == pytest.approx(0.1366065, abs=1e-6)


def test_s_operator_at_origin():
    A = Generator.scalar(1.0)
    assert s_operator(A, 0.5, 1.0, 0.0, [2.0])[0] == 2.0
    assert s_operator(A, 0.5, 0.5, 0.0, [1.0])[0] == pytest.approx(1 / math.gamma(0.75))


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("nu", [0.0, 0.5, 1.0])
def test_s_operator_scalar_closed_form(lam, nu):
    # t^{1-gamma} S_{mu,nu}(t) = E_{mu,gamma}(-lam t^mu) for A = lam
    mu = 0.5
    gamma = mu + nu * (1 - mu)
    grid = Grid(0.0, 1.0, 256)
    ops = s_operator_on_grid(Generator.scalar(lam), mu, nu, grid)
    expected = np.array([mittag_leffler(mu, gamma, -lam * t ** mu) for t in grid.nodes])
    assert np.allclose(ops[:, 0, 0], expected, rtol=0, atol=5e-4)


def test_s_operator_is_linear():
    A = Generator(np.array([[0.5, -1.0], [1.0, 0.5]]))
    x1, x2 = np.array([1.0, 0.0]), np.array([0.3, -2.0])
    combined = s_operator(A, 0.7, 0.5, 0.6, x1 + 2 * x2, n=64)
    separate = s_operator(A, 0.7, 0.5, 0.6, x1, n=64) + 2 * s_operator(A, 0.7, 0.5, 0.6, x2, n=64)
    assert np.allclose(combined, separate, rtol=0, atol=1e-12)


def test_operator_bound_zero_generator():
    grid = Grid(0.0, 1.0, 128)
    assert operator_bound_M(Generator.scalar(0.0), 0.5, 1.0, grid) == pytest.approx(1.0, abs=1e-8)


def test_operator_bound_dissipative():
    grid = Grid(0.0, 1.0, 128)
    assert operator_bound_M(Generator.scalar(1.0), 0.5, 1.0, grid) == pytest.approx(1.0, abs=1e-8)


def test_operator_bound_growing():
    grid = Grid(0.0, 1.0, 128)
    # sup over [0, 1] of E_{1/2}(t^{1/2}) is E_{1/2}(1) = e (1 + erf 1)
    expected = math.e * (1 + math.erf(1.0))
    assert expected == pytest.approx(5.00898, abs=1e-5)
    assert operator_bound_M(Generator.scalar(-1.0), 0.5, 1.0, grid) == pytest.approx(expected, rel=1e-3)
