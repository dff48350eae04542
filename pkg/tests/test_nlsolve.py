"""Newton solver and compensated summation."""

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vprk.integrators import BaseMethod, initial_momentum
from vprk.nlsolve import (
    SolverConfig,
    finite_difference_jacobian,
    kahan_accumulate,
    newton_solve,
)
from vprk.systems import get_system, rotator
from vprk.tableaux import get_tableau


def test_parabola():
    x, rep = newton_solve(lambda x: x**2 - 4, None, np.array([3.0]))
    assert rep.converged
    assert abs(x[0] - 2.0) <= 1e-14


def test_analytic_jacobian_parabola():
    x, rep = newton_solve(lambda x: x**2 - 4, lambda x: np.diag(2 * x), np.array([3.0]))
    assert rep.converged and x[0] == pytest.approx(2.0, abs=1e-15)


def test_affine_converges_in_one_iteration():
    A = np.array([[4.0, 1.0], [1.0, 3.0]])
    b = np.array([1.0, 2.0])
    x, rep = newton_solve(lambda x: A @ x - b, lambda x: A, np.zeros(2))
    assert rep.converged and rep.iterations == 1
    np.testing.assert_allclose(x, np.linalg.solve(A, b), atol=1e-15)


def test_affine_with_finite_differences():
    A = np.array([[4.0, 1.0], [1.0, 3.0]])
    b = np.array([1.0, 2.0])
    x, rep = newton_solve(lambda x: A @ x - b, None, np.zeros(2))
    assert rep.converged and rep.iterations <= 2


def test_cubic_root_slow_or_reported():
    x, rep = newton_solve(lambda x: (x - 1) ** 3, None, np.array([2.0]), SolverConfig(max_iterations=50))
    hist = rep.residual_history
    if not rep.converged:
        assert rep.status in ("max_iter", "stagnation")
        assert all(b <= a for a, b in zip(hist, hist[1:]))
    assert abs(x[0] - 1) < 1e-3


def test_divergence_reported():
    x, rep = newton_solve(lambda x: np.exp(x) + 1.0, None, np.array([0.0]))
    assert not rep.converged
    assert rep.status in ("diverged", "stagnation", "max_iter")


def test_singular_reported():
    x, rep = newton_solve(lambda x: np.array([x[0] + x[1] - 1, 2 * x[0] + 2 * x[1] - 3]), None, np.zeros(2))
    assert rep.status == "singular"


@pytest.mark.filterwarnings("ignore:invalid value")
def test_nonfinite_residual_is_divergence():
    x, rep = newton_solve(lambda x: np.log(x) - 1, None, np.array([-1.0]))
    assert rep.status == "diverged"


def test_tolerance_default_scales_with_guess():
    assert SolverConfig().tolerance_for(np.array([100.0, 1.0])) == pytest.approx(1e-12)
    assert SolverConfig().tolerance_for(np.array([0.1])) == 1e-14
    assert SolverConfig(abs_tolerance=1e-9).tolerance_for(np.array([1e6])) == 1e-9


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(abs_tolerance=0)
    with pytest.raises(ValueError):
        SolverConfig(max_iterations=0)


def test_batched_members_solved_independently():
    targets = np.array([[4.0], [9.0], [16.0]])
    x, rep = newton_solve(lambda x: x**2 - targets, None, np.full((3, 1), 5.0), vectorized=True)
    assert rep.converged
    np.testing.assert_allclose(x[:, 0], [2, 3, 4], atol=1e-13)


def test_deterministic():
    f = lambda x: np.array([np.sin(x[0]) + x[1] ** 2 - 1, x[0] * x[1] - 0.2])
    a = newton_solve(f, None, np.array([0.3, 0.9]))
    b = newton_solve(f, None, np.array([0.3, 0.9]))
    assert a[0].tobytes() == b[0].tobytes()
    assert a[1].residual_history == b[1].residual_history


def test_line_search_rescues_overshoot():
    f = lambda x: np.arctan(x)
    x, rep = newton_solve(f, None, np.array([1.5]), SolverConfig(line_search=True))
    assert rep.converged
    _, rep_plain = newton_solve(f, None, np.array([1.5]), SolverConfig(line_search=False, max_iterations=20))
    assert not rep_plain.converged


# finite differences


@pytest.mark.parametrize("name", ["lotka-volterra", "point-vortices", "guiding-centre-tokamak"])
def test_fd_jacobian_matches_analytic(name):
    sys = get_system(name)
    q = sys.default_q0 + 0.05
    fd = finite_difference_jacobian(sys.theta, q)
    an = sys.theta_jacobian(q)
    assert np.max(np.abs(fd - an)) / max(np.max(np.abs(an)), 1.0) <= 1e-6


def test_fd_jacobian_vectorized_equals_loop():
    sys = get_system("point-vortices")
    q = np.stack([sys.default_q0, sys.default_q0 + 0.1])
    a = finite_difference_jacobian(sys.theta, q, vectorized=True)
    b = finite_difference_jacobian(sys.theta, q, vectorized=False)
    np.testing.assert_array_equal(a, b)


def test_quadratic_convergence_on_rotator_stage_equations():
    """Analytic Jacobian, no line search: r_{k+1} ≤ C r_k² once r_k ≤ 1e-4."""
    sys = rotator()
    method = BaseMethod(get_tableau("glrk2"))
    z = initial_momentum(sys, [1.0, 0.0])
    h = 0.5
    A = method.a + method.a_t
    Abar = method.abar + method.abar_t
    Jt = sys.theta_jacobian(z.q)
    # ϑ(Q) − p − hĀ(Jᵀ V − Q) with Q = q + hAV is affine in V
    M = h * np.kron(A, Jt) - h * np.kron(Abar, Jt.T) + h * h * np.kron(Abar @ A, np.eye(2))

    # a cubic term makes the equations genuinely nonlinear
    def residual(X):
        return method.evaluate(sys, z.q, z.p, h, X)[0] + 0.1 * X**3

    def jacobian(X):
        return M + np.diag(0.3 * X**2)

    np.testing.assert_allclose(
        jacobian(np.full(4, 0.3)), finite_difference_jacobian(residual, np.full(4, 0.3)), atol=1e-6
    )
    cfg = SolverConfig(line_search=False, jacobian_refresh_interval=1, abs_tolerance=1e-15)
    x, rep = newton_solve(residual, jacobian, np.full(4, 0.8), cfg)
    assert rep.converged
    hist = rep.residual_history
    # pairs whose predicted next residual lies above round-off
    pairs = [(a, b) for a, b in zip(hist, hist[1:]) if 1e-7 <= a <= 1e-4]
    assert pairs
    for a, b in pairs:
        assert b <= 10.0 * a * a


# compensated summation


def test_kahan_tenths():
    s, c = 0.0, 0.0
    for _ in range(10):
        s, c = kahan_accumulate(s, c, 0.1)
    with mpmath.workdps(50):
        exact = 10 * mpmath.mpf(0.1)
    assert s == float(exact) == 1.0


def test_kahan_zero_increment():
    assert kahan_accumulate(1.5, 1e-20, 0.0) == (1.5, 1e-20)


def test_kahan_many_random_increments():
    rng = np.random.default_rng(7)
    incs = rng.uniform(0, 1, 10**6)
    s, c = 0.0, 0.0
    for x in incs.tolist():
        s, c = kahan_accumulate(s, c, x)
    exact = math.fsum(incs.tolist())
    assert abs(s - exact) <= 2 * np.finfo(float).eps * abs(exact)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=200))
def test_kahan_never_worse_than_naive(xs):
    s, c = 0.0, 0.0
    for x in xs:
        s, c = kahan_accumulate(s, c, x)
    exact = math.fsum(xs)
    assert abs(s - exact) <= abs(sum(xs) - exact) + 4 * np.finfo(float).eps * sum(abs(x) for x in xs)


def test_kahan_vectorized():
    s, c = np.zeros(3), np.zeros(3)
    for _ in range(10):
        s, c = kahan_accumulate(s, c, np.full(3, 0.1))
    assert np.all(s == 1.0)
