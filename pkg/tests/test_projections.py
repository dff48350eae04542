"""Projection methods onto p = ϑ(q)."""

import numpy as np
import pytest

from vprk.integrators import BaseMethod, StepFailure, base_step, initial_momentum
from vprk.nlsolve import SolverConfig
from vprk.projections import (
    Integrator,
    ProjectionKind,
    midpoint_projected_step,
    project,
    standard_projected_step,
    symmetric_projected_step,
    symplectic_projected_step,
    unprojected_step,
)
from vprk.systems import ExtendedState, PhasePoint, constraint, get_system, lotka_volterra, rotator
from vprk.tableaux import get_tableau

PROJECTED = ["standard", "symmetric", "symplectic", "midpoint"]
CFG = SolverConfig()


def test_parse_projection_kind():
    assert ProjectionKind.parse("Symmetric") is ProjectionKind.SYMMETRIC
    with pytest.raises(ValueError):
        ProjectionKind.parse("orthogonal")


def test_project_fixed_point_on_constraint():
    sys = lotka_volterra()
    z = initial_momentum(sys, [1.3, 0.7])
    z1, lam, rep = project(sys, z, 0.1, 1.0, CFG)
    assert np.all(lam == 0)
    np.testing.assert_array_equal(z1.q, z.q)
    np.testing.assert_array_equal(z1.p, z.p)


def test_project_rejects_zero_scale():
    sys = lotka_volterra()
    with pytest.raises(ValueError):
        project(sys, initial_momentum(sys, [1.0, 1.0]), 0.1, 0.0, CFG)


def test_project_lands_on_constraint():
    sys = lotka_volterra()
    z = PhasePoint([1.3, 0.7], sys.theta(np.array([1.3, 0.7])) + [1e-3, -2e-3])
    z1, lam, rep = project(sys, z, 0.1, -1.0, CFG)
    assert np.max(np.abs(constraint(sys, z1))) <= 10 * rep.tolerance
    assert np.max(np.abs(lam)) > 0


@pytest.mark.parametrize("tableau", ["glrk1", "glrk2", "glrk3", "srk3"])
@pytest.mark.parametrize("kind", PROJECTED)
def test_rotator_multiplier_vanishes(kind, tableau):
    traj = Integrator(rotator(), tableau, kind, 0.1).integrate([1.0, 0.0], 50)
    assert traj.completed
    assert np.max(np.abs(traj.lam)) <= 1e-12


@pytest.mark.parametrize("problem", ["lotka-volterra", "point-vortices", "guiding-centre-tokamak"])
@pytest.mark.parametrize("kind", PROJECTED)
def test_post_projection_constraint(problem, kind):
    sys = get_system(problem)
    h = 1.0 if problem == "guiding-centre-tokamak" else 0.1
    integ = Integrator(sys, "glrk2", kind, h)
    state = integ.initial_state(sys.default_q0)
    for _ in range(20):
        out = integ.step(state)
        tol = max(r.tolerance for r in out.reports)
        assert np.max(np.abs(out.outgoing.p - sys.theta(out.outgoing.q))) <= 10 * tol
        state = out.outgoing


@pytest.mark.parametrize("problem,q0", [("rotator", [1.0, 0.0]), ("lotka-volterra", [1.2, 0.8])])
@pytest.mark.parametrize("tableau", ["glrk1", "glrk2"])
@pytest.mark.parametrize("step", [symmetric_projected_step, midpoint_projected_step])
def test_reversibility(problem, q0, tableau, step):
    sys = get_system(problem)
    z0 = initial_momentum(sys, q0)
    fwd = step(sys, tableau, z0, 0.1, CFG)
    back = step(sys, tableau, PhasePoint(fwd.outgoing.q, fwd.outgoing.p), -0.1, CFG)
    np.testing.assert_allclose(back.outgoing.q, z0.q, atol=1e-10)
    np.testing.assert_allclose(back.outgoing.p, z0.p, atol=1e-10)


def test_symmetric_composition_lotka_volterra_several_steps():
    sys = lotka_volterra()
    fwd = Integrator(sys, "glrk2", "symmetric", 0.1).integrate([1.2, 0.8], 20)
    back = Integrator(sys, "glrk2", "symmetric", -0.1).integrate(fwd.q[-1], 20)
    np.testing.assert_allclose(back.q[-1], fwd.q[0], atol=1e-10)


@pytest.mark.parametrize("tableau", ["glrk1", "glrk2", "glrk3"])
def test_symplectic_first_step_equals_standard(tableau):
    sys = lotka_volterra()
    z0 = initial_momentum(sys, [1.2, 0.8])
    a = standard_projected_step(sys, tableau, z0, 0.1, CFG)
    b = symplectic_projected_step(sys, tableau, ExtendedState(0.0, z0, np.zeros(2)), 0.1, CFG)
    np.testing.assert_allclose(b.outgoing.q, a.outgoing.q, atol=1e-15)
    np.testing.assert_allclose(b.outgoing.p, a.outgoing.p, atol=1e-15)
    # same displacement: R(∞) λ_symplectic = λ_standard
    r_inf = get_tableau(tableau).r_infinity
    np.testing.assert_allclose(r_inf * b.outgoing.lam, a.outgoing.lam, atol=1e-13)


def test_symplectic_projection_is_conjugate_to_unprojected_map():
    sys = lotka_volterra()
    h, n = 0.1, 100
    method = BaseMethod(get_tableau("glrk1"))
    proj = Integrator(sys, "glrk1", "symplectic", h).integrate([1.0, 1.0], n)
    # perturbation with λ₀ = 0 is the identity; then n base steps and one projection
    z = initial_momentum(sys, [1.0, 1.0])
    for _ in range(n):
        z = base_step(sys, method, z, h, CFG).next
    z_end, lam, _ = project(sys, z, h, method.r_infinity, CFG)
    np.testing.assert_allclose(proj.q[-1], z_end.q, atol=1e-10)
    np.testing.assert_allclose(proj.p[-1], z_end.p, atol=1e-10)
    np.testing.assert_allclose(proj.lam[-1], lam, atol=1e-10)


@pytest.mark.parametrize("tableau", ["glrk1", "srk3"])
def test_midpoint_chord_constraint(tableau):
    sys = lotka_volterra()
    integ = Integrator(sys, tableau, "midpoint", 0.1)
    state = integ.initial_state([1.2, 0.8])
    for _ in range(20):
        out = integ.step(state)
        assert out.midpoint_constraint <= 10 * out.reports[0].tolerance
        state = out.outgoing


def test_srk3_middle_stage_is_chord_midpoint():
    sys = lotka_volterra()
    method = BaseMethod(get_tableau("srk3"))
    z0 = initial_momentum(sys, [1.2, 0.8])
    out = midpoint_projected_step(sys, method, z0, 0.1, CFG)
    st = out.base_result.stages
    zbar1 = out.base_result.next
    dq, dp = method.increments(0.1, st.V, st.F)
    qbar0, pbar0 = zbar1.q - dq, zbar1.p - dp
    np.testing.assert_allclose(st.Q[1], 0.5 * (qbar0 + zbar1.q), atol=1e-14)
    np.testing.assert_allclose(st.P[1], 0.5 * (pbar0 + zbar1.p), atol=1e-13)


def test_glrk1_stage_is_chord_midpoint():
    sys = lotka_volterra()
    method = BaseMethod(get_tableau("glrk1"))
    out = midpoint_projected_step(sys, method, initial_momentum(sys, [1.2, 0.8]), 0.1, CFG)
    st = out.base_result.stages
    dq, dp = method.increments(0.1, st.V, st.F)
    np.testing.assert_allclose(st.Q[0], out.base_result.next.q - 0.5 * dq, atol=1e-15)


def test_midpoint_sign_variants():
    sys = lotka_volterra()
    z0 = initial_momentum(sys, [1.2, 0.8])
    # R(∞) = +1: both variants coincide
    a = midpoint_projected_step(sys, "glrk2", z0, 0.1, CFG, apply_r_infinity=True)
    b = midpoint_projected_step(sys, "glrk2", z0, 0.1, CFG, apply_r_infinity=False)
    np.testing.assert_array_equal(a.outgoing.q, b.outgoing.q)
    # one-stage Gauss with equal signs: the system only sees the stage and is singular
    with pytest.raises(StepFailure):
        midpoint_projected_step(sys, "glrk1", z0, 0.1, CFG, apply_r_infinity=False)


def test_unprojected_step_has_zero_multiplier():
    sys = lotka_volterra()
    out = unprojected_step(sys, "glrk2", initial_momentum(sys, [1.2, 0.8]), 0.1, CFG)
    assert np.all(out.outgoing.lam == 0)
    assert out.newton_iterations >= 1


def test_lobatto_drift_recorded_as_failure():
    traj = Integrator(lotka_volterra(), "lobatto-iiia-2", "none", 0.1).integrate([1.0, 1.0], 100)
    assert not traj.completed
    assert traj.failure.step <= 100
    assert traj.failure.status in ("domain", "diverged", "stagnation", "max_iter", "singular")
    assert len(traj.times) == traj.failure.step


def test_lobatto_with_symmetric_projection_is_stable():
    traj = Integrator(lotka_volterra(), "lobatto-iiia-2", "symmetric", 0.1).integrate([1.0, 1.0], 100)
    assert traj.completed


def test_integrate_output_interval():
    traj = Integrator(rotator(), "glrk1", "none", 0.1).integrate([1.0, 0.0], 25, output_interval=10)
    assert traj.steps.tolist() == [0, 10, 20, 25]
    np.testing.assert_allclose(traj.times, [0, 1.0, 2.0, 2.5])


def test_integrate_rejects_bad_counts():
    integ = Integrator(rotator(), "glrk1", "none", 0.1)
    with pytest.raises(ValueError):
        integ.integrate([1.0, 0.0], 0)
    with pytest.raises(ValueError):
        integ.integrate([1.0, 0.0], 5, output_interval=0)


@pytest.mark.parametrize("kind", ["none"] + PROJECTED)
def test_integration_deterministic(kind):
    sys = get_system("point-vortices")
    a = Integrator(sys, "glrk2", kind, 0.1).integrate(sys.default_q0, 30)
    b = Integrator(sys, "glrk2", kind, 0.1).integrate(sys.default_q0, 30)
    assert a.q.tobytes() == b.q.tobytes() and a.lam.tobytes() == b.lam.tobytes()


def test_ensemble_integration_matches_single():
    sys = get_system("guiding-centre-symmetric")
    q0 = np.array([[0.5, 0.0, 0.0, 0.55], [0.4, 0.1, 0.0, 0.5]])
    ens = Integrator(sys, "glrk1", "symmetric", 1.0).integrate(q0, 5)
    one = Integrator(sys, "glrk1", "symmetric", 1.0).integrate(q0[1], 5)
    np.testing.assert_allclose(ens.q[:, 1], one.q, atol=1e-12)
