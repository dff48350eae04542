"""Projection of one-step maps onto the constraint submanifold p = ϑ(q).

All displacements are Ω-orthogonal: moving by h Ω⁻¹∇φᵀ(z*) λ means
q += h λ and p += h (∂ϑ/∂q)ᵀ(q*) λ.

* standard: base step, then project with the multiplier at the end point.
* symmetric: perturb at z_n, base step, project with R(∞) λ at z_{n+1};
  one monolithic solve for stages and λ.
* symplectic: perturb with the previous multiplier λ_n, base step, project
  with R(∞) λ_{n+1}; three consecutive solves.
* midpoint: perturb with λ and project with R(∞) λ, both with ∂ϑ/∂q
  evaluated at the mean of the perturbed end points; one monolithic solve.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .integrators import (
    BaseMethod,
    StepFailure,
    StepResult,
    StageWorkspace,
    advance,
    base_step,
    initial_momentum,
    solve_checked,
)
from .nlsolve import SolverConfig
from .nlsolve import kahan_accumulate as _kahan
from .systems import DegenerateLagrangianSystem, ExtendedState, PhasePoint
from .tableaux import PartitionedTableau, get_tableau


class ProjectionKind(enum.Enum):
    NONE = "none"
    STANDARD = "standard"
    SYMMETRIC = "symmetric"
    SYMPLECTIC = "symplectic"
    MIDPOINT = "midpoint"

    @classmethod
    def parse(cls, value) -> "ProjectionKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(
                f"unknown projection {value!r}; choose from {[k.value for k in cls]}"
            ) from None


@dataclass
class ProjectedStepState:
    incoming: ExtendedState
    outgoing: ExtendedState
    base_result: Optional[StepResult]
    reports: list = field(default_factory=list)
    guess: object = None
    midpoint_constraint: Optional[float] = None

    @property
    def newton_iterations(self) -> int:
        return sum(r.iterations for r in self.reports)


def _jt(sys, q, lam):
    """(∂ϑ/∂q)ᵀ(q) λ."""
    return (lam[..., None, :] @ sys.theta_jacobian(q))[..., 0, :]


def _as_method(base) -> BaseMethod:
    if isinstance(base, BaseMethod):
        return base
    if isinstance(base, str):
        base = get_tableau(base)
    return BaseMethod(base)


def _as_state(z, t=0.0) -> ExtendedState:
    if isinstance(z, ExtendedState):
        return z
    return ExtendedState(t, z, np.zeros_like(z.q))


def _constraint_norm(sys, z: PhasePoint) -> float:
    return float(np.max(np.abs(z.p - sys.theta(z.q))))


def project(sys, zbar: PhasePoint, h, scale, cfg, guess=None):
    """Solve p̄ + c h (∂ϑ/∂q)ᵀ(q)λ = ϑ(q) with q = q̄ + c h λ, c = ``scale``.

    Returns the projected point and λ.
    """
    if scale == 0:
        raise ValueError("projection with zero R(∞) cannot enforce the constraint")
    qb, pb = zbar.q, zbar.p
    ch = scale * h

    def residual(lam):
        q = qb + ch * lam
        return pb + ch * _jt(sys, q, lam) - sys.theta(q)

    lam0 = np.zeros_like(qb) if guess is None else guess
    lam, report = solve_checked(residual, lam0, cfg, "projection")
    q1, qc = _kahan(zbar.q, zbar.q_comp, ch * lam)
    p1, pc = _kahan(zbar.p, zbar.p_comp, ch * _jt(sys, q1, lam))
    return PhasePoint(q1, p1, qc, pc), lam, report


def unprojected_step(sys, base, state_n, h, cfg=SolverConfig(), guess=None) -> ProjectedStepState:
    method = _as_method(base)
    state = _as_state(state_n)
    res = base_step(sys, method, state.point, h, cfg, guess)
    out = ExtendedState(state.t + h, res.next, np.zeros_like(state.q))
    return ProjectedStepState(state, out, res, [res.report], res.unknowns)


def standard_projected_step(sys, base, z_n, h, cfg=SolverConfig(), guess=None) -> ProjectedStepState:
    """Base step followed by a projection with the end-point multiplier."""
    method = _as_method(base)
    state = _as_state(z_n)
    gx, gl = guess if guess is not None else (None, None)
    res = base_step(sys, method, state.point, h, cfg, gx)
    z1, lam, rep = project(sys, res.next, h, 1.0, cfg, gl)
    out = ExtendedState(state.t + h, z1, lam)
    return ProjectedStepState(state, out, res, [res.report, rep], (res.unknowns, lam))


def symplectic_projected_step(sys, base, state_n, h, cfg=SolverConfig(), guess=None) -> ProjectedStepState:
    """Perturb with the carried λ_n, base step, project with R(∞) λ_{n+1}."""
    method = _as_method(base)
    state = _as_state(state_n)
    gx, gl = guess if guess is not None else (None, None)
    lam_n = state.lam
    zbar = advance(state.point, h * lam_n, h * _jt(sys, state.q, lam_n))
    res = base_step(sys, method, zbar, h, cfg, gx)
    z1, lam, rep = project(sys, res.next, h, method.r_infinity, cfg, gl)
    out = ExtendedState(state.t + h, z1, lam)
    return ProjectedStepState(state, out, res, [res.report, rep], (res.unknowns, lam))


def _monolithic_guess(method, sys, state, guess):
    if guess is not None:
        return guess
    x = method.initial_guess(state.point, sys.dim)
    return np.concatenate([x, np.zeros_like(state.q)], axis=-1)


def _stage_result(method, sys, q, p, h, X, report, next_point):
    Q, V, P, F, mu = method.stage_values(sys, q, p, h, X)
    stages = StageWorkspace(Q, V, P, F, mu, V if method.scheme == "radau" else None)
    return StepResult(next_point, stages, method.midpoint_stage_index, report, X)


def symmetric_projected_step(sys, base, z_n, h, cfg=SolverConfig(), guess=None) -> ProjectedStepState:
    """Symmetric projection solved at once for the stages and λ_{n+1/2}."""
    method = _as_method(base)
    state = _as_state(z_n)
    qn, pn = state.q, state.p
    m = method.n_unknowns(sys.dim)
    c = method.r_infinity
    jt_n = sys.theta_jacobian(qn)

    def pieces(Y):
        X, lam = Y[..., :m], Y[..., m:]
        qb = qn + h * lam
        pb = pn + h * (lam[..., None, :] @ jt_n)[..., 0, :]
        R, V, F = method.evaluate(sys, qb, pb, h, X)
        dq, dp = method.increments(h, V, F)
        return X, lam, qb, pb, R, dq, dp

    def residual(Y):
        X, lam, qb, pb, R, dq, dp = pieces(Y)
        q1 = qb + dq + c * h * lam
        p1 = pb + dp + c * h * _jt(sys, q1, lam)
        return np.concatenate([R, p1 - sys.theta(q1)], axis=-1)

    Y, report = solve_checked(residual, _monolithic_guess(method, sys, state, guess), cfg, "symmetric projection")
    X, lam, qb, pb, R, dq, dp = pieces(Y)
    zbar_n = advance(state.point, h * lam, h * _jt(sys, qn, lam))
    zbar_1 = advance(zbar_n, dq, dp)
    q1, qc = _kahan(zbar_1.q, zbar_1.q_comp, c * h * lam)
    p1, pc = _kahan(zbar_1.p, zbar_1.p_comp, c * h * _jt(sys, q1, lam))
    out = ExtendedState(state.t + h, PhasePoint(q1, p1, qc, pc), lam)
    res = _stage_result(method, sys, qb, pb, h, X, report, zbar_1)
    return ProjectedStepState(state, out, res, [report], Y)


def midpoint_projected_step(
    sys, base, z_n, h, cfg=SolverConfig(), guess=None, apply_r_infinity=True
) -> ProjectedStepState:
    """Projection with ∂ϑ/∂q evaluated at the midpoint of the perturbed chord.

    With ``apply_r_infinity`` the projection displacement is scaled by R(∞).
    Without it both displacements carry the same sign; for the one-stage
    Gauss method that system only depends on the stage and is singular.
    """
    method = _as_method(base)
    state = _as_state(z_n)
    qn, pn = state.q, state.p
    m = method.n_unknowns(sys.dim)
    c = method.r_infinity if apply_r_infinity else 1.0

    def pieces(Y):
        X, lam = Y[..., :m], Y[..., m:]
        qb = qn + h * lam
        Q, V, F, mu = method.configuration_stages(sys, qb, h, X)
        dq, dp = method.increments(h, V, F)
        q_mid = qb + 0.5 * dq
        jt_lam = _jt(sys, q_mid, lam)
        pb = pn + h * jt_lam
        R = method.residual_from(sys, pb, h, Q, V, F, mu)
        return X, lam, qb, pb, R, dq, dp, jt_lam

    def residual(Y):
        X, lam, qb, pb, R, dq, dp, jt_lam = pieces(Y)
        q1 = qb + dq + c * h * lam
        p1 = pb + dp + c * h * jt_lam
        return np.concatenate([R, p1 - sys.theta(q1)], axis=-1)

    Y, report = solve_checked(residual, _monolithic_guess(method, sys, state, guess), cfg, "midpoint projection")
    X, lam, qb, pb, R, dq, dp, jt_lam = pieces(Y)
    zbar_n = advance(state.point, h * lam, h * jt_lam)
    zbar_1 = advance(zbar_n, dq, dp)
    q1, qc = _kahan(zbar_1.q, zbar_1.q_comp, c * h * lam)
    p1, pc = _kahan(zbar_1.p, zbar_1.p_comp, c * h * jt_lam)
    out = ExtendedState(state.t + h, PhasePoint(q1, p1, qc, pc), lam)
    q_mid = 0.5 * (zbar_n.q + zbar_1.q)
    p_mid = 0.5 * (zbar_n.p + zbar_1.p)
    mid_res = float(np.max(np.abs(p_mid - sys.theta(q_mid))))
    res = _stage_result(method, sys, qb, pb, h, X, report, zbar_1)
    return ProjectedStepState(state, out, res, [report], Y, mid_res)


_STEPPERS = {
    ProjectionKind.NONE: unprojected_step,
    ProjectionKind.STANDARD: standard_projected_step,
    ProjectionKind.SYMMETRIC: symmetric_projected_step,
    ProjectionKind.SYMPLECTIC: symplectic_projected_step,
    ProjectionKind.MIDPOINT: midpoint_projected_step,
}


class Integrator:
    """A base method with a projection, a step size and a warm-start cache.

    Parameters
    ----------
    sys : DegenerateLagrangianSystem
    tableau : PartitionedTableau or str
    projection : ProjectionKind or str
    h : float
        Step size; negative values integrate backwards.
    cfg : SolverConfig
    midpoint_rinf : bool
        Scale the midpoint projection displacement by R(∞) (default).
    """

    def __init__(
        self,
        sys: DegenerateLagrangianSystem,
        tableau: Union[PartitionedTableau, str],
        projection="none",
        h: float = 0.1,
        cfg: SolverConfig = SolverConfig(),
        midpoint_rinf: bool = True,
    ):
        self.sys = sys
        self.method = _as_method(tableau)
        self.kind = ProjectionKind.parse(projection)
        self.h = float(h)
        self.cfg = cfg
        self.midpoint_rinf = bool(midpoint_rinf)
        self._guess = None

    @property
    def label(self) -> str:
        return f"{self.method.name}+{self.kind.value}"

    def reset(self):
        self._guess = None

    def step(self, state: ExtendedState) -> ProjectedStepState:
        stepper = _STEPPERS[self.kind]
        kw = {"apply_r_infinity": self.midpoint_rinf} if self.kind is ProjectionKind.MIDPOINT else {}
        out = stepper(self.sys, self.method, state, self.h, self.cfg, self._guess, **kw)
        self._guess = out.guess
        return out

    def initial_state(self, q0, t0: float = 0.0) -> ExtendedState:
        z0 = initial_momentum(self.sys, q0)
        return ExtendedState(t0, z0, np.zeros_like(z0.q))

    def integrate(
        self,
        q0,
        nsteps: int,
        output_interval: int = 1,
        on_step: Optional[Callable[[int, ProjectedStepState], None]] = None,
        t0: float = 0.0,
    ):
        """Integrate from (q0, ϑ(q0)) and return a Trajectory.

        Step failures end the run early; the failure is stored on the
        trajectory rather than raised.
        """
        from .diagnostics import Trajectory

        if nsteps < 1:
            raise ValueError("nsteps must be at least 1")
        if output_interval < 1:
            raise ValueError("output_interval must be at least 1")
        self.reset()
        state = self.initial_state(q0, t0)
        steps, qs, ps, lams = [0], [state.q.copy()], [state.p.copy()], [state.lam.copy()]
        iterations = 0
        failure = None
        start = time.perf_counter()
        for n in range(1, nsteps + 1):
            try:
                out = self.step(state)
            except StepFailure as exc:
                exc.step = n
                exc.t = state.t + self.h
                failure = exc
                break
            iterations += out.newton_iterations
            if on_step is not None:
                on_step(n, out)
            state = out.outgoing
            if n % output_interval == 0 or n == nsteps:
                steps.append(n)
                qs.append(state.q.copy())
                ps.append(state.p.copy())
                lams.append(state.lam.copy())
        return Trajectory(
            times=t0 + self.h * np.array(steps, dtype=float),
            q=np.array(qs),
            p=np.array(ps),
            lam=np.array(lams),
            steps=np.array(steps),
            h=self.h,
            problem=self.sys.label,
            method=self.label,
            failure=failure,
            newton_iterations=iterations,
            wall_time=time.perf_counter() - start,
        )
