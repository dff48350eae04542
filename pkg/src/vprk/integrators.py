"""One-step maps on T*M for degenerate Lagrangians.

Three schemes share one stage-residual core:

* VPRK (Gauss, SRK3, Lobatto IIID/IIIE): unknowns are the stage velocities V.
* VPRK with null-space constraint (Lobatto IIIA/IIIB/IIIC/IIIC*): unknowns
  (V, μ), with stage momenta shifted by μ d_i / b_i and Σ d_i V_i = 0.
* Radau IIA collocation of the index-2 DAE q̇ = λ, ṗ = ∂L/∂q(q, λ),
  0 = p − ϑ(q): unknowns are the stage multipliers Λ.  The final stage equals
  the end point, so the constraint holds there to solver tolerance.

All functions accept a batch of phase points (q of shape (B, d)).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .nlsolve import SolveReport, SolverConfig, kahan_accumulate, newton_solve
from .systems import DegenerateLagrangianSystem, DomainError, PhasePoint, force
from .tableaux import GAUSS_LEGENDRE, RADAU_IIA, SRK3, PartitionedTableau

_VPRK_FAMILIES = {GAUSS_LEGENDRE, SRK3, "IIID", "IIIE"}


@dataclass
class StageWorkspace:
    Q: np.ndarray
    V: np.ndarray
    P: np.ndarray
    F: np.ndarray
    mu: Optional[np.ndarray] = None
    Lambda: Optional[np.ndarray] = None


@dataclass
class StepResult:
    next: PhasePoint
    stages: StageWorkspace
    midpoint_stage_index: Optional[int]
    report: SolveReport
    unknowns: np.ndarray = None


class StepFailure(RuntimeError):
    """A step could not be completed.

    ``status`` is the solver status (``max_iter``, ``stagnation``,
    ``diverged``, ``singular``) or ``domain`` for evaluations outside the
    system's domain.  ``step`` is filled in by drivers that know the index.
    """

    def __init__(self, message, status, report=None, step=None, t=None):
        super().__init__(message)
        self.status = status
        self.report = report
        self.step = step
        self.t = t

    def __str__(self):
        where = "" if self.step is None else f" at step {self.step}"
        return f"{self.args[0]}{where} ({self.status})"


def scheme_of(tableau: PartitionedTableau) -> str:
    """'vprk', 'lobatto' (with multiplier) or 'radau'."""
    if tableau.family == RADAU_IIA:
        return "radau"
    if tableau.needs_multiplier:
        return "lobatto"
    return "vprk"


class BaseMethod:
    """Stage equations of a partitioned tableau for a given scheme.

    ``evaluate`` returns the stage residual together with the stage data, and
    ``increments`` the end-point increments h Σ b V, h Σ b̄ F using the split
    coefficients.  Both are explicit in the unknowns, which lets projection
    methods embed them in larger monolithic systems.
    """

    def __init__(self, tableau: PartitionedTableau, scheme: Optional[str] = None):
        self.tableau = tableau
        self.scheme = scheme or scheme_of(tableau)
        qt, pt = tableau.q_tableau, tableau.p_tableau
        self.s = tableau.s
        self.a, self.a_t = qt.a, qt.a_tilde
        self.b, self.b_t = qt.b, qt.b_tilde
        self.abar, self.abar_t = pt.a, pt.a_tilde
        self.bbar, self.bbar_t = pt.b, pt.b_tilde
        if self.scheme == "lobatto":
            if tableau.d is None:
                raise ValueError(f"{tableau.name} has no d-vector")
            self.dvec = np.asarray(tableau.d, dtype=float)
            self.d_over_b = self.dvec / self.b
        self.r_infinity = tableau.r_infinity
        self.midpoint_stage_index = tableau.midpoint_stage_index

    @property
    def name(self):
        return self.tableau.name

    def n_unknowns(self, dim: int) -> int:
        return self.s * dim + (dim if self.scheme == "lobatto" else 0)

    def split(self, X, dim):
        V = X[..., : self.s * dim].reshape(X.shape[:-1] + (self.s, dim))
        mu = X[..., self.s * dim :] if self.scheme == "lobatto" else None
        return V, mu

    def configuration_stages(self, sys, q, h, X):
        """Stage positions, velocities, forces and μ; independent of p."""
        V, mu = self.split(X, sys.dim)
        Q = q[..., None, :] + h * (self.a @ V + self.a_t @ V)
        return Q, V, force(sys, Q, V), mu

    def stage_momenta(self, p, h, F, mu):
        P = p[..., None, :] + h * (self.abar @ F + self.abar_t @ F)
        if mu is not None:
            P = P - mu[..., None, :] * self.d_over_b[:, None]
        return P

    def stage_values(self, sys, q, p, h, X):
        Q, V, F, mu = self.configuration_stages(sys, q, h, X)
        return Q, V, self.stage_momenta(p, h, F, mu), F, mu

    def residual_from(self, sys, p, h, Q, V, F, mu):
        """Stage residual ϑ(Q_i) − P_i, followed by Σ d_i V_i for Lobatto pairs."""
        P = self.stage_momenta(p, h, F, mu)
        R = (sys.theta(Q) - P).reshape(Q.shape[:-2] + (self.s * sys.dim,))
        if mu is not None:
            R = np.concatenate([R, self.dvec @ V], axis=-1)
        return R

    def evaluate(self, sys, q, p, h, X):
        """Stage residual and the stage velocities and forces."""
        Q, V, F, mu = self.configuration_stages(sys, q, h, X)
        return self.residual_from(sys, p, h, Q, V, F, mu), V, F

    def increments(self, h, V, F):
        dq = h * (self.b @ V) + h * (self.b_t @ V)
        dp = h * (self.bbar @ F) + h * (self.bbar_t @ F)
        return dq, dp

    def initial_guess(self, z: PhasePoint, dim: int):
        return np.zeros(z.q.shape[:-1] + (self.n_unknowns(dim),))


def advance(z: PhasePoint, dq, dp) -> PhasePoint:
    """Compensated update z + (dq, dp)."""
    q, qc = kahan_accumulate(z.q, z.q_comp, dq)
    p, pc = kahan_accumulate(z.p, z.p_comp, dp)
    return PhasePoint(q, p, qc, pc)


def solve_checked(residual, x0, cfg: SolverConfig, what: str):
    """newton_solve that raises StepFailure on non-convergence or domain errors."""
    try:
        x, report = newton_solve(residual, None, x0, cfg, vectorized=True)
    except DomainError as exc:
        raise StepFailure(f"{what}: {exc}", "domain") from exc
    if not report.converged:
        raise StepFailure(f"{what} did not converge", report.status, report)
    return x, report


def base_step(
    sys: DegenerateLagrangianSystem,
    method: BaseMethod,
    z_n: PhasePoint,
    h: float,
    cfg: SolverConfig = SolverConfig(),
    guess=None,
) -> StepResult:
    """One step of ``method`` from z_n with compensated end-point update."""
    q, p = z_n.q, z_n.p
    x0 = method.initial_guess(z_n, sys.dim) if guess is None else np.array(guess, dtype=float)
    X, report = solve_checked(
        lambda X: method.evaluate(sys, q, p, h, X)[0], x0, cfg, f"{method.name} stage equations"
    )
    Q, V, P, F, mu = method.stage_values(sys, q, p, h, X)
    dq, dp = method.increments(h, V, F)
    stages = StageWorkspace(Q, V, P, F, mu, V if method.scheme == "radau" else None)
    return StepResult(advance(z_n, dq, dp), stages, method.midpoint_stage_index, report, X)


def vprk_step(sys, tableau: PartitionedTableau, z_n: PhasePoint, h, cfg=SolverConfig(), guess=None):
    """Variational partitioned Runge–Kutta step with independent stage velocities."""
    if tableau.family not in _VPRK_FAMILIES:
        raise ValueError(f"{tableau.name} needs vprk_lobatto_step or radau_dae_step")
    return base_step(sys, BaseMethod(tableau, "vprk"), z_n, h, cfg, guess)


def vprk_lobatto_step(sys, tableau: PartitionedTableau, z_n: PhasePoint, h, cfg=SolverConfig(), guess=None):
    """VPRK step for Lobatto pairs whose stage velocities are linearly dependent."""
    if tableau.d is None:
        raise ValueError(f"{tableau.name} has no d-vector")
    return base_step(sys, BaseMethod(tableau, "lobatto"), z_n, h, cfg, guess)


def radau_dae_step(sys, tableau: PartitionedTableau, z_n: PhasePoint, h, cfg=SolverConfig(), guess=None):
    """Radau IIA collocation step for the constrained index-2 formulation."""
    if tableau.family != RADAU_IIA:
        raise ValueError(f"{tableau.name} is not a Radau IIA tableau")
    res = np.max(np.abs(z_n.p - sys.theta(z_n.q)))
    if res > 1e-8:
        warnings.warn(f"initial constraint residual {res:.3e} exceeds 1e-8", RuntimeWarning, stacklevel=2)
    return base_step(sys, BaseMethod(tableau, "radau"), z_n, h, cfg, guess)


def initial_momentum(sys: DegenerateLagrangianSystem, q0) -> PhasePoint:
    """Point (q0, ϑ(q0)) on the constraint submanifold."""
    q0 = np.array(q0, dtype=float)
    return PhasePoint(q0, sys.theta(q0))
