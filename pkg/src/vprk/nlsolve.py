"""Newton solver with Jacobian reuse and a quadratic line search.

The solver works on a single unknown vector of shape ``(n,)`` or on a batch of
independent systems of shape ``(B, n)``.  In batch mode every member gets its
own Jacobian and line search, and the solve converges when all members have.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg


@dataclass
class SolverConfig:
    """Newton solver settings.

    ``abs_tolerance`` of ``None`` means 1e-14·max(1, ‖x0‖∞), decided per solve.
    ``final_correction`` applies one more update with the current factors
    once the tolerance is met, kept where it lowers the residual; this stops
    converged residuals from carrying a systematic bias from step to step.
    """

    abs_tolerance: Optional[float] = None
    max_iterations: int = 50
    jacobian_refresh_interval: int = 5
    line_search: bool = True
    stagnation_window: int = 5
    stagnation_factor: float = 0.9
    divergence_factor: float = 1e8
    final_correction: bool = True

    def __post_init__(self):
        if self.abs_tolerance is not None and not self.abs_tolerance > 0:
            raise ValueError("abs_tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.jacobian_refresh_interval < 1:
            raise ValueError("jacobian_refresh_interval must be at least 1")

    def tolerance_for(self, x0) -> float:
        if self.abs_tolerance is not None:
            return self.abs_tolerance
        return 1e-14 * max(1.0, float(np.max(np.abs(x0), initial=0.0)))


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    final_residual_norm: float
    jacobian_builds: int
    status: str = "converged"
    tolerance: float = 0.0
    residual_history: list = field(default_factory=list, repr=False)


class SolverError(RuntimeError):
    """Newton iteration failed; ``report`` carries the details."""

    def __init__(self, message: str, report: SolveReport):
        super().__init__(message)
        self.report = report


class SingularJacobianError(SolverError):
    pass


def kahan_accumulate(total, compensation, increment):
    """One step of compensated summation; returns (total', compensation')."""
    y = increment - compensation
    t = total + y
    compensation = (t - total) - y
    return t, compensation


def finite_difference_jacobian(residual: Callable, x, r0=None, vectorized: bool = False):
    """Forward differences with step sqrt(eps)·max(|x_j|, 1); batched over leading axis.

    With ``vectorized`` the residual is called once on all perturbed points,
    stacked along a new leading axis; it must broadcast over leading axes.
    """
    x = np.asarray(x, dtype=float)
    batched = x.ndim == 2
    xb = x if batched else x[None, :]
    r0 = residual(x) if r0 is None else r0
    r0b = r0 if batched else r0[None, :]
    B, n = xb.shape
    steps = np.sqrt(np.finfo(float).eps) * np.maximum(np.abs(xb), 1.0)
    xp = np.repeat(xb[None, :, :], n, axis=0)
    idx = np.arange(n)
    xp[idx, :, idx] += steps.T
    # the realised step cancels representation error in x + step
    dx = xp[idx, :, idx] - xb.T
    if vectorized:
        rp = residual(xp if batched else xp[:, 0, :])
        rp = rp if batched else rp[:, None, :]
    else:
        rp = np.stack([residual(xp[j] if batched else xp[j, 0]) for j in range(n)])
        rp = rp if batched else rp[:, None, :]
    # rp[j, b, i] = r_i(x_b + step_j e_j)
    jac = np.transpose((rp - r0b[None]) / dx[:, :, None], (1, 2, 0))
    return jac if batched else jac[0]


def _factor(jac):
    """LU factors per batch member, or None where singular."""
    out = []
    for m in jac:
        if not np.all(np.isfinite(m)):
            out.append(None)
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(m, check_finite=False)
        if np.any(np.diag(lu) == 0.0):
            out.append(None)
        else:
            out.append((lu, piv))
    return out


def _polish(res, factors, xb, r, norms):
    """One extra chord step, kept per member where the residual does not grow."""
    if any(f is None for f in factors):
        return xb, r, norms
    delta = np.stack([-scipy.linalg.lu_solve(f, rk, check_finite=False) for f, rk in zip(factors, r)])
    x_new = xb + delta
    r_new = res(x_new)
    n_new = np.max(np.abs(r_new), axis=1)
    keep = np.isfinite(n_new) & (n_new <= norms)
    return (
        np.where(keep[:, None], x_new, xb),
        np.where(keep[:, None], r_new, r),
        np.where(keep, n_new, norms),
    )


def newton_solve(
    residual: Callable,
    jacobian: Optional[Callable],
    x0,
    cfg: SolverConfig = SolverConfig(),
    vectorized: bool = False,
):
    """Solve residual(x) = 0 by Newton's method.

    Parameters
    ----------
    residual : callable
        Maps x of shape (n,) or (B, n) to an array of the same shape.
    jacobian : callable or None
        Analytic Jacobian, shape (n, n) or (B, n, n).  ``None`` selects
        forward finite differences.
    x0 : array_like
        Initial guess.
    cfg : SolverConfig
    vectorized : bool
        Residual broadcasts over extra leading axes, so finite-difference
        columns are evaluated in a single call.

    Returns
    -------
    x : ndarray
        Last iterate (the solution when ``report.converged``).
    report : SolveReport

    Notes
    -----
    The Jacobian is factorized at the start and every
    ``cfg.jacobian_refresh_interval`` iterations.  If a full step does not
    reduce ‖r‖², a quadratic is fitted to the merit function through
    φ(0), φ'(0) = −2φ(0) and φ(1), and its minimizer, clamped to [0.1, 1], is
    taken instead.  ``report.iterations`` does not count the final
    correction.
    """
    x = np.array(x0, dtype=float)
    batched = x.ndim == 2
    xb = x if batched else x[None, :]
    atol = cfg.tolerance_for(x)

    def res(z):
        r = residual(z if batched else z[0])
        r = np.asarray(r, dtype=float)
        return r if batched else r[None, :]

    def jac_of(z, r):
        if jacobian is not None:
            j = np.asarray(jacobian(z if batched else z[0]), dtype=float)
        else:
            j = finite_difference_jacobian(
                residual, z if batched else z[0], r if batched else r[0], vectorized
            )
        return j if batched else j[None, :, :]

    r = res(xb)
    norms = np.max(np.abs(r), axis=1)
    history = [float(np.max(norms))]
    x_scale = max(float(np.max(np.abs(xb))), 1.0)
    builds = 0
    factors = None
    it = 0

    def report(status):
        rn = float(np.max(norms)) if np.all(np.isfinite(norms)) else float("inf")
        return SolveReport(status == "converged", it, rn, builds, status, atol, history)

    def done(status):
        return (xb if batched else xb[0]), report(status)

    if not np.all(np.isfinite(r)):
        return done("diverged")
    if history[-1] <= atol:
        return done("converged")

    while it < cfg.max_iterations:
        if factors is None or it % cfg.jacobian_refresh_interval == 0:
            factors = _factor(jac_of(xb, r))
            builds += 1
        active = norms > atol
        if any(factors[k] is None for k in np.flatnonzero(active)):
            return done("singular")
        delta = np.zeros_like(xb)
        for k in np.flatnonzero(active):
            delta[k] = -scipy.linalg.lu_solve(factors[k], r[k], check_finite=False)
        x_new = xb + delta
        r_new = res(x_new)
        if cfg.line_search:
            phi0 = np.sum(r * r, axis=1)
            phi1 = np.sum(r_new * r_new, axis=1)
            retry = active & ~(phi1 < phi0)
            if np.any(retry):
                with np.errstate(invalid="ignore", over="ignore"):
                    alpha = phi0 / (phi0 + phi1)
                alpha = np.where(np.isfinite(alpha), alpha, 0.1)
                alpha = np.clip(alpha, 0.1, 1.0)
                x_try = np.where(retry[:, None], xb + alpha[:, None] * delta, x_new)
                x_new = x_try
                r_new = res(x_new)
        xb, r = x_new, r_new
        it += 1
        if not np.all(np.isfinite(r)):
            norms = np.full(len(r), np.inf)
            history.append(float("inf"))
            return done("diverged")
        norms = np.max(np.abs(r), axis=1)
        history.append(float(np.max(norms)))
        if history[-1] <= atol:
            if cfg.final_correction:
                xb, r, norms = _polish(res, factors, xb, r, norms)
            return done("converged")
        if float(np.max(np.abs(xb))) > cfg.divergence_factor * x_scale:
            return done("diverged")
        w = cfg.stagnation_window
        if len(history) > w and history[-1] > cfg.stagnation_factor * history[-1 - w]:
            return done("stagnation")
    return done("max_iter")
