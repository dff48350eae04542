"""Error series, drift blocks, convergence orders and Poincaré integral invariants."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .systems import DegenerateLagrangianSystem, ExtendedState, PhasePoint, omega_bar

ROUNDOFF_FLOOR = 1e-12


@dataclass
class Trajectory:
    """Output of an integration run.

    ``q``, ``p`` and ``lam`` have shape (N+1, d) for single trajectories and
    (N+1, B, d) for ensembles.  ``steps`` holds the step index of each
    record.  ``failure`` is the StepFailure that ended the run early, if any.
    """

    times: np.ndarray
    q: np.ndarray
    p: np.ndarray
    lam: np.ndarray
    steps: np.ndarray
    h: float
    problem: str = ""
    method: str = ""
    failure: Optional[Exception] = None
    newton_iterations: int = 0
    wall_time: float = 0.0

    def __len__(self):
        return len(self.times)

    @property
    def completed(self) -> bool:
        return self.failure is None

    @property
    def states(self):
        return [
            ExtendedState(float(t), PhasePoint(q, p), lam)
            for t, q, p, lam in zip(self.times, self.q, self.p, self.lam)
        ]


@dataclass
class DiagnosticSeries:
    energy_error: np.ndarray
    constraint_residual: np.ndarray
    lambda_norm: np.ndarray
    momentum_error: Optional[np.ndarray] = None


def compute_series(sys: DegenerateLagrangianSystem, traj: Trajectory) -> DiagnosticSeries:
    """Energy, constraint, momentum and multiplier series of a trajectory."""
    energy = sys.hamiltonian(traj.q)
    constraint = np.max(np.abs(traj.p - sys.theta(traj.q)), axis=-1)
    lam = np.max(np.abs(traj.lam), axis=-1)
    momentum = None
    if sys.momentum_map is not None:
        P = sys.momentum_map(traj.q)
        momentum = P - P[0]
    return DiagnosticSeries(energy - energy[0], constraint, lam, momentum)


def drift_estimate(series, K: int = 10) -> np.ndarray:
    """Maximum of |series| over K equal blocks of indices."""
    series = np.abs(np.asarray(series, dtype=float))
    if len(series) < K:
        raise ValueError(f"series of length {len(series)} is shorter than K={K}")
    return np.array([np.max(b) for b in np.array_split(series, K)])


def fit_slope(h_values, errors, floor: float = ROUNDOFF_FLOOR) -> float:
    """Least-squares slope of log(error) against log(h), ignoring errors below ``floor``."""
    h_values = np.asarray(h_values, dtype=float)
    errors = np.abs(np.asarray(errors, dtype=float))
    keep = np.isfinite(errors) & (errors >= floor)
    if keep.sum() < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(h_values[keep]), np.log(errors[keep]), 1)
    return float(slope)


@dataclass
class ConvergenceResult:
    h: np.ndarray
    errors: dict
    slopes: dict
    failures: dict = field(default_factory=dict)


def convergence_order(
    sys: DegenerateLagrangianSystem,
    method,
    h_list: Sequence[float],
    T_end: float,
    reference: Optional[Trajectory] = None,
    q0=None,
    cfg=None,
    measure: str = "final",
) -> ConvergenceResult:
    """Global error slopes for a method over a list of step sizes.

    Parameters
    ----------
    method : tuple
        ``(tableau, projection)`` or ``(tableau, projection, midpoint_rinf)``.
    reference : Trajectory, optional
        Reference run reaching ``T_end``; needed for the solution error.
    measure : {"final", "max"}
        Error at ``T_end`` or maximum over the run.
    """
    from .nlsolve import SolverConfig
    from .projections import Integrator

    cfg = cfg or SolverConfig()
    q0 = sys.default_q0 if q0 is None else np.asarray(q0, dtype=float)
    tableau, projection, *rest = method
    midpoint_rinf = bool(rest[0]) if rest else True
    kinds = ["energy", "momentum"] + (["solution"] if reference is not None else [])
    errors = {k: [] for k in kinds}
    failures = {}
    H0 = sys.hamiltonian(q0)
    P0 = sys.momentum_map(q0) if sys.momentum_map is not None else None
    used_h = []
    for h in h_list:
        n = int(round(T_end / h))
        integ = Integrator(sys, tableau, projection, h, cfg, midpoint_rinf)
        traj = integ.integrate(q0, n)
        if traj.failure is not None:
            failures[h] = str(traj.failure)
            continue
        used_h.append(h)
        pick = (lambda e: np.max(np.abs(e))) if measure == "max" else (lambda e: abs(e[-1]))
        errors["energy"].append(pick(sys.hamiltonian(traj.q) - H0))
        errors["momentum"].append(pick(sys.momentum_map(traj.q) - P0) if P0 is not None else np.nan)
        if reference is not None:
            errors["solution"].append(float(np.max(np.abs(traj.q[-1] - reference.q[-1]))))
    errors = {k: np.array(v) for k, v in errors.items()}
    slopes = {k: fit_slope(used_h, v) for k, v in errors.items()}
    return ConvergenceResult(np.array(used_h), errors, slopes, failures)


# Spectral and Chebyshev machinery


def spectral_derivative(values, axis: int = 0):
    """d/dτ of samples at τ_k = k/N on the periodic interval [0, 1)."""
    values = np.asarray(values, dtype=float)
    N = values.shape[axis]
    k = np.fft.fftfreq(N, d=1.0 / N)
    if N % 2 == 0:
        k[N // 2] = 0.0
    shape = [1] * values.ndim
    shape[axis] = N
    coef = np.fft.fft(values, axis=axis) * (2j * np.pi * k).reshape(shape)
    return np.real(np.fft.ifft(coef, axis=axis))


def chebyshev_lobatto_points(M: int) -> np.ndarray:
    """M+1 Chebyshev–Lobatto points mapped to [0, 1], ascending."""
    return 0.5 * (1.0 - np.cos(np.pi * np.arange(M + 1) / M))


def chebyshev_differentiation_matrix(M: int) -> np.ndarray:
    """Differentiation matrix on the points of ``chebyshev_lobatto_points(M)``."""
    x = np.cos(np.pi * np.arange(M + 1) / M)
    c = np.ones(M + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(M + 1)
    X = np.tile(x, (M + 1, 1)).T
    dX = X - X.T
    D = np.outer(c, 1.0 / c) / (dX + np.eye(M + 1))
    D -= np.diag(D.sum(axis=1))
    # x = cos(...) descends while t = (1 − x)/2 ascends: dt = −dx/2
    return -2.0 * D


def clenshaw_curtis_weights(M: int) -> np.ndarray:
    """Quadrature weights on ``chebyshev_lobatto_points(M)`` for ∫₀¹."""
    theta = np.pi * np.arange(M + 1) / M
    w = np.zeros(M + 1)
    v = np.ones(M - 1)
    interior = slice(1, M)
    if M % 2 == 0:
        w[0] = w[M] = 1.0 / (M**2 - 1)
        for k in range(1, M // 2):
            v -= 2.0 * np.cos(2 * k * theta[interior]) / (4 * k * k - 1)
        v -= np.cos(M * theta[interior]) / (M**2 - 1)
    else:
        w[0] = w[M] = 1.0 / M**2
        for k in range(1, (M - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * theta[interior]) / (4 * k * k - 1)
    w[interior] = 2.0 * v / M
    return 0.5 * w


# Ensembles and invariants


@dataclass
class LoopEnsemble:
    """Closed loop sampled at τ_k = k/N; ``q0`` has shape (N, d)."""

    tau: np.ndarray
    q0: np.ndarray

    def __post_init__(self):
        if len(self.tau) % 2:
            raise ValueError("loop ensembles need an even number of points")


@dataclass
class SurfaceEnsemble:
    """Tensor Chebyshev–Lobatto grid; ``q0`` has shape ((M+1)², d), σ-major."""

    nodes: np.ndarray
    q0: np.ndarray

    @property
    def M(self) -> int:
        return len(self.nodes) - 1


def seed_loop(N: int = 2000, rx=0.5, ry=0.3, rz=0.1, u0=0.5, u1=0.05) -> LoopEnsemble:
    """Initial loop for the symmetric-field guiding centre."""
    tau = np.arange(N) / N
    c, s = np.cos(2 * np.pi * tau), np.sin(2 * np.pi * tau)
    q = np.stack([rx * c, ry * s, rz * s, u0 + u1 * c], axis=-1)
    return LoopEnsemble(tau, q)


def seed_surface(M: int = 99, r0=0.1, rz=0.1, u0=0.5, u1=0.01) -> SurfaceEnsemble:
    """Initial surface on an (M+1)×(M+1) Chebyshev–Lobatto grid."""
    x = chebyshev_lobatto_points(M)
    sg, tg = np.meshgrid(x, x, indexing="ij")
    q = np.stack(
        [
            r0 * (sg - 0.5),
            r0 * (tg - 0.5),
            rz * np.cos(2 * np.pi * sg) * np.cos(2 * np.pi * tg),
            u0 + u1 * np.sin(2 * np.pi * sg) * np.sin(2 * np.pi * tg),
        ],
        axis=-1,
    )
    return SurfaceEnsemble(x, q.reshape(-1, 4))


def _series(traj_or_q):
    if isinstance(traj_or_q, Trajectory):
        return traj_or_q.q, traj_or_q.p, traj_or_q.lam, traj_or_q.h
    q = np.asarray(traj_or_q, dtype=float)
    return q, None, None, None


FORMS = ("noncanonical", "canonical", "corrected")


def loop_invariant_I1(
    sys: DegenerateLagrangianSystem, traj, form: str = "noncanonical", h: Optional[float] = None
) -> np.ndarray:
    """First Poincaré invariant of an advected loop at every recorded time.

    ``traj`` is a Trajectory with q of shape (T, N, d), or a single loop of
    shape (N, d) for the noncanonical form.
    """
    q, p, lam, th = _series(traj)
    single = q.ndim == 2
    if single:
        q = q[None]
        p = None if p is None else p[None]
        lam = None if lam is None else lam[None]
    if form not in FORMS:
        raise ValueError(f"unknown form {form!r}")
    dq = spectral_derivative(q, axis=1)
    if form == "noncanonical":
        integrand = np.sum(sys.theta(q) * dq, axis=-1)
    elif form == "canonical":
        if p is None:
            raise ValueError("canonical form needs momenta")
        integrand = np.sum(p * dq, axis=-1)
    else:
        if lam is None:
            raise ValueError("corrected form needs multipliers")
        h = th if h is None else h
        one_form = sys.theta(q) - h * (lam[..., None, :] @ sys.theta_jacobian(q))[..., 0, :]
        integrand = np.sum(one_form * (dq - h * spectral_derivative(lam, axis=1)), axis=-1)
    out = np.mean(integrand, axis=1)
    return out[0] if single else out


def _grid(values, M):
    return values.reshape(values.shape[:-2] + (M + 1, M + 1, values.shape[-1]))


def surface_invariant_I2(
    sys: DegenerateLagrangianSystem,
    traj,
    nodes: np.ndarray,
    form: str = "noncanonical",
    h: Optional[float] = None,
) -> np.ndarray:
    """Second Poincaré invariant of an advected Chebyshev surface.

    ``traj`` is a Trajectory with q of shape (T, (M+1)², d), σ-major, or a
    single surface of shape ((M+1)², d) for the noncanonical form.
    """
    q, p, lam, th = _series(traj)
    M = len(nodes) - 1
    single = q.ndim == 2
    if single:
        q = q[None]
        p = None if p is None else p[None]
        lam = None if lam is None else lam[None]
    if q.shape[1] != (M + 1) ** 2:
        raise ValueError(f"surface has {q.shape[1]} points, expected {(M + 1) ** 2}")
    if form not in FORMS:
        raise ValueError(f"unknown form {form!r}")
    D = chebyshev_differentiation_matrix(M)
    w = clenshaw_curtis_weights(M)
    qg = _grid(q, M)

    def d_sigma(a):
        return np.einsum("ij,tjkd->tikd", D, a)

    def d_tau(a):
        return np.einsum("kl,tild->tikd", D, a)

    qs, qt = d_sigma(qg), d_tau(qg)
    if form == "canonical":
        if p is None:
            raise ValueError("canonical form needs momenta")
        pg = _grid(p, M)
        integrand = np.sum(d_sigma(pg) * qt - d_tau(pg) * qs, axis=-1)
    else:
        Om = omega_bar(sys, qg)
        integrand = np.einsum("...i,...ij,...j->...", qs, Om, qt)
        if form == "corrected":
            if lam is None:
                raise ValueError("corrected form needs multipliers")
            h = th if h is None else h
            lg = _grid(lam, M)
            ls, lt = d_sigma(lg), d_tau(lg)
            hess = sys.theta_hessian(qg)
            # λᵏ ∂²ϑ_k/∂qⁱ∂qʲ
            lh = np.einsum("...k,...kij->...ij", lg, hess)
            integrand = (
                integrand
                - h**2 * np.einsum("...i,...ij,...j->...", ls, Om, lt)
                + h**2 * (np.einsum("...i,...ij,...j->...", qs, lh, lt) - np.einsum("...i,...ij,...j->...", qt, lh, ls))
            )
    out = np.einsum("i,j,tij->t", w, w, integrand)
    return out[0] if single else out


def relative_variation(series) -> float:
    """max |I(t) − I(0)| / |I(0)|."""
    series = np.asarray(series, dtype=float)
    return float(np.max(np.abs(series - series[0])) / abs(series[0]))
