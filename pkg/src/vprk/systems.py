"""Degenerate Lagrangian systems L(q, v) = ϑ(q)·v − H(q).

Every function accepts a configuration array of shape ``(..., d)`` and
broadcasts over the leading axes, so whole ensembles can be evaluated at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class DomainError(ValueError):
    """Evaluation outside the domain of a system (log or 1/r singularity)."""


@dataclass
class PhasePoint:
    """A point (q, p) in T*M.

    ``q_comp`` and ``p_comp`` hold the running compensation of the Kahan sums
    used to advance the point; they are zero for freshly created points.
    """

    q: np.ndarray
    p: np.ndarray
    q_comp: np.ndarray = field(default=None, repr=False)
    p_comp: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if self.q_comp is None:
            self.q_comp = np.zeros_like(self.q)
        if self.p_comp is None:
            self.p_comp = np.zeros_like(self.p)

    def copy(self) -> "PhasePoint":
        return PhasePoint(self.q.copy(), self.p.copy(), self.q_comp.copy(), self.p_comp.copy())


@dataclass
class ExtendedState:
    """Integration state (t, q, p, λ)."""

    t: float
    point: PhasePoint
    lam: np.ndarray

    @property
    def q(self):
        return self.point.q

    @property
    def p(self):
        return self.point.p


class DegenerateLagrangianSystem:
    """Base class bundling ϑ, ∂ϑ/∂q, H, ∇H and an optional momentum map.

    Subclasses implement ``theta``, ``theta_jacobian``, ``hamiltonian`` and
    ``hamiltonian_gradient``.  ``theta_jacobian(q)[..., i, j]`` is ∂ϑ_i/∂q^j.
    """

    dim: int = 0
    label: str = ""
    default_q0: Optional[np.ndarray] = None

    def theta(self, q):
        raise NotImplementedError

    def theta_jacobian(self, q):
        raise NotImplementedError

    def hamiltonian(self, q):
        raise NotImplementedError

    def hamiltonian_gradient(self, q):
        raise NotImplementedError

    momentum_map: Optional[Callable] = None
    force_closed_form: Optional[Callable] = None

    def theta_hessian(self, q):
        """Second derivatives ∂²ϑ_k/∂q^i∂q^j, shape (..., d, d, d).

        Central differences of the analytic Jacobian; subclasses may override.
        """
        q = np.asarray(q, dtype=float)
        d = self.dim
        out = np.empty(q.shape[:-1] + (d, d, d))
        for j in range(d):
            step = np.finfo(float).eps ** (1 / 3) * np.maximum(np.abs(q[..., j]), 1.0)
            qp = q.copy()
            qm = q.copy()
            qp[..., j] += step
            qm[..., j] -= step
            out[..., :, :, j] = (self.theta_jacobian(qp) - self.theta_jacobian(qm)) / (
                2 * step[..., None, None]
            )
        return out

    def check_domain(self, q):
        """Raise DomainError if q lies outside the domain.  No-op by default."""

    def __repr__(self):
        return f"<{type(self).__name__} {self.label}>"


def constraint(sys: DegenerateLagrangianSystem, z: PhasePoint):
    """Dirac constraint φ(q, p) = p − ϑ(q)."""
    return z.p - sys.theta(z.q)


def force(sys: DegenerateLagrangianSystem, q, v):
    """∂L/∂q: f_i = Σ_j (∂ϑ_j/∂q^i) v_j − ∂H/∂q^i."""
    jac = sys.theta_jacobian(q)
    return (v[..., None, :] @ jac)[..., 0, :] - sys.hamiltonian_gradient(q)


def omega_bar(sys: DegenerateLagrangianSystem, q):
    """Noncanonical symplectic matrix Ω̄_ij = ∂ϑ_j/∂q^i − ∂ϑ_i/∂q^j."""
    jac = sys.theta_jacobian(q)
    return np.swapaxes(jac, -1, -2) - jac


def validate_derivatives(sys: DegenerateLagrangianSystem, samples) -> float:
    """Worst relative error of the analytic ∂ϑ/∂q and ∇H against central differences."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    worst = 0.0
    d = sys.dim
    for q in samples:
        jac = sys.theta_jacobian(q)
        grad = sys.hamiltonian_gradient(q)
        jac_fd = np.empty((d, d))
        grad_fd = np.empty(d)
        for j in range(d):
            step = np.finfo(float).eps ** (1 / 3) * max(abs(q[j]), 1.0)
            qp, qm = q.copy(), q.copy()
            qp[j] += step
            qm[j] -= step
            jac_fd[:, j] = (sys.theta(qp) - sys.theta(qm)) / (2 * step)
            grad_fd[j] = (sys.hamiltonian(qp) - sys.hamiltonian(qm)) / (2 * step)
        scale_j = max(np.max(np.abs(jac)), 1.0)
        scale_g = max(np.max(np.abs(grad)), 1.0)
        worst = max(
            worst,
            float(np.max(np.abs(jac - jac_fd))) / scale_j,
            float(np.max(np.abs(grad - grad_fd))) / scale_g,
        )
    return worst


class Rotator(DegenerateLagrangianSystem):
    """ϑ(q) = ½(−q₂, q₁), H = ½|q|²: rigid rotation with period 2π."""

    dim = 2
    label = "rotator"
    default_q0 = np.array([1.0, 0.0])

    def theta(self, q):
        q = np.asarray(q, dtype=float)
        return 0.5 * np.stack([-q[..., 1], q[..., 0]], axis=-1)

    def theta_jacobian(self, q):
        q = np.asarray(q, dtype=float)
        jac = np.zeros(q.shape[:-1] + (2, 2))
        jac[..., 0, 1] = -0.5
        jac[..., 1, 0] = 0.5
        return jac

    def theta_hessian(self, q):
        q = np.asarray(q, dtype=float)
        return np.zeros(q.shape[:-1] + (2, 2, 2))

    def hamiltonian(self, q):
        q = np.asarray(q, dtype=float)
        return 0.5 * np.sum(q * q, axis=-1)

    def hamiltonian_gradient(self, q):
        return np.array(q, dtype=float)

    @staticmethod
    def exact_solution(q0, t):
        c, s = np.cos(t), np.sin(t)
        return np.array([c * q0[0] - s * q0[1], s * q0[0] + c * q0[1]])


def rotator() -> Rotator:
    return Rotator()


class LotkaVolterra(DegenerateLagrangianSystem):
    dim = 2
    label = "lotka-volterra"
    default_q0 = np.array([1.0, 1.0])

    def __init__(self, a1=1.0, a2=1.0, b1=1.0, b2=2.0):
        self.a1, self.a2, self.b1, self.b2 = float(a1), float(a2), float(b1), float(b2)

    def check_domain(self, q):
        if np.asarray(q)[..., :2].min() <= 0:
            raise DomainError("Lotka-Volterra requires q1, q2 > 0")

    def theta(self, q):
        q = np.asarray(q, dtype=float)
        self.check_domain(q)
        q1, q2 = q[..., 0], q[..., 1]
        return np.stack([np.log(q2) / q1 + q2, q1], axis=-1)

    def theta_jacobian(self, q):
        q = np.asarray(q, dtype=float)
        self.check_domain(q)
        q1, q2 = q[..., 0], q[..., 1]
        jac = np.empty(q.shape[:-1] + (2, 2))
        jac[..., 0, 0] = -np.log(q2) / q1**2
        jac[..., 0, 1] = 1.0 / (q1 * q2) + 1.0
        jac[..., 1, 0] = 1.0
        jac[..., 1, 1] = 0.0
        return jac

    def hamiltonian(self, q):
        q = np.asarray(q, dtype=float)
        self.check_domain(q)
        q1, q2 = q[..., 0], q[..., 1]
        return self.a1 * q1 + self.a2 * q2 - self.b1 * np.log(q1) - self.b2 * np.log(q2)

    def hamiltonian_gradient(self, q):
        q = np.asarray(q, dtype=float)
        self.check_domain(q)
        q1, q2 = q[..., 0], q[..., 1]
        return np.stack([self.a1 - self.b1 / q1, self.a2 - self.b2 / q2], axis=-1)

    def force_closed_form(self, q, v):
        q = np.asarray(q, dtype=float)
        self.check_domain(q)
        q1, q2 = q[..., 0], q[..., 1]
        v1, v2 = v[..., 0], v[..., 1]
        f1 = v2 - np.log(q2) / q1**2 * v1 - self.a1 + self.b1 / q1
        f2 = (1.0 + 1.0 / (q1 * q2)) * v1 - self.a2 + self.b2 / q2
        return np.stack([f1, f2], axis=-1)


def lotka_volterra(a1=1.0, a2=1.0, b1=1.0, b2=2.0) -> LotkaVolterra:
    return LotkaVolterra(a1, a2, b1, b2)


class PointVortices(DegenerateLagrangianSystem):
    """Two planar point vortices with circulation γ_i S(x, y), S = 1 + x² + y².

    Coordinates are ordered (x¹, y¹, x², y²).
    """

    dim = 4
    label = "point-vortices"
    default_q0 = np.array([1.0, 0.1, 1.0, -0.1])

    def __init__(self, gamma1=0.1, gamma2=0.1):
        self.gamma1, self.gamma2 = float(gamma1), float(gamma2)

    @staticmethod
    def _split(q):
        q = np.asarray(q, dtype=float)
        return q, q[..., 0], q[..., 1], q[..., 2], q[..., 3]

    def _dist2(self, x1, y1, x2, y2):
        r2 = (x1 - x2) ** 2 + (y1 - y2) ** 2
        if np.any(r2 == 0):
            raise DomainError("coincident vortices")
        return r2

    def theta(self, q):
        q, x1, y1, x2, y2 = self._split(q)
        g1, g2 = self.gamma1, self.gamma2
        s1 = 1 + x1**2 + y1**2
        s2 = 1 + x2**2 + y2**2
        return np.stack(
            [-0.5 * g1 * y1 * s1, 0.5 * g1 * x1 * s1, -0.5 * g2 * y2 * s2, 0.5 * g2 * x2 * s2],
            axis=-1,
        )

    def theta_jacobian(self, q):
        q = np.asarray(q, dtype=float)
        x, y = q[..., 0::2], q[..., 1::2]
        g = 0.5 * np.array([self.gamma1, self.gamma2])
        s = 1 + x * x + y * y
        jac = np.zeros(q.shape[:-1] + (4, 4))
        # ϑ_x = −½γ y S, ϑ_y = ½γ x S per vortex
        gxy = 2 * g * x * y
        jac[..., [0, 2], [0, 2]] = -gxy
        jac[..., [0, 2], [1, 3]] = -g * (s + 2 * y * y)
        jac[..., [1, 3], [0, 2]] = g * (s + 2 * x * x)
        jac[..., [1, 3], [1, 3]] = gxy
        return jac

    def hamiltonian(self, q):
        q, x1, y1, x2, y2 = self._split(q)
        r2 = self._dist2(x1, y1, x2, y2)
        s1 = 1 + x1**2 + y1**2
        s2 = 1 + x2**2 + y2**2
        return self.gamma1 * self.gamma2 / (2 * np.pi) * s1 * s2 * np.log(r2)

    def hamiltonian_gradient(self, q):
        q = np.asarray(q, dtype=float)
        xy1, xy2 = q[..., 0:2], q[..., 2:4]
        diff = xy1 - xy2
        r2 = self._dist2(diff[..., 0], diff[..., 1], 0.0, 0.0)
        s1 = 1 + np.sum(xy1 * xy1, axis=-1)
        s2 = 1 + np.sum(xy2 * xy2, axis=-1)
        gg = self.gamma1 * self.gamma2 / np.pi
        log = np.log(r2)
        c = (gg * s1 * s2 / r2)[..., None] * diff
        g1 = (gg * s2 * log)[..., None] * xy1 + c
        g2 = (gg * s1 * log)[..., None] * xy2 - c
        return np.concatenate([g1, g2], axis=-1)

    def momentum_map(self, q):
        q, x1, y1, x2, y2 = self._split(q)
        r1 = x1**2 + y1**2
        r2 = x2**2 + y2**2
        return 0.5 * (self.gamma1 * r1 * (1 + r1) + self.gamma2 * r2 * (1 + r2))

    def force_closed_form(self, q, v):
        q, x1, y1, x2, y2 = self._split(q)
        v = np.asarray(v, dtype=float)
        grad = self.hamiltonian_gradient(q)
        out = []
        for k, (g, x, y) in enumerate(((self.gamma1, x1, y1), (self.gamma2, x2, y2))):
            xd, yd = v[..., 2 * k], v[..., 2 * k + 1]
            s = 1 + x**2 + y**2
            ang = 0.5 * g * (x * yd - y * xd)
            out.append(ang * 2 * x + 0.5 * g * yd * s - grad[..., 2 * k])
            out.append(ang * 2 * y - 0.5 * g * xd * s - grad[..., 2 * k + 1])
        return np.stack(out, axis=-1)


def point_vortices(gamma1=0.1, gamma2=0.1) -> PointVortices:
    return PointVortices(gamma1, gamma2)


@dataclass(frozen=True)
class FieldSpec:
    """Magnetic field for the guiding-centre system.

    kind is ``"tokamak"`` (coordinates R, Z, φ, u) or ``"symmetric"``
    (coordinates x, y, z, u with B = (0, 0, B0 (1 + x² + y²))).
    """

    kind: str = "tokamak"
    R0: float = 2.0
    B0: float = 5.0
    qsafe: float = 2.0
    mu: float = 0.01

    @classmethod
    def tokamak(cls, R0=2.0, B0=5.0, qsafe=2.0, mu=0.01):
        return cls("tokamak", R0, B0, qsafe, mu)

    @classmethod
    def symmetric(cls, B0=1.0, mu=0.01):
        return cls("symmetric", 0.0, B0, 0.0, mu)


class TokamakGuidingCentre(DegenerateLagrangianSystem):
    dim = 4
    label = "guiding-centre-tokamak"
    default_q0 = np.array([2.5, 0.0, 0.0, 0.1])

    def __init__(self, field: FieldSpec):
        self.field = field
        self.R0, self.B0, self.q0, self.mu = field.R0, field.B0, field.qsafe, field.mu

    def check_domain(self, q):
        if np.any(np.asarray(q)[..., 0] <= 0):
            raise DomainError("tokamak guiding centre requires R > 0")

    def _geom(self, q):
        q = np.asarray(q, dtype=float)
        self.check_domain(q)
        R, Z, u = q[..., 0], q[..., 1], q[..., 3]
        r2 = (R - self.R0) ** 2 + Z**2
        S = np.sqrt(r2 + (self.q0 * self.R0) ** 2)
        return q, R, Z, u, r2, S

    def vector_potential(self, q):
        q, R, Z, u, r2, S = self._geom(q)
        B0, R0, q0 = self.B0, self.R0, self.q0
        return np.stack(
            [B0 * R0 * Z / (2 * R), -np.log(R / R0) * B0 * R0 / 2, -B0 * r2 / (2 * q0 * R)], axis=-1
        )

    def magnetic_field(self, q):
        q, R, Z, u, r2, S = self._geom(q)
        B0, R0, q0 = self.B0, self.R0, self.q0
        return np.stack([-B0 * Z / (q0 * R), B0 * (R - R0) / (q0 * R), -B0 * R0 / R], axis=-1)

    def field_strength(self, q):
        q, R, Z, u, r2, S = self._geom(q)
        return self.B0 * S / (self.q0 * R)

    def unit_field(self, q):
        q, R, Z, u, r2, S = self._geom(q)
        return np.stack([-Z / S, (R - self.R0) / S, -self.q0 * self.R0 / S], axis=-1)

    def theta(self, q):
        q, R, Z, u, r2, S = self._geom(q)
        B0, R0, q0 = self.B0, self.R0, self.q0
        t1 = B0 * R0 * Z / (2 * R) - u * Z / S
        t2 = -np.log(R / R0) * B0 * R0 / 2 + u * (R - R0) / S
        t3 = -B0 * r2 / (2 * q0) - u * q0 * R0 * R / S
        return np.stack([t1, t2, t3, np.zeros_like(R)], axis=-1)

    def theta_jacobian(self, q):
        q, R, Z, u, r2, S = self._geom(q)
        B0, R0, q0 = self.B0, self.R0, self.q0
        dR = R - R0
        S3 = S**3
        jac = np.zeros(q.shape[:-1] + (4, 4))
        jac[..., 0, 0] = -B0 * R0 * Z / (2 * R**2) + u * Z * dR / S3
        jac[..., 0, 1] = B0 * R0 / (2 * R) + u * (-1 / S + Z**2 / S3)
        jac[..., 0, 3] = -Z / S
        jac[..., 1, 0] = -B0 * R0 / (2 * R) + u * (1 / S - dR**2 / S3)
        jac[..., 1, 1] = -u * dR * Z / S3
        jac[..., 1, 3] = dR / S
        jac[..., 2, 0] = -B0 * dR / q0 - u * q0 * R0 * (1 / S - R * dR / S3)
        jac[..., 2, 1] = -B0 * Z / q0 + u * q0 * R0 * R * Z / S3
        jac[..., 2, 3] = -q0 * R0 * R / S
        return jac

    def hamiltonian(self, q):
        q, R, Z, u, r2, S = self._geom(q)
        return 0.5 * u**2 + self.mu * self.B0 * S / (self.q0 * R)

    def hamiltonian_gradient(self, q):
        q, R, Z, u, r2, S = self._geom(q)
        c = self.mu * self.B0 / self.q0
        dB_dR = c * ((R - self.R0) / (S * R) - S / R**2)
        dB_dZ = c * Z / (R * S)
        return np.stack([dB_dR, dB_dZ, np.zeros_like(R), u], axis=-1)

    def momentum_map(self, q):
        """Toroidal momentum ϑ₃."""
        return self.theta(q)[..., 2]

    def force_closed_form(self, q, v):
        # f_i = Σ_k ϑ_{k,i} v_k − ∇_i H with ϑ_{k,4} = (b_R, b_Z, R b_φ)
        jac = self.theta_jacobian(q)
        grad = self.hamiltonian_gradient(q)
        v = np.asarray(v, dtype=float)
        f = [jac[..., 0, i] * v[..., 0] + jac[..., 1, i] * v[..., 1] + jac[..., 2, i] * v[..., 2]
             - grad[..., i] for i in range(3)]
        b = self.unit_field(q)
        R = np.asarray(q)[..., 0]
        f.append(b[..., 0] * v[..., 0] + b[..., 1] * v[..., 1] + R * b[..., 2] * v[..., 2] - grad[..., 3])
        return np.stack(f, axis=-1)


class SymmetricGuidingCentre(DegenerateLagrangianSystem):
    """Guiding centre in B = (0, 0, B0 (1 + x² + y²)).

    Vector potential gauge A = ½ B0 g (−y, x, 0) with g = 1 + (x² + y²)/2.
    """

    dim = 4
    label = "guiding-centre-symmetric"
    default_q0 = np.array([0.5, 0.0, 0.0, 0.55])

    def __init__(self, field: FieldSpec):
        self.field = field
        self.B0, self.mu = field.B0, field.mu

    def vector_potential(self, q):
        q = np.asarray(q, dtype=float)
        x, y = q[..., 0], q[..., 1]
        g = 1 + 0.5 * (x**2 + y**2)
        return np.stack([-0.5 * self.B0 * y * g, 0.5 * self.B0 * x * g, np.zeros_like(x)], axis=-1)

    def field_strength(self, q):
        q = np.asarray(q, dtype=float)
        return self.B0 * (1 + q[..., 0] ** 2 + q[..., 1] ** 2)

    def theta(self, q):
        q = np.asarray(q, dtype=float)
        A = self.vector_potential(q)
        return np.stack([A[..., 0], A[..., 1], q[..., 3], np.zeros_like(q[..., 0])], axis=-1)

    def theta_jacobian(self, q):
        q = np.asarray(q, dtype=float)
        x, y = q[..., 0], q[..., 1]
        g = 1 + 0.5 * (x**2 + y**2)
        h = 0.5 * self.B0
        jac = np.zeros(q.shape[:-1] + (4, 4))
        jac[..., 0, 0] = -h * x * y
        jac[..., 0, 1] = -h * (g + y**2)
        jac[..., 1, 0] = h * (g + x**2)
        jac[..., 1, 1] = h * x * y
        jac[..., 2, 3] = 1.0
        return jac

    def theta_hessian(self, q):
        q = np.asarray(q, dtype=float)
        x, y = q[..., 0], q[..., 1]
        h = 0.5 * self.B0
        hess = np.zeros(q.shape[:-1] + (4, 4, 4))
        hess[..., 0, 0, 0] = -h * y
        hess[..., 0, 0, 1] = hess[..., 0, 1, 0] = -h * x
        hess[..., 0, 1, 1] = -3 * h * y
        hess[..., 1, 0, 0] = 3 * h * x
        hess[..., 1, 0, 1] = hess[..., 1, 1, 0] = h * y
        hess[..., 1, 1, 1] = h * x
        return hess

    def hamiltonian(self, q):
        q = np.asarray(q, dtype=float)
        return 0.5 * q[..., 3] ** 2 + self.mu * self.field_strength(q)

    def hamiltonian_gradient(self, q):
        q = np.asarray(q, dtype=float)
        c = 2 * self.mu * self.B0
        return np.stack([c * q[..., 0], c * q[..., 1], np.zeros_like(q[..., 0]), q[..., 3]], axis=-1)

    def momentum_map(self, q):
        """Momentum conjugate to z-translations, ϑ₃ = u."""
        return np.asarray(q, dtype=float)[..., 3]


def guiding_centre(field: FieldSpec = FieldSpec()) -> DegenerateLagrangianSystem:
    if field.kind == "tokamak":
        return TokamakGuidingCentre(field)
    if field.kind == "symmetric":
        return SymmetricGuidingCentre(field)
    raise ValueError(f"unknown field kind {field.kind!r}")


def _gc_tokamak(**kw):
    keys = {"R0", "B0", "qsafe", "mu"}
    return guiding_centre(FieldSpec.tokamak(**{k: v for k, v in kw.items() if k in keys}))


def _gc_symmetric(**kw):
    return guiding_centre(FieldSpec.symmetric(**{k: v for k, v in kw.items() if k in ("B0", "mu")}))


PROBLEMS = {
    "rotator": lambda **kw: rotator(),
    "lotka-volterra": lambda **kw: lotka_volterra(**kw),
    "point-vortices": lambda **kw: point_vortices(**kw),
    "guiding-centre-tokamak": _gc_tokamak,
    "guiding-centre-symmetric": _gc_symmetric,
}


def get_system(name: str, **params) -> DegenerateLagrangianSystem:
    """Resolve a problem name with optional parameter overrides."""
    try:
        build = PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    return build(**params)
