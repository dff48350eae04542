"""Runge-Kutta coefficient sets for variational partitioned integrators.

All coefficients are generated in extended precision (mpmath, 40 digits) and
stored twice: the nearest double (``a``, ``b``) and the rounding of the
remainder (``a_tilde``, ``b_tilde``), so that stage and update sums can be
evaluated as ``a @ V + a_tilde @ V`` without losing the last bits.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import mpmath
import numpy as np

_DPS = 40

GAUSS_LEGENDRE = "GaussLegendre"
LOBATTO_FAMILIES = ("IIIA", "IIIB", "IIIC", "IIICstar", "IIID", "IIIE")
SRK3 = "SRK3"
RADAU_IIA = "RadauIIA"


class TableauError(ValueError):
    """Raised for unsupported stage counts, families or malformed names."""


def split_coefficients(exact):
    """Split high-precision coefficients into a double part and a correction.

    Parameters
    ----------
    exact : str, mpmath.mpf or (nested) sequence thereof
        Exact values, typically decimal strings with 30 or more digits.

    Returns
    -------
    machine, correction : ndarray
        ``machine`` is ``exact`` rounded to double precision and
        ``correction`` is ``exact - machine`` rounded to double precision.
    """
    with mpmath.workdps(_DPS):
        arr = np.asarray(exact, dtype=object)
        machine = np.empty(arr.shape, dtype=float)
        correction = np.empty(arr.shape, dtype=float)
        for idx, value in np.ndenumerate(arr):
            x = _to_mpf(value)
            m = float(x)
            machine[idx] = m
            correction[idx] = float(x - mpmath.mpf(m))
    if machine.ndim == 0:
        return float(machine), float(correction)
    return machine, correction


def _to_mpf(value):
    if isinstance(value, mpmath.mpf):
        return value
    if isinstance(value, str):
        text = value.strip()
        if not re.fullmatch(r"[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?", text):
            raise TableauError(f"malformed decimal string {value!r}")
        return mpmath.mpf(text)
    if isinstance(value, (int, float, np.floating, np.integer)):
        return mpmath.mpf(value)
    raise TableauError(f"cannot interpret {value!r} as a coefficient")


@dataclass(frozen=True)
class RKTableau:
    """A single Runge-Kutta coefficient set (a, b, c).

    ``a`` and ``b`` are double-precision values; ``a_tilde`` and ``b_tilde``
    carry the rounding corrections of the exact coefficients.
    """

    name: str
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    a_tilde: np.ndarray = field(default=None, repr=False)
    b_tilde: np.ndarray = field(default=None, repr=False)
    exact_a: Optional[tuple] = field(default=None, repr=False, compare=False)
    exact_b: Optional[tuple] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        s = len(self.b)
        for arr in (self.a, self.b, self.c):
            arr.setflags(write=False)
        if self.a.shape != (s, s) or self.c.shape != (s,):
            raise TableauError(f"inconsistent tableau shapes in {self.name}")
        if self.a_tilde is None:
            object.__setattr__(self, "a_tilde", np.zeros_like(self.a))
        if self.b_tilde is None:
            object.__setattr__(self, "b_tilde", np.zeros_like(self.b))

    @property
    def s(self) -> int:
        return len(self.b)

    @classmethod
    def from_exact(cls, name, a, b, c) -> "RKTableau":
        """Build from mpmath values (matrices or nested lists)."""
        a_rows = tuple(tuple(str(v) for v in row) for row in _rows(a))
        b_vals = tuple(str(v) for v in _flat(b))
        a_m, a_t = split_coefficients(a_rows)
        b_m, b_t = split_coefficients(b_vals)
        c_m, _ = split_coefficients(tuple(str(v) for v in _flat(c)))
        return cls(name, a_m, b_m, c_m, a_t, b_t, exact_a=a_rows, exact_b=b_vals)

    def row_sum_residual(self) -> float:
        return float(np.max(np.abs(self.a.sum(axis=1) - self.c)))

    def weight_sum_residual(self) -> float:
        return abs(float(self.b.sum()) - 1.0)


@dataclass(frozen=True)
class PartitionedTableau:
    """A pair of tableaux for (q, p) with method metadata.

    ``q_tableau`` holds (a, b) and ``p_tableau`` holds (ā, b̄).  ``d`` is the
    null-space vector of the stage velocities for Lobatto pairings, and
    ``r_infinity`` the stability function at infinity used to orient the
    projection steps.
    """

    name: str
    family: str
    q_tableau: RKTableau
    p_tableau: RKTableau
    r_infinity: float
    d: Optional[np.ndarray] = None
    midpoint_stage_index: Optional[int] = None

    @property
    def s(self) -> int:
        return self.q_tableau.s

    @property
    def symmetric(self) -> bool:
        """Whether the method is symmetric (self-adjoint)."""
        if self.family == RADAU_IIA:
            return False
        if self.family in ("IIIA", "IIIB", "IIIC", "IIICstar"):
            return False
        return True

    @property
    def needs_multiplier(self) -> bool:
        return self.d is not None


def _rows(a):
    if isinstance(a, mpmath.matrix):
        return [[a[i, j] for j in range(a.cols)] for i in range(a.rows)]
    return [list(row) for row in a]


def _flat(v):
    if isinstance(v, mpmath.matrix):
        return [v[i] for i in range(len(v))]
    return list(v)


def _symplectic_adjoint(a, b):
    """Coefficients ā with b_i ā_ij + b_j a_ji = b_i b_j."""
    s = len(b)
    return [[b[j] - b[j] * a[j][i] / b[i] for j in range(s)] for i in range(s)]


def _shifted_legendre(s, x):
    """Value and derivative of P_s(2x - 1)."""
    t = 2 * x - 1
    p0, p1 = mpmath.mpf(1), t
    if s == 0:
        return p0, mpmath.mpf(0)
    for k in range(2, s + 1):
        p0, p1 = p1, ((2 * k - 1) * t * p1 - (k - 1) * p0) / k
    dp = s * (t * p1 - p0) / (t * t - 1)
    return p1, 2 * dp


def _gauss_nodes(s):
    nodes = []
    for i in range(1, s + 1):
        x = (1 - mpmath.cos(mpmath.pi * (i - mpmath.mpf(1) / 4) / (s + mpmath.mpf(1) / 2))) / 2
        for _ in range(100):
            val, der = _shifted_legendre(s, x)
            dx = val / der
            x -= dx
            if abs(dx) < mpmath.mpf(10) ** (-_DPS + 5):
                break
        nodes.append(x)
    return sorted(nodes)


def collocation_coefficients(c):
    """Coefficients a_ij = ∫_0^{c_i} l_j and b_j = ∫_0^1 l_j for nodes c.

    Solves the Vandermonde systems Σ_j a_ij c_j^(k-1) = c_i^k / k.
    """
    s = len(c)
    vt = mpmath.matrix(s, s)
    for k in range(s):
        for j in range(s):
            vt[k, j] = c[j] ** k
    a = []
    for i in range(s):
        rhs = mpmath.matrix([c[i] ** (k + 1) / (k + 1) for k in range(s)])
        a.append(list(mpmath.lu_solve(vt, rhs)))
    rhs = mpmath.matrix([mpmath.mpf(1) / (k + 1) for k in range(s)])
    b = list(mpmath.lu_solve(vt, rhs))
    return a, b


@lru_cache(maxsize=None)
def gauss_legendre(s: int) -> PartitionedTableau:
    """Gauss-Legendre collocation method with ``s`` stages (1 <= s <= 6)."""
    if not isinstance(s, (int, np.integer)) or not 1 <= s <= 6:
        raise TableauError(f"Gauss-Legendre stage count must be in 1..6, got {s!r}")
    with mpmath.workdps(_DPS):
        c = _gauss_nodes(int(s))
        a, b = collocation_coefficients(c)
        tab = RKTableau.from_exact(f"glrk{s}", a, b, c)
    mid = 0 if s == 1 else None
    return PartitionedTableau(
        name=f"glrk{s}",
        family=GAUSS_LEGENDRE,
        q_tableau=tab,
        p_tableau=tab,
        r_infinity=float((-1) ** s),
        midpoint_stage_index=mid,
    )


def _lobatto_iiia(s):
    r5 = mpmath.sqrt(5)
    f = mpmath.mpf
    if s == 2:
        c = [f(0), f(1)]
        a = [[f(0), f(0)], [f(1) / 2, f(1) / 2]]
    elif s == 3:
        c = [f(0), f(1) / 2, f(1)]
        a = [
            [f(0), f(0), f(0)],
            [f(5) / 24, f(1) / 3, f(-1) / 24],
            [f(1) / 6, f(2) / 3, f(1) / 6],
        ]
    else:
        c = [f(0), (5 - r5) / 10, (5 + r5) / 10, f(1)]
        a = [
            [f(0)] * 4,
            [(11 + r5) / 120, (25 - r5) / 120, (25 - 13 * r5) / 120, (-1 + r5) / 120],
            [(11 - r5) / 120, (25 + 13 * r5) / 120, (25 + r5) / 120, (-1 - r5) / 120],
            [f(1) / 12, f(5) / 12, f(5) / 12, f(1) / 12],
        ]
    b = list(a[-1])
    return a, b, c


def _lobatto_iiic(s):
    r5 = mpmath.sqrt(5)
    f = mpmath.mpf
    if s == 2:
        a = [[f(1) / 2, f(-1) / 2], [f(1) / 2, f(1) / 2]]
    elif s == 3:
        a = [
            [f(1) / 6, f(-1) / 3, f(1) / 6],
            [f(1) / 6, f(5) / 12, f(-1) / 12],
            [f(1) / 6, f(2) / 3, f(1) / 6],
        ]
    else:
        a = [
            [f(1) / 12, -r5 / 12, r5 / 12, f(-1) / 12],
            [f(1) / 12, f(1) / 4, (10 - 7 * r5) / 60, r5 / 60],
            [f(1) / 12, (10 + 7 * r5) / 60, f(1) / 4, -r5 / 60],
            [f(1) / 12, f(5) / 12, f(5) / 12, f(1) / 12],
        ]
    return a


def d_vector(s: int) -> np.ndarray:
    """Null-space coefficients of the Lobatto stage velocities."""
    if s == 2:
        return np.array([1.0, -1.0])
    if s == 3:
        return np.array([0.5, -1.0, 0.5])
    if s == 4:
        r5 = np.sqrt(5.0)
        return np.array([1.0, -r5, r5, -1.0])
    raise TableauError(f"d-vector only defined for s in 2..4, got {s!r}")


@lru_cache(maxsize=None)
def lobatto(family: str, s: int) -> PartitionedTableau:
    """Partitioned Gauss-Lobatto method of the named family.

    IIIA pairs with IIIB, IIIB with IIIA, IIIC with IIIC* (and vice versa).
    IIID and IIIE use the same coefficients for q and p: the elementwise
    means of IIIA/IIIB and IIIC/IIIC* respectively.
    """
    if family not in LOBATTO_FAMILIES:
        raise TableauError(f"unknown Lobatto family {family!r}")
    if s not in (2, 3, 4):
        raise TableauError(f"Lobatto stage count must be 2, 3 or 4, got {s!r}")
    with mpmath.workdps(_DPS):
        a_A, b, c = _lobatto_iiia(s)
        a_B = _symplectic_adjoint(a_A, b)
        a_C = _lobatto_iiic(s)
        a_Cs = _symplectic_adjoint(a_C, b)
        mean = lambda x, y: [[(x[i][j] + y[i][j]) / 2 for j in range(s)] for i in range(s)]
        pairs = {
            "IIIA": (a_A, a_B),
            "IIIB": (a_B, a_A),
            "IIIC": (a_C, a_Cs),
            "IIICstar": (a_Cs, a_C),
            "IIID": (mean(a_A, a_B),) * 2,
            "IIIE": (mean(a_C, a_Cs),) * 2,
        }
        a_q, a_p = pairs[family]
        name = f"lobatto-{family.lower()}-{s}"
        tq = RKTableau.from_exact(name, a_q, b, c)
        tp = tq if a_p is a_q else RKTableau.from_exact(name + "-p", a_p, b, c)
    d = d_vector(s) if family in ("IIIA", "IIIB", "IIIC", "IIICstar") else None
    return PartitionedTableau(
        name=name,
        family=family,
        q_tableau=tq,
        p_tableau=tp,
        r_infinity=float((-1) ** (s - 1)),
        d=d,
    )


@lru_cache(maxsize=None)
def srk3() -> PartitionedTableau:
    """Symmetric symplectic three-stage method whose middle stage is the chord midpoint."""
    with mpmath.workdps(_DPS):
        f = mpmath.mpf
        r15 = mpmath.sqrt(15)
        c = [f(1) / 2 - r15 / 10, f(1) / 2, f(1) / 2 + r15 / 10]
        a = [
            [f(5) / 36, f(2) / 9, f(25) / 180 - r15 / 10],
            [f(5) / 36, f(2) / 9, f(5) / 36],
            [f(25) / 180 + r15 / 10, f(2) / 9, f(5) / 36],
        ]
        b = [f(5) / 18, f(4) / 9, f(5) / 18]
        tab = RKTableau.from_exact("srk3", a, b, c)
    return PartitionedTableau(
        name="srk3",
        family=SRK3,
        q_tableau=tab,
        p_tableau=tab,
        r_infinity=-1.0,
        midpoint_stage_index=1,
    )


@lru_cache(maxsize=None)
def radau_iia(s: int) -> PartitionedTableau:
    """Radau IIA collocation method (stiffly accurate, not symplectic)."""
    if s not in (2, 3):
        raise TableauError(f"Radau IIA stage count must be 2 or 3, got {s!r}")
    with mpmath.workdps(_DPS):
        f = mpmath.mpf
        if s == 2:
            c = [f(1) / 3, f(1)]
            a = [[f(5) / 12, f(-1) / 12], [f(3) / 4, f(1) / 4]]
        else:
            r6 = mpmath.sqrt(6)
            c = [(4 - r6) / 10, (4 + r6) / 10, f(1)]
            a = [
                [(88 - 7 * r6) / 360, (296 - 169 * r6) / 1800, (-2 + 3 * r6) / 225],
                [(296 + 169 * r6) / 1800, (88 + 7 * r6) / 360, (-2 - 3 * r6) / 225],
                [(16 - r6) / 36, (16 + r6) / 36, f(1) / 9],
            ]
        b = list(a[-1])
        tab = RKTableau.from_exact(f"radau-iia-{s}", a, b, c)
    return PartitionedTableau(
        name=f"radau-iia-{s}",
        family=RADAU_IIA,
        q_tableau=tab,
        p_tableau=tab,
        r_infinity=0.0,
    )


def check_symplecticity(t: PartitionedTableau) -> float:
    """Largest violation of b_i ā_ij + b̄_j a_ji = b_i b̄_j and b̄ = b."""
    a, b = t.q_tableau.a, t.q_tableau.b
    abar, bbar = t.p_tableau.a, t.p_tableau.b
    cond = b[:, None] * abar + bbar[None, :] * a.T - b[:, None] * bbar[None, :]
    return float(max(np.max(np.abs(cond)), np.max(np.abs(bbar - b))))


def is_symplectic(t: PartitionedTableau, tol: float = 1e-12) -> bool:
    return check_symplecticity(t) <= tol


_NAME_PATTERNS = (
    (re.compile(r"glrk(\d+)"), lambda m: gauss_legendre(int(m.group(1)))),
    (re.compile(r"gauss-legendre-(\d+)"), lambda m: gauss_legendre(int(m.group(1)))),
    (re.compile(r"srk3"), lambda m: srk3()),
    (re.compile(r"radau-iia-(\d+)"), lambda m: radau_iia(int(m.group(1)))),
    (
        re.compile(r"lobatto-(iiia|iiib|iiicstar|iiic|iiid|iiie)-(\d+)"),
        lambda m: lobatto(
            {"iiicstar": "IIICstar"}.get(m.group(1), m.group(1).upper()), int(m.group(2))
        ),
    ),
)


def get_tableau(name: str) -> PartitionedTableau:
    """Resolve a tableau name such as ``glrk4``, ``lobatto-iiib-3``, ``srk3`` or ``radau-iia-2``."""
    key = name.strip().lower()
    for pattern, build in _NAME_PATTERNS:
        m = pattern.fullmatch(key)
        if m:
            return build(m)
    raise TableauError(f"unknown tableau name {name!r}")


def tableau_names() -> list[str]:
    names = [f"glrk{s}" for s in range(1, 7)]
    for fam in LOBATTO_FAMILIES:
        names += [f"lobatto-{fam.lower()}-{s}" for s in (2, 3, 4)]
    names += ["srk3", "radau-iia-2", "radau-iia-3"]
    return names


def all_tableaux() -> list[PartitionedTableau]:
    return [get_tableau(n) for n in tableau_names()]
