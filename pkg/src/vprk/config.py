"""Run configuration as a flat ``key = value`` text file with dotted keys.

Problem parameters are given as ``problem.<name> = value`` (for example
``problem.mu = 0.02``); all other keys are listed in ``SCHEMA``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .nlsolve import SolverConfig
from .projections import ProjectionKind
from .systems import PROBLEMS
from .tableaux import get_tableau


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple:
    text = str(text).strip()
    if not text:
        return ()
    return tuple(float(v) for v in text.split(","))


def _opt_float(text: str) -> Optional[float]:
    text = str(text).strip().lower()
    return None if text in ("", "auto", "none") else float(text)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if value is None:
        return "auto"
    if isinstance(value, float):
        return repr(value)
    return str(value)


# key: (parser, default)
SCHEMA: dict[str, tuple] = {
    "problem": (str, "point-vortices"),
    "sim.q0": (_floats, ()),
    "sim.tableau": (str, "glrk2"),
    "sim.projection": (str, "none"),
    "sim.midpoint_rinf": (_bool, True),
    "sim.h": (float, 0.1),
    "sim.nsteps": (int, 1000),
    "sim.output_interval": (int, 1),
    "solver.atol": (_opt_float, None),
    "solver.max_iter": (int, 50),
    "solver.jac_refresh": (int, 5),
    "solver.line_search": (_bool, True),
    "diag.energy": (_bool, True),
    "diag.constraint": (_bool, True),
    "diag.momentum": (_bool, True),
    "diag.lambda": (_bool, False),
    "diag.poincare1": (_bool, False),
    "diag.poincare2": (_bool, False),
    "diag.form": (str, "noncanonical"),
    "diag.interval": (int, 10),
    "diag.n_loop": (int, 2000),
    "diag.surface_n": (int, 100),
    "convergence.h_list": (_floats, (0.2, 0.1, 0.05, 0.025)),
    "convergence.t_end": (float, 10.0),
    "output.dir": (str, "out"),
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Validated run configuration; ``values`` maps every schema key to a typed value."""

    values: dict = field(default_factory=lambda: {k: d for k, (_, d) in SCHEMA.items()})
    problem_params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def __getitem__(self, key: str) -> Any:
        if key.startswith("problem."):
            return self.problem_params[key[len("problem.") :]]
        return self.values[key]

    def __eq__(self, other):
        return (
            isinstance(other, RunConfig)
            and self.values == other.values
            and self.problem_params == other.problem_params
        )

    def validate(self):
        v = self.values
        if v["problem"] not in PROBLEMS:
            raise ConfigError(f"unknown problem {v['problem']!r}; choose from {sorted(PROBLEMS)}")
        try:
            get_tableau(v["sim.tableau"])
            ProjectionKind.parse(v["sim.projection"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not v["sim.h"] > 0:
            raise ConfigError("sim.h must be positive")
        if v["sim.nsteps"] < 1:
            raise ConfigError("sim.nsteps must be at least 1")
        if v["sim.output_interval"] < 1 or v["diag.interval"] < 1:
            raise ConfigError("output intervals must be at least 1")
        if v["diag.form"] not in ("noncanonical", "canonical", "corrected"):
            raise ConfigError(f"unknown diag.form {v['diag.form']!r}")
        try:
            self.solver_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def set(self, key: str, text) -> "RunConfig":
        """Copy with one key set from its text form."""
        values = dict(self.values)
        params = dict(self.problem_params)
        key = key.strip()
        if key.startswith("problem."):
            params[key[len("problem.") :]] = float(text)
        elif key in SCHEMA:
            parser = SCHEMA[key][0]
            try:
                values[key] = parser(text) if isinstance(text, str) else _coerce(parser, text)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from None
        else:
            raise ConfigError(f"unknown configuration key {key!r}")
        return RunConfig(values, params)

    def with_overrides(self, items) -> "RunConfig":
        cfg = self
        for item in items:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form key=value")
            key, text = item.split("=", 1)
            cfg = cfg.set(key, text.strip())
        return cfg

    def solver_config(self) -> SolverConfig:
        v = self.values
        return SolverConfig(
            abs_tolerance=v["solver.atol"],
            max_iterations=v["solver.max_iter"],
            jacobian_refresh_interval=v["solver.jac_refresh"],
            line_search=v["solver.line_search"],
        )

    def system(self):
        from .systems import get_system

        return get_system(self.values["problem"], **self.problem_params)

    def q0(self):
        import numpy as np

        sys = self.system()
        q0 = self.values["sim.q0"]
        if not q0:
            return np.array(sys.default_q0, dtype=float)
        if len(q0) != sys.dim:
            raise ConfigError(f"sim.q0 has {len(q0)} entries, {sys.label} needs {sys.dim}")
        return np.array(q0, dtype=float)

    def integrator(self, h: Optional[float] = None):
        from .projections import Integrator

        v = self.values
        return Integrator(
            self.system(),
            v["sim.tableau"],
            v["sim.projection"],
            v["sim.h"] if h is None else h,
            self.solver_config(),
            v["sim.midpoint_rinf"],
        )

    def to_dict(self) -> dict:
        out = {k: _fmt(v) for k, v in self.values.items()}
        out.update({f"problem.{k}": _fmt(v) for k, v in self.problem_params.items()})
        return out

    def serialize(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in sorted(self.to_dict().items()))

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, value = line.split("=", 1)
            cfg = cfg.set(key.strip(), value.strip())
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.parse(Path(path).read_text())

    @classmethod
    def from_dict(cls, items: dict) -> "RunConfig":
        return cls.parse("".join(f"{k} = {v}\n" for k, v in items.items()))


def _coerce(parser, value):
    if parser is _floats:
        return tuple(float(v) for v in value)
    if parser is _bool:
        return bool(value) if isinstance(value, bool) else _bool(value)
    if parser is _opt_float:
        return None if value is None else float(value)
    return parser(value)
