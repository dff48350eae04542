"""Experiment runner: single runs, parameter sweeps, invariants and plot scripts.

Artifacts of a run in directory ``out``:

* ``run.csv``: t, q1..qd, p1..pd, lambda1..lambdad, energy_err, constraint_res
  and, when the problem has a momentum map and ``diag.momentum`` is on,
  momentum_err.  17 significant digits, LF line endings.
* ``run.json``: the RunSummary.
* ``run.cfg``: the configuration that produced them.
"""

from __future__ import annotations

import csv
import itertools
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig
from .diagnostics import (
    DiagnosticSeries,
    compute_series,
    drift_estimate,
    fit_slope,
    loop_invariant_I1,
    relative_variation,
    seed_loop,
    seed_surface,
    surface_invariant_I2,
)

CSV_NAME = "run.csv"
SUMMARY_NAME = "run.json"
CONFIG_NAME = "run.cfg"
DRIFT_BLOCKS = 10


def _num(x) -> str:
    return f"{float(x):.17g}"


@dataclass
class RunSummary:
    """Outcome of one run; ``failure`` is None or {step, t, status, message}."""

    problem: str
    method: str
    h: float
    nsteps: int
    steps_completed: int
    final_t: float
    final_q: list
    final_p: list
    final_lambda: list
    max_constraint_residual: float
    final_constraint_residual: float
    final_energy_error: float
    max_energy_error: float
    energy_drift_blocks: list
    final_momentum_error: Optional[float] = None
    momentum_drift_blocks: Optional[list] = None
    newton_iterations: int = 0
    failures: int = 0
    failure: Optional[dict] = None
    wall_time: float = 0.0

    @property
    def completed(self) -> bool:
        return self.failure is None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunSummary":
        return cls(**json.loads(text))

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "RunSummary":
        return cls.from_json(Path(path).read_text())


def csv_header(dim: int, momentum: bool) -> list:
    cols = ["t"] + [f"q{i}" for i in range(1, dim + 1)] + [f"p{i}" for i in range(1, dim + 1)]
    cols += [f"lambda{i}" for i in range(1, dim + 1)] + ["energy_err", "constraint_res"]
    return cols + (["momentum_err"] if momentum else [])


def write_series_csv(path, traj, series: DiagnosticSeries, with_momentum: bool):
    dim = traj.q.shape[-1]
    cols = [traj.times[:, None], traj.q, traj.p, traj.lam]
    cols += [series.energy_error[:, None], series.constraint_residual[:, None]]
    if with_momentum:
        cols.append(series.momentum_error[:, None])
    table = np.hstack(cols)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(csv_header(dim, with_momentum))
        for row in table:
            writer.writerow([_num(v) for v in row])


def _blocks(values) -> list:
    values = np.asarray(values, dtype=float)
    return drift_estimate(values, min(DRIFT_BLOCKS, len(values))).tolist()


def summarize(config: RunConfig, traj, series: DiagnosticSeries) -> RunSummary:
    failure = None
    if traj.failure is not None:
        exc = traj.failure
        failure = {
            "step": getattr(exc, "step", None),
            "t": getattr(exc, "t", None),
            "status": getattr(exc, "status", type(exc).__name__),
            "message": str(exc),
        }
    momentum = series.momentum_error
    return RunSummary(
        problem=config["problem"],
        method=traj.method,
        h=config["sim.h"],
        nsteps=config["sim.nsteps"],
        steps_completed=int(traj.steps[-1]) if failure is None else int(failure["step"]) - 1,
        final_t=float(traj.times[-1]),
        final_q=traj.q[-1].tolist(),
        final_p=traj.p[-1].tolist(),
        final_lambda=traj.lam[-1].tolist(),
        max_constraint_residual=float(np.max(series.constraint_residual)),
        final_constraint_residual=float(series.constraint_residual[-1]),
        final_energy_error=float(series.energy_error[-1]),
        max_energy_error=float(np.max(np.abs(series.energy_error))),
        energy_drift_blocks=_blocks(series.energy_error),
        final_momentum_error=None if momentum is None else float(momentum[-1]),
        momentum_drift_blocks=None if momentum is None else _blocks(momentum),
        newton_iterations=int(traj.newton_iterations),
        failures=0 if failure is None else 1,
        failure=failure,
        wall_time=float(traj.wall_time),
    )


def run(config: RunConfig, out_dir=None) -> RunSummary:
    """Integrate one trajectory and write its CSV series, summary and config.

    Step failures end the run early and are recorded in the summary.
    """
    out = Path(config["output.dir"] if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sys = config.system()
    traj = config.integrator().integrate(
        config.q0(), config["sim.nsteps"], config["sim.output_interval"]
    )
    series = compute_series(sys, traj)
    with_momentum = series.momentum_error is not None and config["diag.momentum"]
    write_series_csv(out / CSV_NAME, traj, series, with_momentum)
    summary = summarize(config, traj, series)
    summary.save(out / SUMMARY_NAME)
    (out / CONFIG_NAME).write_text(config.serialize())
    return summary


# Sweeps


@dataclass
class SweepResult:
    """Per-run overrides and summaries plus the convergence table for h axes.

    ``summaries`` holds None where a run raised before integrating.
    """

    overrides: list
    summaries: list
    errors: list
    convergence: list = field(default_factory=list)


def _run_task(args):
    text, out_dir = args
    try:
        return run(RunConfig.parse(text), out_dir).to_json(), None
    except Exception as exc:  # recorded, the sweep continues
        return None, f"{type(exc).__name__}: {exc}"


def expand_axes(base: RunConfig, axes: Sequence) -> list:
    """Cartesian product of (key, values) axes as a list of override dicts.

    When ``sim.h`` varies and ``sim.nsteps`` does not, the step count is
    rescaled so every run reaches the base end time.
    """
    keys = [k for k, _ in axes]
    for k, values in axes:
        for v in values:
            base.set(k, str(v))
    combos = [dict(zip(keys, vals)) for vals in itertools.product(*[v for _, v in axes])]
    t_end = base["sim.h"] * base["sim.nsteps"]
    if "sim.h" in keys and "sim.nsteps" not in keys:
        for c in combos:
            h = float(c["sim.h"])
            c["sim.nsteps"] = max(1, int(round(t_end / h)))
    return combos


def sweep(base: RunConfig, axes: Sequence, out_dir=None, workers: int = 1) -> SweepResult:
    """Run every combination of the axis values in ``out/run_NNN``.

    Writes ``sweep.csv`` (one row per run) and, when ``sim.h`` is an axis,
    ``convergence.csv`` and ``slopes.csv``.
    """
    out = Path(base["output.dir"] if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    combos = expand_axes(base, axes)
    configs = [base.with_overrides(f"{k}={v}" for k, v in c.items()) for c in combos]
    tasks = [(cfg.serialize(), str(out / f"run_{i:03d}")) for i, cfg in enumerate(configs)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    summaries = [None if js is None else RunSummary.from_json(js) for js, _ in results]
    errors = [err for _, err in results]
    result = SweepResult(combos, summaries, errors)
    keys = [k for k, _ in axes]
    _write_sweep_table(out / "sweep.csv", keys, combos, summaries, errors)
    if "sim.h" in keys:
        result.convergence = _convergence_table(out, keys, combos, summaries)
    return result


def _write_sweep_table(path, keys, combos, summaries, errors):
    cols = ["run"] + keys + [
        "status", "steps_completed", "max_constraint_res", "final_energy_err",
        "max_energy_err", "final_momentum_err", "newton_iterations",
    ]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i, (c, s, err) in enumerate(zip(combos, summaries, errors)):
            row = [f"run_{i:03d}"] + [str(c[k]) for k in keys]
            if s is None:
                w.writerow(row + ["error: " + err] + [""] * 6)
                continue
            status = "ok" if s.failure is None else f"failed at step {s.failure['step']} ({s.failure['status']})"
            mom = "" if s.final_momentum_error is None else _num(s.final_momentum_error)
            w.writerow(row + [status, s.steps_completed, _num(s.max_constraint_residual),
                              _num(s.final_energy_error), _num(s.max_energy_error), mom,
                              s.newton_iterations])


def _convergence_table(out: Path, keys, combos, summaries) -> list:
    """Final energy and momentum errors against h, with fitted slopes per group."""
    group_keys = [k for k in keys if k not in ("sim.h", "sim.nsteps")]
    groups: dict = {}
    for c, s in zip(combos, summaries):
        if s is None or s.failure is not None:
            continue
        g = tuple(str(c[k]) for k in group_keys)
        mom = np.nan if s.final_momentum_error is None else abs(s.final_momentum_error)
        groups.setdefault(g, []).append((float(c["sim.h"]), abs(s.final_energy_error), mom))
    rows = []
    with open(out / "convergence.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(group_keys + ["h", "energy_err", "momentum_err"])
        for g, pts in groups.items():
            pts.sort(reverse=True)
            for h, e, m in pts:
                w.writerow(list(g) + [_num(h), _num(e), _num(m)])
            hs, es, ms = (np.array(v) for v in zip(*pts))
            rows.append({
                "group": dict(zip(group_keys, g)),
                "h": hs.tolist(),
                "energy_err": es.tolist(),
                "momentum_err": ms.tolist(),
                "energy_slope": fit_slope(hs, es),
                "momentum_slope": fit_slope(hs, ms),
            })
    with open(out / "slopes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(group_keys + ["energy_slope", "momentum_slope"])
        for r in rows:
            w.writerow([r["group"][k] for k in group_keys] + [_num(r["energy_slope"]), _num(r["momentum_slope"])])
    return rows


# Convergence and Poincaré invariants


def convergence(config: RunConfig, out_dir=None):
    """Energy and momentum error slopes over ``convergence.h_list`` at ``convergence.t_end``."""
    from .diagnostics import convergence_order

    out = Path(config["output.dir"] if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = convergence_order(
        config.system(),
        (config["sim.tableau"], config["sim.projection"], config["sim.midpoint_rinf"]),
        config["convergence.h_list"],
        config["convergence.t_end"],
        q0=config.q0(),
        cfg=config.solver_config(),
    )
    with open(out / "convergence.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["h", "energy_err", "momentum_err"])
        for i, h in enumerate(res.h):
            w.writerow([_num(h), _num(res.errors["energy"][i]), _num(res.errors["momentum"][i])])
    with open(out / "slopes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["energy_slope", "momentum_slope"])
        w.writerow([_num(res.slopes["energy"]), _num(res.slopes["momentum"])])
    (out / CONFIG_NAME).write_text(config.serialize())
    return res


@dataclass
class InvariantResult:
    times: list
    I1: Optional[list] = None
    I2: Optional[list] = None
    I1_variation: Optional[float] = None
    I2_variation: Optional[float] = None
    failure: Optional[str] = None


def poincare(config: RunConfig, out_dir=None) -> InvariantResult:
    """Advect a seeded loop and/or surface and record I1 and I2 every ``diag.interval`` steps.

    The seeds are defined for four-dimensional guiding-centre problems.
    Writes ``invariants.csv`` with columns t[, I1][, I2] and ``invariants.json``.
    """
    want1, want2 = config["diag.poincare1"], config["diag.poincare2"]
    if not (want1 or want2):
        raise ValueError("enable diag.poincare1 and/or diag.poincare2")
    sys = config.system()
    if sys.dim != 4:
        raise ValueError(f"ensemble seeds need a 4-dimensional problem, {sys.label} has {sys.dim}")
    out = Path(config["output.dir"] if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    form, h = config["diag.form"], config["sim.h"]
    nsteps, every = config["sim.nsteps"], config["diag.interval"]
    result = InvariantResult([])
    failures = []
    if want1:
        loop = seed_loop(config["diag.n_loop"])
        traj = config.integrator().integrate(loop.q0, nsteps, every)
        result.times = traj.times.tolist()
        result.I1 = loop_invariant_I1(sys, traj, form).tolist()
        result.I1_variation = relative_variation(result.I1)
        if traj.failure is not None:
            failures.append(f"loop: {traj.failure}")
    if want2:
        surf = seed_surface(config["diag.surface_n"] - 1)
        traj = config.integrator().integrate(surf.q0, nsteps, every)
        result.times = traj.times.tolist()
        result.I2 = surface_invariant_I2(sys, traj, surf.nodes, form).tolist()
        result.I2_variation = relative_variation(result.I2)
        if traj.failure is not None:
            failures.append(f"surface: {traj.failure}")
    result.failure = "; ".join(failures) or None
    n = min(len(v) for v in (result.I1, result.I2) if v is not None)
    cols = ["t"] + (["I1"] if want1 else []) + (["I2"] if want2 else [])
    with open(out / "invariants.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i in range(n):
            row = [result.times[i]] + ([result.I1[i]] if want1 else []) + ([result.I2[i]] if want2 else [])
            w.writerow([_num(v) for v in row])
    (out / "invariants.json").write_text(json.dumps(asdict(result), indent=2) + "\n")
    (out / CONFIG_NAME).write_text(config.serialize())
    return result


# Plot scripts

_DIAG_COLUMNS = {
    "diag.energy": ("energy_err", "H - H0", True),
    "diag.constraint": ("constraint_res", "||p - theta(q)||", True),
    "diag.momentum": ("momentum_err", "P - P0", True),
}


def _gp_header(png: str, ylabel: str, logy: bool) -> str:
    lines = [
        "set terminal pngcairo size 900,600",
        f"set output '{png}'",
        "set datafile separator ','",
        "set xlabel 't'",
        f"set ylabel '{ylabel}'",
        "set grid",
    ]
    if logy:
        lines.append("set logscale y")
        lines.append("set format y '%.0e'")
    return "\n".join(lines) + "\n"


def _run_scripts(run_dir: Path) -> list:
    header = (run_dir / CSV_NAME).read_text().split("\n", 1)[0].split(",")
    cfg_path = run_dir / CONFIG_NAME
    cfg = RunConfig.load(cfg_path) if cfg_path.exists() else RunConfig()
    written = []
    for key, (col, label, logy) in _DIAG_COLUMNS.items():
        if not cfg[key] or col not in header:
            continue
        idx = header.index(col) + 1
        script = _gp_header(f"{col}.png", f"|{label}|", logy)
        script += f"plot '{CSV_NAME}' every ::1 using 1:(abs(${idx})) with lines title '{col}'\n"
        path = run_dir / f"{col}.gp"
        path.write_text(script)
        written.append(path)
    if cfg["diag.lambda"]:
        cols = [i + 1 for i, c in enumerate(header) if c.startswith("lambda")]
        script = _gp_header("lambda.png", "lambda", False)
        script += "plot " + ", \\\n     ".join(
            f"'{CSV_NAME}' every ::1 using 1:{i} with lines title '{header[i - 1]}'" for i in cols
        ) + "\n"
        path = run_dir / "lambda.gp"
        path.write_text(script)
        written.append(path)
    if not written:
        warnings.warn(f"no diagnostics selected for {run_dir}; no plot script written", RuntimeWarning)
    return written


def _convergence_script(out: Path) -> Path:
    header = (out / "convergence.csv").read_text().split("\n", 1)[0].split(",")
    ih = header.index("h") + 1
    lines = [
        "set terminal pngcairo size 900,600",
        "set output 'convergence.png'",
        "set datafile separator ','",
        "set logscale xy",
        "set xlabel 'h'",
        "set ylabel 'error at T_end'",
        "set format y '%.0e'",
        "set key left top",
        "set grid",
    ]
    plots = [
        f"'convergence.csv' every ::1 using {ih}:{header.index(c) + 1} with linespoints title '{c}'"
        for c in ("energy_err", "momentum_err")
    ]
    path = out / "convergence.gp"
    path.write_text("\n".join(lines) + "\nplot " + ", \\\n     ".join(plots) + "\n")
    return path


def emit_plots(out_dir) -> list:
    """Write gnuplot scripts next to the CSV artifacts in ``out_dir``.

    Handles a run directory, a sweep directory (its ``run_NNN`` children and
    the convergence table) or a convergence directory.  Nothing is plotted.
    """
    out = Path(out_dir)
    written = []
    if (out / CSV_NAME).exists():
        written += _run_scripts(out)
    for child in sorted(out.glob("run_[0-9][0-9][0-9]")):
        if (child / CSV_NAME).exists():
            written += _run_scripts(child)
    if (out / "convergence.csv").exists():
        written.append(_convergence_script(out))
    if (out / "invariants.csv").exists():
        header = (out / "invariants.csv").read_text().split("\n", 1)[0].split(",")
        script = _gp_header("invariants.png", "invariant", False)
        script += "plot " + ", \\\n     ".join(
            f"'invariants.csv' every ::1 using 1:{i + 1} with lines title '{c}'"
            for i, c in enumerate(header) if c != "t"
        ) + "\n"
        path = out / "invariants.gp"
        path.write_text(script)
        written.append(path)
    if not written and not any(out.glob("*.csv")):
        raise FileNotFoundError(f"no run artifacts found in {out}")
    return written
