"""Command-line interface.

Verbs::

    run          integrate one trajectory
    sweep        Cartesian product over --axis KEY=V1,V2,...
    poincare     advect a loop and/or surface, record I1/I2
    convergence  error slopes over convergence.h_list
    list         problems, tableaux and projections

Every verb accepts ``--config PATH``, repeatable ``--set KEY=VALUE``, ``--out DIR``
and ``--plots`` (write gnuplot scripts next to the CSVs).
"""

from __future__ import annotations

import argparse
import sys as _sys
from typing import Optional, Sequence

from .config import SCHEMA, ConfigError, RunConfig
from .projections import ProjectionKind
from .systems import PROBLEMS
from .tableaux import tableau_names


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    cfg = cfg.with_overrides(args.set or [])
    if args.out:
        cfg = cfg.set("output.dir", args.out)
    return cfg


def _parse_axis(text: str):
    if "=" not in text:
        raise ConfigError(f"axis {text!r} is not of the form key=v1,v2,...")
    key, values = text.split("=", 1)
    return key.strip(), [v.strip() for v in values.split(",") if v.strip()]


def _fmt(x) -> str:
    return "n/a" if x is None else f"{x:.3e}"


def cmd_run(args) -> int:
    from .runner import emit_plots, run

    cfg = _load_config(args)
    s = run(cfg)
    print(f"{s.problem} {s.method} h={s.h} steps={s.steps_completed}/{s.nsteps}")
    print(f"  max constraint residual {_fmt(s.max_constraint_residual)}")
    print(f"  final energy error      {_fmt(s.final_energy_error)}")
    if s.final_momentum_error is not None:
        print(f"  final momentum error    {_fmt(s.final_momentum_error)}")
    print(f"  Newton iterations {s.newton_iterations}, wall time {s.wall_time:.2f} s")
    if s.failure is not None:
        print(f"  run ended early at step {s.failure['step']}: {s.failure['message']}")
    if args.plots:
        emit_plots(cfg["output.dir"])
    print(f"artifacts in {cfg['output.dir']}")
    return 0


def cmd_sweep(args) -> int:
    from .runner import emit_plots, sweep

    cfg = _load_config(args)
    if not args.axis:
        raise ConfigError("sweep needs at least one --axis KEY=V1,V2,...")
    res = sweep(cfg, [_parse_axis(a) for a in args.axis], workers=args.workers)
    for combo, s, err in zip(res.overrides, res.summaries, res.errors):
        label = " ".join(f"{k}={v}" for k, v in combo.items())
        if s is None:
            print(f"{label}: error {err}")
        elif s.failure is not None:
            print(f"{label}: failed at step {s.failure['step']} ({s.failure['status']})")
        else:
            print(f"{label}: energy {_fmt(s.final_energy_error)} constraint {_fmt(s.max_constraint_residual)}")
    for row in res.convergence:
        group = "".join(f" {k}={v}" for k, v in row["group"].items())
        print(f"slopes{group}: energy {row['energy_slope']:.2f} momentum {row['momentum_slope']:.2f}")
    if args.plots:
        emit_plots(cfg["output.dir"])
    print(f"artifacts in {cfg['output.dir']}")
    return 0


def cmd_poincare(args) -> int:
    from .runner import emit_plots, poincare

    cfg = _load_config(args)
    if not (cfg["diag.poincare1"] or cfg["diag.poincare2"]):
        cfg = cfg.set("diag.poincare1", "true").set("diag.poincare2", "true")
    res = poincare(cfg)
    if res.I1 is not None:
        print(f"I1 ({cfg['diag.form']}) relative variation {res.I1_variation:.3e}")
    if res.I2 is not None:
        print(f"I2 ({cfg['diag.form']}) relative variation {res.I2_variation:.3e}")
    if res.failure:
        print(f"run ended early: {res.failure}")
    if args.plots:
        emit_plots(cfg["output.dir"])
    return 0


def cmd_convergence(args) -> int:
    from .runner import convergence, emit_plots

    cfg = _load_config(args)
    res = convergence(cfg)
    for i, h in enumerate(res.h):
        print(f"h={h:<8g} energy {_fmt(res.errors['energy'][i])} momentum {_fmt(res.errors['momentum'][i])}")
    for h, msg in res.failures.items():
        print(f"h={h:<8g} failed: {msg}")
    print(f"slopes: energy {res.slopes['energy']:.2f} momentum {res.slopes['momentum']:.2f}")
    if args.plots:
        emit_plots(cfg["output.dir"])
    return 0


def cmd_list(args) -> int:
    print("problems:    " + ", ".join(sorted(PROBLEMS)))
    print("tableaux:    " + ", ".join(tableau_names()))
    print("projections: " + ", ".join(k.value for k in ProjectionKind))
    print("keys:        " + ", ".join(sorted(SCHEMA)) + ", problem.<parameter>")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vprk", description="Variational PRK integrators for degenerate Lagrangians."
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value configuration file")
    common.add_argument("--set", metavar="KEY=VALUE", action="append", help="override a key (repeatable)")
    common.add_argument("--out", metavar="DIR", help="output directory (output.dir)")
    common.add_argument("--plots", action="store_true", help="write gnuplot scripts")
    p = sub.add_parser("run", parents=[common], help="integrate one trajectory")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("sweep", parents=[common], help="run a Cartesian product of overrides")
    p.add_argument("--axis", metavar="KEY=V1,V2", action="append", help="sweep axis (repeatable)")
    p.add_argument("--workers", metavar="N", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("poincare", parents=[common], help="Poincaré integral invariants")
    p.set_defaults(func=cmd_poincare)
    p = sub.add_parser("convergence", parents=[common], help="error slopes over step sizes")
    p.set_defaults(func=cmd_convergence)
    p = sub.add_parser("list", help="list problems, tableaux and projections")
    p.set_defaults(func=cmd_list)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
