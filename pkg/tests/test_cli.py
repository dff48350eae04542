"""Configuration, run artifacts, sweeps, plot scripts and the command line."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vprk.cli import main
from vprk.config import SCHEMA, ConfigError, RunConfig
from vprk.diagnostics import convergence_order
from vprk.runner import RunSummary, csv_header, emit_plots, expand_axes, poincare, run, sweep
from vprk.systems import get_system

GOLDEN = Path(__file__).parent / "golden"


def cfg(*items):
    return RunConfig().with_overrides(list(items))


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# configuration


def test_defaults_and_lookup():
    c = RunConfig()
    assert c["problem"] == "point-vortices"
    assert c["sim.tableau"] == "glrk2"
    assert c["solver.atol"] is None
    assert set(c.values) == set(SCHEMA)


@pytest.mark.parametrize(
    "item",
    ["sim.nsteps=0", "sim.h=0", "sim.h=-0.1", "problem=pendulum", "sim.tableau=glrk9",
     "sim.projection=orthogonal", "diag.form=other", "nokey=1", "sim.nsteps=many", "solver.atol=0"],
)
def test_invalid_values_rejected(item):
    with pytest.raises(ConfigError):
        cfg(item)


def test_parse_with_comments_and_problem_parameters():
    text = "# comment\nproblem = lotka-volterra\nsim.h = 0.05  # step\nproblem.a1 = 2\n\n"
    c = RunConfig.parse(text)
    assert c["problem"] == "lotka-volterra" and c["sim.h"] == 0.05
    assert c["problem.a1"] == 2.0
    assert c.system().a1 == 2.0


def test_round_trip_serialize():
    c = cfg("problem=rotator", "sim.q0=1,0.5", "solver.atol=1e-12", "diag.lambda=yes", "problem.omega=2")
    assert RunConfig.parse(c.serialize()) == c
    assert RunConfig.from_dict(c.to_dict()) == c


@settings(max_examples=40, deadline=None)
@given(
    st.floats(1e-4, 10.0),
    st.integers(1, 10**6),
    st.sampled_from(["none", "standard", "symmetric", "symplectic", "midpoint"]),
    st.sampled_from(["glrk1", "glrk3", "srk3", "lobatto-iiia-2", "radau-iia-2"]),
    st.booleans(),
    st.lists(st.floats(-1e3, 1e3, allow_nan=False), max_size=4),
)
def test_round_trip_property(h, n, proj, tab, flag, q0):
    c = RunConfig().with_overrides(
        [f"sim.h={h!r}", f"sim.nsteps={n}", f"sim.projection={proj}", f"sim.tableau={tab}",
         f"solver.line_search={flag}", "sim.q0=" + ",".join(repr(x) for x in q0)]
    )
    assert RunConfig.parse(c.serialize()) == c


def test_q0_dimension_checked():
    with pytest.raises(ConfigError):
        cfg("problem=rotator", "sim.q0=1,2,3").q0()


def test_load_from_file(tmp_path):
    p = tmp_path / "a.cfg"
    p.write_text("problem = rotator\nsim.nsteps = 7\n")
    assert RunConfig.load(p)["sim.nsteps"] == 7


# run artifacts


def test_golden_header():
    assert csv_header(4, True) == (GOLDEN / "point_vortices_header.csv").read_text().strip().split(",")
    assert csv_header(2, False) == [
        "t", "q1", "q2", "p1", "p2", "lambda1", "lambda2", "energy_err", "constraint_res"
    ]


def test_golden_rotator_run(tmp_path):
    run(cfg("problem=rotator", "sim.tableau=glrk1", "sim.h=0.2", "sim.nsteps=3", "sim.q0=1,0"), tmp_path)
    got = read_rows(tmp_path / "run.csv")
    want = read_rows(GOLDEN / "rotator_glrk1_h0.2.csv")
    assert got[0] == want[0]
    np.testing.assert_allclose(np.array(got[1:], float), np.array(want[1:], float), rtol=0, atol=1e-15)
    # Cayley map of the rotator
    np.testing.assert_allclose([float(x) for x in got[2][1:3]], [0.99 / 1.01, 0.2 / 1.01], atol=1e-15)


def test_point_vortex_run_has_momentum(tmp_path):
    s = run(cfg("sim.nsteps=20"), tmp_path)
    rows = read_rows(tmp_path / "run.csv")
    assert rows[0][-1] == "momentum_err" and len(rows) == 22
    assert s.completed and s.steps_completed == 20
    assert s.final_momentum_error is not None
    assert (tmp_path / "run.cfg").exists() and (tmp_path / "run.json").exists()


def test_momentum_column_can_be_disabled(tmp_path):
    run(cfg("sim.nsteps=2", "diag.momentum=false"), tmp_path)
    assert read_rows(tmp_path / "run.csv")[0][-1] == "constraint_res"


def test_run_bytes_deterministic(tmp_path):
    c = cfg("sim.nsteps=30", "sim.projection=symmetric")
    run(c, tmp_path / "a")
    run(c, tmp_path / "b")
    assert (tmp_path / "a" / "run.csv").read_bytes() == (tmp_path / "b" / "run.csv").read_bytes()


def test_summary_json_round_trip(tmp_path):
    s = run(cfg("sim.nsteps=5"), tmp_path)
    back = RunSummary.load(tmp_path / "run.json")
    assert back == s
    assert json.loads(s.to_json())["problem"] == "point-vortices"


def test_failure_recorded_with_step(tmp_path):
    s = run(cfg("problem=lotka-volterra", "sim.tableau=lobatto-iiia-2", "sim.nsteps=100", "sim.q0=1,1"), tmp_path)
    assert not s.completed
    assert 1 <= s.failure["step"] <= 100
    assert s.steps_completed == s.failure["step"] - 1
    assert len(read_rows(tmp_path / "run.csv")) == s.steps_completed + 2


# sweeps


def test_expand_axes_rescales_steps():
    combos = expand_axes(cfg("sim.h=0.1", "sim.nsteps=100"), [("sim.h", ["0.2", "0.05"])])
    assert [c["sim.nsteps"] for c in combos] == [50, 200]
    with pytest.raises(ConfigError):
        expand_axes(RunConfig(), [("sim.h", ["-1"])])


def test_sweep_h_axis_slopes_match_convergence_order(tmp_path):
    base = cfg("sim.tableau=glrk1", "sim.projection=symmetric", "sim.h=0.1", "sim.nsteps=100")
    hs = [0.2, 0.1, 0.05, 0.025]
    res = sweep(base, [("sim.h", [str(h) for h in hs])], tmp_path)
    ref = convergence_order(get_system("point-vortices"), ("glrk1", "symmetric"), hs, 10.0)
    (row,) = res.convergence
    assert row["energy_slope"] == pytest.approx(ref.slopes["energy"], abs=1e-10)
    assert row["momentum_slope"] == pytest.approx(ref.slopes["momentum"], abs=1e-10)
    for name in ("sweep.csv", "convergence.csv", "slopes.csv"):
        assert (tmp_path / name).exists()
    assert len(read_rows(tmp_path / "sweep.csv")) == 5


def test_single_value_axis_equals_run(tmp_path):
    base = cfg("sim.nsteps=10")
    sweep(base, [("sim.projection", ["none"])], tmp_path / "s")
    run(base, tmp_path / "r")
    assert (tmp_path / "s" / "run_000" / "run.csv").read_bytes() == (tmp_path / "r" / "run.csv").read_bytes()


def test_projection_axis_two_rows(tmp_path):
    res = sweep(cfg("sim.nsteps=10"), [("sim.projection", ["standard", "symmetric"])], tmp_path)
    rows = read_rows(tmp_path / "sweep.csv")
    assert len(rows) == 3 and [r[1] for r in rows[1:]] == ["standard", "symmetric"]
    assert all(s.completed for s in res.summaries)
    assert res.convergence == []


def test_sweep_continues_after_failure(tmp_path):
    res = sweep(
        cfg("problem=lotka-volterra", "sim.q0=1,1", "sim.nsteps=100"),
        [("sim.tableau", ["lobatto-iiia-2", "glrk2"])],
        tmp_path,
    )
    assert not res.summaries[0].completed and res.summaries[1].completed
    assert read_rows(tmp_path / "sweep.csv")[1][2].startswith("failed at step")


# plot scripts


def test_emit_plots_energy_script(tmp_path):
    run(cfg("sim.nsteps=5"), tmp_path)
    written = emit_plots(tmp_path)
    names = {p.name for p in written}
    assert {"energy_err.gp", "constraint_res.gp", "momentum_err.gp"} <= names
    text = (tmp_path / "energy_err.gp").read_text()
    idx = csv_header(4, True).index("energy_err") + 1
    assert f"abs(${idx})" in text and "set logscale y" in text


def test_emit_plots_empty_selection_warns(tmp_path):
    run(cfg("sim.nsteps=2", "diag.energy=false", "diag.constraint=false", "diag.momentum=false"), tmp_path)
    with pytest.warns(RuntimeWarning):
        assert emit_plots(tmp_path) == []
    assert not list(tmp_path.glob("*.gp"))


def test_emit_plots_sweep_convergence(tmp_path):
    sweep(cfg("sim.h=0.2", "sim.nsteps=10"), [("sim.h", ["0.2", "0.1"])], tmp_path)
    names = {p.name for p in emit_plots(tmp_path)}
    assert "convergence.gp" in names
    assert "set logscale xy" in (tmp_path / "convergence.gp").read_text()
    assert (tmp_path / "run_001" / "energy_err.gp").exists()


def test_emit_plots_missing_directory(tmp_path):
    with pytest.raises(FileNotFoundError):
        emit_plots(tmp_path)


# invariants


def test_poincare_small(tmp_path):
    c = cfg("problem=guiding-centre-symmetric", "sim.tableau=glrk1", "sim.projection=none", "sim.h=1",
            "sim.nsteps=4", "diag.poincare1=true", "diag.poincare2=true", "diag.n_loop=64",
            "diag.surface_n=12", "diag.interval=2")
    res = poincare(c, tmp_path)
    assert len(res.times) == 3
    assert res.I1_variation < 1e-6 and res.I2_variation < 1e-6
    assert read_rows(tmp_path / "invariants.csv")[0] == ["t", "I1", "I2"]
    assert "invariants.gp" in {p.name for p in emit_plots(tmp_path)}


def test_poincare_needs_four_dimensions(tmp_path):
    with pytest.raises(ValueError):
        poincare(cfg("problem=rotator", "diag.poincare1=true"), tmp_path)


# command line


def test_cli_run(tmp_path, capsys):
    assert main(["run", "--set", "sim.nsteps=5", "--out", str(tmp_path), "--plots"]) == 0
    assert "point-vortices" in capsys.readouterr().out
    assert (tmp_path / "run.csv").exists() and (tmp_path / "energy_err.gp").exists()


def test_cli_config_file(tmp_path):
    p = tmp_path / "r.cfg"
    p.write_text("problem = lotka-volterra\nsim.nsteps = 3\nsim.q0 = 1,1\n")
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
    assert RunConfig.load(tmp_path / "o" / "run.cfg")["problem"] == "lotka-volterra"


def test_cli_sweep(tmp_path, capsys):
    argv = ["sweep", "--set", "sim.nsteps=20", "--axis", "sim.h=0.2,0.1", "--out", str(tmp_path)]
    assert main(argv) == 0
    assert "slopes" in capsys.readouterr().out


def test_cli_sweep_needs_axis(tmp_path):
    assert main(["sweep", "--out", str(tmp_path)]) == 2


def test_cli_convergence(tmp_path, capsys):
    argv = ["convergence", "--set", "convergence.h_list=0.2,0.1", "--set", "convergence.t_end=2",
            "--out", str(tmp_path)]
    assert main(argv) == 0
    assert "slopes" in capsys.readouterr().out
    assert (tmp_path / "slopes.csv").exists()


def test_cli_poincare(tmp_path, capsys):
    argv = ["poincare", "--set", "problem=guiding-centre-symmetric", "--set", "sim.h=1", "--set", "sim.nsteps=2",
            "--set", "diag.n_loop=32", "--set", "diag.surface_n=8", "--out", str(tmp_path)]
    assert main(argv) == 0
    out = capsys.readouterr().out
    assert "I1" in out and "I2" in out


def test_cli_list(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    assert "glrk2" in out and "symplectic" in out and "guiding-centre-tokamak" in out


def test_cli_bad_key(tmp_path, capsys):
    assert main(["run", "--set", "sim.nsteps=0", "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err
