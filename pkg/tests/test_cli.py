import csv
import shutil
from pathlib import Path

import numpy as np
import pytest

from rdaudit import cli

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def cfgdir(tmp_path):
    for f in CONFIGS.glob("*.toml"):
        shutil.copy(f, tmp_path / f.name)
    return tmp_path


def test_minimal_equilibrium_run(cfgdir, capsys):
    code = run_cli("run", "-c", cfgdir / "s111_equilibrium.toml", "--out", cfgdir / "out")
    assert code == 0
    report = (cfgdir / "out" / "report.txt").read_text()
    assert report == capsys.readouterr().out
    assert "# overall: pass" in report
    assert "# name  lhs  rhs  margin  status  constants" in report
    with open(cfgdir / "out" / "diagnostics.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "t", "dt", "species", "mass", "l2", "min", "max", "f_l1", "clipped"]
    masses = np.array([float(r[4]) for r in rows[1:]])
    np.testing.assert_allclose(masses, 1.0, rtol=1e-13)
    # one row per species per snapshot: t = 0 and t = 0.1
    assert len(rows) == 1 + 2 * 3


def test_report_echo_reproduces_run(cfgdir):
    assert run_cli("run", "-c", cfgdir / "s111_equilibrium.toml", "--out", cfgdir / "a") == 0
    text = (cfgdir / "a" / "report.txt").read_text()
    echo = []
    for ln in text.splitlines():
        if ln.startswith("# effective configuration"):
            continue
        if ln.startswith("#   "):
            echo.append(ln[4:])
        elif ln == "#":
            echo.append("")
    (cfgdir / "echo.toml").write_text("\n".join(echo))
    assert run_cli("run", "-c", cfgdir / "echo.toml", "--out", cfgdir / "b") == 0
    assert (cfgdir / "a" / "diagnostics.csv").read_bytes() == (cfgdir / "b" / "diagnostics.csv").read_bytes()


def test_csv_is_byte_identical(cfgdir):
    cfg = cfgdir / "lv_skew.toml"
    assert run_cli("run", "-c", cfg, "--out", cfgdir / "r1") == 0
    assert run_cli("run", "-c", cfg, "--out", cfgdir / "r2") == 0
    assert (cfgdir / "r1" / "diagnostics.csv").read_bytes() == (cfgdir / "r2" / "diagnostics.csv").read_bytes()


def test_blowup_exit_code(cfgdir, capsys):
    assert run_cli("run", "-c", cfgdir / "blowup.toml", "--out", cfgdir / "o") == 3
    assert "step" in capsys.readouterr().err


def test_failing_audit_exit_code(cfgdir):
    # the time-integrated sign-free form fails for short horizons
    text = (cfgdir / "forced_heat.toml").read_text().replace("T = 1.0", "T = 0.2").replace("amplitude = [1.0]", "amplitude = [0.0]")
    (cfgdir / "short.toml").write_text(text)
    assert run_cli("run", "-c", cfgdir / "short.toml", "--out", cfgdir / "o") == 2
    assert "# overall: fail" in (cfgdir / "o" / "report.txt").read_text()


def test_numerical_exit_code(cfgdir):
    text = (cfgdir / "porous_bump.toml").read_text().replace("mass = 1.0", "mass = 1e6")
    (cfgdir / "stiff.toml").write_text(text.replace("[time]", "[time]\nmax_steps = 50"))
    assert run_cli("run", "-c", cfgdir / "stiff.toml", "--out", cfgdir / "o") == 4


def test_invalid_config_exit_code(cfgdir, capsys):
    (cfgdir / "bad.toml").write_text('[system]\nkind = "builtin"\nname = "S111"\nd = [1.0]\n')
    assert run_cli("run", "-c", cfgdir / "bad.toml") == 5
    assert "config error" in capsys.readouterr().err
    assert run_cli("run", "-c", cfgdir / "missing.toml") == 5


def test_usage_errors_exit_5():
    with pytest.raises(SystemExit) as exc:
        run_cli("run")
    assert exc.value.code == 5
    with pytest.raises(SystemExit) as exc:
        run_cli("frobnicate")
    assert exc.value.code == 5


def test_audit_subcommand_from_snapshots(cfgdir, capsys):
    cfg = cfgdir / "s112_matrix.toml"
    text = cfg.read_text().replace("T = 1.0", "T = 0.1").replace("cells = [128]", "cells = [32]")
    cfg.write_text(text.replace("reference_n = 200\n", ""))
    assert run_cli("run", "-c", cfg, "--out", cfgdir / "o") == 0
    first = capsys.readouterr().out
    assert run_cli("audit", "-s", cfgdir / "o" / "snapshots.npz") == 0
    second = capsys.readouterr().out
    rows = lambda t: [ln for ln in t.splitlines() if not ln.startswith("#")]
    assert rows(first) == rows(second)
    assert "third_species_identity" in second and "inapplicable" not in second
    assert run_cli("audit", "-s", cfgdir / "o" / "snapshots.npz", "--audits", "nope") == 5


def test_converge_h_mode(cfgdir, capsys):
    code = run_cli("converge", "-c", cfgdir / "heat_cosine.toml", "--levels", "16,32,64,128",
                   "--mode", "h", "--min-order", "1.8", "--out", cfgdir / "o")
    assert code == 0
    out = capsys.readouterr().out
    assert out.startswith("# h-convergence  status=pass")
    assert (cfgdir / "o" / "report_converge_h.txt").exists()


def test_converge_n_mode(cfgdir, capsys):
    cfg = cfgdir / "s112_matrix.toml"
    cfg.write_text(cfg.read_text().replace("T = 1.0", "T = 0.05").replace("cells = [128]", "cells = [32]"))
    assert run_cli("converge", "-c", cfg, "--levels", "1,4,16,64", "--mode", "n", "--out", cfgdir / "o") == 0
    lines = capsys.readouterr().out.splitlines()
    D = [float(ln.split("D=")[1].split()[0]) for ln in lines[1:]]
    assert len(D) == 3 and D[0] >= D[1] >= D[2]


def test_converge_needs_three_levels(cfgdir):
    assert run_cli("converge", "-c", cfgdir / "heat_cosine.toml", "--levels", "16,32", "--mode", "h") == 5
    assert run_cli("converge", "-c", cfgdir / "heat_cosine.toml", "--levels", "a,b,c") == 5


@pytest.mark.parametrize("workers", ["1", "2"])
def test_sweep(cfgdir, workers, capsys):
    code = run_cli("sweep", "-c", cfgdir / "s111_equilibrium.toml", "--set", "grid.cells=16,32",
                   "--set", "time.T=0.02,0.04", "--workers", workers, "--out", cfgdir / "sw")
    assert code == 0
    with open(cfgdir / "sw" / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 and {r["exit_code"] for r in rows} == {"0"}
    assert (cfgdir / "sw" / "grid.cells=32_time.T=0.04" / "diagnostics.csv").exists()


def test_sweep_reports_worst_code(cfgdir):
    # u' = u^2 is declared mass-dissipating, so the short run fails its mass audit (2)
    # and the long one hits the guard (3)
    code = run_cli("sweep", "-c", cfgdir / "blowup.toml", "--set", "time.T=0.2,2.0",
                   "--workers", "1", "--out", cfgdir / "sw")
    assert code == 3
    with open(cfgdir / "sw" / "sweep.csv") as fh:
        codes = [r["exit_code"] for r in csv.DictReader(fh)]
    assert codes == ["2", "3"]


def test_sweep_needs_overrides(cfgdir):
    assert run_cli("sweep", "-c", cfgdir / "s111_equilibrium.toml") == 5
    assert run_cli("sweep", "-c", cfgdir / "s111_equilibrium.toml", "--set", "oops") == 5
