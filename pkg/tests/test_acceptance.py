"""End-to-end acceptance checks, one test per criterion.

Each test prints (and records for the terminal summary) a single
``criterion N: PASS|FAIL  detail`` line before asserting.
"""

import csv
import math
import shutil
from pathlib import Path

import numpy as np
import pytest

from rdaudit import cli
from rdaudit.audit import (
    conservation_audit,
    key_estimate_audit,
    mass_audit,
    no_sign_audit,
    pierre_l2_audit,
    porous_audit,
    truncation_convergence_study,
)
from rdaudit.elliptic import domain_constants, hminus1_norm, l1_to_l2_constant
from rdaudit.grid import Field, State, make_grid
from rdaudit.initial import bump
from rdaudit.integrate import StepControls, run
from rdaudit.systems import CustomPolynomial, SystemSpec, TruncatedReaction, builtin

from conftest import ACCEPTANCE, cos_state, heat_spec

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SYSTEMS = ["S111", "S112", "S212", "S1111", "LV"]
D_SETS = {"unit": (1.0, 1.0, 1.0, 1.0), "spread": (1.0, 10.0, 0.1, 1.0)}


def report(k, ok, detail):
    line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[k] = line
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def matrix():
    g = make_grid(1, [1.0], [128])
    out = {}
    for s, name in enumerate(SYSTEMS):
        r = builtin(name)
        u0 = np.random.default_rng(100 + s).uniform(0, 2, (r.m, 128))
        for label, d in D_SETS.items():
            spec = SystemSpec(r, d=d[: r.m])
            out[name, label] = run(spec, 100, State(0, g, u0), StepControls(T=1.0, dt=1e-3))
    return out


@pytest.fixture(scope="module")
def heat_sentinel():
    return run(heat_spec(), math.inf, cos_state(256), StepControls(T=1.0, dt=1e-5, snapshot_stride=1000))


HEAT_CLOSED_FORM = 1 + 1 / (4 * math.pi**2)


def test_criterion_01_mass_law(matrix):
    worst_inc, worst_exact = 0.0, 0.0
    for (name, _), traj in matrix.items():
        a = traj.spec.a
        S = traj.mass @ a
        worst_inc = max(worst_inc, float(np.diff(S).max() / S[0]))
        if traj.spec.reaction.mass_identity():
            worst_exact = max(worst_exact, float(np.abs(S - S[0]).max() / S[0]))
        assert all(r.ok for r in mass_audit(traj))
    ok = worst_inc <= 1e-8 and worst_exact <= 1e-9
    report(1, ok, f"max relative increase {worst_inc:.2e} (<= 1e-8); max drift of exact laws {worst_exact:.2e} (<= 1e-9)")


def test_criterion_02_conservation_combos(matrix):
    worst = 0.0
    count = 0
    for (name, _), traj in matrix.items():
        if name == "LV":
            continue
        for row in conservation_audit(traj):
            series = row.series["combo"]
            worst = max(worst, float(np.abs(series - series[0]).max() / abs(series[0])))
            count += 1
    report(2, worst <= 1e-9 and count == 16, f"{count} combos, max relative drift {worst:.2e} (<= 1e-9)")


def test_criterion_03_key_estimate(matrix, heat_sentinel):
    worst = math.inf
    chains = True
    for traj in matrix.values():
        ke, chain = key_estimate_audit(traj)
        worst = min(worst, ke.margin / ke.rhs)
        chains &= chain.passed
    tr = heat_sentinel.tracker()
    lhs = 0.5 * tr.hm1_UT_sq + tr.uv
    rhs = tr.K + 0.5 * tr.hm1_U0_sq
    gap = abs(lhs - rhs) / rhs
    near = max(abs(lhs - HEAT_CLOSED_FORM), abs(rhs - HEAT_CLOSED_FORM)) / HEAT_CLOSED_FORM
    ok = worst >= -1e-9 and chains and gap <= 1e-4 and near <= 1e-4
    report(3, ok, f"matrix min margin/RHS {worst:.2e}; sentinel LHS {lhs:.7f} RHS {rhs:.7f} "
                  f"gap {gap:.1e}, distance to {HEAT_CLOSED_FORM:.5f} {near:.1e}")


def test_criterion_04_pierre_l2(matrix, heat_sentinel):
    rows = [r for traj in matrix.values() for r in pierre_l2_audit(traj)]
    p = pierre_l2_audit(heat_sentinel)[0]
    expected = 1 + (1 - math.exp(-2 * math.pi**2)) / (4 * math.pi**2)
    ok = all(r.passed for r in rows) and p.passed and abs(p.lhs - expected) < 1e-3 and p.rhs == pytest.approx(1.5)
    report(4, ok, f"{len(rows)} matrix rows pass; heat int int u^2 = {p.lhs:.5f} <= {p.rhs:.3f}")


def test_criterion_05_hminus1_norm():
    exact = 1 / (math.pi * math.sqrt(2))
    errs = {}
    for cells in (128, 512):
        g = make_grid(1, [1.0], [cells])
        errs[cells] = abs(hminus1_norm(Field.from_function(g, lambda x: np.cos(math.pi * x))) / exact - 1)
    ok = errs[128] <= 0.01 and errs[512] <= 0.0025
    report(5, ok, f"relative error {errs[128]:.2e} at 128 cells, {errs[512]:.2e} at 512 (target {exact:.5f})")


def test_criterion_06_theta():
    th = domain_constants(make_grid(1, [1.0], [128])).theta_inf
    err = abs(th / 0.125 - 1)
    report(6, err <= 0.005, f"theta_inf = {th:.6f}, relative error {err:.2e}")


def test_criterion_07_truncation():
    rng = np.random.default_rng(2024)
    sup_ok = True
    for name in SYSTEMS:
        r = builtin(name)
        u = rng.uniform(0, 100, (r.m, 100_000))
        for n in (1.0, 5.0, 100.0):
            sup_ok &= bool(np.abs(TruncatedReaction(r, n)(u)).max() <= n)
    worked = TruncatedReaction(CustomPolynomial(terms=(((-100.0, (0,)),),)), 5.0)(np.ones((1, 1)))[0, 0]
    worked_ok = abs(worked + 100 / 21) <= 1e-12
    g = make_grid(1, [1.0], [64])
    tables = {}
    for name, d in (("S112", (1.0, 10.0, 0.1)), ("LV", (1.0, 10.0))):
        r = builtin(name)
        u0 = State(0, g, np.random.default_rng(11).uniform(0, 10, (r.m, 64)))
        rep = truncation_convergence_study(SystemSpec(r, d=d), u0, StepControls(T=1.0, dt=1e-3), (16, 64, 256, 1024))
        tables[name] = rep
    dec = all(rep.passed for rep in tables.values())
    detail = "; ".join(f"{k} D_k = " + ", ".join(f"{x:.3g}" for x in v.differences) for k, v in tables.items())
    report(7, sup_ok and worked_ok and dec, f"|f^n| <= n on 1e5 points: {sup_ok}; -100/21 error {abs(worked + 100 / 21):.1e}; {detail}")


def test_criterion_08_reaction_oracle():
    g = make_grid(1, [1.0], [8])
    spec = SystemSpec(builtin("S111"), d=(0.0, 0.0, 0.0))
    u0 = np.repeat(np.array([2.0, 1.0, 0.0])[:, None], 8, axis=1)
    traj = run(spec, math.inf, State(0, g, u0), StepControls(T=50.0, dt=1e-2, snapshot_stride=1000))
    u3 = float(traj.final.u[2].mean())
    err = abs(u3 - (2 - math.sqrt(2)))
    report(8, err <= 1e-3, f"u3(50) = {u3:.6f}, error {err:.1e} against 2 - sqrt(2)")


def test_criterion_09_porous():
    g = make_grid(1, [1.0], [64], "dirichlet")
    spec = heat_spec(mexp=(2.0,))
    u0 = State(0, g, bump(g, 0.5, 0.4, 1.0))
    vals = {}
    theta_ok = True
    for T in (0.1, 1.0, 10.0):
        traj = run(spec, math.inf, u0, StepControls(T=T, dt=T / 100))
        vals[T] = traj.tracker().v_int
        theta_ok &= porous_audit(traj)[0].passed
    single_ok = theta_ok and all(v <= 0.125 for v in vals.values())

    r2 = CustomPolynomial(terms=(((-1.0, (1, 1)),), ((1.0, (1, 1)),)), growth_class="SQG", growth_C=1.0, epsilon=0.5)
    spec2 = SystemSpec(r2, d=(1.0, 1.0), mexp=(2.0, 3.0))
    u02 = State(0, g, bump(g, 0.5, 0.4, [1.0, 1.0], m=2))
    ctl = StepControls(T=1.0, dt=1e-2)
    traj = run(spec2, 100, u02, ctl)
    ref = run(spec2, 200, u02, ctl)
    stab = [r for r in porous_audit(traj, reference=ref) if "stability" in r.name]
    two_ok = len(stab) == 3 and all(r.passed for r in stab)
    worst = max(r.lhs for r in stab)
    report(9, single_ok and two_ok,
           "int int u^2 = " + ", ".join(f"{v:.4f} (T={T:g})" for T, v in vals.items())
           + f" <= 0.125; two-species budget change {worst:.2e} (< 0.1)")


def test_criterion_10_gronwall():
    r = CustomPolynomial(
        terms=(((1.0, (0, 0)), (1.0, (1, 0)), (-1.0, (1, 1))), ((1.0, (1, 1)), (-1.0, (0, 1)))),
        a=(1.0, 1.0), mass_class="Mprime", C0=1.0,
    )
    g = make_grid(1, [1.0], [128])
    u0 = np.random.default_rng(5).uniform(0, 2, (2, 128))
    traj = run(SystemSpec(r, d=(1.0, 0.1)), 100, State(0, g, u0), StepControls(T=1.0, dt=1e-3))
    row = mass_audit(traj)[0]
    S, bound = row.series["mass"], row.series["bound"]
    ok = row.name == "mass_gronwall" and row.passed and bool(np.all(S <= bound))
    report(10, ok, f"min slack {float((bound - S).min()):.4f} over {traj.steps + 1} levels; "
                   f"final {S[-1]:.4f} <= {bound[-1]:.4f}")


def test_criterion_11_sign_free():
    def forcing(t, grid):
        (x,) = grid.centers()
        return (np.sin(2 * math.pi * x) * math.cos(t))[None]

    g = make_grid(1, [1.0], [128])
    traj = run(heat_spec(), math.inf, State(0, g, np.ones((1, 128))), StepControls(T=1.0, dt=1e-3), forcing=forcing)
    row = no_sign_audit(traj)[0]
    c128 = l1_to_l2_constant(g)
    c256 = l1_to_l2_constant(make_grid(1, [1.0], [256]))
    change = abs(c256 - c128) / c128
    ok = row.name == "no_sign" and row.passed and change < 0.1
    report(11, ok, f"LHS {row.lhs:.5f} <= RHS {row.rhs:.5f} with C = {c128:.4f}; C change 128->256 cells {change:.1e}")


def test_criterion_12_determinism(tmp_path):
    cfg = tmp_path / "s112.toml"
    shutil.copy(CONFIGS / "s112_matrix.toml", cfg)
    codes = [cli.main(["run", "-c", str(cfg), "--out", str(tmp_path / d)]) for d in ("a", "b")]
    a = (tmp_path / "a" / "diagnostics.csv").read_bytes()
    b = (tmp_path / "b" / "diagnostics.csv").read_bytes()
    with open(tmp_path / "a" / "diagnostics.csv") as fh:
        nrows = sum(1 for _ in csv.reader(fh)) - 1
    ok = codes == [0, 0] and a == b and nrows > 0
    report(12, ok, f"{nrows} CSV rows, byte-identical: {a == b}, exit codes {codes}")
