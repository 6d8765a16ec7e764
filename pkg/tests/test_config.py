import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdaudit import config as cfgmod
from rdaudit.errors import ConfigError

BASE = """
[system]
kind = "SAlphaBetaGamma"
alpha = 1
beta = 1
gamma = 2
d = [1.0, 2.0, 3.0]

[grid]
cells = [32]

[init]
kind = "random-uniform"
seed = 1
max = 2.0

[time]
T = 0.05
dt = 1e-2
"""


def build(text=BASE, **kw):
    return cfgmod.build(cfgmod.loads(text), **kw)


def test_defaults_are_explicit():
    exp = build()
    eff = exp.effective
    assert list(eff)[0] == "system"
    assert eff["truncation"]["n"] == 100.0
    assert eff["time"]["cfl"] == 0.9
    assert eff["grid"]["bc"] == "neumann"
    assert eff["output"]["snapshot_stride"] == 10
    # init defaults do not leak into an explicit init table
    assert "values" not in eff["init"]
    assert exp.spec.m == 3 and exp.n == 100.0
    assert exp.controls.dt == 1e-2


def strip_echo(text):
    return "\n".join(ln[4:] if ln.startswith("#   ") else "" for ln in text.splitlines())


def test_echo_round_trips():
    exp = build()
    again = cfgmod.build(cfgmod.loads(cfgmod.dumps(exp.effective)))
    assert again.effective == exp.effective
    np.testing.assert_array_equal(again.u0.u, exp.u0.u)


def test_infinite_truncation_round_trips():
    exp = build(BASE + '\n[truncation]\nn = "inf"\n')
    assert math.isinf(exp.n)
    again = cfgmod.build(cfgmod.loads(cfgmod.dumps(exp.effective)))
    assert math.isinf(again.n)


@pytest.mark.parametrize("patch,msg", [
    ('[system]\nkind = "nope"\nd = [1.0]\n', "system.kind"),
    ('[system]\nkind = "SAlphaBetaGamma"\nalpha = 1\nbeta = 1\nd = [1.0, 1.0, 1.0]\n', "missing key"),
    ('[system]\nkind = "builtin"\nname = "LV"\n', "system.d"),
    ('[system]\nkind = "builtin"\nname = "LV"\nd = [1.0]\n', "2 entries"),
    ('[system]\nkind = "builtin"\nname = "LV"\nd = [1.0, 1.0]\n[audits]\nnames = ["bogus"]\n', "unknown audits"),
    ('[system]\nkind = "builtin"\nname = "LV"\nd = [1.0, 1.0]\n[init]\nkind = "random-uniform"\n', "seed"),
    ('[system]\nkind = "builtin"\nname = "LV"\nd = [1.0, 1.0]\n[truncation]\nn = -1\n', "positive"),
    ('[system]\nkind = "builtin"\nname = "LV"\nd = [1.0, 1.0]\n[time]\ndt = "x"\n', "time.dt"),
    ('[system]\nkind = "builtin"\nname = "LV"\nd = [1.0, 1.0]\nmexp = [2.0, 2.0]\n[grid]\nbc = "neumann"\n', "Dirichlet"),
    ('[system]\nkind = "builtin"\nname = "LV"\nd = [1.0, 1.0]\n[extra]\nx = 1\n', "unknown config tables"),
    ('[grid]\ncells = [8]\n', "[system]"),
])
def test_invalid_configs(patch, msg):
    with pytest.raises(ConfigError, match=msg.replace("[", r"\[").replace("]", r"\]")):
        build(patch)


def test_bad_toml():
    with pytest.raises(ConfigError):
        cfgmod.loads("[system\n")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        cfgmod.load(tmp_path / "nope.toml")


def test_porous_defaults_to_dirichlet():
    exp = build('[system]\nkind = "builtin"\nname = "LV"\nd = [1.0, 1.0]\nmexp = [2.0, 3.0]\n')
    assert exp.effective["grid"]["bc"] == "dirichlet"
    assert exp.spec.porous


def test_custom_and_lv_kinds():
    exp = build('[system]\nkind = "custom"\nterms = [[{coef = -1.0, exp = [1, 1]}], [{coef = 1.0, exp = [1, 1]}]]\n'
                'd = [1.0, 1.0]\n')
    np.testing.assert_allclose(exp.spec.reaction(np.array([[2.0], [3.0]]))[:, 0], [-6.0, 6.0])
    lv = build('[system]\nkind = "LotkaVolterra"\ne = [-1.0, -1.0]\nA = [[0.0, -1.0], [1.0, 0.0]]\nd = [1.0, 1.0]\n')
    assert lv.spec.m == 2


def test_forcing_shape():
    exp = build(BASE + "\n[forcing]\namplitude = 2.0\nmode = 2\nomega = 0.0\n")
    s = exp.forcing(0.0, exp.grid)
    assert s.shape == (3, 32)
    (x,) = exp.grid.centers()
    np.testing.assert_allclose(s[1], 2 * np.sin(2 * math.pi * x))


def test_from_file_resolves_relative_to_config(tmp_path):
    np.save(tmp_path / "u0.npy", np.ones((3, 32)))
    text = BASE.replace('kind = "random-uniform"\nseed = 1\nmax = 2.0', 'kind = "from-file"\npath = "u0.npy"')
    exp = build(text, base_dir=tmp_path)
    assert exp.u0.u.sum() == 96


def test_set_key():
    raw = cfgmod.loads(BASE)
    out = cfgmod.set_key(raw, "grid.cells", 64)
    assert out["grid"]["cells"] == [64] and raw["grid"]["cells"] == [32]
    assert cfgmod.set_key(raw, "system.gamma", 3)["system"]["gamma"] == 3
    with pytest.raises(ConfigError):
        cfgmod.set_key(raw, "gamma", 3)


def test_parse_value():
    assert cfgmod.parse_value("2") == 2
    assert cfgmod.parse_value("[64, 64]") == [64, 64]
    assert cfgmod.parse_value("neumann") == "neumann"


@settings(max_examples=50)
@given(st.dictionaries(
    st.from_regex(r"[a-z_]{1,8}", fullmatch=True),
    st.one_of(st.integers(-10**6, 10**6), st.floats(allow_nan=False, allow_infinity=True),
              st.text(max_size=10), st.booleans(),
              st.lists(st.floats(allow_nan=False, allow_infinity=False), max_size=4)),
    max_size=5,
))
def test_dumps_is_valid_toml(table):
    back = cfgmod.loads(cfgmod.dumps({"t": table}))
    assert back.get("t", {}) == table
