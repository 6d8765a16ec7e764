"""Experiment configuration: TOML in, validated objects and an effective-default echo out.

Layout (every key optional unless marked)::

    [system]
    kind = "SAlphaBetaGamma"    # required; see SYSTEM_KINDS
    alpha = 1; beta = 1; gamma = 2
    d = [1.0, 2.0, 3.0]         # required
    mexp = [1.0, 1.0, 1.0]

    [grid]
    dim = 1; lengths = [1.0]; cells = [128]; bc = "neumann"

    [init]
    kind = "random-uniform"; seed = 0; max = 2.0

    [forcing]                   # optional source s_i sin(k pi x) cos(omega t)
    amplitude = [1.0]; mode = 2; omega = 1.0

    [truncation]
    n = 100.0                   # "inf" disables truncation

    [time]
    T = 1.0; dt = 1e-3; cfl = 0.9; blowup_threshold = 1e12

    [audits]
    names = ["mass", "key_estimate"]
    reference_n = 200.0         # optional rerun for the stability checks

    [output]
    csv = "diagnostics.csv"; report = "report.txt"; snapshots = "snapshots.npz"
    snapshot_stride = 10
"""

from __future__ import annotations

import copy
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .audit import AUDIT_NAMES
from .errors import ConfigError
from .grid import BC, Grid, State, make_grid
from .initial import KINDS as INIT_KINDS
from .initial import generate
from .integrate import StepControls
from .systems import (
    CustomPolynomial,
    LotkaVolterra,
    Reaction,
    SAlphaBetaGamma,
    SAlphaBetaGammaDelta,
    SystemSpec,
    builtin,
)

SYSTEM_KINDS = ("SAlphaBetaGamma", "SAlphaBetaGammaDelta", "LotkaVolterra", "custom", "builtin")

DEFAULTS = {
    "grid": {"dim": 1, "lengths": [1.0], "cells": [128], "bc": None},
    "init": {"kind": "constant", "values": 1.0},
    "truncation": {"n": 100.0},
    "time": {
        "T": 1.0,
        "dt": None,
        "cfl": 0.9,
        "max_steps": 5_000_000,
        "blowup_threshold": 1e12,
        "clip_tolerance": None,
    },
    "audits": {"names": ["mass", "key_estimate", "pierre", "conservation", "reaction_l1"], "reference_n": None},
    "output": {
        "csv": "diagnostics.csv",
        "report": "report.txt",
        "snapshots": "snapshots.npz",
        "snapshot_stride": 10,
    },
}

_SYSTEM_KEYS = {
    "SAlphaBetaGamma": ("alpha", "beta", "gamma"),
    "SAlphaBetaGammaDelta": ("alpha", "beta", "gamma", "delta"),
    "LotkaVolterra": ("e", "A", "a"),
    "custom": ("terms", "a"),
    "builtin": ("name",),
}
_CLASS_KEYS = ("mass_class", "C0", "growth_class", "growth_C", "epsilon")


def load(path: str | Path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def loads(text: str) -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(exc)) from None


def parse_value(text: str):
    """Parse one TOML value (``2``, ``"neumann"``, ``[64, 64]``); bare words become strings."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def _number(x, name) -> float:
    if isinstance(x, str) and x.lower() in ("inf", "infinity"):
        return math.inf
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(f"{name} must be a number, got {x!r}")
    return float(x)


@dataclass
class Experiment:
    """A validated configuration ready to run."""

    raw: dict
    effective: dict
    spec: SystemSpec
    grid: Grid
    u0: State
    n: float
    controls: StepControls
    audits: tuple[str, ...]
    reference_n: float | None
    forcing: object
    base_dir: Path

    def output_path(self, key: str, out_dir: str | Path | None = None) -> Path | None:
        name = self.effective["output"].get(key)
        if not name:
            return None
        root = Path(out_dir) if out_dir is not None else self.base_dir
        return root / name


def build_reaction(sys_cfg: dict) -> Reaction:
    kind = sys_cfg.get("kind")
    if kind not in SYSTEM_KINDS:
        raise ConfigError(f"system.kind must be one of {SYSTEM_KINDS}, got {kind!r}")
    extra = {k: sys_cfg[k] for k in _CLASS_KEYS if k in sys_cfg}
    try:
        if kind == "builtin":
            if "name" not in sys_cfg:
                raise ConfigError("builtin system needs a name")
            return builtin(sys_cfg["name"])
        if kind == "SAlphaBetaGamma":
            return SAlphaBetaGamma(*(float(sys_cfg[k]) for k in ("alpha", "beta", "gamma")), **extra)
        if kind == "SAlphaBetaGammaDelta":
            return SAlphaBetaGammaDelta(*(float(sys_cfg[k]) for k in ("alpha", "beta", "gamma", "delta")), **extra)
        if kind == "LotkaVolterra":
            kw = {"e": tuple(sys_cfg["e"]), "A": tuple(tuple(r) for r in sys_cfg["A"])}
            if "a" in sys_cfg:
                kw["a"] = tuple(sys_cfg["a"])
            return LotkaVolterra(**kw, **extra)
        terms = tuple(
            tuple((float(t["coef"]), tuple(t["exp"])) for t in row) for row in sys_cfg["terms"]
        )
        return CustomPolynomial(terms=terms, a=tuple(sys_cfg["a"]) if "a" in sys_cfg else None, **extra)
    except KeyError as exc:
        raise ConfigError(f"system kind {kind} is missing key {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"system: {exc}") from None


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _forcing(cfg: dict | None, m: int):
    if not cfg:
        return None
    amp = cfg.get("amplitude", 1.0)
    amp = [float(amp)] * m if np.isscalar(amp) else [float(x) for x in amp]
    if len(amp) != m:
        raise ConfigError(f"forcing.amplitude needs {m} entries")
    k = float(cfg.get("mode", 2))
    omega = float(cfg.get("omega", 1.0))
    amp_arr = np.asarray(amp)

    def forcing(t, grid):
        wave = np.ones(grid.shape)
        for x, L in zip(grid.centers(), grid.lengths):
            wave = wave * np.sin(k * math.pi * x / L)
        return amp_arr.reshape(-1, *([1] * grid.dim)) * (wave * math.cos(omega * t))

    return forcing


def build(raw: dict, base_dir: str | Path = ".") -> Experiment:
    """Validate a parsed config and build every runtime object; raises :class:`ConfigError`."""
    if "system" not in raw:
        raise ConfigError("config needs a [system] table")
    unknown = set(raw) - {"system", "grid", "init", "forcing", "truncation", "time", "audits", "output"}
    if unknown:
        raise ConfigError(f"unknown config tables: {sorted(unknown)}")
    defaults = copy.deepcopy(DEFAULTS)
    if "init" in raw:
        defaults["init"] = {}
    # [system] first so the echo reads top-down
    eff = _merge({"system": {}, **defaults}, raw)
    sys_cfg = eff["system"]
    reaction = build_reaction(sys_cfg)
    m = reaction.m
    if "d" not in sys_cfg:
        raise ConfigError("system.d (diffusion coefficients) is required")
    d = sys_cfg["d"]
    mexp = sys_cfg.get("mexp", [1.0] * m)
    if len(d) != m or len(mexp) != m:
        raise ConfigError(f"system has {m} species; d and mexp need {m} entries")
    sys_cfg["mexp"] = [float(x) for x in mexp]
    sys_cfg["d"] = [float(x) for x in d]
    for k in _CLASS_KEYS:
        sys_cfg.setdefault(k, getattr(reaction, k, None))
    if reaction.mass_class == "Mprime":
        sys_cfg.setdefault("a", list(reaction.a))

    g = eff["grid"]
    porous = any(x > 1 for x in sys_cfg["mexp"])
    if g["bc"] is None:
        g["bc"] = "dirichlet" if porous else "neumann"
    try:
        grid = make_grid(int(g["dim"]), g["lengths"], g["cells"], g["bc"])
        spec = SystemSpec(reaction, d=tuple(sys_cfg["d"]), mexp=tuple(sys_cfg["mexp"]), bc=BC.parse(g["bc"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    init = dict(eff["init"])
    kind = init.pop("kind", None)
    if kind not in INIT_KINDS:
        raise ConfigError(f"init.kind must be one of {INIT_KINDS}, got {kind!r}")
    if kind == "from-file" and "path" in init:
        init["path"] = str(Path(base_dir) / init["path"])
    try:
        u0 = State(0.0, grid, generate(grid, m, kind, **init))
    except (ValueError, OSError) as exc:
        raise ConfigError(f"init: {exc}") from None

    n = _number(eff["truncation"]["n"], "truncation.n")
    if not n > 0:
        raise ConfigError("truncation.n must be positive")

    tc = eff["time"]
    if tc["dt"] is None:
        tc["dt"] = float(tc["T"]) / 1000 if float(tc["T"]) > 0 else 1.0
    try:
        controls = StepControls(
            T=_number(tc["T"], "time.T"),
            dt=_number(tc["dt"], "time.dt"),
            cfl=_number(tc["cfl"], "time.cfl"),
            max_steps=int(tc["max_steps"]),
            blowup_threshold=_number(tc["blowup_threshold"], "time.blowup_threshold"),
            clip_tolerance=None if tc["clip_tolerance"] is None else _number(tc["clip_tolerance"], "time.clip_tolerance"),
            snapshot_stride=int(eff["output"]["snapshot_stride"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    names = eff["audits"]["names"]
    bad = [x for x in names if x not in AUDIT_NAMES]
    if bad:
        raise ConfigError(f"unknown audits {bad}; known: {list(AUDIT_NAMES)}")
    ref = eff["audits"].get("reference_n")
    ref = None if ref is None else _number(ref, "audits.reference_n")
    forcing = _forcing(eff.get("forcing"), m)

    return Experiment(raw, _clean(eff), spec, grid, u0, n, controls, tuple(names), ref, forcing, Path(base_dir))


def _clean(d):
    """Drop ``None`` values (TOML has no null) while keeping key order."""
    if isinstance(d, dict):
        return {k: _clean(v) for k, v in d.items() if v is not None}
    if isinstance(d, list):
        return [_clean(v) for v in d]
    return d


# -- echo -------------------------------------------------------------------


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, str):
        # JSON string escapes are a subset of TOML basic-string escapes
        return json.dumps(v, ensure_ascii=False)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{k} = {_toml_value(x)}" for k, x in v.items()) + "}"
    raise TypeError(f"cannot echo {type(v).__name__}")


def dumps(cfg: dict) -> str:
    """Minimal TOML writer for the config echo (tables of scalars, arrays and inline tables)."""
    lines = []
    for table, body in cfg.items():
        lines.append(f"[{table}]")
        for k, v in body.items():
            lines.append(f"{k} = {_toml_value(v)}")
        lines.append("")
    return "\n".join(lines)


def set_key(cfg: dict, dotted: str, value) -> dict:
    """Copy of ``cfg`` with ``a.b = value``; scalars wrap into one-element lists where a list is expected."""
    out = copy.deepcopy(cfg)
    parts = dotted.split(".")
    if len(parts) != 2:
        raise ConfigError(f"override key {dotted!r} must look like table.key")
    table, key = parts
    node = out.setdefault(table, {})
    current = node.get(key, DEFAULTS.get(table, {}).get(key))
    if isinstance(current, list) and not isinstance(value, list):
        value = [value] * max(1, len(current))
    node[key] = value
    return out
