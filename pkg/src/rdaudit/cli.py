"""Command-line runner.

Subcommands::

    rdaudit run -c config.toml [--out DIR]
    rdaudit audit -s snapshots.npz [--audits mass,key_estimate] [--report PATH]
    rdaudit converge -c config.toml --levels 16,64,256,1024 --mode n|h
    rdaudit sweep -c config.toml --set system.gamma=1,2 --set grid.cells=64,128

Exit codes: 0 all audits pass, 2 an audit failed, 3 blow-up guard, 4 numerical
failure, 5 invalid configuration.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import audit as au
from . import config as cfgmod
from .errors import BlowUpError, ConfigError, NumericalError
from .grid import State
from .integrate import Trajectory, run
from .tracking import TrackerRecord

log = logging.getLogger("rdaudit")

EXIT_OK, EXIT_AUDIT, EXIT_BLOWUP, EXIT_NUMERICAL, EXIT_CONFIG = 0, 2, 3, 4, 5

CSV_HEADER = ["step", "t", "dt", "species", "mass", "l2", "min", "max", "f_l1", "clipped"]


# -- outputs ----------------------------------------------------------------


def _g(x) -> str:
    return format(float(x), ".17g")


def snapshot_levels(traj: Trajectory) -> list[int]:
    """Indices into the per-level diagnostics of each stored snapshot."""
    return list(traj.snapshot_steps)


def write_csv(traj: Trajectory, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for k in snapshot_levels(traj):
            dt = traj.times[k] - traj.times[k - 1] if k > 0 else 0.0
            for i in range(traj.spec.m):
                w.writerow([
                    k, _g(traj.times[k]), _g(dt), i, _g(traj.mass[k, i]), _g(traj.l2[k, i]),
                    _g(traj.umin[k, i]), _g(traj.umax[k, i]), _g(traj.f_l1[k, i]), _g(traj.clipped[k, i]),
                ])


def save_snapshots(traj: Trajectory, path: Path, effective: dict) -> None:
    """Snapshots, per-level diagnostics and tracker summaries in one ``.npz``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {
        "snapshot_u": np.stack([s.u for s in traj.snapshots]),
        "snapshot_t": np.array([s.t for s in traj.snapshots]),
        "snapshot_steps": np.array(traj.snapshot_steps),
        "u0": traj.u0.u,
    }
    for name in ("times", "mass", "l2", "umin", "umax", "f_int", "f_l1", "s_int", "clipped", "upow_int"):
        arrays[name] = getattr(traj, name)
    if traj.grad_power is not None:
        arrays["grad_power"] = traj.grad_power
    for name, values in traj.extras.items():
        arrays["extra_" + name] = values
    meta = {
        "config": effective,
        "n": traj.n,
        "flags": traj.flags,
        "trackers": {k: v.summary() for k, v in traj.trackers.items()},
        "grad_power_betas": list(traj.grad_power_betas),
    }
    arrays["meta"] = np.array(json.dumps(meta, default=_json_default))
    np.savez_compressed(path, **arrays)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o).__name__)


def load_snapshots(path: Path) -> tuple[Trajectory, dict]:
    """Rebuild an auditable :class:`Trajectory` from :func:`save_snapshots` output."""
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read snapshots {path}: {exc}") from None
    meta = json.loads(str(data["meta"]))
    exp = cfgmod.build(meta["config"], base_dir=path.parent)
    grid = exp.grid
    snaps = [State(float(t), grid, u) for t, u in zip(data["snapshot_t"], data["snapshot_u"])]
    traj = Trajectory(
        spec=exp.spec, n=float(meta["n"]), grid=grid, controls=exp.controls,
        u0=State(0.0, grid, data["u0"]),
        times=data["times"], mass=data["mass"], l2=data["l2"], umin=data["umin"], umax=data["umax"],
        f_int=data["f_int"], f_l1=data["f_l1"], s_int=data["s_int"], clipped=data["clipped"],
        upow_int=data["upow_int"], grad_power=data["grad_power"] if "grad_power" in data else None,
        grad_power_betas=tuple(meta["grad_power_betas"]), snapshots=snaps,
        snapshot_steps=[int(s) for s in data["snapshot_steps"]],
        trackers={k: TrackerRecord(v) for k, v in meta["trackers"].items()},
        extras={k[len("extra_"):]: data[k] for k in data.files if k.startswith("extra_")},
        flags=list(meta["flags"]),
    )
    return traj, meta["config"]


def format_report(effective: dict, traj: Trajectory | None, rows, status: str, extra: list[str] = ()) -> str:
    lines = ["# rdaudit report", "# effective configuration:"]
    lines += ["#   " + ln if ln else "#" for ln in cfgmod.dumps(effective).splitlines()]
    if traj is not None:
        lines.append(
            f"# steps={traj.steps} min_dt={traj.min_dt:.6g} clip_budget={traj.clip_budget:.6g} "
            f"wall_time={traj.wall_time:.3f}s flags={','.join(traj.flags) or 'none'}"
        )
    lines += list(extra)
    lines.append("# name  lhs  rhs  margin  status  constants")
    lines += [r.row() for r in rows]
    lines.append(f"# overall: {status}")
    return "\n".join(lines) + "\n"


def overall(rows) -> str:
    return "pass" if all(r.ok for r in rows) else "fail"


# -- commands ---------------------------------------------------------------


def _registrations(exp: cfgmod.Experiment):
    return [au.UVRegistration.mass(exp.spec)]


def _integrands(exp):
    if "third_species" in exp.audits:
        try:
            return au.third_species_integrands(exp.spec, exp.n)
        except TypeError:
            return None
    return None


def _simulate(exp: cfgmod.Experiment, n: float | None = None) -> Trajectory:
    n = exp.n if n is None else n
    want_hist = "reaction_l1" in exp.audits
    return run(
        exp.spec, n, exp.u0, exp.controls, registrations=_registrations(exp), forcing=exp.forcing,
        keep_reaction_history=want_hist, integrands=_integrands(exp),
    )


def run_experiment(exp: cfgmod.Experiment, out_dir: Path | None = None) -> tuple[int, str]:
    """Run, audit and write outputs. Returns ``(exit code, report text)``."""
    traj = _simulate(exp)
    reference = None
    if exp.reference_n is not None:
        reference = _simulate(exp, exp.reference_n)
    rows = au.audit_all(traj, exp.audits, reference)
    status = overall(rows)
    csv_path = exp.output_path("csv", out_dir)
    if csv_path is not None:
        write_csv(traj, csv_path)
    snap_path = exp.output_path("snapshots", out_dir)
    if snap_path is not None:
        save_snapshots(traj, snap_path, exp.effective)
    text = format_report(exp.effective, traj, rows, status)
    rep = exp.output_path("report", out_dir)
    if rep is not None:
        rep.parent.mkdir(parents=True, exist_ok=True)
        rep.write_text(text)
    return (EXIT_OK if status == "pass" else EXIT_AUDIT), text


def _load_experiment(path: str) -> cfgmod.Experiment:
    p = Path(path)
    return cfgmod.build(cfgmod.load(p), base_dir=p.parent)


def cmd_run(args) -> int:
    exp = _load_experiment(args.config)
    code, text = run_experiment(exp, Path(args.out) if args.out else None)
    sys.stdout.write(text)
    return code


def cmd_audit(args) -> int:
    traj, effective = load_snapshots(Path(args.snapshots))
    names = tuple(x for x in args.audits.split(",") if x) if args.audits else tuple(effective["audits"]["names"])
    bad = [x for x in names if x not in au.AUDIT_NAMES]
    if bad:
        raise ConfigError(f"unknown audits {bad}")
    rows = au.audit_all(traj, names)
    status = overall(rows)
    text = format_report(effective, traj, rows, status, ["# audited from saved snapshots"])
    if args.report:
        Path(args.report).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK if status == "pass" else EXIT_AUDIT


def _levels(text: str, cast) -> list:
    try:
        vals = [cast(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad --levels {text!r}") from None
    if len(vals) < 3:
        raise ConfigError("convergence needs at least 3 levels")
    return vals


def cmd_converge(args) -> int:
    exp = _load_experiment(args.config)
    if args.mode == "n":
        levels = _levels(args.levels, float)
        try:
            rep = au.truncation_convergence_study(exp.spec, exp.u0, exp.controls, levels, workers=args.workers)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        passed = rep.passed
    else:
        levels = _levels(args.levels, int)
        init_cfg = dict(exp.effective["init"])
        kind = init_cfg.pop("kind")
        if kind == "from-file":
            raise ConfigError("h-mode needs initial data defined on every grid")
        from .initial import generate

        rep = au.grid_convergence_study(
            exp.spec, lambda g: generate(g, exp.spec.m, kind, **init_cfg), exp.grid, exp.controls,
            levels, n=exp.n, workers=args.workers,
        )
        passed = rep.passed and (args.min_order is None or all(
            o >= args.min_order for o in rep.orders if not math.isnan(o)))
    lines = rep.rows()
    if args.mode == "h" and args.min_order is not None:
        lines.append(f"# required order >= {args.min_order}")
    text = "\n".join(lines) + "\n"
    out = exp.output_path("report", args.out)
    if out is not None:
        out = out.with_name(out.stem + f"_converge_{args.mode}" + out.suffix)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(cfgmod.dumps(exp.effective) + "\n" + text)
    sys.stdout.write(text)
    return EXIT_OK if passed else EXIT_AUDIT


def _sweep_one(job):
    raw, base_dir, out_dir = job
    try:
        exp = cfgmod.build(raw, base_dir=base_dir)
        code, _ = run_experiment(exp, Path(out_dir))
        return code, ""
    except ConfigError as exc:
        return EXIT_CONFIG, str(exc)
    except BlowUpError as exc:
        return EXIT_BLOWUP, str(exc)
    except NumericalError as exc:
        return EXIT_NUMERICAL, str(exc)


def cmd_sweep(args) -> int:
    p = Path(args.config)
    raw = cfgmod.load(p)
    axes = []
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set needs key=v1,v2, got {item!r}")
        key, vals = item.split("=", 1)
        axes.append((key.strip(), [cfgmod.parse_value(v.strip()) for v in vals.split(",")]))
    if not axes:
        raise ConfigError("sweep needs at least one --set")
    out_root = Path(args.out or (p.parent / "sweep"))
    jobs, labels = [], []
    for combo in itertools.product(*(vals for _, vals in axes)):
        cfg = raw
        parts = []
        for (key, _), v in zip(axes, combo):
            cfg = cfgmod.set_key(cfg, key, v)
            parts.append(f"{key}={v}")
        label = "_".join(parts).replace("/", "-").replace(" ", "")
        cfgmod.build(cfg, base_dir=p.parent)  # validate before spawning workers
        jobs.append((cfg, str(p.parent), str(out_root / label)))
        labels.append(label)
    workers = args.workers or os.cpu_count() or 1
    if workers == 1 or len(jobs) == 1:
        results = [_sweep_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_one, jobs))
    out_root.mkdir(parents=True, exist_ok=True)
    with open(out_root / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "exit_code", "message"])
        for label, (code, msg) in zip(labels, results):
            w.writerow([label, code, msg])
            sys.stdout.write(f"{label}  exit={code}  {msg}\n")
    return max(code for code, _ in results)


# -- entry point ------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    # usage errors share the invalid-configuration exit code (2 means an audit failed)
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="rdaudit",
        description="Simulate truncated reaction-diffusion systems and audit their a priori estimates.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run one experiment and its audits")
    p.add_argument("-c", "--config", required=True, help="TOML experiment file")
    p.add_argument("--out", help="directory for outputs (default: next to the config)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("audit", help="audit a saved snapshot file")
    p.add_argument("-s", "--snapshots", required=True, help=".npz written by 'run'")
    p.add_argument("--audits", help="comma-separated audit names (default: those in the saved config)")
    p.add_argument("--report", help="write the report here as well")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("converge", help="convergence in the truncation level or the grid")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--levels", required=True, help="comma-separated truncation levels or cell counts")
    p.add_argument("--mode", choices=("n", "h"), default="n")
    p.add_argument("--min-order", type=float, default=None, help="h-mode: required observed order")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("sweep", help="cross product of config overrides")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--set", action="append", metavar="KEY=V1,V2", help="e.g. system.gamma=1,2")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except NumericalError as exc:
        step = f" (step {exc.step})" if exc.step is not None else ""
        print(f"numerical failure{step}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
