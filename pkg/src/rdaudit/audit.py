"""Inequality audits on discrete trajectories.

Every audit returns :class:`EstimateAudit` rows holding the computed left and
right sides of one inequality (or identity), the constants that went into the
right side, and a status. Audits only read the trajectory; running one twice
gives identical rows.

Space-time integrals come from the per-step accumulators in
:mod:`rdaudit.tracking` (they cannot be rebuilt from strided snapshots), and
from the per-level diagnostic arrays of :class:`~rdaudit.integrate.Trajectory`.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .elliptic import domain_constants
from .grid import BC, Grid, State
from .integrate import StepControls, Trajectory, run
from .systems import SAlphaBetaGamma, SystemSpec, conservation_combos
from .tracking import UVRegistration

__all__ = [
    "EstimateAudit",
    "UVRegistration",
    "mass_audit",
    "key_estimate_audit",
    "pierre_l2_audit",
    "no_sign_audit",
    "no_sign_scaling_probe",
    "conservation_audit",
    "reaction_l1_budget",
    "third_species_integrands",
    "third_species_identity_audit",
    "porous_audit",
    "truncation_convergence_study",
    "grid_convergence_study",
    "audit_all",
    "AUDIT_NAMES",
]

PASS, FAIL, INAPPLICABLE, DIAGNOSTIC = "pass", "fail", "inapplicable", "diagnostic"


@dataclass
class EstimateAudit:
    """``lhs <= rhs + tol`` for one named inequality.

    ``status`` is computed unless given: ``"pass"`` when ``margin >= -tol``,
    else ``"fail"``. ``"inapplicable"`` marks an unmet precondition and
    ``"diagnostic"`` a reported quantity with no certified bound.
    """

    name: str
    lhs: float
    rhs: float
    constants: dict = field(default_factory=dict)
    tol: float | None = None
    status: str | None = None
    note: str = ""
    series: dict | None = None

    def __post_init__(self):
        self.lhs = float(self.lhs)
        self.rhs = float(self.rhs)
        if self.tol is None:
            self.tol = 1e-9 * max(1.0, abs(self.rhs)) if math.isfinite(self.rhs) else 0.0
        if self.status is None:
            self.status = PASS if self.margin >= -self.tol else FAIL

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.status == PASS

    @property
    def ok(self) -> bool:
        """True unless the audit failed."""
        return self.status != FAIL

    def row(self) -> str:
        consts = " ".join(f"{k}={_fmt(v)}" for k, v in self.constants.items())
        line = f"{self.name}  {_fmt(self.lhs)}  {_fmt(self.rhs)}  {_fmt(self.margin)}  {self.status}"
        if consts:
            line += "  " + consts
        if self.note:
            line += f"  # {self.note}"
        return line


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "(" + ",".join(_fmt(x) for x in v) + ")"
    return str(v)


def _inapplicable(name, why, **constants) -> EstimateAudit:
    return EstimateAudit(name, math.nan, math.nan, constants, tol=0.0, status=INAPPLICABLE, note=why)


def _tracker(traj: Trajectory, reg: UVRegistration | str | None):
    if hasattr(reg, "reg"):  # already a tracker or a saved record
        return reg
    if reg is None:
        name = "mass"
    elif isinstance(reg, str):
        name = reg
    else:
        name = reg.name
    try:
        return traj.trackers[name]
    except KeyError:
        raise KeyError(f"trajectory has no registration {name!r}; pass it to run()") from None


def _base_constants(traj: Trajectory, tr=None) -> dict:
    c = {"n": traj.n, "T": float(traj.times[-1])}
    if tr is not None:
        c["B"] = tr.reg.B
        if tr.reg.C0:
            c["C0"] = tr.reg.C0
        c["a"] = tuple(tr.reg.u_weights)
    return c


def _left_sum(traj: Trajectory, values: np.ndarray) -> np.ndarray:
    """``sum_k dt_k values[k]`` over the steps (left endpoint in time)."""
    if traj.steps == 0:
        return np.zeros(values.shape[1:])
    return np.tensordot(traj.dts, values[:-1], axes=(0, 0))


# -- mass control -----------------------------------------------------------


def mass_audit(traj: Trajectory, reg: UVRegistration | str | None = None) -> list[EstimateAudit]:
    """Mass control rows: monotonicity (M) or Gronwall (M'), plus the mean identity.

    The weighted mass series ``sum_i a_i int u_i(t_k)`` is attached to the first
    row as ``series``.
    """
    tr = _tracker(traj, reg)
    a = np.asarray(tr.reg.u_weights)
    S = traj.mass @ a
    clip = traj.clipped @ a
    series = {"t": traj.times, "mass": S}
    consts = _base_constants(traj, tr)
    rows = []
    S0 = float(S[0])
    if tr.reg.C0 == 0 and tr.reg.B == 0:
        inc = np.diff(S) - np.diff(clip)
        worst = float(inc.max()) if inc.size else 0.0
        rows.append(EstimateAudit(
            "mass_nonincreasing", worst, 0.0, consts,
            tol=1e-8 * max(abs(S0), 1e-300), series=series,
            note="largest one-step increase of the weighted mass",
        ))
        # each species is bounded by the whole weighted mass
        per = traj.mass * a - clip[:, None]
        rows.append(EstimateAudit(
            "mass_species_bound", float(per.max()), S0, consts, tol=1e-9 * max(abs(S0), 1e-300),
        ))
    else:
        C = tr.reg.C0
        B = tr.reg.B
        t = traj.times
        bound = np.exp(C * t) * (S0 + B * traj.grid.measure * t)
        k = int(np.argmin(bound - S))
        tol = 1e-9 * float(bound[k]) + math.exp(C * t[-1]) * float(clip[-1])
        rows.append(EstimateAudit(
            "mass_gronwall", float(S[k]), float(bound[k]), {**consts, "C": C, "t_worst": float(t[k])},
            tol=tol, series={**series, "bound": bound},
        ))
    rows.append(_mean_identity(traj, tr, consts))
    return rows


def _mean_identity(traj, tr, consts) -> EstimateAudit:
    name = "mean_identity"
    if tr.bc is not BC.NEUMANN:
        return _inapplicable(name, "needs zero-flux boundaries", **consts)
    meas = traj.grid.measure
    lhs_val = tr.int_UT / meas
    rhs_val = tr.int_U0 / meas + tr.reg.B * tr.T - tr.F_mean_int
    scale = abs(tr.int_U0 / meas) + abs(lhs_val) + tr.reg.B * tr.T + abs(tr.F_mean_int)
    return EstimateAudit(
        name, abs(lhs_val - rhs_val), 0.0, consts, tol=1e-10 * scale,
        note=f"<U(T)>={lhs_val:.12g} vs <U0>+BT-int<F>={rhs_val:.12g}",
    )


# -- duality estimates ------------------------------------------------------


def key_estimate_audit(traj: Trajectory, reg: UVRegistration | str | None = None,
                       constants=None) -> list[EstimateAudit]:
    """The lifted H^-1 estimate and its per-step pointwise chain."""
    tr = _tracker(traj, reg)
    consts = _base_constants(traj, tr)
    if tr.bc is not BC.NEUMANN or not tr.implicit:
        why = "needs the zero-flux semilinear scheme"
        return [_inapplicable("key_estimate", why, **consts), _inapplicable("key_estimate_chain", why, **consts)]
    C = tr.C_omega if constants is None else constants.C_omega
    consts["C_omega"] = C
    f_tol = 1e-12 * max(1.0, tr.F_scale)
    if tr.F_min < -f_tol and tr.clip_int == 0:
        why = f"F changes sign (min F = {tr.F_min:.3e})"
        return [_inapplicable("key_estimate", why, **consts), _inapplicable("key_estimate_chain", why, **consts)]
    meas = traj.grid.measure
    K = C * tr.KF + tr.KV
    lhs = 0.5 * tr.hm1_UT_sq + tr.uv
    rhs = K + 0.5 * tr.hm1_U0_sq
    weight = tr.reg.B * meas * tr.T + tr.int_U0
    clip_slack = (C + 1.0) * tr.clip_int * weight / meas
    rows = [EstimateAudit(
        "key_estimate", lhs, rhs, {**consts, "K": K}, tol=1e-9 * max(1.0, abs(rhs)) + clip_slack,
        note="clip budget dominates tolerance" if clip_slack > 1e-9 * max(1.0, abs(rhs)) else "",
    )]
    chain_tol = 1e-9 * max(1.0, tr.chain_scale) + tr.chain_round
    excess = tr.chain_excess if math.isfinite(tr.chain_excess) else 0.0
    rows.append(EstimateAudit(
        "key_estimate_chain", excess, 0.0, consts, tol=chain_tol,
        note="max over steps of max(Phi_k) - C<F_k> - <V_k>",
    ))
    return rows


def pierre_l2_audit(traj: Trajectory, reg: UVRegistration | str | None = None) -> list[EstimateAudit]:
    """``a int int U^2 <= ||int A dt||_inf int U0^2`` with ``A = V/U``, and ``a <= A <= b``."""
    tr = _tracker(traj, reg)
    consts = _base_constants(traj, tr)
    lo, hi = tr.reg.ratio_bounds()
    consts.update(a=lo, b=hi)
    if tr.reg.C0 or tr.reg.B:
        why = "needs the unweighted (M) relation"
        return [_inapplicable("pierre_l2", why, **consts), _inapplicable("pierre_ratio_bounds", why, **consts)]
    if np.any(np.asarray(traj.spec.mexp) != 1):
        why = "V is not linear in U"
        return [_inapplicable("pierre_l2", why, **consts), _inapplicable("pierre_ratio_bounds", why, **consts)]
    U0 = _U0(traj, tr)
    int_U0_sq = float(traj.grid.integrate(U0 * U0))
    A_sup = tr.A_int_max if tr.steps else 0.0
    lhs = lo * tr.u2
    rhs = A_sup * int_U0_sq
    tol = 1e-9 * max(1.0, abs(rhs)) + hi * tr.clip_int * float(np.abs(U0).max() if U0.size else 0.0) * tr.T
    rows = [EstimateAudit("pierre_l2", lhs, rhs, {**consts, "sup_int_A": A_sup}, tol=tol)]
    if tr.steps:
        spill = max(lo - tr.A_min, tr.A_max - hi)
        rows.append(EstimateAudit(
            "pierre_ratio_bounds", spill, 0.0, {**consts, "A_min": tr.A_min, "A_max": tr.A_max},
            tol=1e-12 * max(1.0, hi), note="A must stay in [a, b]",
        ))
    else:
        rows.append(EstimateAudit("pierre_ratio_bounds", 0.0, 0.0, consts, tol=0.0))
    return rows


def _U0(traj: Trajectory, tr) -> np.ndarray:
    w = np.asarray(tr.reg.u_weights).reshape((-1,) + (1,) * traj.grid.dim)
    return (w * traj.u0.u).sum(axis=0)


def no_sign_audit(traj: Trajectory, reg: UVRegistration | str | None = None,
                  C: float | None = None) -> list[EstimateAudit]:
    """Sign-free estimates for ``dU/dt - Delta V = G`` with ``V >= aU`` and ``G`` of any sign.

    ``no_sign`` is the time-integrated form
    ``a int int U^2 <= C (int ||G||_1 + <V> dt)^2 + ||U0||^2_{H^-1}`` with the
    grid-calibrated ``C``; its series carries the empirical ratio
    ``(LHS - ||U0||^2) / budget^2``. ``no_sign_l2time`` is the form that the
    step-by-step argument actually delivers,
    ``a int int U^2 <= (C^2 / a) int (||G||_1 + <V>)^2 dt + ||U0||^2_{H^-1}``.
    """
    tr = _tracker(traj, reg)
    consts = _base_constants(traj, tr)
    names = ("no_sign", "no_sign_l2time")
    if tr.bc is not BC.NEUMANN or not tr.implicit:
        return [_inapplicable(x, "needs the zero-flux semilinear scheme", **consts) for x in names]
    a = tr.reg.ratio_bounds()[0]
    scale = max(1.0, tr.F_scale)
    if tr.steps and tr.v_minus_aU_min < -1e-12 * scale:
        why = f"V >= aU violated by {-tr.v_minus_aU_min:.3e}"
        return [_inapplicable(x, why, **consts) for x in names]
    if a <= 0:
        return [_inapplicable(x, "needs V >= aU with a > 0", **consts) for x in names]
    if C is None:
        C = domain_constants(traj.grid).l1_to_l2
    budget = tr.nosign_budget
    lhs = a * tr.u2
    rhs = C * budget**2 + tr.hm1_U0_sq
    ratio = (lhs - tr.hm1_U0_sq) / budget**2 if budget > 0 else math.nan
    rows = [EstimateAudit(
        "no_sign", lhs, rhs, {**consts, "C": C, "a": a, "budget": budget}, series={"ratio": ratio},
        note=f"empirical ratio {ratio:.6g}",
    )]
    rhs2 = C * C / a * tr.nosign_sq + tr.hm1_U0_sq
    rows.append(EstimateAudit(
        "no_sign_l2time", lhs, rhs2, {**consts, "C": C, "a": a, "budget_sq": tr.nosign_sq},
    ))
    return rows


def no_sign_scaling_probe(grid: Grid, forcing: Callable[[float, Grid], np.ndarray], T: float,
                          dt: float, scales: Sequence[float] = (1.0, 2.0, 4.0), d: float = 1.0,
                          u0: float = 1.0) -> dict:
    """Run ``U_t - d Delta U = s F`` from constant ``u0`` for each scale ``s``.

    Returns per-scale budgets, LHS values and the growth of the LHS over the
    unforced run. With a mean-zero ``F`` that growth is quadratic in ``s``.
    """
    from .systems import CustomPolynomial

    spec = SystemSpec(CustomPolynomial(terms=(((0.0, (0,)),),), a=(1.0,)), d=(d,), bc=BC.NEUMANN)
    ctl = StepControls(T=T, dt=dt, snapshot_stride=max(1, int(round(T / dt))))
    start = State(0.0, grid, np.full((1, *grid.shape), float(u0)))
    out = {"scale": [], "budget": [], "lhs": [], "audit": []}
    base = run(spec, math.inf, start, ctl)
    base_lhs = base.tracker().u2 * d
    for s in scales:
        traj = run(spec, math.inf, start, ctl, forcing=lambda t, g, s=s: s * forcing(t, g))
        row = no_sign_audit(traj)[0]
        out["scale"].append(float(s))
        out["budget"].append(traj.tracker().nosign_budget)
        out["lhs"].append(row.lhs)
        out["audit"].append(row)
    out["growth"] = [v - base_lhs for v in out["lhs"]]
    return out


# -- conservation and reaction budgets -------------------------------------


def conservation_audit(traj: Trajectory, combos=None) -> list[EstimateAudit]:
    """``int sum w_i u_i`` constant in time for each weight vector ``w``."""
    if combos is None:
        combos = conservation_combos(traj.spec.reaction)
    consts = _base_constants(traj)
    rows = []
    for w in combos:
        name = "conservation[" + ",".join(f"{x:g}" for x in w) + "]"
        if traj.grid.bc is not BC.NEUMANN or traj.spec.porous:
            rows.append(_inapplicable(name, "needs the zero-flux semilinear scheme", **consts))
            continue
        w = np.asarray(w, dtype=float)
        series = traj.mass @ w
        drift = float(np.abs(series - series[0]).max())
        slack = float(traj.clipped[-1] @ np.abs(w))
        ref = float(np.abs(traj.mass[0]) @ np.abs(w))
        rows.append(EstimateAudit(
            name, drift, 0.0, {**consts, "w": tuple(w)}, tol=1e-9 * ref + slack,
            series={"t": traj.times, "combo": series},
        ))
    return rows


def _budget(traj: Trajectory) -> np.ndarray:
    return _left_sum(traj, traj.f_l1)


def reaction_l1_budget(traj: Trajectory, reference: Trajectory | None = None,
                       fractions: Sequence[float] = (1e-1, 1e-2, 1e-3)) -> list[EstimateAudit]:
    """Space-time ``L^1`` norm of the truncated reactions.

    With ``reference`` (the same run at a larger truncation) the relative
    change of the total budget must stay below 10%. When the trajectory kept
    its reaction history and the system declares (SQG) growth (or runs in
    porous mode), the uniform-integrability bound is probed on the worst
    space-time cell sets of measure fraction ``q``.
    """
    per = _budget(traj)
    total = float(per.sum())
    consts = {**_base_constants(traj), "per_species": tuple(per)}
    rows = []
    if reference is None:
        rows.append(EstimateAudit("reaction_l1_budget", total, math.nan, consts, tol=0.0, status=DIAGNOSTIC))
    else:
        other = float(_budget(reference).sum())
        rel = abs(other - total) / total if total > 0 else (0.0 if other == 0 else math.inf)
        rows.append(EstimateAudit(
            "reaction_l1_budget_stability", rel, 0.10,
            {**consts, "budget": total, "budget_ref": other, "n_ref": reference.n}, tol=0.0,
        ))
    rows.extend(_ui_probe(traj, fractions))
    return rows


def _ui_probe(traj: Trajectory, fractions) -> list[EstimateAudit]:
    r = traj.spec.reaction
    hist = traj.reaction_history
    if hist is None or traj.steps == 0:
        return []
    if r.growth_class != "SQG" and not traj.spec.porous:
        return []
    eps = float(getattr(r, "epsilon", 0.0) or 0.0)
    if eps <= 0 or getattr(r, "growth_C", None) is None:
        return [_inapplicable("uniform_integrability", "needs a growth constant and positive epsilon")]
    C = float(r.growth_C)
    g = traj.grid
    mexp = np.asarray(traj.spec.mexp)
    # space-time cell measures
    w = (traj.dts[:, None] * np.full(g.size, g.cell_volume)[None, :]).ravel()
    total = float(w.sum())
    upow = _left_sum(traj, traj.upow_int)  # int int u_j^{m_j+1}
    rows = []
    for i in range(traj.spec.m):
        vals = hist[:, i].reshape(traj.steps, -1).ravel()
        order = np.argsort(-vals, kind="stable")
        cum_w = np.cumsum(w[order])
        cum_f = np.cumsum(vals[order] * w[order])
        for q in fractions:
            k = int(np.searchsorted(cum_w, q * total, side="left"))
            k = min(k, len(cum_w) - 1)
            E = float(cum_w[k])
            lhs = float(cum_f[k])
            hold = sum(
                upow[j] ** ((mexp[j] + 1 - eps) / (mexp[j] + 1)) * E ** (eps / (mexp[j] + 1))
                for j in range(traj.spec.m)
            )
            rhs = C * (E + hold)
            rows.append(EstimateAudit(
                f"uniform_integrability[{i}][q={q:g}]", lhs, rhs,
                {"C": C, "eps": eps, "E": E}, tol=1e-9 * max(1.0, rhs),
            ))
    return rows


def third_species_integrands(spec: SystemSpec, n: float) -> dict:
    """Cellwise production and loss of ``u_3`` for ``S_{alpha beta gamma}`` (truncated)."""
    r = spec.reaction
    if not isinstance(r, SAlphaBetaGamma):
        raise TypeError("the third-species identity is specific to S_{alpha beta gamma}")

    def damping(u):
        if math.isinf(n):
            return 1.0
        return 1.0 / (1.0 + np.abs(r(u)).sum(axis=0) / n)

    return {
        "u3_production": lambda u: r.gamma * u[0] ** r.alpha * u[1] ** r.beta * damping(u),
        "u3_loss": lambda u: r.gamma * u[2] ** r.gamma * damping(u),
    }


def third_species_identity_audit(traj: Trajectory) -> EstimateAudit:
    """``int u3(T) + sum dt int loss = int u3(0) + sum dt int production`` (telescoped)."""
    consts = _base_constants(traj)
    if "u3_production" not in traj.extras:
        return _inapplicable("third_species_identity", "run without third_species_integrands", **consts)
    if traj.grid.bc is not BC.NEUMANN:
        return _inapplicable("third_species_identity", "needs zero-flux boundaries", **consts)
    prod = float(_left_sum(traj, traj.extras["u3_production"]))
    loss = float(_left_sum(traj, traj.extras["u3_loss"]))
    lhs = float(traj.mass[-1, 2]) + loss
    rhs = float(traj.mass[0, 2]) + prod + float(traj.clipped[-1, 2])
    return EstimateAudit(
        "third_species_identity", abs(lhs - rhs), 0.0, {**consts, "lhs": lhs, "rhs": rhs, "loss": loss},
        tol=1e-8 * max(abs(lhs), abs(rhs), 1e-300),
    )


# -- porous medium ----------------------------------------------------------


def porous_budgets(traj: Trajectory, tr=None) -> dict:
    """Space-time budgets of a porous run: ``int int U V`` and ``||u_i||^{m_i+1}``."""
    tr = _tracker(traj, tr)
    return {
        "UV": float(tr.uv),
        "Lm1": tuple(float(x) for x in _left_sum(traj, traj.upow_int)),
    }


def porous_audit(traj: Trajectory, reference: Trajectory | None = None,
                 reg: UVRegistration | str | None = None) -> list[EstimateAudit]:
    """theta bound on ``int int V``, budgets (optionally stable in n) and gradient diagnostics."""
    tr = _tracker(traj, reg)
    consts = _base_constants(traj, tr)
    if not traj.spec.porous or traj.grid.bc is not BC.DIRICHLET:
        return [_inapplicable("porous_theta", "needs the porous Dirichlet scheme", **consts)]
    dc = domain_constants(traj.grid)
    U0_l1 = float(traj.grid.integrate(np.abs(_U0(traj, tr))))
    rhs = dc.theta_inf * U0_l1
    rows = []
    if tr.steps and tr.F_min < -1e-12 * max(1.0, tr.F_scale) and tr.clip_int == 0:
        rows.append(_inapplicable("porous_theta", "F changes sign", **consts))
    else:
        rows.append(EstimateAudit(
            "porous_theta", tr.v_int, rhs, {**consts, "theta_inf": dc.theta_inf, "U0_l1": U0_l1},
            tol=1e-9 * max(1.0, rhs) + dc.theta_inf * tr.clip_int,
        ))
    budgets = porous_budgets(traj, tr)
    if reference is None:
        rows.append(EstimateAudit("porous_uv_budget", budgets["UV"], math.nan, consts, tol=0.0, status=DIAGNOSTIC))
        for i, v in enumerate(budgets["Lm1"]):
            rows.append(EstimateAudit(f"porous_Lm1[{i}]", v, math.nan, consts, tol=0.0, status=DIAGNOSTIC))
    else:
        ref = porous_budgets(reference, _tracker(reference, reg))
        pairs = [("porous_uv_budget_stability", budgets["UV"], ref["UV"])]
        pairs += [(f"porous_Lm1_stability[{i}]", a, b) for i, (a, b) in enumerate(zip(budgets["Lm1"], ref["Lm1"]))]
        for name, a, b in pairs:
            rel = abs(b - a) / a if a > 0 else (0.0 if b == 0 else math.inf)
            rows.append(EstimateAudit(name, rel, 0.10, {**consts, "value": a, "value_ref": b, "n_ref": reference.n}, tol=0.0))
    if traj.grad_power is not None and traj.steps:
        luk = _left_sum(traj, traj.grad_power)
        for i in range(traj.spec.m):
            for j, beta in enumerate(traj.grad_power_betas):
                rows.append(EstimateAudit(
                    f"gradient_power[{i}][beta={beta:.4g}]", float(luk[i, j]), math.nan, consts,
                    tol=0.0, status=DIAGNOSTIC,
                ))
    return rows


# -- convergence studies ----------------------------------------------------


@dataclass
class ConvergenceReport:
    mode: str
    levels: list
    differences: list
    orders: list
    passed: bool
    trajectories: list = field(default_factory=list, repr=False)

    def rows(self) -> list[str]:
        out = [f"# {self.mode}-convergence  status={'pass' if self.passed else 'fail'}"]
        for k, D in enumerate(self.differences):
            order = self.orders[k - 1] if 0 < k <= len(self.orders) else math.nan
            out.append(f"{self.levels[k]}->{self.levels[k + 1]}  D={D:.10g}  order={order:.4g}")
        return out


def _snapshot_stack(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    t = np.array([s.t for s in traj.snapshots])
    u = np.stack([s.u for s in traj.snapshots])
    return t, u


def spacetime_l1_difference(a: Trajectory, b: Trajectory) -> float:
    """Discrete ``||u^a - u^b||_{L^1(Q_T)}`` over matching macro snapshots (right endpoint)."""
    ta, ua = _snapshot_stack(a)
    tb, ub = _snapshot_stack(b)
    if ta.shape != tb.shape or not np.allclose(ta, tb, rtol=0, atol=1e-12 * max(1.0, ta[-1])):
        raise ValueError("trajectories do not share snapshot times")
    diff = a.grid.integrate(np.abs(ua - ub)).sum(axis=-1)
    return float(np.dot(np.diff(ta), diff[1:]))


def truncation_convergence_study(spec: SystemSpec, u0: State, controls: StepControls,
                                 n_list: Sequence[float], workers: int = 1) -> ConvergenceReport:
    """Run at each truncation level and compare consecutive levels in ``L^1(Q_T)``.

    Passes when the differences are nonincreasing over the last three pairs.
    """
    n_list = [float(n) for n in n_list]
    if len(n_list) < 3:
        raise ValueError("need at least 3 truncation levels")
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("truncation levels must increase")
    ctl = dataclasses.replace(controls, snapshot_stride=1)
    trajs = _map(lambda n: run(spec, n, u0, ctl), n_list, workers)
    D = [spacetime_l1_difference(a, b) for a, b in zip(trajs, trajs[1:])]
    tail = D[-3:]
    passed = all(y <= x * (1 + 1e-12) + 1e-300 for x, y in zip(tail, tail[1:]))
    orders = [math.log(D[k] / D[k + 1]) / math.log(n_list[k + 1] / n_list[k])
              if D[k] > 0 and D[k + 1] > 0 else math.nan for k in range(len(D) - 1)]
    return ConvergenceReport("n", n_list, D, orders, passed, trajs)


def restrict(values: np.ndarray, grid_fine: Grid, grid_coarse: Grid) -> np.ndarray:
    """Average fine cells onto a nested coarse grid (trailing spatial axes)."""
    ratios = [f // c for f, c in zip(grid_fine.cells, grid_coarse.cells)]
    if any(f != r * c for f, c, r in zip(grid_fine.cells, grid_coarse.cells, ratios)):
        raise ValueError("grids are not nested")
    lead = values.shape[: values.ndim - grid_fine.dim]
    shape = list(lead)
    for c, r in zip(grid_coarse.cells, ratios):
        shape += [c, r]
    v = values.reshape(shape)
    axes = tuple(len(lead) + 2 * k + 1 for k in range(grid_fine.dim))
    return v.mean(axis=axes)


def grid_convergence_study(spec: SystemSpec, init: Callable[[Grid], np.ndarray], base_grid: Grid,
                           controls: StepControls, cells_list: Sequence[int], n: float = math.inf,
                           workers: int = 1) -> ConvergenceReport:
    """Self-convergence on nested grids at fixed ``dt``.

    ``init(grid)`` returns the initial array ``(m, *cells)``. ``D_k`` is the
    ``L^1`` difference at ``T`` between level ``k`` and level ``k+1`` averaged
    onto level ``k``; orders are ``log(D_k / D_{k+1}) / log(ratio)``.
    """
    cells_list = [int(c) for c in cells_list]
    if len(cells_list) < 3:
        raise ValueError("need at least 3 grid levels")
    grids = [base_grid.with_cells((c,) * base_grid.dim) for c in cells_list]
    trajs = _map(lambda g: run(spec, n, State(0.0, g, init(g)), controls), grids, workers)
    D = []
    for (ga, ta), (gb, tb) in zip(zip(grids, trajs), zip(grids[1:], trajs[1:])):
        coarse = restrict(tb.final.u, gb, ga)
        D.append(float(ga.integrate(np.abs(ta.final.u - coarse)).sum()))
    orders = [math.log(D[k] / D[k + 1]) / math.log(cells_list[k + 1] / cells_list[k])
              if D[k] > 0 and D[k + 1] > 0 else math.nan for k in range(len(D) - 1)]
    passed = all(y < x for x, y in zip(D, D[1:]))
    return ConvergenceReport("h", cells_list, D, orders, passed, trajs)


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- suite ------------------------------------------------------------------

AUDIT_NAMES = ("mass", "key_estimate", "pierre", "no_sign", "conservation",
               "reaction_l1", "third_species", "porous")


def audit_all(traj: Trajectory, names: Sequence[str] = AUDIT_NAMES,
              reference: Trajectory | None = None) -> list[EstimateAudit]:
    """Run the named audits; unknown names raise ``ValueError``."""
    rows: list[EstimateAudit] = []
    for name in names:
        if name == "mass":
            rows += mass_audit(traj)
        elif name == "key_estimate":
            rows += key_estimate_audit(traj)
        elif name == "pierre":
            rows += pierre_l2_audit(traj)
        elif name == "no_sign":
            rows += no_sign_audit(traj)
        elif name == "conservation":
            rows += conservation_audit(traj)
        elif name == "reaction_l1":
            rows += reaction_l1_budget(traj, reference)
        elif name == "third_species":
            rows.append(third_species_identity_audit(traj))
        elif name == "porous":
            rows += porous_audit(traj, reference)
        else:
            raise ValueError(f"unknown audit {name!r}; known: {', '.join(AUDIT_NAMES)}")
    return rows
