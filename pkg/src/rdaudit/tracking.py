"""Incremental space-time bookkeeping for (U, V, F) combinations of species.

A registration describes ``U = w(t) sum_i u_weights[i] u_i`` and
``V = w(t) sum_i v_weights[i] u_i^{m_i}`` with ``w(t) = exp(-C0 t)``. While a
run advances, the tracker forms ``F`` from the scheme's own update so that

    (U_{k+1} - U_k) / dt - Delta_h V_* = B - F_k

holds exactly on the grid (``V_* = V_{k+1}`` for the implicit semilinear step,
``V_k`` for the explicit porous step). Everything the audits need, including
the per-step lifting chain, is accumulated here because it cannot be rebuilt
from strided snapshots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .elliptic import apply_laplacian, gradient_norm_sq, poisson_solver
from .grid import BC, Grid


@dataclass(frozen=True)
class UVRegistration:
    name: str
    u_weights: tuple[float, ...]
    v_weights: tuple[float, ...]
    B: float = 0.0
    C0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "u_weights", tuple(float(x) for x in self.u_weights))
        object.__setattr__(self, "v_weights", tuple(float(x) for x in self.v_weights))
        if len(self.u_weights) != len(self.v_weights):
            raise ValueError("U and V weights need the same length")
        if self.B < 0 or self.C0 < 0:
            raise ValueError("B and C0 must be nonnegative")

    @classmethod
    def mass(cls, spec, name: str = "mass") -> "UVRegistration":
        """U = sum a_i u_i, V = sum a_i d_i u_i^{m_i}; (M') gets the Gronwall weighting.

        For (M') the declared bound ``sum a f <= C0 (1 + sum r)`` is recast as
        ``<= C (sum a + sum a r)`` with ``C = C0 / min(a)``, and ``B = C sum a``.
        """
        a = np.asarray(spec.reaction.a, dtype=float)
        d = np.asarray(spec.d, dtype=float)
        if spec.reaction.mass_class == "Mprime":
            C = float(spec.reaction.C0) / float(a.min())
            return cls(name, tuple(a), tuple(a * d), B=C * float(a.sum()), C0=C)
        return cls(name, tuple(a), tuple(a * d))

    def ratio_bounds(self) -> tuple[float, float]:
        """Range of ``v_i / u_i`` weights; bounds V/U pointwise for linear V."""
        r = [v / u for u, v in zip(self.u_weights, self.v_weights) if u > 0]
        return (min(r), max(r)) if r else (0.0, 0.0)


class TrackerRecord:
    """Read-only view of a saved :meth:`UVTracker.summary`; audits accept either."""

    def __init__(self, data: dict):
        data = dict(data)
        reg = data.pop("reg")
        self.reg = UVRegistration(reg["name"], tuple(reg["u_weights"]), tuple(reg["v_weights"]),
                                  B=reg["B"], C0=reg["C0"])
        self.bc = BC.parse(data.pop("bc"))
        for k, v in data.items():
            setattr(self, k, v)

    @property
    def K(self) -> float:
        C = 0.0 if self.C_omega is None else self.C_omega
        return C * self.KF + self.KV


@dataclass
class UVTracker:
    reg: UVRegistration
    grid: Grid
    bc: BC
    mexp: np.ndarray
    implicit: bool
    C_omega: float | None = None
    a_floor_rel: float = 1e-14

    # accumulators (filled by start/update)
    U0: np.ndarray | None = None
    int_U0: float = 0.0
    hm1_U0_sq: float = float("nan")
    series_t: list = field(default_factory=list)
    series_intU: list = field(default_factory=list)
    uv: float = 0.0
    u2: float = 0.0
    v_int: float = 0.0
    KF: float = 0.0
    KV: float = 0.0
    F_mean_int: float = 0.0
    F_l1_int: float = 0.0
    nosign_budget: float = 0.0
    nosign_sq: float = 0.0
    F_min: float = math.inf
    F_scale: float = 0.0
    clip_int: float = 0.0
    chain_excess: float = -math.inf
    chain_scale: float = 0.0
    chain_round: float = 0.0
    relation_residual: float = 0.0
    v_minus_aU_min: float = math.inf
    A_int: np.ndarray | None = None
    A_min: float = math.inf
    A_max: float = -math.inf
    hm1_UT_sq: float = float("nan")
    T: float = 0.0
    steps: int = 0

    def __post_init__(self):
        self._w_u = np.asarray(self.reg.u_weights)
        self._w_v = np.asarray(self.reg.v_weights)
        self._neumann = self.bc is BC.NEUMANN
        self._solver = poisson_solver(self.grid) if self._neumann else None
        self._W_prev = None
        self._a_lo, self._a_hi = self.reg.ratio_bounds()

    def _bcast(self, w):
        return w.reshape((-1,) + (1,) * self.grid.dim)

    def U(self, u: np.ndarray, t: float) -> np.ndarray:
        return math.exp(-self.reg.C0 * t) * (self._bcast(self._w_u) * u).sum(axis=0)

    def V(self, u: np.ndarray, t: float) -> np.ndarray:
        powed = u if np.all(self.mexp == 1) else u ** self._bcast(self.mexp)
        return math.exp(-self.reg.C0 * t) * (self._bcast(self._w_v) * powed).sum(axis=0)

    def start(self, u0: np.ndarray, t0: float = 0.0) -> None:
        g = self.grid
        self.U0 = self.U(u0, t0)
        self.int_U0 = float(g.integrate(self.U0))
        self._U_prev = self.U0
        self._V_prev = self.V(u0, t0)
        self._t0 = t0
        self.A_int = np.zeros(g.shape)
        self.series_t = [t0]
        self.series_intU = [self.int_U0]
        if self._neumann:
            self._W_prev = self._solver.neumann(self.U0, check=False)
            self.hm1_U0_sq = float(gradient_norm_sq(g, self._W_prev, BC.NEUMANN))
        else:
            w = poisson_solver(g).dirichlet(self.U0, check=False)
            self.hm1_U0_sq = float(gradient_norm_sq(g, w, BC.DIRICHLET))
        self.hm1_UT_sq = self.hm1_U0_sq
        self._floor = self.a_floor_rel * max(float(np.abs(self.U0).max()), 1e-300)

    def update(self, t: float, dt: float, u_prev, u_next, src, clip) -> None:
        """Advance by one step ``t -> t + dt``.

        ``src`` is the explicit source evaluated at ``u_prev`` (shape of ``u``);
        ``clip`` is the nonnegative mass added cellwise by clipping.
        """
        g = self.grid
        reg = self.reg
        vol = g.cell_volume
        t1 = t + dt
        U1 = self.U(u_next, t1)
        V1 = self.V(u_next, t1)
        U0 = self._U_prev
        wt1 = math.exp(-reg.C0 * t1)
        wu = self._bcast(self._w_u)
        w_src = (wu * src).sum(axis=0)
        w_clip = (wu * clip).sum(axis=0) if clip.any() else None
        decay = (-math.expm1(-reg.C0 * dt) / dt) if reg.C0 else 0.0
        if self.implicit:
            F = reg.B + decay * U0 - wt1 * w_src
            if w_clip is not None:
                F -= wt1 * w_clip / dt
            Vs = V1
        else:
            # explicit porous update: only unweighted combinations are supported
            F = reg.B - w_src
            if w_clip is not None:
                F -= w_clip / dt
            Vs = self._V_prev

        lap_V = apply_laplacian(g, Vs, self.bc)
        dU = (U1 - U0) / dt
        resid = np.abs(dU - lap_V - reg.B + F).max()
        scale = max(np.abs(dU).max(), np.abs(lap_V).max(), abs(reg.B), 1e-300)
        self.relation_residual = max(self.relation_residual, float(resid / scale))

        intF = float(F.sum()) * vol
        intV = float(Vs.sum()) * vol
        meanF = intF / g.measure
        meanV = intV / g.measure
        Ustar = U1 if self.implicit else U0
        weight_time = reg.B * g.measure * (t1 if self.implicit else t) + self.int_U0
        self.uv += dt * float(np.vdot(Ustar, Vs)) * vol
        self.u2 += dt * float(np.vdot(Ustar, Ustar)) * vol
        self.v_int += dt * intV
        self.KF += dt * meanF * weight_time
        self.KV += dt * meanV * weight_time
        self.F_mean_int += dt * meanF
        self.F_l1_int += dt * float(np.abs(F).sum()) * vol
        # the sign-free estimate is phrased for dU/dt - Delta V = (B - F)
        piece = float(np.abs(reg.B - F).sum()) * vol + meanV
        self.nosign_budget += dt * piece
        self.nosign_sq += dt * piece * piece
        self.F_min = min(self.F_min, float(F.min()))
        self.F_scale = max(self.F_scale, float(np.abs(F).max()))
        if w_clip is not None:
            self.clip_int += float(w_clip.sum()) * vol * wt1
        self.v_minus_aU_min = min(self.v_minus_aU_min, float((Vs - self._a_lo * Ustar).min()))

        # ratio A = V/U, defaulting to the lower bound where U vanishes
        pos = Ustar > self._floor
        if pos.all():
            A = Vs / Ustar
        else:
            A = np.where(pos, Vs / np.where(pos, Ustar, 1.0), self._a_lo)
        self.A_int += dt * A
        self.A_min = min(self.A_min, float(A.min()))
        self.A_max = max(self.A_max, float(A.max()))

        if self._neumann:
            W1 = self._solver.neumann(U1, check=False)
            if self.implicit and self.C_omega is not None:
                phi = (W1 - self._W_prev) / dt + V1
                excess = float(phi.max()) - meanV - self.C_omega * meanF
                self.chain_excess = max(self.chain_excess, excess)
                self.chain_scale = max(self.chain_scale, abs(meanV) + self.C_omega * abs(meanF))
                # cancellation in (W1 - W0) / dt
                self.chain_round = max(self.chain_round, 1e-13 * float(np.abs(W1).max()) / dt)
            self._W_prev = W1

        self._U_prev = U1
        self._V_prev = V1
        self.series_t.append(t1)
        self.series_intU.append(float(U1.sum()) * vol)
        self.T = t1
        self.steps += 1

    def finish(self) -> None:
        if self.U0 is None:
            return
        if self._neumann:
            self.hm1_UT_sq = float(gradient_norm_sq(self.grid, self._W_prev, BC.NEUMANN))
        else:
            w = poisson_solver(self.grid).dirichlet(self._U_prev, check=False)
            self.hm1_UT_sq = float(gradient_norm_sq(self.grid, w, BC.DIRICHLET))
        self.series_t = np.asarray(self.series_t)
        self.series_intU = np.asarray(self.series_intU)
        self.U_final = self._U_prev

    SCALARS = (
        "int_U0", "hm1_U0_sq", "hm1_UT_sq", "uv", "u2", "v_int", "KF", "KV",
        "F_mean_int", "F_l1_int", "nosign_budget", "nosign_sq", "F_min", "F_scale", "clip_int",
        "chain_excess", "chain_scale", "chain_round", "relation_residual",
        "v_minus_aU_min", "A_min", "A_max", "T", "steps", "C_omega",
    )

    def summary(self) -> dict:
        """Scalars the audits consume, for saving alongside snapshots."""
        out = {k: getattr(self, k) for k in self.SCALARS}
        out["int_UT"] = float(self.series_intU[-1]) if len(self.series_intU) else self.int_U0
        out["A_int_max"] = float(self.A_int.max()) if self.A_int is not None else 0.0
        out["bc"] = self.bc.value
        out["implicit"] = self.implicit
        out["reg"] = {
            "name": self.reg.name,
            "u_weights": list(self.reg.u_weights),
            "v_weights": list(self.reg.v_weights),
            "B": self.reg.B,
            "C0": self.reg.C0,
        }
        return out

    @property
    def int_UT(self) -> float:
        return float(self.series_intU[-1])

    @property
    def A_int_max(self) -> float:
        return float(self.A_int.max())

    @property
    def K(self) -> float:
        C = 0.0 if self.C_omega is None else self.C_omega
        return C * self.KF + self.KV
