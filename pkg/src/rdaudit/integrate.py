"""Time integration of the truncated systems.

Semilinear systems (all exponents 1) use an IMEX step: explicit truncated
reaction, then one implicit diffusion solve per species. Porous-medium
systems use an explicit conservative update of ``u^m``. Both pick their
substep from the user step, the reaction positivity bound and (porous) the
diffusion CFL bound, and land exactly on the macro times ``j * dt``.
"""

from __future__ import annotations

import functools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .elliptic import apply_laplacian, domain_constants, laplacian
from .errors import BlowUpError, NumericalError
from .grid import BC, Grid, State
from .systems import Reaction, SystemSpec, TruncatedReaction, truncate
from .tracking import UVRegistration, UVTracker

log = logging.getLogger(__name__)

Forcing = Callable[[float, Grid], np.ndarray]


@dataclass(frozen=True)
class StepControls:
    """Time-stepping parameters.

    ``dt`` is the macro step (snapshots land on its multiples); ``cfl`` scales
    the porous diffusion bound. ``clip_tolerance`` defaults to ``1e-10`` times
    the initial total mass.
    """

    T: float
    dt: float | None = None
    cfl: float = 0.9
    max_steps: int = 5_000_000
    blowup_threshold: float = 1e12
    clip_tolerance: float | None = None
    snapshot_stride: int = 10
    min_dt_fraction: float = 1e-9

    def __post_init__(self):
        if not (self.T >= 0 and math.isfinite(self.T)):
            raise ValueError("T must be finite and >= 0")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl must lie in (0, 1]")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")

    @property
    def macro_dt(self) -> float:
        if self.dt is not None:
            return self.dt
        return self.T / 1000 if self.T > 0 else 1.0


@dataclass
class Trajectory:
    """A run's snapshots and per-time-level diagnostics.

    Diagnostic arrays have one row per time level ``t_0 < t_1 < ... < t_K``
    (the initial state included); ``dts[k] = t_{k+1} - t_k``. Reaction
    quantities at level ``k`` are evaluated at ``u_k`` (the explicit point).
    """

    spec: SystemSpec
    n: float
    grid: Grid
    controls: StepControls
    u0: State
    times: np.ndarray
    mass: np.ndarray
    l2: np.ndarray
    umin: np.ndarray
    umax: np.ndarray
    f_int: np.ndarray
    f_l1: np.ndarray
    s_int: np.ndarray
    clipped: np.ndarray
    upow_int: np.ndarray
    grad_power: np.ndarray | None
    grad_power_betas: tuple[float, ...]
    snapshots: list[State]
    snapshot_steps: list[int]
    trackers: dict[str, UVTracker]
    reaction_history: np.ndarray | None = None
    extras: dict[str, np.ndarray] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def dts(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    @property
    def final(self) -> State:
        return self.snapshots[-1]

    @property
    def clip_budget(self) -> float:
        return float(self.clipped[-1].sum())

    @property
    def clip_exceeded(self) -> bool:
        return "clip_budget_exceeded" in self.flags

    @property
    def min_dt(self) -> float:
        return float(self.dts.min()) if self.steps else 0.0

    def tracker(self, name: str = "mass") -> UVTracker:
        return self.trackers[name]


class ImplicitDiffusion:
    """Solves ``(I - c Delta_h) x = b`` for arbitrary ``c >= 0``.

    Factors are cached per ``c``: LAPACK tridiagonal factors in 1D, sparse
    LU in 2D. A run only sees a handful of distinct ``c`` values.
    """

    def __init__(self, grid: Grid, bc: BC):
        self.grid = grid
        self.bc = bc
        self.L = laplacian(grid, bc)
        self._factor = functools.lru_cache(maxsize=32)(self._make_factor)

    def _make_factor(self, c: float):
        if self.grid.dim == 1:
            dl = -c * self.L.diagonal(-1)
            d = 1.0 - c * self.L.diagonal()
            du = -c * self.L.diagonal(1)
            dl, d, du, du2, ipiv, info = _gttrf(dl, d, du)
            if info != 0:
                raise NumericalError(f"tridiagonal factorisation failed (info={info})")
            return dl, d, du, du2, ipiv
        A = (sp.identity(self.grid.size, format="csc") - c * self.L).tocsc()
        return spla.splu(A)

    def solve(self, b: np.ndarray, c: float) -> np.ndarray:
        """``b`` has shape ``cells`` or ``(k, *cells)`` (k right-hand sides)."""
        if c == 0:
            return b.copy()
        fac = self._factor(float(c))
        g = self.grid
        batch = b.ndim > g.dim
        rhs = b.reshape(-1, g.size).T
        if g.dim == 1:
            x, info = _gttrs(*fac, np.asfortranarray(rhs))
            if info != 0:
                raise NumericalError(f"tridiagonal solve failed (info={info})")
        else:
            x = fac.solve(np.ascontiguousarray(rhs))
        x = x.T.reshape(b.shape) if batch else x.reshape(g.shape)
        return x

    def solve_species(self, stage: np.ndarray, coeffs) -> np.ndarray:
        """Diffuse each species row of ``stage`` with its own coefficient."""
        out = np.empty_like(stage)
        groups: dict[float, list[int]] = {}
        for i, c in enumerate(coeffs):
            groups.setdefault(float(c), []).append(i)
        for c, idx in groups.items():
            out[idx] = self.solve(stage[idx], c)
        return out


_gttrf, _gttrs = sla.lapack.get_lapack_funcs(("gttrf", "gttrs"), dtype=np.float64)


def _positivity_bound(u: np.ndarray, src: np.ndarray, share: float = 1.0) -> float:
    loss = np.maximum(-src, 0.0)
    mask = loss > 0
    if not mask.any():
        return math.inf
    return share * float((u[mask] / loss[mask]).min())


def _porous_cfl(grid: Grid, spec: SystemSpec, u: np.ndarray, cfl: float) -> float:
    """Explicit diffusion bound: the Courant form and a positivity form."""
    h2 = min(grid.h) ** 2
    diag = float(np.abs(laplacian(grid, BC.DIRICHLET).diagonal()).max())
    best = math.inf
    for i, (d, m) in enumerate(zip(spec.d, spec.mexp)):
        if d == 0:
            continue
        umax = float(u[i].max())
        if umax <= 0:
            continue
        speed = d * m * umax ** (m - 1)
        best = min(best, cfl * h2 / (2 * grid.dim * speed))
        # keeps u (1 - dt d |diag| u^(m-1)) >= u / 2
        best = min(best, 0.5 / (d * diag * umax ** (m - 1)))
    return best


def _clip(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    neg = np.minimum(x, 0.0)
    if not neg.any():
        return x, np.zeros_like(x)
    return x - neg, -neg


def _explicit_source(fn, u, t, grid, forcing):
    src = fn(u)
    if forcing is not None:
        return src, src + forcing(t, grid)
    return src, src


def step_semilinear(state: State, spec: SystemSpec, n: float, dt: float, *,
                    forcing: Forcing | None = None, blowup_threshold: float = math.inf,
                    return_clipped: bool = False):
    """One IMEX step of size ``dt`` (no step-size control)."""
    if spec.porous:
        raise ValueError("step_semilinear needs all exponents equal to 1")
    fn = TruncatedReaction(spec.reaction, n)
    diff = _diffusion(state.grid, spec.bc)
    u_new, clip, _ = _semilinear_update(state.u, fn, spec, diff, dt, state.t, state.grid, forcing)
    _guard(u_new, blowup_threshold, 1, state.t + dt)
    new = State(state.t + dt, state.grid, u_new)
    return (new, state.grid.integrate(clip)) if return_clipped else new


def step_porous(state: State, spec: SystemSpec, n: float, dt: float, *,
                forcing: Forcing | None = None, blowup_threshold: float = math.inf,
                return_clipped: bool = False):
    """One explicit porous-medium step of size ``dt`` (caller respects the CFL bound)."""
    if state.grid.bc is not BC.DIRICHLET and spec.bc is not BC.DIRICHLET:
        raise ValueError("porous steps need Dirichlet boundaries")
    fn = TruncatedReaction(spec.reaction, n)
    u_new, clip, _ = _porous_update(state.u, fn, spec, dt, state.t, state.grid, forcing)
    _guard(u_new, blowup_threshold, 1, state.t + dt)
    new = State(state.t + dt, state.grid, u_new)
    return (new, state.grid.integrate(clip)) if return_clipped else new


@functools.lru_cache(maxsize=16)
def _diffusion(grid: Grid, bc: BC) -> ImplicitDiffusion:
    return ImplicitDiffusion(grid, bc)


def _semilinear_update(u, fn, spec, diff, dt, t, grid, forcing, src=None):
    if src is None:
        _, src = _explicit_source(fn, u, t, grid, forcing)
    stage, clip = _clip(u + dt * src)
    out = diff.solve_species(stage, [dt * d for d in spec.d])
    out, clip2 = _clip(out)
    return out, clip + clip2, src


def _porous_update(u, fn, spec, dt, t, grid, forcing, src=None):
    if src is None:
        _, src = _explicit_source(fn, u, t, grid, forcing)
    mexp = np.asarray(spec.mexp).reshape((-1,) + (1,) * grid.dim)
    d = np.asarray(spec.d).reshape((-1,) + (1,) * grid.dim)
    flux = d * apply_laplacian(grid, u**mexp, BC.DIRICHLET)
    out, clip = _clip(u + dt * (flux + src))
    return out, clip, src


def _guard(u, threshold, step, t):
    if not np.all(np.isfinite(u)):
        raise BlowUpError(step, t, math.inf, threshold)
    top = float(u.max()) if u.size else 0.0
    if top > threshold:
        raise BlowUpError(step, t, top, threshold)


def _grad_power_betas(spec: SystemSpec, grid: Grid) -> tuple[float, ...]:
    m = max(spec.mexp)
    return (1.0, 1.0 + 1.0 / (2.0 * (1.0 + m * grid.dim)))


def gradient_power_integrals(grid: Grid, w: np.ndarray, betas: Sequence[float]) -> np.ndarray:
    """``int |grad_h w|^beta`` per leading index with Dirichlet (odd) ghosts.

    Cell gradients are central differences of the ghost-padded array.
    """
    lead = w.ndim - grid.dim
    pad = [(0, 0)] * lead + [(1, 1)] * grid.dim
    wp = np.pad(w, pad)
    for k in range(grid.dim):
        ax = lead + k
        n = w.shape[ax]
        first = np.take(wp, [1], axis=ax)
        last = np.take(wp, [n], axis=ax)
        idx0 = [slice(None)] * wp.ndim
        idx0[ax] = slice(0, 1)
        idxn = [slice(None)] * wp.ndim
        idxn[ax] = slice(n + 1, n + 2)
        wp[tuple(idx0)] = -first
        wp[tuple(idxn)] = -last
    sq = np.zeros(w.shape)
    for k, h in enumerate(grid.h):
        ax = lead + k
        hi = [slice(None)] * lead + [slice(1, -1)] * grid.dim
        lo = list(hi)
        hi[ax] = slice(2, None)
        lo[ax] = slice(0, -2)
        g = (wp[tuple(hi)] - wp[tuple(lo)]) / (2 * h)
        sq = sq + g * g
    mag = np.sqrt(sq)
    return np.stack([grid.integrate(mag**b) for b in betas], axis=-1)


def run(
    spec: SystemSpec,
    n: float,
    u0: State,
    controls: StepControls,
    registrations: Sequence[UVRegistration] | None = None,
    forcing: Forcing | None = None,
    keep_reaction_history: bool = False,
    integrands: dict[str, Callable[[np.ndarray], np.ndarray]] | None = None,
) -> Trajectory:
    """Integrate the system truncated at level ``n`` from ``u0`` to ``controls.T``.

    ``registrations`` defaults to the mass combination of ``spec``. Raises
    :class:`BlowUpError` and :class:`NumericalError`; an exceeded clip budget is
    reported in ``Trajectory.flags`` instead. ``integrands`` maps names to
    cellwise functions of the state whose integrals are recorded at every
    time level (``Trajectory.extras``).
    """
    wall = time.perf_counter()
    grid = u0.grid
    if grid.bc is not spec.bc:
        grid = Grid(grid.dim, grid.lengths, grid.cells, spec.bc)
        u0 = State(u0.t, grid, u0.u)
    if u0.m != spec.m:
        raise ValueError(f"initial state has {u0.m} species, system has {spec.m}")
    if np.any(u0.u < 0):
        raise ValueError("initial data must be nonnegative")
    fn, u0t = truncate(spec.reaction, u0, n)
    porous = spec.porous
    implicit = not porous
    if registrations is None:
        registrations = [UVRegistration.mass(spec)]
    if porous and any(r.C0 for r in registrations):
        raise ValueError("time-weighted registrations need the semilinear stepper")

    C_omega = domain_constants(grid).C_omega if grid.bc is BC.NEUMANN else None
    mexp_arr = np.asarray(spec.mexp, dtype=float)
    trackers = {
        r.name: UVTracker(r, grid, grid.bc, mexp_arr, implicit, C_omega=C_omega)
        for r in registrations
    }
    for tr in trackers.values():
        tr.start(u0t.u, u0t.t)

    diff = None if porous else _diffusion(grid, grid.bc)
    betas = _grad_power_betas(spec, grid) if porous else ()
    mexp_b = mexp_arr.reshape((-1,) + (1,) * grid.dim)

    u = np.array(u0t.u)
    t = float(u0t.t)
    T = float(controls.T)
    dt = controls.macro_dt
    init_mass = float(grid.integrate(u).sum())
    clip_tol = controls.clip_tolerance
    if clip_tol is None:
        clip_tol = 1e-10 * max(init_mass, 1e-300)

    times, mass, l2, umin, umax = [], [], [], [], []
    f_int, f_l1, s_int, clipped, upow, luk = [], [], [], [], [], []
    history = [] if keep_reaction_history else None
    cum_clip = np.zeros(spec.m)
    flags: list[str] = []
    integrands = dict(integrands or {})
    extra_rows: dict[str, list] = {k: [] for k in integrands}

    vol = grid.cell_volume
    flat = (spec.m, grid.size)

    def record(u, f, src):
        # one reduction per quantity over the flattened spatial axes
        uf = u.reshape(flat)
        sq = np.einsum("ij,ij->i", uf, uf) * vol
        times.append(t)
        mass.append(uf.sum(axis=1) * vol)
        l2.append(np.sqrt(sq))
        umin.append(uf.min(axis=1))
        umax.append(uf.max(axis=1))
        ff = f.reshape(flat)
        f_int.append(ff.sum(axis=1) * vol)
        f_l1.append(np.abs(ff).sum(axis=1) * vol)
        s_int.append(src.reshape(flat).sum(axis=1) * vol if forcing is not None else f_int[-1])
        clipped.append(cum_clip.copy())
        for name, func in integrands.items():
            extra_rows[name].append(grid.integrate(func(u)))
        if porous:
            upow.append(grid.integrate(u ** (mexp_b + 1.0)))
            luk.append(gradient_power_integrals(grid, u**mexp_b, betas))
        else:
            upow.append(sq)

    f, src = _explicit_source(fn, u, t, grid, forcing)
    record(u, f, src)
    snapshots = [State(t, grid, u)]
    snapshot_steps = [0]

    step = 0
    macro = 0
    n_macro = 0 if T <= t else max(1, math.ceil((T - t) / dt - 1e-12))
    floor = dt * controls.min_dt_fraction
    while macro < n_macro:
        macro += 1
        t_target = min(T, float(u0t.t) + macro * dt)
        while t < t_target:
            remaining = t_target - t
            if porous:
                cfl_bound = _porous_cfl(grid, spec, u, controls.cfl)
                if cfl_bound < floor:
                    raise NumericalError(
                        f"CFL step {cfl_bound:.3e} collapsed below {floor:.3e}", step=step
                    )
                pos = _positivity_bound(u, src, share=0.5)
                h = min(remaining, cfl_bound, max(pos, floor))
            else:
                pos = _positivity_bound(u, src)
                h = min(remaining, max(pos, floor))
            last = h >= remaining
            if last:
                h = remaining
            if porous:
                u_new, clip, _ = _porous_update(u, fn, spec, h, t, grid, forcing, src=src)
            else:
                u_new, clip, _ = _semilinear_update(u, fn, spec, diff, h, t, grid, forcing, src=src)
            step += 1
            if step > controls.max_steps:
                raise NumericalError(f"exceeded max_steps={controls.max_steps}", step=step)
            _guard(u_new, controls.blowup_threshold, step, t + h)
            for tr in trackers.values():
                tr.update(t, h, u, u_new, src, clip)
            if history is not None:
                history.append(np.abs(f))
            cum_clip += grid.integrate(clip)
            u = u_new
            t = t_target if last else t + h
            f, src = _explicit_source(fn, u, t, grid, forcing)
            record(u, f, src)
        if macro % controls.snapshot_stride == 0 or macro == n_macro:
            snapshots.append(State(t, grid, u))
            snapshot_steps.append(step)

    for tr in trackers.values():
        tr.finish()
    if cum_clip.sum() > clip_tol:
        flags.append("clip_budget_exceeded")
        log.warning("clipped mass %.3e exceeds budget %.3e", cum_clip.sum(), clip_tol)

    return Trajectory(
        spec=spec,
        n=float(n),
        grid=grid,
        controls=controls,
        u0=u0t,
        times=np.asarray(times),
        mass=np.asarray(mass),
        l2=np.asarray(l2),
        umin=np.asarray(umin),
        umax=np.asarray(umax),
        f_int=np.asarray(f_int),
        f_l1=np.asarray(f_l1),
        s_int=np.asarray(s_int),
        clipped=np.asarray(clipped),
        upow_int=np.asarray(upow),
        grad_power=np.asarray(luk) if porous else None,
        grad_power_betas=betas,
        snapshots=snapshots,
        snapshot_steps=snapshot_steps,
        trackers=trackers,
        reaction_history=np.asarray(history) if history is not None else None,
        extras={k: np.asarray(v) for k, v in extra_rows.items()},
        flags=flags,
        wall_time=time.perf_counter() - wall,
    )


def reaction_ode_oracle(reaction: Reaction | TruncatedReaction, r0, T: float,
                        substeps: int = 10_000, blowup_threshold: float = 1e12) -> np.ndarray:
    """Classical RK4 for ``dr/dt = f(r)``; a test oracle independent of :func:`run`."""
    r = np.asarray(r0, dtype=float).copy()
    if np.any(r < 0):
        raise ValueError("r0 must be nonnegative")
    if substeps < 10_000:
        raise ValueError("the oracle uses at least 1e4 substeps")
    h = T / substeps
    for k in range(substeps):
        k1 = reaction(r)
        k2 = reaction(r + 0.5 * h * k1)
        k3 = reaction(r + 0.5 * h * k2)
        k4 = reaction(r + h * k3)
        r = r + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(r)) or np.abs(r).max() > blowup_threshold:
            raise BlowUpError(k + 1, (k + 1) * h, float(np.abs(r).max()), blowup_threshold)
    return r
