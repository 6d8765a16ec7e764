"""Discrete Laplacians, Poisson solves, the discrete H^-1 norm and domain constants.

Conventions: ``laplacian(grid)`` returns the matrix of Delta_h acting on
C-order flattened cell arrays. Neumann boundaries reflect the ghost value
(zero flux, every row sums to zero). Dirichlet boundaries use the odd
reflection ``ghost = -u``, i.e. the linear interpolant vanishes on the
boundary face; this keeps the scheme second order for cell-centred data.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalError
from .grid import BC, Field, Grid

RESIDUAL_TOL = 1e-10
# above this many cells the direct factorisation gives way to CG
DIRECT_LIMIT = 200_000
ITERATIVE_TOL = 1e-12


def _laplacian_1d(n: int, h: float, bc: BC) -> sp.csr_matrix:
    main = np.full(n, -2.0)
    edge = -1.0 if bc is BC.NEUMANN else -3.0
    main[0] = main[-1] = edge
    off = np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / (h * h)


@functools.lru_cache(maxsize=32)
def laplacian(grid: Grid, bc: BC | None = None) -> sp.csr_matrix:
    """Sparse 3-point (1D) or 5-point (2D) Laplacian for ``grid``."""
    bc = grid.bc if bc is None else BC.parse(bc)
    mats = [_laplacian_1d(n, h, bc) for n, h in zip(grid.cells, grid.h)]
    if grid.dim == 1:
        return mats[0]
    nx, ny = grid.cells
    return (sp.kron(mats[0], sp.identity(ny)) + sp.kron(sp.identity(nx), mats[1])).tocsr()


def apply_laplacian(grid: Grid, values: np.ndarray, bc: BC | None = None) -> np.ndarray:
    """Delta_h applied over the trailing spatial axes of ``values``."""
    L = laplacian(grid, bc)
    lead = values.shape[: values.ndim - grid.dim]
    flat = values.reshape(-1, grid.size)
    return (L @ flat.T).T.reshape(*lead, *grid.shape)


@dataclass(frozen=True)
class LaplacianOperator:
    grid: Grid
    bc: BC
    matrix: sp.csr_matrix

    @classmethod
    def for_grid(cls, grid: Grid, bc: BC | str | None = None) -> "LaplacianOperator":
        bc = grid.bc if bc is None else BC.parse(bc)
        return cls(grid, bc, laplacian(grid, bc))

    def __call__(self, f: Field) -> Field:
        return Field(self.grid, apply_laplacian(self.grid, f.values, self.bc))


class PoissonSolver:
    """Factorised ``-Delta_h w = rhs`` solves on one grid.

    The Neumann problem is singular; it is solved through the bordered system
    ``[[-L, 1], [1^T, 0]]`` after centring the right-hand side, which returns
    the unique mean-zero solution.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        self._neumann = None
        self._dirichlet = None

    def _neumann_factor(self):
        if self._neumann is None:
            n = self.grid.size
            A = -laplacian(self.grid, BC.NEUMANN)
            if n <= DIRECT_LIMIT:
                ones = sp.csr_matrix(np.ones((n, 1)))
                K = sp.bmat([[A, ones], [ones.T, None]], format="csc")
                self._neumann = spla.splu(K)
            else:
                self._neumann = A
        return self._neumann

    def _dirichlet_factor(self):
        if self._dirichlet is None:
            A = -laplacian(self.grid, BC.DIRICHLET)
            self._dirichlet = spla.splu(A.tocsc()) if self.grid.size <= DIRECT_LIMIT else A.tocsr()
        return self._dirichlet

    def neumann(self, rhs: np.ndarray, check: bool = True) -> np.ndarray:
        """Mean-zero ``w`` with ``-Delta_h w = rhs - <rhs>``.

        ``rhs`` may carry leading batch axes.
        """
        g = self.grid
        if g.dim == 1:
            return self._neumann_1d(rhs, check)
        lead = rhs.shape[: rhs.ndim - g.dim]
        b = rhs.reshape(-1, g.size).T
        b = b - b.mean(axis=0)
        fac = self._neumann_factor()
        if isinstance(fac, spla.SuperLU):
            aug = np.vstack([b, np.zeros((1, b.shape[1]))])
            w = fac.solve(aug)[: g.size]
        else:
            w = np.column_stack([_cg(fac, col) for col in b.T])
        w = w - w.mean(axis=0)
        if check:
            _check_residual(-laplacian(g, BC.NEUMANN), w, b)
        return w.T.reshape(*lead, *g.shape)

    def _neumann_1d(self, rhs: np.ndarray, check: bool) -> np.ndarray:
        # zero-flux ends make the 1D problem two cumulative sums:
        # face fluxes q = h cumsum(b), then w_{i+1} = w_i - h q_{i+1/2}
        h = self.grid.h[0]
        b = rhs - rhs.mean(axis=-1, keepdims=True)
        q = np.cumsum(b[..., :-1], axis=-1) * h
        w = np.zeros(b.shape)
        w[..., 1:] = np.cumsum(q, axis=-1) * (-h)
        w -= w.mean(axis=-1, keepdims=True)
        if check:
            flat_w = w.reshape(-1, self.grid.size).T
            flat_b = b.reshape(-1, self.grid.size).T
            _check_residual(-laplacian(self.grid, BC.NEUMANN), flat_w, flat_b)
        return w

    def dirichlet(self, rhs: np.ndarray, check: bool = True) -> np.ndarray:
        """``w`` with ``-Delta_h w = rhs`` and zero boundary values."""
        g = self.grid
        lead = rhs.shape[: rhs.ndim - g.dim]
        b = rhs.reshape(-1, g.size).T
        fac = self._dirichlet_factor()
        if isinstance(fac, spla.SuperLU):
            w = fac.solve(np.ascontiguousarray(b))
        else:
            w = np.column_stack([_cg(fac, col) for col in b.T])
        if check:
            _check_residual(-laplacian(g, BC.DIRICHLET), w, b)
        return w.T.reshape(*lead, *g.shape)

    def solve(self, rhs: np.ndarray, bc: BC | None = None, check: bool = True) -> np.ndarray:
        bc = self.grid.bc if bc is None else bc
        return self.neumann(rhs, check) if bc is BC.NEUMANN else self.dirichlet(rhs, check)


def _cg(A, b):
    x, info = spla.cg(A, b, rtol=ITERATIVE_TOL, atol=0.0, maxiter=20 * A.shape[0])
    if info != 0:
        res = float(np.linalg.norm(A @ x - b) / max(np.linalg.norm(b), 1e-300))
        raise NumericalError(f"CG did not converge (info={info})", residual=res)
    return x


def _check_residual(A, w, b):
    r = A @ w - b
    scale = np.maximum(np.abs(b).max(axis=0), np.abs(A @ w).max(axis=0))
    # subnormal right-hand sides carry no relative precision
    rel = np.abs(r).max(axis=0) / np.where(scale > 1e-250, scale, 1.0)
    worst = float(rel.max()) if rel.size else 0.0
    if not np.isfinite(worst) or worst > RESIDUAL_TOL:
        raise NumericalError(f"Poisson residual {worst:.3e} exceeds {RESIDUAL_TOL}", residual=worst)


@functools.lru_cache(maxsize=32)
def poisson_solver(grid: Grid) -> PoissonSolver:
    return PoissonSolver(grid)


def solve_poisson_neumann(rhs: Field) -> Field:
    return Field(rhs.grid, poisson_solver(rhs.grid).neumann(rhs.values))


def solve_poisson_dirichlet(rhs: Field) -> Field:
    return Field(rhs.grid, poisson_solver(rhs.grid).dirichlet(rhs.values))


def gradient_norm_sq(grid: Grid, w: np.ndarray, bc: BC | None = None) -> np.ndarray | float:
    """Discrete ``||grad w||^2`` from face differences.

    Interior faces carry ``((w_{i+1} - w_i)/h)^2`` over a dual cell of one cell
    volume; Dirichlet boundary faces carry ``(2 w_edge / h)^2`` over half a cell.
    Equals ``<-Delta_h w, w>`` exactly (summation by parts).
    """
    bc = grid.bc if bc is None else bc
    lead = w.ndim - grid.dim
    vol = grid.cell_volume
    total = 0.0
    for k, h in enumerate(grid.h):
        ax = lead + k
        d = np.diff(w, axis=ax) / h
        total = total + (d * d).sum(axis=tuple(range(lead, w.ndim))) * vol
        if bc is BC.DIRICHLET:
            for idx in (0, -1):
                edge = np.take(w, idx, axis=ax) * (2.0 / h)
                total = total + (edge * edge).sum(axis=tuple(range(lead, w.ndim - 1))) * (0.5 * vol)
    return total


def hminus1_norm_values(grid: Grid, values: np.ndarray, bc: BC | None = None):
    bc = grid.bc if bc is None else bc
    w = poisson_solver(grid).solve(values, bc)
    return np.sqrt(gradient_norm_sq(grid, w, bc))


def hminus1_norm(f: Field) -> float:
    """``||grad W||_{L^2}`` where ``-Delta_h W = f - <f>`` (Neumann) or ``= f`` (Dirichlet)."""
    return float(hminus1_norm_values(f.grid, f.values))


@dataclass(frozen=True, eq=False)
class DomainConstants:
    """Grid constants consumed by the audits.

    ``C_omega`` bounds the mean-zero Neumann solution of ``-Delta_h z = g`` by
    ``max z <= C_omega * max g`` whenever ``<g> = 0``. ``theta`` solves
    ``-Delta_h theta = 1`` with Dirichlet data; ``theta_inf`` is its maximum.
    ``l1_to_l2`` is the frozen constant of the sign-free estimate.
    """

    C_omega: float
    theta_inf: float
    theta: Field
    l1_to_l2: float
    green: np.ndarray  # Neumann Green matrix, G[x, y]


@functools.lru_cache(maxsize=16)
def neumann_green_matrix(grid: Grid) -> np.ndarray:
    """``G[:, y]`` is the mean-zero solution of ``-Delta_h G = delta_y / vol - 1/|Omega|``."""
    n = grid.size
    rhs = np.eye(n) / grid.cell_volume - 1.0 / grid.measure
    G = poisson_solver(grid).neumann(rhs.reshape(n, *grid.shape))
    # rows of the batch are the sources y; transpose to G[x, y]
    return np.ascontiguousarray(G.reshape(n, n).T)


def l1_to_l2_constant(grid: Grid, n_random: int = 64, seed: int = 0) -> float:
    """Largest ``||Phi||_2 / (||F||_1 + <V>)`` over a fixed probe set.

    ``Phi = z + <V>`` with ``-Delta_h z = F - <F>`` (mean-zero Neumann). The
    probes are unit point sources at every cell, the pure-constant probe
    ``F = 0, V = 1`` and ``n_random`` seeded sign-changing sources.
    """
    G = neumann_green_matrix(grid)
    vol = grid.cell_volume
    point = np.sqrt((G * G).sum(axis=0) * vol).max()
    const = np.sqrt(grid.measure)
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((n_random, grid.size))
    z = poisson_solver(grid).neumann(F.reshape(n_random, *grid.shape)).reshape(n_random, -1)
    rand = (np.sqrt((z * z).sum(axis=1) * vol) / (np.abs(F).sum(axis=1) * vol)).max()
    return float(max(point, const, rand))


@functools.lru_cache(maxsize=16)
def domain_constants(grid: Grid) -> DomainConstants:
    G = neumann_green_matrix(grid)
    C_omega = grid.measure * max(0.0, float((-G).max()))
    dgrid = Grid(grid.dim, grid.lengths, grid.cells, BC.DIRICHLET)
    theta_vals = poisson_solver(dgrid).dirichlet(np.ones(grid.shape))
    theta = Field(dgrid, theta_vals)
    if C_omega <= 0 or theta_vals.max() <= 0:
        raise NumericalError("degenerate domain constants")
    return DomainConstants(
        C_omega=C_omega,
        theta_inf=float(theta_vals.max()),
        theta=theta,
        l1_to_l2=l1_to_l2_constant(grid),
        green=G,
    )
