"""Uniform cell-centred finite-volume meshes, fields and quadrature."""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MIN_CELLS = 4


class BC(str, enum.Enum):
    NEUMANN = "neumann"
    DIRICHLET = "dirichlet"

    @classmethod
    def parse(cls, value: "BC | str") -> "BC":
        if isinstance(value, BC):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown boundary condition {value!r}") from None


@dataclass(frozen=True)
class Grid:
    """Box domain ``prod_k (0, lengths[k])`` split into uniform cells.

    Arrays living on the grid have shape ``cells`` (``'ij'`` ordering, so a
    2D field is indexed ``values[ix, iy]``).
    """

    dim: int
    lengths: tuple[float, ...]
    cells: tuple[int, ...]
    bc: BC = BC.NEUMANN

    def __post_init__(self) -> None:
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if len(self.lengths) != self.dim or len(self.cells) != self.dim:
            raise ValueError("lengths and cells need one entry per axis")
        if any(not (L > 0 and math.isfinite(L)) for L in self.lengths):
            raise ValueError(f"lengths must be positive, got {self.lengths}")
        if any(n < MIN_CELLS for n in self.cells):
            raise ValueError(f"need at least {MIN_CELLS} cells per axis, got {self.cells}")

    # geometry is cached on the instance; fields stay frozen
    @functools.cached_property
    def h(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.cells))

    @functools.cached_property
    def cell_volume(self) -> float:
        return math.prod(self.h)

    @functools.cached_property
    def measure(self) -> float:
        return math.prod(self.lengths)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @functools.cached_property
    def size(self) -> int:
        return math.prod(self.cells)

    def axis_centers(self, axis: int) -> np.ndarray:
        h = self.h[axis]
        return (np.arange(self.cells[axis]) + 0.5) * h

    def centers(self) -> tuple[np.ndarray, ...]:
        """Cell-centre coordinates, one array of shape ``cells`` per axis."""
        axes = [self.axis_centers(k) for k in range(self.dim)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def with_cells(self, cells: Sequence[int]) -> "Grid":
        return Grid(self.dim, self.lengths, tuple(int(c) for c in cells), self.bc)

    # quadrature on raw arrays; trailing axes are the spatial ones
    def integrate(self, values: np.ndarray) -> np.ndarray | float:
        values = np.asarray(values, dtype=float)
        axes = tuple(range(values.ndim - self.dim, values.ndim))
        return values.sum(axis=axes) * self.cell_volume

    def mean(self, values: np.ndarray) -> np.ndarray | float:
        return self.integrate(values) / self.measure


def make_grid(dim: int, lengths: Sequence[float], cells: Sequence[int], bc: BC | str = BC.NEUMANN) -> Grid:
    """Build a :class:`Grid`; raises ``ValueError`` on bad sizes or dimension."""
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    lengths = tuple(float(L) for L in lengths)
    cells = tuple(int(c) for c in cells)
    return Grid(dim, lengths, cells, BC.parse(bc))


@dataclass(frozen=True, eq=False)
class Field:
    """Cell averages of one scalar quantity on ``grid``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float)
        if vals.size != self.grid.size:
            raise ValueError(f"field has {vals.size} values, grid has {self.grid.size} cells")
        vals = vals.reshape(self.grid.shape)
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: Grid, func) -> "Field":
        return cls(grid, func(*grid.centers()))

    @classmethod
    def constant(cls, grid: Grid, c: float) -> "Field":
        return cls(grid, np.full(grid.shape, float(c)))

    def __add__(self, other):
        return Field(self.grid, self.values + _vals(other))

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        return Field(self.grid, self.values - _vals(other))

    def __mul__(self, other):
        return Field(self.grid, self.values * _vals(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return Field(self.grid, -self.values)


def _vals(x):
    return x.values if isinstance(x, Field) else x


@dataclass(frozen=True, eq=False)
class State:
    """Species concentrations at time ``t``; ``u`` has shape ``(m, *grid.cells)``."""

    t: float
    grid: Grid
    u: np.ndarray

    def __post_init__(self) -> None:
        if self.t < 0:
            raise ValueError("time must be nonnegative")
        u = np.array(self.u, dtype=float)
        if u.ndim == self.grid.dim:
            u = u[None]
        if u.shape[1:] != self.grid.shape:
            raise ValueError(f"state shape {u.shape} does not match grid {self.grid.shape}")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @property
    def m(self) -> int:
        return self.u.shape[0]

    @property
    def species(self) -> list[Field]:
        return [Field(self.grid, ui) for ui in self.u]

    @classmethod
    def from_fields(cls, t: float, fields: Sequence[Field]) -> "State":
        grid = fields[0].grid
        if any(f.grid != grid for f in fields):
            raise ValueError("all species must share one grid")
        return cls(t, grid, np.stack([f.values for f in fields]))

    def masses(self) -> np.ndarray:
        return self.grid.integrate(self.u)


def integrate_field(f: Field) -> float:
    return float(f.grid.integrate(f.values))


def mean(f: Field) -> float:
    return float(f.grid.mean(f.values))


def lp_norm(f: Field, p: float = 2.0) -> float:
    return float(lp_norm_values(f.grid, f.values, p))


def lp_norm_values(grid: Grid, values: np.ndarray, p: float = 2.0):
    """Cell-quadrature L^p norm over the trailing spatial axes."""
    if p == math.inf or p == "inf":
        axes = tuple(range(values.ndim - grid.dim, values.ndim))
        return np.abs(values).max(axis=axes)
    if p < 1:
        raise ValueError(f"L^p norm needs p >= 1, got {p}")
    a = np.abs(values)
    if p == 1:
        return grid.integrate(a)
    if p == 2:
        return np.sqrt(grid.integrate(a * a))
    return grid.integrate(a**p) ** (1.0 / p)
