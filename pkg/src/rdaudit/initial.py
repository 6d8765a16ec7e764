"""Initial-data generators evaluated at cell centres.

Every generator returns an array of shape ``(m, *grid.cells)`` with
nonnegative entries. Random data always takes an explicit seed.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .grid import Grid

KINDS = ("constant", "cosine-mix", "random-uniform", "from-file", "bump")


def _per_species(value, m: int, name: str) -> list:
    if np.isscalar(value):
        return [value] * m
    value = list(value)
    if len(value) != m:
        raise ValueError(f"{name} needs {m} entries, got {len(value)}")
    return value


def constant(grid: Grid, values: Sequence[float]) -> np.ndarray:
    vals = np.asarray(values, dtype=float).reshape(-1, *([1] * grid.dim))
    return np.broadcast_to(vals, (vals.shape[0], *grid.shape)).copy()


def cosine_mix(grid: Grid, mean: Sequence[float], amplitude: Sequence[float],
               mode: Sequence[int] | int = 1) -> np.ndarray:
    """``mean_i + amplitude_i * prod_k cos(mode_i pi x_k / L_k)`` per species.

    Needs ``|amplitude_i| <= mean_i`` so the data stay nonnegative.
    """
    m = len(mean)
    amplitude = _per_species(amplitude, m, "amplitude")
    mode = _per_species(mode, m, "mode")
    xs = grid.centers()
    out = np.empty((m, *grid.shape))
    for i in range(m):
        if abs(amplitude[i]) > mean[i]:
            raise ValueError(f"species {i}: |amplitude| must not exceed mean")
        wave = np.ones(grid.shape)
        for x, L in zip(xs, grid.lengths):
            wave = wave * np.cos(mode[i] * math.pi * x / L)
        out[i] = mean[i] + amplitude[i] * wave
    return out


def random_uniform(grid: Grid, m: int, seed: int, max_value: Sequence[float] | float = 1.0) -> np.ndarray:
    if seed is None:
        raise ValueError("random initial data needs an explicit seed")
    top = np.asarray(_per_species(max_value, m, "max"), dtype=float)
    rng = np.random.default_rng(int(seed))
    return rng.uniform(0.0, 1.0, (m, *grid.shape)) * top.reshape(-1, *([1] * grid.dim))


def bump(grid: Grid, center: Sequence[float] | float = 0.5, width: float = 0.25,
         mass: Sequence[float] | float = 1.0, m: int = 1) -> np.ndarray:
    """Compactly supported ``cos^2`` bump, scaled so each species has the given integral.

    ``center`` and ``width`` are fractions of the domain side.
    """
    center = _per_species(center, grid.dim, "center") if not np.isscalar(center) else [center] * grid.dim
    masses = _per_species(mass, m, "mass")
    shape = np.ones(grid.shape)
    for x, L, c in zip(grid.centers(), grid.lengths, center):
        s = (x / L - c) / width
        shape = shape * np.where(np.abs(s) < 0.5, np.cos(math.pi * s) ** 2, 0.0)
    total = float(grid.integrate(shape))
    if total <= 0:
        raise ValueError("bump misses every cell centre; widen it")
    return np.stack([shape * (mk / total) for mk in masses])


def from_file(grid: Grid, path: str | Path, m: int) -> np.ndarray:
    """Load ``(m, *cells)`` from ``.npy`` or from key ``u`` of an ``.npz``."""
    path = Path(path)
    data = np.load(path)
    if isinstance(data, np.lib.npyio.NpzFile):
        if "u" not in data:
            raise ValueError(f"{path} has no array 'u'")
        arr = np.asarray(data["u"], dtype=float)
    else:
        arr = np.asarray(data, dtype=float)
    if arr.ndim == 1 + grid.dim and arr.shape[0] != m and m == 1:
        arr = arr[None]
    if arr.shape != (m, *grid.shape):
        raise ValueError(f"{path}: expected shape {(m, *grid.shape)}, got {arr.shape}")
    return arr


def generate(grid: Grid, m: int, kind: str, **params) -> np.ndarray:
    """Dispatch on ``kind``; the result is checked finite and nonnegative."""
    if kind == "constant":
        arr = constant(grid, _per_species(params.get("values", 1.0), m, "values"))
    elif kind == "cosine-mix":
        arr = cosine_mix(grid, _per_species(params.get("mean", 1.0), m, "mean"),
                         params.get("amplitude", 0.5), params.get("mode", 1))
    elif kind == "random-uniform":
        if "seed" not in params:
            raise ValueError("random-uniform needs a seed")
        arr = random_uniform(grid, m, params["seed"], params.get("max", 1.0))
    elif kind == "bump":
        arr = bump(grid, params.get("center", 0.5), params.get("width", 0.25), params.get("mass", 1.0), m)
    elif kind == "from-file":
        if "path" not in params:
            raise ValueError("from-file needs a path")
        arr = from_file(grid, params["path"], m)
    else:
        raise ValueError(f"unknown init kind {kind!r}; known: {', '.join(KINDS)}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("initial data must be finite and nonnegative")
    return arr
