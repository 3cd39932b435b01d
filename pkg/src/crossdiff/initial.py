"""Named initial profiles on a grid, all in the closed Gibbs simplex."""

from __future__ import annotations

import numpy as np

from .grid import Grid1D

PROFILES = ("barycenter", "step", "smooth-bump")


def barycenter(n: int, grid: Grid1D) -> np.ndarray:
    """Every fraction, solvent included, equal to ``1/(n+1)``."""
    return np.full((n, grid.n_x), 1.0 / (n + 1))


def step(n: int, grid: Grid1D, high: float = 0.9, low: float = 0.05) -> np.ndarray:
    """Species 1 dominates the left half, species 2 (or the solvent if ``n == 1``) the right."""
    if not 0 <= low <= high <= 1:
        raise ValueError("step levels need 0 <= low <= high <= 1")
    low = min(low, (1.0 - high) / max(n - 1, 1))
    left = np.full(n, low)
    left[0] = high
    right = np.full(n, low)
    if n >= 2:
        right[1] = high
    else:
        right[0] = low
    out = np.where(grid.x[None, :] < 0.5 * grid.length, left[:, None], right[:, None])
    return out.astype(float)


def smooth_bump(n: int, grid: Grid1D, amplitude: float = 0.9) -> np.ndarray:
    """``(1 + a/n cos((i+1) pi x / L)) / (n+1)``; compatible with no-flux boundaries."""
    if not 0 <= amplitude < 1:
        raise ValueError("bump amplitude must lie in [0, 1)")
    k = np.arange(1, n + 1)[:, None]
    return (1.0 + amplitude / n * np.cos(k * np.pi * grid.x[None, :] / grid.length)) / (n + 1)


def profile(name: str, n: int, grid: Grid1D) -> np.ndarray:
    if name == "barycenter":
        return barycenter(n, grid)
    if name == "step":
        return step(n, grid)
    if name == "smooth-bump":
        return smooth_bump(n, grid)
    raise ValueError(f"unknown initial profile {name!r}; choose from {PROFILES}")
