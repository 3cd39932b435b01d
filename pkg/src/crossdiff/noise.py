"""Brownian paths on dyadic grids and their Wong--Zakai interpolation.

Draws come from numpy's counter-based Philox generator keyed by
``(master seed, path id)``, so path ``k`` of a Monte Carlo ensemble can be
regenerated on its own, in any order, on any worker.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True, eq=False)
class WienerPath:
    """An ``n``-dimensional Brownian path sampled at ``t_k = k * eta``."""

    T: float
    level: int
    values: np.ndarray  # (2**level + 1, n), values[0] == 0
    seed: int = 0
    path_id: int = 0

    @property
    def eta(self) -> float:
        return self.T / 2**self.level

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.values.shape[0]) * self.eta

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)


def path_generator(seed: int, path_id: int = 0) -> np.random.Generator:
    if seed < 0 or path_id < 0:
        raise ValueError("seed and path id must be non-negative")
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) | int(path_id)))


def sample_path(seed: int, T: float, levels: int, n: int, path_id: int = 0) -> WienerPath:
    """Sample a Brownian path with ``2**levels`` steps on ``[0, T]``."""
    if not T > 0:
        raise ValueError(f"horizon must be positive, got {T!r}")
    if int(levels) != levels or levels < 0:
        raise ValueError(f"levels must be a non-negative integer, got {levels!r}")
    m = 2**int(levels)
    rng = path_generator(seed, path_id)
    dW = math.sqrt(T / m) * rng.standard_normal((m, n))
    values = np.zeros((m + 1, n))
    np.cumsum(dW, axis=0, out=values[1:])
    values.setflags(write=False)
    return WienerPath(T=float(T), level=int(levels), values=values, seed=int(seed), path_id=int(path_id))


def coarsen(path: WienerPath, level: int) -> WienerPath:
    """Subsample to a coarser dyadic level; nodal values are shared exactly."""
    if int(level) != level or level < 0 or level > path.level:
        raise ValueError(f"cannot coarsen a level-{path.level} path to level {level!r}")
    if level == path.level:
        return path
    stride = 2 ** (path.level - int(level))
    values = path.values[::stride].copy()
    values.setflags(write=False)
    return WienerPath(T=path.T, level=int(level), values=values, seed=path.seed, path_id=path.path_id)


def _interval(path: WienerPath, t: float) -> int:
    if not 0.0 <= t < path.T:
        raise ValueError(f"t={t!r} outside [0, {path.T})")
    k = int(math.floor(t / path.eta))
    # guard against t/eta rounding just below an integer node
    if (k + 1) * path.eta <= t:
        k += 1
    return min(k, 2**path.level - 1)


def wong_zakai_slope(path: WienerPath, t: float) -> np.ndarray:
    """Derivative of the piecewise-linear interpolant, right-continuous at nodes."""
    k = _interval(path, t)
    return (path.values[k + 1] - path.values[k]) / path.eta


def wong_zakai_value(path: WienerPath, t: float) -> np.ndarray:
    """Piecewise-linear interpolant ``W(t_k) + (t - t_k)/eta (W(t_{k+1}) - W(t_k))``."""
    if t == path.T:
        return path.values[-1].copy()
    k = _interval(path, t)
    return path.values[k] + (t - k * path.eta) / path.eta * (path.values[k + 1] - path.values[k])


def slopes(path: WienerPath) -> np.ndarray:
    """All Wong--Zakai slopes, shape ``(2**level, n)``."""
    return path.increments / path.eta


def write_path_csv(path: WienerPath, filename: str | Path) -> None:
    with open(filename, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + [f"W_{i + 1}" for i in range(path.n)])
        for t, row in zip(path.times, path.values):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])
