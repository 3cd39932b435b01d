"""Uniform 1D node-centred finite-volume grid with no-flux boundaries.

Fields are component-first arrays of shape ``(n, *batch, n_x)``; the spatial
axis is always last.  Boundary nodes own half cells, so the lumped
quadrature weights are ``dx/2, dx, ..., dx, dx/2`` (the trapezoidal rule).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .model import ModelSpec, project_to_simplex

AVERAGING = ("arithmetic", "midpoint")


@dataclass(frozen=True)
class Grid1D:
    n_x: int
    length: float = 1.0

    def __post_init__(self) -> None:
        if int(self.n_x) != self.n_x or self.n_x < 2:
            raise ValueError(f"grid needs at least two nodes, got n_x={self.n_x!r}")
        if not self.length > 0:
            raise ValueError(f"domain length must be positive, got {self.length!r}")

    @property
    def dx(self) -> float:
        return self.length / (self.n_x - 1)

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.n_x) * self.dx

    @property
    def weights(self) -> np.ndarray:
        w = np.full(self.n_x, self.dx)
        w[0] = w[-1] = 0.5 * self.dx
        return w


def face_diffusion(model: ModelSpec, u: np.ndarray, averaging: str = "arithmetic") -> np.ndarray:
    """Diffusion matrices on the ``n_x - 1`` interior faces."""
    if averaging == "arithmetic":
        A = model.diffusion(u)
        return 0.5 * (A[..., :-1] + A[..., 1:])
    if averaging == "midpoint":
        return model.diffusion(0.5 * (u[..., :-1] + u[..., 1:]))
    raise ValueError(f"unknown face averaging {averaging!r}; choose from {AVERAGING}")


def face_flux(model: ModelSpec, u: np.ndarray, grid: Grid1D,
              averaging: str = "arithmetic") -> np.ndarray:
    """``F_{j+1/2} = A_bar (u_{j+1} - u_j) / dx`` on interior faces."""
    Abar = face_diffusion(model, u, averaging)
    return np.einsum("ij...,j...->i...", Abar, np.diff(u, axis=-1)) / grid.dx


def divergence(flux: np.ndarray, grid: Grid1D) -> np.ndarray:
    """Nodal divergence of face fluxes with zero flux through both ends."""
    shape = flux.shape[:-1] + (grid.n_x,)
    out = np.zeros(shape)
    out[..., :-1] += flux
    out[..., 1:] -= flux
    return out / grid.weights


def divergence_form_flux(model: ModelSpec, field: np.ndarray, grid: Grid1D,
                         averaging: str = "arithmetic") -> np.ndarray:
    """Discrete ``div(A(u) grad u)`` with no-flux boundaries.

    Coefficients are evaluated on the simplex projection of ``field``; the
    difference quotients use the field itself.
    """
    field = np.asarray(field, dtype=float)
    if field.shape[0] != model.n or field.shape[-1] != grid.n_x:
        raise ValueError(f"field shape {field.shape} does not match n={model.n}, n_x={grid.n_x}")
    coeff_u = project_to_simplex(field)
    Abar = face_diffusion(model, coeff_u, averaging)
    flux = np.einsum("ij...,j...->i...", Abar, np.diff(field, axis=-1)) / grid.dx
    return divergence(flux, grid)


def integrate(values: np.ndarray, grid: Grid1D) -> np.ndarray:
    """Trapezoidal integral over the last axis."""
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != grid.n_x:
        raise ValueError(f"expected {grid.n_x} nodal values, got {values.shape[-1]}")
    return np.sum(values * grid.weights, axis=-1)


def l2_norm(field: np.ndarray, grid: Grid1D) -> np.ndarray:
    """Discrete L2 norm summed over species (axis 0) and space (last axis)."""
    field = np.asarray(field, dtype=float)
    return np.sqrt(np.sum(integrate(field * field, grid), axis=0))


def dissipation_seminorm(field: np.ndarray, grid: Grid1D, m: float) -> np.ndarray:
    """``sum_i sum_faces (Delta u_i^{1-m})^2 / dx``; negative values count as zero."""
    if not 0.0 <= m < 1.0:
        raise ValueError(f"m must lie in [0, 1), got {m!r}")
    field = np.maximum(np.asarray(field, dtype=float), 0.0)
    p = field if m == 0.0 else field ** (1.0 - m)
    d = np.diff(p, axis=-1)
    return np.sum(np.sum(d * d, axis=-1), axis=0) / grid.dx


def write_snapshots_csv(path: str | Path, grid: Grid1D, times: Iterable[float],
                        snapshots: np.ndarray, header_comment: str | None = None) -> None:
    """Write ``(t, x, u_1..u_n)`` rows, one per node and snapshot."""
    snapshots = np.asarray(snapshots, dtype=float)
    n = snapshots.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "x"] + [f"u_{i + 1}" for i in range(n)])
        for t, snap in zip(times, snapshots):
            for j, x in enumerate(grid.x):
                writer.writerow([repr(float(t)), repr(float(x))] + [repr(float(v)) for v in snap[:, j]])


def read_field_csv(path: str | Path, grid: Grid1D, n: int) -> np.ndarray:
    """Read an initial field from a CSV with columns ``x, u_1..u_n`` (``t`` optional)."""
    with open(path, encoding="utf-8") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    header, body = rows[0], rows[1:]
    cols = [header.index(f"u_{i + 1}") for i in range(n)]
    data = np.array([[float(r[c]) for c in cols] for r in body if r])
    if data.shape[0] != grid.n_x:
        raise ValueError(f"{path}: expected {grid.n_x} rows, found {data.shape[0]}")
    return data.T.copy()
