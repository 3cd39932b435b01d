"""Refinement studies on coupled Brownian paths.

Every study returns a :class:`Study` holding the ladder, the per-level
errors and a log-log :class:`~crossdiff.diagnostics.RateFit`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .diagnostics import RateFit, fit_rate, rms_strong_error, strong_error
from .grid import Grid1D
from .model import ModelSpec
from .noise import coarsen, sample_path
from .solver import SolverConfig, simulate_paths

STUDIES = ("wong-zakai", "ito-strat", "time-step", "grid")


@dataclass(frozen=True)
class Study:
    name: str
    parameter: str
    params: tuple[float, ...]
    errors: tuple[float, ...]
    fit: RateFit | None

    @property
    def strictly_decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.errors, self.errors[1:]))

    def to_dict(self) -> dict:
        return {"study": self.name, "parameter": self.parameter, "params": list(self.params),
                "errors": list(self.errors), "strictly_decreasing": self.strictly_decreasing,
                "fit": None if self.fit is None else self.fit.to_dict()}


def _check_ladder(levels: Sequence[int]) -> list[int]:
    levels = [int(k) for k in levels]
    if len(levels) < 3:
        raise ValueError(f"a refinement ladder needs at least 3 levels, got {len(levels)}")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("ladder levels must be strictly increasing")
    return levels


def _fit(params, errors) -> RateFit | None:
    pts = [(p, e) for p, e in zip(params, errors) if e > 0]
    return fit_rate(pts) if len(pts) >= 3 else None


def _snap_times(T: float, level: int) -> tuple[float, ...]:
    return tuple(k * T / 2**level for k in range(2**level + 1))


def wong_zakai_study(model: ModelSpec, grid: Grid1D, initial: np.ndarray, eta_levels: Sequence[int],
                     path_count: int, seed: int, base: SolverConfig, reference_level: int = 12
                     ) -> Study:
    """Entropy scheme at ``tau = eta`` against a fine Heun solution on the same paths.

    The error is the RMS over paths of the sup over the coarsest noise grid
    of the spatial L2 distance.
    """
    levels = _check_ladder(eta_levels)
    if reference_level < levels[-1]:
        raise ValueError("reference level must be at least the finest ladder level")
    T = base.T
    times = _snap_times(T, levels[0])
    paths = [sample_path(seed, T, reference_level, model.n, path_id=p) for p in range(path_count)]
    ref_cfg = replace(base, scheme="heun_stratonovich", tau=T / 2**reference_level, eta=None,
                      snapshot_times=times)
    ref = simulate_paths(model, grid, ref_cfg, initial, paths)
    errors = []
    for lvl in levels:
        cfg = replace(base, scheme="entropy_implicit", tau=T / 2**lvl, eta=None, epsilon=None,
                      snapshot_times=times)
        coarse = [coarsen(p, lvl) for p in paths]
        runs = simulate_paths(model, grid, cfg, initial, coarse)
        if any(r.failed for r in runs):
            raise RuntimeError(f"entropy scheme failed on level {lvl}")
        errors.append(rms_strong_error(runs, ref, grid))
    params = tuple(T / 2**k for k in levels)
    return Study("wong-zakai", "eta", params, tuple(errors), _fit(params, errors))


def ito_strat_study(model: ModelSpec, grid: Grid1D, initial: np.ndarray, levels: Sequence[int],
                    path_count: int, seed: int, base: SolverConfig) -> Study:
    """Euler--Maruyama with the Ito correction versus Heun, coupled, at ``tau = eta``.

    The error is the RMS over paths of the L2 difference at the final time.
    """
    levels = _check_ladder(levels)
    T = base.T
    paths = [sample_path(seed, T, levels[-1], model.n, path_id=p) for p in range(path_count)]
    errors = []
    for lvl in levels:
        coarse = [coarsen(p, lvl) for p in paths]
        common = dict(tau=T / 2**lvl, eta=None, snapshot_times=(T,))
        em = simulate_paths(model, grid, replace(base, scheme="euler_maruyama_ito", **common), initial, coarse)
        he = simulate_paths(model, grid, replace(base, scheme="heun_stratonovich", **common), initial, coarse)
        if any(r.failed for r in em + he):
            raise RuntimeError(f"explicit integrator failed on level {lvl}")
        errors.append(rms_strong_error(em, he, grid))
    params = tuple(T / 2**k for k in levels)
    return Study("ito-strat", "tau", params, tuple(errors), _fit(params, errors))


def time_step_study(model: ModelSpec, grid: Grid1D, initial: np.ndarray, levels: Sequence[int],
                    base: SolverConfig) -> Study:
    """Deterministic self-refinement: each level against the finest one at the final time."""
    levels = _check_ladder(levels)
    T = base.T
    finals = {}
    for lvl in levels + [levels[-1] + 2]:
        cfg = replace(base, tau=T / 2**lvl, eta=None, noise_scale=0.0, snapshot_times=(T,))
        finals[lvl] = simulate_paths(model, grid, cfg, initial, None)[0]
    ref = finals[levels[-1] + 2]
    errors = [strong_error(finals[k], ref, grid) for k in levels]
    params = tuple(T / 2**k for k in levels)
    return Study("time-step", "tau", params, tuple(errors), _fit(params, errors))


def grid_study(model: ModelSpec, profile, levels: Sequence[int], base: SolverConfig,
               length: float = 1.0) -> Study:
    """Deterministic spatial refinement on nested grids ``n_x = 2**k + 1``.

    ``profile(grid)`` builds the initial field.  Each level is compared with
    a grid twice as fine as the finest, restricted to the coarse nodes.
    """
    levels = _check_ladder(levels)
    cfg = replace(base, noise_scale=0.0, snapshot_times=(base.T,))
    finest = levels[-1] + 1
    fine_grid = Grid1D(2**finest + 1, length)
    ref = simulate_paths(model, fine_grid, cfg, profile(fine_grid), None)[0].final
    errors = []
    for k in levels:
        g = Grid1D(2**k + 1, length)
        u = simulate_paths(model, g, cfg, profile(g), None)[0].final
        errors.append(strong_error(u[None], ref[None, :, :: 2 ** (finest - k)], g))
    params = tuple(length / 2**k for k in levels)
    return Study("grid", "dx", params, tuple(errors), _fit(params, errors))
