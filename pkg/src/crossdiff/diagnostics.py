"""Monte Carlo aggregation, entropy-inequality fitting and rate fits."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grid import Grid1D, l2_norm


def _jsonable(x):
    """Convert numpy containers to plain JSON values; non-finite floats become ``None``."""
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def write_json(path: str | Path, payload: dict) -> None:
    """Write ``payload`` with insertion-ordered keys and a trailing newline."""
    text = json.dumps(_jsonable(payload), indent=2, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


@dataclass
class RunReport:
    """Path-averaged diagnostics of a Monte Carlo run.

    Series are indexed by ``times``; ``mass`` has shape ``(n, len(times))``.
    Standard errors are ``std / sqrt(paths)`` with the unbiased variance.
    """

    times: np.ndarray
    entropy_mean: np.ndarray
    entropy_var: np.ndarray
    entropy_stderr: np.ndarray
    dissipation_mean: np.ndarray
    dissipation_var: np.ndarray
    dissipation_stderr: np.ndarray
    mass: np.ndarray
    mass_stderr: np.ndarray
    violations: np.ndarray
    newton: dict
    path_count: int
    failed_paths: int = 0
    seed: int | None = None
    C1_used: float | None = None
    C2_fitted: float | None = None
    entropy_paths: np.ndarray | None = field(default=None, repr=False)
    dissipation_paths: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_trajectories(cls, trajectories: Sequence, C1: float | None = None,
                          seed: int | None = None) -> "RunReport":
        ok = [t for t in trajectories if not t.failed]
        if not ok:
            raise ValueError("no successful trajectories to aggregate")
        E = np.stack([t.entropy for t in ok])
        D = np.stack([t.dissipation for t in ok])
        M = np.stack([t.mass for t in ok])
        V = np.stack([t.violation for t in ok])
        P = len(ok)

        def var(x):
            return np.var(x, axis=0, ddof=1) if P > 1 else np.zeros(x.shape[1:])

        def se(x):
            return np.sqrt(var(x) / P)

        iters = np.concatenate([t.newton_iters for t in ok])
        newton = {
            "mean_iters": float(iters.mean()) if iters.size else 0.0,
            "max_iters": int(iters.max()) if iters.size else 0,
            "max_residual": float(max((t.residual.max() for t in ok), default=0.0)) if iters.size else 0.0,
            "max_halvings": int(max((t.halvings.max() for t in ok), default=0)) if iters.size else 0,
        }
        report = cls(
            times=ok[0].times.copy(), entropy_mean=E.mean(axis=0), entropy_var=var(E),
            entropy_stderr=se(E), dissipation_mean=D.mean(axis=0), dissipation_var=var(D),
            dissipation_stderr=se(D),
            mass=M.mean(axis=0), mass_stderr=se(M), violations=V.max(axis=0),
            newton=newton, path_count=len(trajectories), failed_paths=len(trajectories) - P,
            seed=seed, C1_used=C1, entropy_paths=E, dissipation_paths=D,
        )
        if C1 is not None:
            report.C2_fitted, _ = entropy_inequality_check(report, float(E[:, 0].mean()), C1)
        return report

    @property
    def h0(self) -> float:
        return float(self.entropy_mean[0])

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "path_count": self.path_count,
            "failed_paths": self.failed_paths,
            "C1_used": self.C1_used,
            "C2_fitted": self.C2_fitted,
            "newton": self.newton,
            "max_violation": float(np.max(self.violations)),
            "times": self.times,
            "entropy_mean": self.entropy_mean,
            "entropy_var": self.entropy_var,
            "entropy_stderr": self.entropy_stderr,
            "dissipation_mean": self.dissipation_mean,
            "dissipation_var": self.dissipation_var,
            "dissipation_stderr": self.dissipation_stderr,
            "mass": self.mass,
            "mass_stderr": self.mass_stderr,
            "violations": self.violations,
        }

    def write_json(self, path: str | Path, meta: dict | None = None) -> None:
        payload = dict(meta or {})
        payload.update(self.to_dict())
        write_json(path, payload)

    def write_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        n = self.mass.shape[0]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "entropy_mean", "entropy_stderr", "dissipation_mean", "dissipation_stderr"]
                       + [f"mass_{i + 1}" for i in range(n)] + ["violation"])
            for k, t in enumerate(self.times):
                row = [t, self.entropy_mean[k], self.entropy_stderr[k], self.dissipation_mean[k],
                       self.dissipation_stderr[k], *self.mass[:, k], self.violations[k]]
                w.writerow([repr(float(v)) for v in row])


def coercivity_to_C1(c_h: float, m: float) -> float:
    """Dissipation weight ``c_h / (1 - m)^2`` in the entropy inequality."""
    if not c_h > 0:
        raise ValueError(f"coercivity constant must be positive, got {c_h!r}")
    return c_h / (1.0 - m) ** 2


def entropy_inequality_check(report: RunReport, h0: float, C1: float | None = None):
    """Smallest ``C >= 0`` with ``E h(t) + C1 * D(t) <= h0 + C * t`` at all output times.

    Returns ``(C, passed)``; ``passed`` means ``C`` is finite.  Stability of
    ``C`` across seeds and grids is judged by :func:`constants_agree`.
    """
    C1 = report.C1_used if C1 is None else C1
    if C1 is None:
        raise ValueError("C1 is required; derive it from an assumption certificate")
    t = np.asarray(report.times)
    lhs = report.entropy_mean + C1 * report.dissipation_mean - h0
    pos = t > 0
    if not np.any(pos):
        return 0.0, True
    C = max(0.0, float(np.max(lhs[pos] / t[pos])))
    return C, math.isfinite(C)


def constants_agree(values: Iterable[float], rel: float = 0.2) -> bool:
    """True when every value is positive, finite and within ``rel`` of their mean."""
    v = np.asarray(list(values), dtype=float)
    if v.size == 0 or not np.all(np.isfinite(v)) or not np.all(v > 0):
        return False
    mid = v.mean()
    return bool(np.all(np.abs(v - mid) <= rel * mid))


def _fields(x) -> np.ndarray:
    return np.asarray(x.snapshots if hasattr(x, "snapshots") else x, dtype=float)


def strong_error(traj_a, traj_b, grid: Grid1D) -> float:
    """``max_t || a(t) - b(t) ||_{L^2}`` over shared output times.

    Accepts trajectories or snapshot arrays of shape ``(S, n, n_x)``.
    """
    a, b = _fields(traj_a), _fields(traj_b)
    if a.shape != b.shape:
        raise ValueError(f"mismatched trajectory shapes {a.shape} and {b.shape}")
    if a.shape[-1] != grid.n_x:
        raise ValueError("trajectories do not live on this grid")
    diff = np.moveaxis(a - b, -2, 0)  # (n, S, n_x)
    return float(np.max(l2_norm(diff, grid)))


def rms_strong_error(a_list: Sequence, b_list: Sequence, grid: Grid1D) -> float:
    """``sqrt(E max_t ||a - b||^2)`` over coupled pairs of paths."""
    if len(a_list) != len(b_list) or not a_list:
        raise ValueError("need equally many coupled trajectories")
    errs = np.array([strong_error(a, b, grid) for a, b in zip(a_list, b_list)])
    return float(np.sqrt(np.mean(errs**2)))


@dataclass(frozen=True)
class RateFit:
    params: tuple[float, ...]
    errors: tuple[float, ...]
    slope: float
    intercept: float
    residual: float

    def to_dict(self) -> dict:
        return {"params": list(self.params), "errors": list(self.errors), "slope": self.slope,
                "intercept": self.intercept, "residual": self.residual}


def fit_rate(points: Sequence[tuple[float, float]]) -> RateFit:
    """Least-squares line through ``(log param, log error)``; ``residual`` is the RMS misfit."""
    if len(points) < 3:
        raise ValueError(f"a rate fit needs at least 3 points, got {len(points)}")
    p = np.array([float(a) for a, _ in points])
    e = np.array([float(b) for _, b in points])
    if not (np.all(p > 0) and np.all(e > 0) and np.all(np.isfinite(p)) and np.all(np.isfinite(e))):
        raise ValueError("rate fitting needs positive finite parameters and errors")
    x, y = np.log(p), np.log(e)
    slope, intercept = np.polyfit(x, y, 1)
    res = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return RateFit(tuple(p.tolist()), tuple(e.tolist()), float(slope), float(intercept), res)
