"""TOML run configuration with strict validation.

One table per concern: ``model``, ``grid``, ``solver``, ``noise``,
``monte_carlo``, ``initial``, ``output``, ``assumptions``, ``converge`` and
``sweep``.  Unknown tables or keys are rejected, and every error names the
offending ``table.key``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .grid import AVERAGING, Grid1D, read_field_csv
from .initial import PROFILES, profile
from .model import BUILTIN_MODELS, ModelSpec, builtin_model, negate_diffusion
from .solver import FORCING, SCHEMES, NewtonSettings, SolverConfig
from .studies import STUDIES


class ConfigError(ValueError):
    """Invalid configuration; the message names the field."""


_MODEL_PARAMS = {"maxwell-stefan-3": {"d0", "d1", "d2"}, "biofilm-n": {"n"}}

_SCHEMA: dict[str, set[str]] = {
    "model": {"name", "negate_diffusion"} | set().union(*_MODEL_PARAMS.values()),
    "grid": {"n_x", "length"},
    "solver": {"scheme", "tau", "T", "epsilon", "forcing", "averaging", "delta0",
               "newton_max_iter", "newton_abs_tol", "newton_damping", "newton_max_halvings"},
    "noise": {"eta", "levels", "amplitude"},
    "monte_carlo": {"path_count", "master_seed", "threads", "chunk_size", "max_failure_fraction"},
    "initial": {"profile", "file"},
    "output": {"directory", "snapshot_times", "formats", "trajectory_files"},
    "assumptions": {"sample_count", "seed", "deltas", "kappa"},
    "converge": {"study", "levels", "reference_level", "path_count"},
    "sweep": {"parameter", "values"},
}


def _get(table: dict, section: str, key: str, kind, default=None, *, required=False):
    if key not in table:
        if required:
            raise ConfigError(f"{section}.{key}: required")
        return default
    value = table[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"{section}.{key}: expected int, got bool")
    if not isinstance(value, kind):
        name = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
        raise ConfigError(f"{section}.{key}: expected {name}, got {type(value).__name__} {value!r}")
    if isinstance(value, float) and not math.isfinite(value):
        raise ConfigError(f"{section}.{key}: must be finite")
    return value


def _positive(section: str, key: str, value, allow_zero: bool = False):
    if value is None:
        return value
    if value < 0 or (value == 0 and not allow_zero):
        raise ConfigError(f"{section}.{key}: must be {'non-negative' if allow_zero else 'positive'}, got {value!r}")
    return value


def _float_list(table, section, key, default=None):
    v = table.get(key, default)
    if v is None:
        return None
    if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise ConfigError(f"{section}.{key}: expected a list of numbers")
    return tuple(float(x) for x in v)


@dataclass(frozen=True)
class AssumptionSettings:
    sample_count: int = 10_000
    seed: int = 0
    deltas: tuple[float, ...] = (1e-1, 1e-2, 1e-3)
    kappa: float = 1e-2


@dataclass(frozen=True)
class ConvergeSettings:
    study: str
    levels: tuple[int, ...]
    reference_level: int
    path_count: int


@dataclass(frozen=True)
class SweepSettings:
    parameter: str
    values: tuple[Any, ...]


@dataclass(frozen=True)
class RunConfig:
    raw: dict
    model_name: str
    model_params: dict
    negate: bool
    grid: Grid1D
    solver: SolverConfig
    path_count: int
    master_seed: int
    threads: int
    chunk_size: int
    max_failure_fraction: float
    initial_profile: str
    initial_file: Path | None
    output_dir: Path
    formats: tuple[str, ...]
    trajectory_files: int
    assumptions: AssumptionSettings
    converge: ConvergeSettings | None
    sweep: SweepSettings | None
    base_dir: Path

    @property
    def sha256(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def build_model(self) -> ModelSpec:
        model = builtin_model(self.model_name, **self.model_params)
        return negate_diffusion(model) if self.negate else model

    def initial_field(self, model: ModelSpec, grid: Grid1D | None = None) -> np.ndarray:
        grid = grid or self.grid
        if self.initial_profile == "csv":
            return read_field_csv(self.initial_file, grid, model.n)
        return profile(self.initial_profile, model.n, grid)

    def with_override(self, dotted: str, value) -> "RunConfig":
        raw = copy.deepcopy(self.raw)
        section, _, key = dotted.partition(".")
        raw.setdefault(section, {})[key] = value
        raw.pop("sweep", None)
        return from_dict(raw, self.base_dir)


def from_dict(raw: dict, base_dir: Path | str = ".") -> RunConfig:
    base_dir = Path(base_dir)
    for section, table in raw.items():
        if section not in _SCHEMA:
            raise ConfigError(f"{section}: unknown table; expected one of {sorted(_SCHEMA)}")
        if not isinstance(table, dict):
            raise ConfigError(f"{section}: must be a table")
        for key in table:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{section}.{key}: unknown key")

    m = raw.get("model", {})
    name = _get(m, "model", "name", str, required=True)
    if name not in BUILTIN_MODELS:
        raise ConfigError(f"model.name: unknown model {name!r}; choose from {sorted(BUILTIN_MODELS)}")
    params = {}
    for key in m:
        if key in ("name", "negate_diffusion"):
            continue
        if key not in _MODEL_PARAMS[name]:
            raise ConfigError(f"model.{key}: not a parameter of {name!r}")
        kind = int if key == "n" else float
        params[key] = _positive("model", key, _get(m, "model", key, kind))
    negate = _get(m, "model", "negate_diffusion", bool, False)

    g = raw.get("grid", {})
    n_x = _get(g, "grid", "n_x", int, 64)
    if n_x < 2:
        raise ConfigError(f"grid.n_x: need at least 2 nodes, got {n_x}")
    length = _positive("grid", "length", _get(g, "grid", "length", float, 1.0))

    s = raw.get("solver", {})
    scheme = _get(s, "solver", "scheme", str, "entropy_implicit")
    if scheme not in SCHEMES:
        raise ConfigError(f"solver.scheme: {scheme!r} not in {SCHEMES}")
    forcing = _get(s, "solver", "forcing", str, "trapezoidal")
    if forcing not in FORCING:
        raise ConfigError(f"solver.forcing: {forcing!r} not in {FORCING}")
    averaging = _get(s, "solver", "averaging", str, "arithmetic")
    if averaging not in AVERAGING:
        raise ConfigError(f"solver.averaging: {averaging!r} not in {AVERAGING}")
    tau = _positive("solver", "tau", _get(s, "solver", "tau", float, 2.0**-8))
    T = _positive("solver", "T", _get(s, "solver", "T", float, 1.0), allow_zero=True)
    eps = _positive("solver", "epsilon", _get(s, "solver", "epsilon", float), allow_zero=True)
    delta0 = _positive("solver", "delta0", _get(s, "solver", "delta0", float, 1e-8))
    try:
        newton = NewtonSettings(
            max_iter=_get(s, "solver", "newton_max_iter", int, 25),
            abs_tol=_get(s, "solver", "newton_abs_tol", float, 1e-10),
            damping=_get(s, "solver", "newton_damping", float, 1.0),
            max_halvings=_get(s, "solver", "newton_max_halvings", int, 6),
        )
    except ValueError as exc:
        raise ConfigError(f"solver.newton_*: {exc}") from None

    nz = raw.get("noise", {})
    eta = _positive("noise", "eta", _get(nz, "noise", "eta", float))
    levels = _get(nz, "noise", "levels", int)
    if levels is not None:
        if eta is not None:
            raise ConfigError("noise.levels: give either noise.eta or noise.levels, not both")
        if levels < 0:
            raise ConfigError(f"noise.levels: must be non-negative, got {levels}")
        eta = T / 2**levels if T > 0 else None
    amplitude = _get(nz, "noise", "amplitude", float, 1.0)

    o = raw.get("output", {})
    snaps = _float_list(o, "output", "snapshot_times")
    if snaps is not None:
        for t in snaps:
            if t < 0 or t > T * (1 + 1e-12):
                raise ConfigError(f"output.snapshot_times: {t!r} outside [0, T={T}]")
    if T > 0:
        if tau > T:
            raise ConfigError(f"solver.tau: {tau} exceeds solver.T = {T}")
        if eta is not None and tau > eta * (1 + 1e-12):
            raise ConfigError(f"solver.tau: tau = {tau} must not exceed noise.eta = {eta}")
    try:
        solver = SolverConfig(scheme=scheme, tau=tau, T=T, eta=eta, epsilon=eps, newton=newton,
                              noise_scale=amplitude, forcing=forcing, averaging=averaging,
                              snapshot_times=snaps, delta0=delta0)
    except ValueError as exc:
        raise ConfigError(f"solver/noise: {exc}") from None
    directory = Path(_get(o, "output", "directory", str, "out"))
    formats = o.get("formats", ["csv", "json"])
    if not isinstance(formats, list) or not set(formats) <= {"csv", "json"}:
        raise ConfigError("output.formats: expected a list drawn from ['csv', 'json']")
    traj_files = _positive("output", "trajectory_files",
                           _get(o, "output", "trajectory_files", int, 1), allow_zero=True)

    mc = raw.get("monte_carlo", {})
    path_count = _positive("monte_carlo", "path_count", _get(mc, "monte_carlo", "path_count", int, 1))
    seed = _positive("monte_carlo", "master_seed", _get(mc, "monte_carlo", "master_seed", int, 0), True)
    if seed >= 2**64:
        raise ConfigError("monte_carlo.master_seed: must fit in 64 bits")
    threads = _positive("monte_carlo", "threads", _get(mc, "monte_carlo", "threads", int, 1))
    chunk = _positive("monte_carlo", "chunk_size", _get(mc, "monte_carlo", "chunk_size", int, 25))
    mff = _get(mc, "monte_carlo", "max_failure_fraction", float, 0.1)
    if not 0 <= mff <= 1:
        raise ConfigError("monte_carlo.max_failure_fraction: must lie in [0, 1]")

    ini = raw.get("initial", {})
    prof = _get(ini, "initial", "profile", str, "barycenter")
    if prof not in PROFILES + ("csv",):
        raise ConfigError(f"initial.profile: {prof!r} not in {PROFILES + ('csv',)}")
    file = _get(ini, "initial", "file", str)
    if prof == "csv":
        if file is None:
            raise ConfigError("initial.file: required when initial.profile = 'csv'")
        file = (base_dir / file).resolve()
        if not file.exists():
            raise ConfigError(f"initial.file: {file} does not exist")
    elif file is not None:
        raise ConfigError("initial.file: only allowed with initial.profile = 'csv'")

    a = raw.get("assumptions", {})
    deltas = _float_list(a, "assumptions", "deltas", [1e-1, 1e-2, 1e-3])
    if any(d <= 0 for d in deltas) or any(b >= c for c, b in zip(deltas, deltas[1:])):
        raise ConfigError("assumptions.deltas: must be positive and strictly decreasing")
    asm = AssumptionSettings(
        sample_count=_positive("assumptions", "sample_count",
                               _get(a, "assumptions", "sample_count", int, 10_000)),
        seed=_positive("assumptions", "seed", _get(a, "assumptions", "seed", int, 0), True),
        deltas=deltas,
        kappa=_positive("assumptions", "kappa", _get(a, "assumptions", "kappa", float, 1e-2)),
    )
    if asm.sample_count < 2:
        raise ConfigError("assumptions.sample_count: need at least 2 samples")

    conv = None
    if "converge" in raw:
        c = raw["converge"]
        study = _get(c, "converge", "study", str, "wong-zakai")
        if study not in STUDIES:
            raise ConfigError(f"converge.study: {study!r} not in {STUDIES}")
        lv = c.get("levels")
        if not isinstance(lv, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in lv):
            raise ConfigError("converge.levels: expected a list of integers")
        if len(lv) < 3:
            raise ConfigError(f"converge.levels: a ladder needs at least 3 levels, got {len(lv)}")
        if any(b <= x for x, b in zip(lv, lv[1:])) or min(lv) < 0:
            raise ConfigError("converge.levels: must be non-negative and strictly increasing")
        conv = ConvergeSettings(
            study=study, levels=tuple(lv),
            reference_level=_get(c, "converge", "reference_level", int, max(12, lv[-1])),
            path_count=_positive("converge", "path_count", _get(c, "converge", "path_count", int, 50)),
        )
        if conv.reference_level < lv[-1]:
            raise ConfigError("converge.reference_level: must be at least the finest level")

    sweep = None
    if "sweep" in raw:
        sw = raw["sweep"]
        param = _get(sw, "sweep", "parameter", str, required=True)
        section, _, key = param.partition(".")
        if section not in _SCHEMA or key not in _SCHEMA[section] or section == "sweep":
            raise ConfigError(f"sweep.parameter: {param!r} is not a configurable field")
        values = sw.get("values")
        if not isinstance(values, list) or not values:
            raise ConfigError("sweep.values: expected a non-empty list")
        sweep = SweepSettings(param, tuple(values))

    return RunConfig(
        raw=copy.deepcopy(raw), model_name=name, model_params=params, negate=negate,
        grid=Grid1D(n_x, length), solver=solver, path_count=path_count, master_seed=seed,
        threads=threads, chunk_size=chunk, max_failure_fraction=mff, initial_profile=prof,
        initial_file=file if prof == "csv" else None, output_dir=directory, formats=tuple(formats),
        trajectory_files=traj_files, assumptions=asm, converge=conv, sweep=sweep, base_dir=base_dir,
    )


def load(path: str | Path) -> RunConfig:
    """Parse and validate a TOML file; syntax errors report their line."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(raw, path.parent)
