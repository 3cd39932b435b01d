"""Time integrators for the stochastic cross-diffusion system.

Three schemes share one batched engine that advances ``P`` independent
paths at once (state layout ``(n, P, n_x)``):

``entropy_implicit``
    Implicit Euler in the entropy variables ``w = h'(u)`` driven by the
    Wong--Zakai slope of the noise.  Concentrations are recovered through
    ``u = (h')^{-1}(w)``, so every accepted state is strictly inside the
    simplex.  Each step is a damped Newton solve; the Jacobian is assembled
    from finite differences of the residual with a three-colour node
    grouping, and the block-tridiagonal system is solved by block Thomas.
``euler_maruyama_ito``
    Explicit Euler--Maruyama for the Ito form (drift plus half the Ito
    correction).  States are not projected; violations are recorded.
``heun_stratonovich``
    Stochastic Heun predictor-corrector, consistent with Stratonovich
    calculus; used as the reference integrator.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .grid import (AVERAGING, Grid1D, dissipation_seminorm, divergence, face_diffusion, face_flux,
                   integrate)
from .model import ModelSpec, project_to_simplex, pull_inside, simplex_violation
from .noise import WienerPath, coarsen, sample_path

SCHEMES = ("entropy_implicit", "euler_maruyama_ito", "heun_stratonovich")
FORCING = ("explicit", "implicit", "trapezoidal")


class StepFailure(RuntimeError):
    """A time step could not be completed; ``partial`` holds what was computed."""

    def __init__(self, message: str, partial: "Trajectory | None" = None):
        super().__init__(message)
        self.partial = partial


class MonteCarloAborted(RuntimeError):
    pass


def dyadic_level(ratio: float, what: str) -> int:
    """Return ``k`` with ``ratio == 2**k`` (to rounding), else raise."""
    if not ratio >= 1.0 - 1e-12:
        raise ValueError(f"{what} must be at least 1, got {ratio!r}")
    k = int(round(math.log2(ratio)))
    if abs(2.0**k - ratio) > 1e-9 * ratio:
        raise ValueError(f"{what} must be a power of two, got {ratio!r}")
    return k


@dataclass(frozen=True)
class NewtonSettings:
    max_iter: int = 25
    abs_tol: float = 1e-10
    damping: float = 1.0
    max_halvings: int = 6

    def __post_init__(self) -> None:
        if self.max_iter < 1:
            raise ValueError("newton max_iter must be at least 1")
        if not self.abs_tol > 0:
            raise ValueError("newton abs_tol must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("newton damping must lie in (0, 1]")
        if self.max_halvings < 0:
            raise ValueError("newton max_halvings must be non-negative")


@dataclass(frozen=True)
class SolverConfig:
    """Time-integration settings.

    ``eta`` (noise step) and ``epsilon`` (entropy-variable regularization)
    default to ``tau``.  ``T / tau`` and ``T / eta`` must be powers of two
    with ``tau <= eta``.  ``forcing`` selects where the noise coefficient of
    the entropy scheme is evaluated: at the old state, at the new state, or
    the average of both (trapezoidal, the default).
    """

    scheme: str = "entropy_implicit"
    tau: float = 2.0**-8
    T: float = 1.0
    eta: float | None = None
    epsilon: float | None = None
    newton: NewtonSettings = field(default_factory=NewtonSettings)
    noise_scale: float = 1.0
    forcing: str = "trapezoidal"
    averaging: str = "arithmetic"
    snapshot_times: tuple[float, ...] | None = None
    delta0: float = 1e-8

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.forcing not in FORCING:
            raise ValueError(f"unknown forcing {self.forcing!r}; choose from {FORCING}")
        if self.averaging not in AVERAGING:
            raise ValueError(f"unknown averaging {self.averaging!r}; choose from {AVERAGING}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau!r}")
        if not self.T >= 0:
            raise ValueError(f"T must be non-negative, got {self.T!r}")
        if self.epsilon is not None and self.epsilon < 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon!r}")
        if not 0 < self.delta0 < 1:
            raise ValueError("delta0 must lie in (0, 1)")
        if self.T > 0:
            dyadic_level(self.T / self.tau, "T / tau")
            dyadic_level(self.T / self.eta_eff, "T / eta")
            dyadic_level(self.eta_eff / self.tau, "eta / tau")
        for t in self.snapshot_times or ():
            if t < 0 or t > self.T * (1 + 1e-12):
                raise ValueError(f"snapshot time {t!r} outside [0, {self.T}]")
            k = t / self.tau
            if abs(k - round(k)) > 1e-9:
                raise ValueError(f"snapshot time {t!r} is not on the tau grid")

    @property
    def eta_eff(self) -> float:
        return self.tau if self.eta is None else self.eta

    @property
    def epsilon_eff(self) -> float:
        return self.tau if self.epsilon is None else self.epsilon

    @property
    def n_steps(self) -> int:
        return 0 if self.T == 0 else int(round(self.T / self.tau))

    @property
    def tau_level(self) -> int:
        return dyadic_level(self.T / self.tau, "T / tau")

    @property
    def eta_level(self) -> int:
        return dyadic_level(self.T / self.eta_eff, "T / eta")

    @property
    def noise_level(self) -> int:
        """Dyadic level of the Brownian path the scheme consumes."""
        return self.eta_level if self.scheme == "entropy_implicit" else self.tau_level

    def snapshot_steps(self) -> np.ndarray:
        times = self.snapshot_times if self.snapshot_times else (0.0, self.T)
        return np.unique(np.rint(np.asarray(times) / self.tau).astype(int))


@dataclass(frozen=True)
class StepReport:
    newton_iters: int
    final_residual: float
    tau_halvings: int
    simplex_violation_linf: float


@dataclass
class Trajectory:
    """One path: per-step diagnostics plus field snapshots."""

    scheme: str
    times: np.ndarray            # (L+1,)
    entropy: np.ndarray          # (L+1,)  integral of h(u)
    dissipation: np.ndarray      # (L+1,)  cumulative tau * sum |grad u^{1-m}|^2
    mass: np.ndarray             # (n, L+1)
    violation: np.ndarray        # (L+1,)
    newton_iters: np.ndarray     # (L,)
    residual: np.ndarray         # (L,)
    halvings: np.ndarray         # (L,)
    snapshot_times: np.ndarray   # (S,)
    snapshots: np.ndarray        # (S, n, n_x)
    path_id: int = 0
    failed: bool = False
    failure: str | None = None
    completed_steps: int = 0

    @property
    def final(self) -> np.ndarray:
        return self.snapshots[-1]

    @property
    def step_reports(self) -> list[StepReport]:
        return [
            StepReport(int(self.newton_iters[k]), float(self.residual[k]),
                       int(self.halvings[k]), float(self.violation[k + 1]))
            for k in range(self.completed_steps)
        ]


# ---------------------------------------------------------------------------
# linear algebra


def block_tridiag_solve(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray,
                        rhs: np.ndarray) -> np.ndarray:
    """Batched block Thomas algorithm.

    Blocks have shape ``(P, N, n, n)`` and ``rhs`` has shape ``(P, N, n)``;
    ``lower[:, 0]`` and ``upper[:, -1]`` are ignored.
    """
    P, N, n, _ = diag.shape
    C = np.zeros_like(upper)
    g = np.empty_like(rhs)
    Bp = diag[:, 0]
    d = rhs[:, 0]
    for j in range(N):
        if j > 0:
            Bp = diag[:, j] - lower[:, j] @ C[:, j - 1]
            d = rhs[:, j] - (lower[:, j] @ g[:, j - 1, :, None])[..., 0]
        stacked = np.concatenate([upper[:, j], d[..., None]], axis=2) if j < N - 1 else d[..., None]
        sol = np.linalg.solve(Bp, stacked)
        if j < N - 1:
            C[:, j] = sol[..., :n]
        g[:, j] = sol[..., -1]
    x = np.empty_like(rhs)
    x[:, N - 1] = g[:, N - 1]
    for j in range(N - 2, -1, -1):
        x[:, j] = g[:, j] - (C[:, j] @ x[:, j + 1, :, None])[..., 0]
    return x


# ---------------------------------------------------------------------------
# entropy-variable implicit scheme


@dataclass(frozen=True)
class _Ctx:
    model: ModelSpec
    grid: Grid1D
    amp: float
    forcing: str
    averaging: str
    settings: NewtonSettings


def _noise_force(model: ModelSpec, u: np.ndarray, slope: np.ndarray, amp: float) -> np.ndarray:
    """``amp * sigma(u) @ slope`` per node; ``u`` is (n, P, N), ``slope`` (n, P)."""
    return amp * np.einsum("ijpx,jp->ipx", model.noise(u), slope)


def _drift(ctx: _Ctx, u: np.ndarray) -> np.ndarray:
    return divergence(face_flux(ctx.model, u, ctx.grid, ctx.averaging), ctx.grid)


def _entropy_residual(ctx: _Ctx, w, u_prev, f_prev, slope, tau, eps):
    u = ctx.model.inv_entropy_grad(w)
    r = (u - u_prev) / tau + eps * w - _drift(ctx, u)
    if ctx.amp != 0.0:
        if ctx.forcing == "explicit":
            r -= f_prev
        elif ctx.forcing == "implicit":
            r -= _noise_force(ctx.model, u, slope, ctx.amp)
        else:
            r -= 0.5 * (f_prev + _noise_force(ctx.model, u, slope, ctx.amp))
    return r


def _max_norm(r: np.ndarray) -> np.ndarray:
    return np.max(np.abs(r), axis=(0, 2))


def _fd_blocks(ctx: _Ctx, w, r, args):
    """Finite-difference block-tridiagonal Jacobian of the residual in ``w``."""
    n, P, N = w.shape
    # node-major layout so fancy indexing on the node axis keeps its place
    diag = np.zeros((N, P, n, n))
    lower = np.zeros_like(diag)
    upper = np.zeros_like(diag)
    h = 1e-7 * (1.0 + np.abs(w))
    for c in range(min(3, N)):
        nodes = np.arange(c, N, 3)
        left = nodes[nodes >= 1]
        right = nodes[nodes <= N - 2]
        for i in range(n):
            wp = w.copy()
            wp[i][:, nodes] += h[i][:, nodes]
            dr = (_entropy_residual(ctx, wp, *args) - r).transpose(2, 1, 0)  # (N, P, n)
            hi = h[i].T[..., None]
            diag[nodes, :, :, i] = dr[nodes] / hi[nodes]
            upper[left - 1, :, :, i] = dr[left - 1] / hi[left]
            lower[right + 1, :, :, i] = dr[right + 1] / hi[right]
    lower, diag, upper = (b.transpose(1, 0, 2, 3) for b in (lower, diag, upper))
    return lower, diag, upper


def _newton(ctx: _Ctx, w_prev, u_prev, f_prev, slope, tau, eps):
    s = ctx.settings
    w = w_prev.copy()
    args = (u_prev, f_prev, slope, tau, eps)
    r = _entropy_residual(ctx, w, *args)
    norm = _max_norm(r)
    P = w.shape[1]
    iters = np.zeros(P, dtype=int)
    failed = ~np.isfinite(norm)
    for _ in range(s.max_iter):
        active = np.flatnonzero((norm > s.abs_tol) & ~failed)
        if active.size == 0:
            break
        wa, ra, na = w[:, active], r[:, active], norm[active]
        sub = (u_prev[:, active], f_prev[:, active], slope[:, active], tau, eps)
        lower, diag, upper = _fd_blocks(ctx, wa, ra, sub)
        with np.errstate(all="ignore"):
            try:
                step = block_tridiag_solve(lower, diag, upper, -ra.transpose(1, 2, 0)).transpose(2, 0, 1)
            except np.linalg.LinAlgError:
                failed[active] = True
                break
        lam = np.full(active.size, s.damping)
        accepted = np.zeros(active.size, dtype=bool)
        w_new, r_new, n_new = wa.copy(), ra.copy(), na.copy()
        for _ls in range(30):
            todo = np.flatnonzero(~accepted)
            if todo.size == 0:
                break
            with np.errstate(all="ignore"):
                trial = wa[:, todo] + lam[todo][None, :, None] * step[:, todo]
                rt = _entropy_residual(ctx, trial, *(a[:, todo] if isinstance(a, np.ndarray) else a
                                                     for a in sub))
            nt = _max_norm(rt)
            good = np.isfinite(nt) & (nt < na[todo])
            idx = todo[good]
            w_new[:, idx], r_new[:, idx], n_new[idx] = trial[:, good], rt[:, good], nt[good]
            accepted[idx] = True
            lam[todo[~good]] *= 0.5
        w[:, active], r[:, active], norm[active] = w_new, r_new, n_new
        iters[active] += 1
        failed[active[~accepted]] = True
    ok = (norm <= s.abs_tol) & ~failed
    return w, iters, norm, ok


def _entropy_advance(ctx: _Ctx, w_prev, slope, tau, eps, depth=0):
    """One implicit step of length ``tau``; failed paths retry with halved steps."""
    model = ctx.model
    u_prev = model.inv_entropy_grad(w_prev)
    f_prev = (_noise_force(model, u_prev, slope, ctx.amp)
              if ctx.amp != 0.0 and ctx.forcing != "implicit" else np.zeros_like(u_prev))
    w, iters, resid, ok = _newton(ctx, w_prev, u_prev, f_prev, slope, tau, eps)
    halvings = np.zeros(w.shape[1], dtype=int)
    bad = np.flatnonzero(~ok)
    if bad.size and depth < ctx.settings.max_halvings:
        w1, it1, _, h1, ok1 = _entropy_advance(ctx, w_prev[:, bad], slope[:, bad], 0.5 * tau, eps, depth + 1)
        w2, it2, re2, h2, ok2 = _entropy_advance(ctx, w1, slope[:, bad], 0.5 * tau, eps, depth + 1)
        w[:, bad] = w2
        iters[bad] += it1 + it2
        resid[bad] = re2
        halvings[bad] = 1 + np.maximum(h1, h2)
        ok[bad] = ok1 & ok2
    return w, iters, resid, halvings, ok


def step_entropy_implicit(model: ModelSpec, grid: Grid1D, w_prev: np.ndarray, slope: np.ndarray,
                          config: SolverConfig, u_forcing: np.ndarray | None = None):
    """Advance an entropy field ``(n, n_x)`` by one step of ``config.tau``.

    ``slope`` is the Wong--Zakai slope ``dW/dt`` on the current noise
    interval (an ``n``-vector); the forcing ``noise_scale * sigma(u) @ slope``
    is formed inside according to ``config.forcing``.  Returns the new
    entropy field and a :class:`StepReport`; raises :class:`StepFailure`
    when Newton fails even after ``max_halvings`` step halvings.
    """
    w_prev = np.asarray(w_prev, dtype=float)
    if not np.all(np.isfinite(w_prev)):
        raise StepFailure("non-finite entropy variables on input")
    ctx = _Ctx(model, grid, config.noise_scale, config.forcing, config.averaging, config.newton)
    slope = np.asarray(slope, dtype=float).reshape(model.n, 1)
    w, iters, resid, halv, ok = _entropy_advance(ctx, w_prev[:, None, :], slope,
                                                config.tau, config.epsilon_eff)
    if not ok[0]:
        raise StepFailure(f"Newton failed (residual {resid[0]:.3e}) after {halv[0]} step halvings")
    u = model.inv_entropy_grad(w[:, 0])
    report = StepReport(int(iters[0]), float(resid[0]), int(halv[0]),
                        float(np.max(simplex_violation(u))))
    return w[:, 0], report


# ---------------------------------------------------------------------------
# explicit integrators


def _coeff_state(u: np.ndarray) -> np.ndarray:
    return project_to_simplex(u)


def _em_update(ctx: _Ctx, u, dW, tau):
    uc = _coeff_state(u)
    out = u + tau * _drift_field(ctx, u, uc)
    if ctx.amp != 0.0:
        model = ctx.model
        T = (model.ito_correction(uc) if model.ito_correction is not None
             else np.einsum("kj...,ijk...->i...", model.noise(uc), model.noise_jacobian(uc)))
        out += 0.5 * tau * ctx.amp**2 * T + _noise_force(model, uc, dW, ctx.amp)
    return out


def _drift_field(ctx: _Ctx, u, uc):
    Abar = face_diffusion(ctx.model, uc, ctx.averaging)
    flux = np.einsum("ij...,j...->i...", Abar, np.diff(u, axis=-1)) / ctx.grid.dx
    return divergence(flux, ctx.grid)


def _heun_update(ctx: _Ctx, u, dW, tau):
    uc = _coeff_state(u)
    d0 = _drift_field(ctx, u, uc)
    g0 = _noise_force(ctx.model, uc, dW, ctx.amp) if ctx.amp != 0.0 else 0.0
    pred = u + tau * d0 + g0
    pc = _coeff_state(pred)
    d1 = _drift_field(ctx, pred, pc)
    g1 = _noise_force(ctx.model, pc, dW, ctx.amp) if ctx.amp != 0.0 else 0.0
    return u + 0.5 * tau * (d0 + d1) + 0.5 * (g0 + g1)


def _explicit_step(model, grid, u_prev, dW, config, update):
    u_prev = np.asarray(u_prev, dtype=float)
    ctx = _Ctx(model, grid, config.noise_scale, config.forcing, config.averaging, config.newton)
    dW = np.asarray(dW, dtype=float).reshape(model.n, 1)
    u = update(ctx, u_prev[:, None, :], dW, config.tau)[:, 0]
    if not np.all(np.isfinite(u)):
        raise StepFailure("non-finite state")
    return u, StepReport(0, 0.0, 0, float(np.max(simplex_violation(u))))


def step_euler_maruyama(model: ModelSpec, grid: Grid1D, u_prev: np.ndarray, dW: np.ndarray,
                        config: SolverConfig):
    """``u + tau*div(A grad u) + tau/2*T(u) + sigma(u) dW``, coefficients on the projected state."""
    return _explicit_step(model, grid, u_prev, dW, config, _em_update)


def step_heun_stratonovich(model: ModelSpec, grid: Grid1D, u_prev: np.ndarray, dW: np.ndarray,
                           config: SolverConfig):
    """Heun predictor-corrector averaging drift and noise coefficients."""
    return _explicit_step(model, grid, u_prev, dW, config, _heun_update)


# ---------------------------------------------------------------------------
# trajectories


def _check_initial(model: ModelSpec, grid: Grid1D, initial: np.ndarray) -> np.ndarray:
    initial = np.asarray(initial, dtype=float)
    if initial.shape != (model.n, grid.n_x):
        raise ValueError(f"initial field must have shape {(model.n, grid.n_x)}, got {initial.shape}")
    if np.max(simplex_violation(initial)) > 1e-12:
        raise ValueError("initial field leaves the closed Gibbs simplex")
    return initial


def _noise_table(config: SolverConfig, paths: Sequence[WienerPath], n: int) -> np.ndarray:
    """Per-path noise data, shape ``(P, M, n)``: slopes (entropy) or increments."""
    level = config.noise_level
    rows = []
    for p in paths:
        if p.n != n:
            raise ValueError(f"path has {p.n} components, model needs {n}")
        if abs(p.T - config.T) > 1e-12 * max(1.0, config.T):
            raise ValueError(f"path horizon {p.T} differs from T={config.T}")
        if p.level < level:
            raise ValueError(f"path level {p.level} is coarser than the required level {level}")
        c = coarsen(p, level)
        rows.append(c.increments / c.eta if config.scheme == "entropy_implicit" else c.increments)
    return np.stack(rows)


def simulate_paths(model: ModelSpec, grid: Grid1D, config: SolverConfig, initial: np.ndarray,
                   paths: Sequence[WienerPath] | None, path_ids: Sequence[int] | None = None
                   ) -> list[Trajectory]:
    """Integrate one trajectory per path, batched.  Failed paths are frozen and flagged."""
    initial = _check_initial(model, grid, initial)
    P = len(paths) if paths is not None else (len(path_ids) if path_ids is not None else 1)
    if path_ids is None:
        path_ids = [p.path_id for p in paths] if paths is not None else list(range(P))
    n, N, L = model.n, grid.n_x, config.n_steps
    amp = config.noise_scale
    ctx = _Ctx(model, grid, amp, config.forcing, config.averaging, config.newton)
    need_noise = L > 0 and amp != 0.0
    if need_noise:
        if paths is None:
            raise ValueError("a Wiener path is required when the noise is switched on")
        table = _noise_table(config, paths, n)
    entropy_scheme = config.scheme == "entropy_implicit"

    if entropy_scheme:
        w = np.repeat(model.entropy_grad(pull_inside(initial, config.delta0))[:, None, :], P, axis=1)
        u = model.inv_entropy_grad(w)
    else:
        u = np.repeat(initial[:, None, :], P, axis=1)
        w = None

    snap_steps = config.snapshot_steps()
    snaps = np.full((len(snap_steps), P, n, N), np.nan)
    times = np.arange(L + 1) * config.tau
    ent = np.full((P, L + 1), np.nan)
    dis = np.full((P, L + 1), np.nan)
    mass = np.full((P, n, L + 1), np.nan)
    vio = np.full((P, L + 1), np.nan)
    iters = np.zeros((P, L), dtype=int)
    resid = np.zeros((P, L))
    halv = np.zeros((P, L), dtype=int)
    done = np.zeros(P, dtype=int)
    failure: list[str | None] = [None] * P
    alive = np.ones(P, dtype=bool)

    def record(k: int, idx: np.ndarray, uk: np.ndarray) -> None:
        uc = project_to_simplex(uk)
        ent[idx, k] = integrate(model.entropy(uc), grid)
        mass[idx, :, k] = integrate(uk, grid).T
        vio[idx, k] = np.max(simplex_violation(uk), axis=-1)
        if k == 0:
            dis[idx, 0] = 0.0
        else:
            dis[idx, k] = dis[idx, k - 1] + config.tau * dissipation_seminorm(uk, grid, model.m)
        hit = np.flatnonzero(snap_steps == k)
        if hit.size:
            snaps[hit[0], idx] = uk.transpose(1, 0, 2)

    record(0, np.arange(P), u)
    ratio = int(round(config.eta_eff / config.tau))
    eps = config.epsilon_eff
    for k in range(L):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        if entropy_scheme:
            slope = table[idx, k // ratio].T if need_noise else np.zeros((n, idx.size))
            w_new, it, re, hv, ok = _entropy_advance(ctx, w[:, idx], slope, config.tau, eps)
            iters[idx, k], resid[idx, k], halv[idx, k] = it, re, hv
            u_new = model.inv_entropy_grad(w_new)
            ok &= np.all(np.isfinite(w_new), axis=(0, 2))
            for j in idx[~ok]:
                failure[j] = (f"step {k}: Newton failed (residual {resid[j, k]:.3e}) "
                              f"after {halv[j, k]} halvings")
            w[:, idx[ok]] = w_new[:, ok]
        else:
            dW = table[idx, k].T if need_noise else np.zeros((n, idx.size))
            update = _em_update if config.scheme == "euler_maruyama_ito" else _heun_update
            with np.errstate(all="ignore"):
                u_new = update(ctx, u[:, idx], dW, config.tau)
            ok = np.all(np.isfinite(u_new), axis=(0, 2))
            for j in idx[~ok]:
                failure[j] = f"step {k}: non-finite state"
        good = idx[ok]
        u[:, good] = u_new[:, ok]
        record(k + 1, good, u_new[:, ok])
        done[good] = k + 1
        alive[idx[~ok]] = False

    out = []
    snap_times = snap_steps * config.tau
    for p in range(P):
        out.append(Trajectory(
            scheme=config.scheme, times=times, entropy=ent[p], dissipation=dis[p], mass=mass[p],
            violation=vio[p], newton_iters=iters[p], residual=resid[p], halvings=halv[p],
            snapshot_times=snap_times, snapshots=snaps[:, p], path_id=int(path_ids[p]),
            failed=not alive[p], failure=failure[p], completed_steps=int(done[p]),
        ))
    return out


def run_trajectory(model: ModelSpec, grid: Grid1D, config: SolverConfig, initial: np.ndarray,
                   path: WienerPath | None = None) -> Trajectory:
    """Integrate a single path; a failed step raises :class:`StepFailure` with the partial run."""
    traj = simulate_paths(model, grid, config, initial, None if path is None else [path],
                          path_ids=[0 if path is None else path.path_id])[0]
    if traj.failed:
        raise StepFailure(traj.failure or "step failure", partial=traj)
    return traj


def ensemble_paths(config: SolverConfig, n: int, master_seed: int, path_ids: Sequence[int]
                   ) -> list[WienerPath] | None:
    if config.n_steps == 0 or config.noise_scale == 0.0:
        return None
    return [sample_path(master_seed, config.T, config.noise_level, n, path_id=p) for p in path_ids]


def simulate_ensemble(model: ModelSpec, grid: Grid1D, config: SolverConfig, initial: np.ndarray,
                      path_count: int, master_seed: int, *, threads: int = 1,
                      chunk_size: int = 25) -> list[Trajectory]:
    """Run ``path_count`` paths in fixed-size chunks, optionally on a thread pool.

    Chunks are fixed by ``chunk_size`` alone and every path's arithmetic is
    independent of its batch neighbours, so results do not depend on
    ``threads``.
    """
    if path_count < 1:
        raise ValueError("path_count must be at least 1")
    chunks = [list(range(s, min(s + chunk_size, path_count))) for s in range(0, path_count, chunk_size)]

    def work(ids: list[int]) -> list[Trajectory]:
        paths = ensemble_paths(config, model.n, master_seed, ids)
        return simulate_paths(model, grid, config, initial, paths, path_ids=ids)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(c) for c in chunks]
    return [t for chunk in results for t in chunk]


def run_monte_carlo(model: ModelSpec, grid: Grid1D, config: SolverConfig, initial: np.ndarray,
                    path_count: int, master_seed: int, *, C1: float | None = None,
                    threads: int = 1, chunk_size: int = 25, max_failure_fraction: float = 0.1):
    """Aggregate ``path_count`` trajectories into a :class:`~crossdiff.diagnostics.RunReport`.

    Failed paths are excluded from the statistics and counted; more than
    ``max_failure_fraction`` failures abort with :class:`MonteCarloAborted`.
    """
    from .diagnostics import RunReport

    trajs = simulate_ensemble(model, grid, config, initial, path_count, master_seed,
                              threads=threads, chunk_size=chunk_size)
    failures = sum(t.failed for t in trajs)
    if failures > max_failure_fraction * path_count:
        raise MonteCarloAborted(f"{failures} of {path_count} paths failed")
    return RunReport.from_trajectories(trajs, C1=C1, seed=master_seed)


def with_overrides(config: SolverConfig, **changes) -> SolverConfig:
    return replace(config, **changes)
