"""Sampling-based certification of the structural assumptions of a model.

Every check draws interior points of the Gibbs simplex from a seeded
generator: half uniformly (Dirichlet(1, ..., 1) on the ``n+1`` fractions,
solvent included) and half from boundary strata in which a random nonempty
set of fractions is pinned to a distance ``d`` from zero.  Sup and inf
estimates are plain folds over samples, so results depend only on
``(model, sample_count, seed)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .diagnostics import write_json
from .model import ModelSpec, _regularize

STRATA = (1e-2, 1e-4, 1e-6)
DELTAS = (1e-1, 1e-2, 1e-3)
_CHUNK = 2048


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def sample_simplex(n: int, count: int, seed: int, strata: Sequence[float] = STRATA) -> np.ndarray:
    """Interior sample points, shape ``(n, count)``."""
    if count < 1:
        raise ValueError("sample count must be positive")
    rng = _rng(seed)
    x = np.maximum(rng.dirichlet(np.ones(n + 1), size=count), 1e-300)
    x /= x.sum(axis=1, keepdims=True)
    n_uniform = count - (count // 2 if strata else 0)
    if strata:
        rows = np.arange(n_uniform, count)
        for r, d in zip(np.array_split(rows, len(strata)), strata):
            for j in r:
                k = rng.integers(1, n + 1)  # how many fractions to pin
                pinned = rng.choice(n + 1, size=k, replace=False)
                x[j, pinned] = 0.0
                x[j] *= (1.0 - k * d) / x[j].sum()
                x[j, pinned] = d
    return x[:, :n].T.copy()


def _full(u: np.ndarray) -> np.ndarray:
    return np.vstack([u, 1.0 - u.sum(axis=0)])


def _chunks(K: int):
    for s in range(0, K, _CHUNK):
        yield slice(s, min(s + _CHUNK, K))


class LipschitzResult(NamedTuple):
    estimate: float
    witness: np.ndarray | None
    passed: bool


def check_lipschitz_diffusion(model: ModelSpec, sample_count: int = 10_000, seed: int = 0
                              ) -> LipschitzResult:
    """Largest ``||A(u) - A(v)||_F / ||u - v||`` over sampled interior pairs.

    Pairs are random far pairs plus close pairs ``u +- h e_k`` whose
    quotients assemble the Jacobian; its spectral norm bounds every
    directional quotient at ``u``.
    """
    if sample_count < 2:
        raise ValueError("need at least two samples")
    n = model.n
    u = sample_simplex(n, sample_count, seed)
    A = model.diffusion(u).reshape(n * n, -1)
    if not np.all(np.isfinite(A)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(A), axis=0))[0])
        return LipschitzResult(math.inf, u[:, bad], False)
    half = sample_count // 2
    du = u[:, :half] - u[:, half:2 * half]
    far = np.linalg.norm(A[:, :half] - A[:, half:2 * half], axis=0) / np.linalg.norm(du, axis=0)
    best, witness = (float(far.max()), u[:, int(far.argmax())]) if half else (0.0, u[:, 0])
    for sl in _chunks(sample_count):
        uc = u[:, sl]
        h = 1e-4 * np.min(_full(uc), axis=0)
        cols = []
        for k in range(n):
            e = np.zeros_like(uc)
            e[k] = h
            cols.append((model.diffusion(uc + e) - model.diffusion(uc - e)).reshape(n * n, -1) / (2 * h))
        J = np.stack(cols, axis=1).transpose(2, 0, 1)  # (K, n*n, n)
        norms = np.linalg.norm(J, ord=2, axis=(1, 2))
        if not np.all(np.isfinite(norms)):
            bad = int(np.flatnonzero(~np.isfinite(norms))[0])
            return LipschitzResult(math.inf, uc[:, bad], False)
        j = int(norms.argmax())
        if norms[j] > best:
            best, witness = float(norms[j]), uc[:, j]
    return LipschitzResult(best, witness, math.isfinite(best))


def _directions(n: int, K: int, rng: np.random.Generator, n_random: int) -> np.ndarray:
    """Unit directions ``(n, K, n_dir)``: random, canonical and ``e_i - e_j``."""
    fixed = [np.eye(n)[i] for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            v = np.zeros(n)
            v[i], v[j] = 1.0, -1.0
            fixed.append(v / math.sqrt(2.0))
    Z = rng.standard_normal((n, K, n_random))
    Z /= np.linalg.norm(Z, axis=0, keepdims=True)
    F = np.broadcast_to(np.array(fixed).T[:, None, :], (n, K, len(fixed)))
    return np.concatenate([Z, F], axis=2)


class CoercivityResult(NamedTuple):
    c_h_empirical: float
    worst_point: tuple[np.ndarray, np.ndarray]

    @property
    def passed(self) -> bool:
        return bool(self.c_h_empirical > 0 and math.isfinite(self.c_h_empirical))


def check_coercivity(model: ModelSpec, sample_count: int = 10_000, seed: int = 0,
                     n_random: int = 64) -> CoercivityResult:
    """Smallest sampled ``z^T h''(u) A(u) z / sum_i z_i^2 / u_i^{2m}``."""
    n = model.n
    u = sample_simplex(n, sample_count, seed)
    rng = _rng(seed + 1)
    best, witness = math.inf, (u[:, 0], np.eye(n)[0])
    for sl in _chunks(sample_count):
        uc = u[:, sl]
        Z = _directions(n, uc.shape[1], rng, n_random)
        M = np.einsum("ijK,jkK->ikK", model.entropy_hess(uc), model.diffusion(uc))
        num = np.einsum("iKz,ijK,jKz->Kz", Z, M, Z)
        den = np.einsum("iKz,iK->Kz", Z * Z, uc ** (-2.0 * model.m))
        ratio = np.where(np.isfinite(num), num / den, -math.inf)
        k, z = np.unravel_index(int(np.argmin(ratio)), ratio.shape)
        if ratio[k, z] < best:
            best, witness = float(ratio[k, z]), (uc[:, k].copy(), Z[:, k, z].copy())
    return CoercivityResult(best, witness)


def interaction_terms(model: ModelSpec, u: np.ndarray) -> np.ndarray:
    """The three entropy--noise interaction terms at each point, shape ``(3, K)``."""
    g = model.entropy_grad(u)
    s = model.noise(u)
    J = model.noise_jacobian(u)
    H = model.entropy_hess(u)
    t1 = np.max(np.abs(np.einsum("iK,ijK->jK", g, s)), axis=0)
    ito = np.einsum("kjK,ijkK->iK", s, J)
    t2 = np.abs(np.einsum("iK,iK->K", ito, g))
    t3 = np.abs(np.einsum("ikK,ijK,jkK->K", s, H, s))
    return np.stack([t1, t2, t3])


class InteractionResult(NamedTuple):
    C_h_empirical: float
    level_sups: tuple[tuple[float, float], ...]
    witness: np.ndarray | None
    passed: bool


def check_noise_entropy_interaction(model: ModelSpec, sample_count: int = 10_000, seed: int = 0,
                                    levels: Sequence[float] = STRATA,
                                    max_growth_per_decade: float = 10.0) -> InteractionResult:
    """Sup of the summed interaction terms on interiors ``{min fraction >= u_min}``.

    Fails when the sup is non-finite or grows by more than
    ``max_growth_per_decade`` per decade of ``u_min``.
    """
    n = model.n
    u = sample_simplex(n, sample_count, seed, strata=levels)
    with np.errstate(all="ignore"):
        total = np.sum(interaction_terms(model, u), axis=0)
    dist = np.min(_full(u), axis=0)
    sups = []
    for lvl in sorted(levels, reverse=True):
        mask = dist >= lvl * (1 - 1e-9)
        sups.append((float(lvl), float(np.max(total[mask])) if mask.any() else 0.0))
    finite = np.isfinite(total)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        return InteractionResult(math.inf, tuple(sups), u[:, bad], False)
    ok = True
    for (l0, s0), (l1, s1) in zip(sups, sups[1:]):
        decades = math.log10(l0 / l1)
        if s0 > 0 and (s1 / s0) ** (1.0 / decades) > max_growth_per_decade:
            ok = False
    k = int(np.argmax(total))
    return InteractionResult(float(total[k]), tuple(sups), u[:, k], ok)


class NoiseLipschitzResult(NamedTuple):
    C_sigma_empirical: float
    witness: np.ndarray
    passed: bool


def check_noise_lipschitz(model: ModelSpec, sample_count: int = 10_000, seed: int = 0
                          ) -> NoiseLipschitzResult:
    """Largest ``|d sigma_ij / d u_k|`` over samples (bounds the multiplication operator norm)."""
    u = sample_simplex(model.n, sample_count, seed)
    J = np.abs(model.noise_jacobian(u)).reshape(-1, u.shape[1])
    per = np.max(J, axis=0)
    k = int(np.argmax(np.where(np.isfinite(per), per, math.inf)))
    val = float(per[k]) if np.all(np.isfinite(per)) else math.inf
    return NoiseLipschitzResult(val, u[:, k], math.isfinite(val))


def correction_matrix_or_generic(model: ModelSpec, u: np.ndarray, delta: float) -> np.ndarray:
    """Closed-form ``R_delta`` when the model has one, else ``h''([u]_d)(A(u) - A([u]_d))``.

    The generic matrix is admissible whenever the coercivity bound holds at
    the regularized point, because the difference of the two quadratic forms
    is exactly its quadratic form.
    """
    if model.correction_matrix is not None:
        return model.correction_matrix(u, float(delta))
    v = _regularize(u, delta)
    return np.einsum("ij...,jk...->ik...", model.entropy_hess(v), model.diffusion(u) - model.diffusion(v))


class RegularizationResult(NamedTuple):
    table: tuple[tuple[float, float], ...]
    full_table: tuple[tuple[float, float], ...]
    method: str
    passed: bool


def check_regularization_decay(model: ModelSpec, delta_list: Sequence[float] = DELTAS,
                               sample_count: int = 10_000, seed: int = 0, kappa: float = 1e-2,
                               min_reduction: float = 0.5) -> RegularizationResult:
    """Sup-norm of ``R_delta`` over samples, for each ``delta``.

    ``table`` uses samples whose fractions are all at least ``kappa`` (the
    correction does not vanish on the boundary itself); ``full_table`` uses
    every sample.  Passing needs a strictly decreasing table whose last entry
    is at most ``min_reduction`` times the first, or an identically zero one.
    """
    deltas = [float(d) for d in delta_list]
    if not deltas or any(d <= 0 for d in deltas) or any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("delta list must be positive and strictly decreasing")
    u = sample_simplex(model.n, sample_count, seed)
    inner = u[:, np.min(_full(u), axis=0) >= kappa]
    table, full = [], []
    for d in deltas:
        R = np.abs(correction_matrix_or_generic(model, u, d)).reshape(-1, u.shape[1])
        full.append((d, float(np.max(R))))
        Ri = np.abs(correction_matrix_or_generic(model, inner, d)) if inner.size else np.zeros(1)
        table.append((d, float(np.max(Ri))))
    vals = [s for _, s in table]
    if all(np.isfinite(vals)) and max(vals) <= 1e-14:
        ok = True  # the correction vanishes identically
    else:
        ok = all(np.isfinite(vals)) and all(b < a for a, b in zip(vals, vals[1:]))
        ok = ok and vals[-1] <= min_reduction * vals[0]
    method = "closed-form" if model.correction_matrix is not None else "generic"
    return RegularizationResult(tuple(table), tuple(full), method, bool(ok))


@dataclass
class AssumptionReport:
    model: str
    params: dict
    m: float
    lipschitz_A: float
    c_h_empirical: float
    C_h_empirical: float
    C_sigma_empirical: float
    r_delta_decay: list
    r_delta_decay_full: list
    interaction_levels: list
    pass_flags: dict
    witnesses: dict
    sample_count: int
    seed: int
    tolerances: dict = field(default_factory=dict)
    known_constants: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.pass_flags.values())

    def to_dict(self) -> dict:
        return {
            "model": self.model, "params": self.params, "sample_count": self.sample_count,
            "seed": self.seed, "m": self.m, "lipschitz_A": self.lipschitz_A,
            "c_h_empirical": self.c_h_empirical, "C_h_empirical": self.C_h_empirical,
            "C_sigma_empirical": self.C_sigma_empirical,
            "r_delta_decay": [list(p) for p in self.r_delta_decay],
            "r_delta_decay_full": [list(p) for p in self.r_delta_decay_full],
            "interaction_levels": [list(p) for p in self.interaction_levels],
            "known_constants": self.known_constants, "tolerances": self.tolerances,
            "pass_flags": self.pass_flags, "passed": self.passed, "witnesses": self.witnesses,
        }

    def write_json(self, path: str | Path, meta: dict | None = None) -> None:
        payload = dict(meta or {})
        payload.update(self.to_dict())
        write_json(path, payload)

    def write_decay_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["delta", "sup_R_delta", "sup_R_delta_all_samples"])
            for (d, s), (_, sf) in zip(self.r_delta_decay, self.r_delta_decay_full):
                w.writerow([repr(d), repr(s), repr(sf)])


def certify(model: ModelSpec, sample_count: int = 10_000, seed: int = 0,
            delta_list: Sequence[float] = DELTAS, kappa: float = 1e-2,
            levels: Sequence[float] = STRATA) -> AssumptionReport:
    """Run every check and collect the constants and pass flags."""
    lip = check_lipschitz_diffusion(model, sample_count, seed)
    noise = check_noise_lipschitz(model, sample_count, seed)
    coer = check_coercivity(model, sample_count, seed)
    inter = check_noise_entropy_interaction(model, sample_count, seed, levels)
    reg = check_regularization_decay(model, delta_list, sample_count, seed, kappa)
    flags = {
        "A3_lipschitz": lip.passed,
        "A4_noise": noise.passed,
        "A5_coercivity": coer.passed,
        "A6_interaction": inter.passed,
        "A7_regularization": reg.passed,
    }
    witnesses = {
        "lipschitz_A": lip.witness,
        "coercivity_u": coer.worst_point[0],
        "coercivity_z": coer.worst_point[1],
        "interaction": inter.witness,
    }
    return AssumptionReport(
        model=model.name, params=dict(model.params), m=model.m, lipschitz_A=lip.estimate,
        c_h_empirical=coer.c_h_empirical, C_h_empirical=inter.C_h_empirical,
        C_sigma_empirical=noise.C_sigma_empirical, r_delta_decay=list(reg.table),
        r_delta_decay_full=list(reg.full_table), interaction_levels=list(inter.level_sups),
        pass_flags=flags, witnesses=witnesses, sample_count=sample_count, seed=seed,
        tolerances={"coercivity": "c_h > 0", "interaction_growth_per_decade": 10.0,
                    "r_delta_interior_kappa": kappa, "r_delta_min_reduction": 0.5,
                    "r_delta_method": reg.method},
        known_constants=dict(model.known_constants),
    )
