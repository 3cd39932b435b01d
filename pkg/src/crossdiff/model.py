"""Model algebra for volume-filling cross-diffusion systems.

All callables stored on a :class:`ModelSpec` work on *component-first* arrays:
a concentration argument ``u`` has shape ``(n, *batch)`` and, for example,
the diffusion matrix comes back with shape ``(n, n, *batch)``.  A single
simplex point is simply the ``batch == ()`` case.

The solvent fraction ``u_{n+1} = 1 - sum(u)`` is never stored.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np
from scipy.special import xlogy

Array = np.ndarray
ArrayFn = Callable[[Array], Array]

_TINY = np.finfo(float).tiny
_EPS = np.finfo(float).eps


class DomainError(ValueError):
    """Raised when an operation needs a point strictly inside the simplex."""


class UnsupportedOperation(NotImplementedError):
    """Raised when a model lacks the closed form an operation needs."""


class ConvergenceError(RuntimeError):
    """Raised when an inner Newton iteration fails to converge."""


@dataclass(frozen=True)
class ModelSpec:
    """A cross-diffusion model with entropy structure and multiplicative noise.

    Attributes
    ----------
    n : int
        Number of species; the solvent is implicit.
    diffusion, entropy, entropy_grad, entropy_hess, inv_entropy_grad, noise, noise_jacobian
        Vectorised callables on component-first arrays.  ``noise_jacobian``
        returns ``J[i, j, k] = d sigma_ij / d u_k``.
    m : float
        Degeneracy exponent of the coercivity bound, in ``[0, 1)``.
    correction_matrix : callable, optional
        ``(u, delta) -> R_delta(u)`` in closed form.
    ito_correction : callable, optional
        Closed form of the Ito correction vector; the generic triple sum is
        used when absent.
    known_constants : mapping
        Analytically known constants (``c_h``, ``C_sigma``, ...).
    """

    n: int
    diffusion: ArrayFn
    entropy: ArrayFn
    entropy_grad: ArrayFn
    entropy_hess: ArrayFn
    inv_entropy_grad: ArrayFn
    noise: ArrayFn
    noise_jacobian: ArrayFn
    m: float = 0.5
    correction_matrix: Callable[[Array, float], Array] | None = None
    ito_correction: ArrayFn | None = None
    known_constants: Mapping[str, float] = field(default_factory=dict)
    name: str = "custom"
    params: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"species count must be a positive integer, got {self.n!r}")
        if not 0.0 <= self.m < 1.0:
            raise ValueError(f"degeneracy exponent m must lie in [0, 1), got {self.m!r}")


# ---------------------------------------------------------------------------
# simplex utilities


def solvent(u: Array) -> Array:
    """Return the implicit solvent fraction ``1 - sum_i u_i``."""
    return 1.0 - np.sum(u, axis=0)


def simplex_violation(u: Array) -> Array:
    """Pointwise distance-like violation ``max(-u_i, sum u - 1, 0)``."""
    u = np.asarray(u, dtype=float)
    return np.maximum(np.maximum(-np.min(u, axis=0), np.sum(u, axis=0) - 1.0), 0.0)


def project_to_simplex(u: Array) -> Array:
    """Euclidean projection of every nodal vector onto the closed Gibbs simplex.

    Points already inside are returned unchanged (same values, new array only
    when something had to move).
    """
    u = np.asarray(u, dtype=float)
    if np.all(u >= 0.0) and np.all(np.sum(u, axis=0) <= 1.0):
        return u
    n = u.shape[0]
    flat = np.moveaxis(u, 0, -1).reshape(-1, n)
    out = np.maximum(flat, 0.0)
    over = out.sum(axis=1) > 1.0
    if np.any(over):
        v = flat[over]
        s = -np.sort(-v, axis=1)
        css = np.cumsum(s, axis=1) - 1.0
        ks = np.arange(1, n + 1)
        cond = s - css / ks > 0
        rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
        theta = css[np.arange(len(v)), rho] / (rho + 1)
        out[over] = np.maximum(v - theta[:, None], 0.0)
    return np.moveaxis(out.reshape(u.shape[1:] + (n,)), -1, 0)


def _regularize(u: Array, delta: float) -> Array:
    n = u.shape[0]
    return (u + delta / n) / (1.0 + delta)


def pull_inside(u: Array, delta: float) -> Array:
    """Blend with the barycenter: ``(1 - delta) u + delta/(n+1)``.

    Unlike :func:`regularize` this also lifts a vanishing solvent, so every
    fraction of a closed-simplex point ends up at least ``delta/(n+1)``.
    """
    if not 0 < delta < 1:
        raise ValueError(f"blend weight must lie in (0, 1), got {delta!r}")
    u = np.asarray(u, dtype=float)
    return (1.0 - delta) * u + delta / (u.shape[0] + 1)


def regularize(u: Array, delta: float, n: int | None = None) -> Array:
    """Pull a closed-simplex point into the interior: ``(u_i + delta/n)/(1 + delta)``.

    The solvent transforms as ``u_{n+1}/(1 + delta)``, so the result stays
    volume-filling and every component is at least ``delta/(n(1+delta))``.
    """
    if not delta > 0:
        raise ValueError(f"regularization parameter must be positive, got {delta!r}")
    u = np.asarray(u, dtype=float)
    if n is not None and u.shape[0] != n:
        raise ValueError(f"expected {n} components, got {u.shape[0]}")
    return _regularize(u, delta)


def is_interior(u: Array) -> bool:
    u = np.asarray(u, dtype=float)
    return bool(np.all(u > 0.0) and np.all(solvent(u) > 0.0))


# ---------------------------------------------------------------------------
# Boltzmann entropy  h(u) = sum_{i=1}^{n+1} (u_i (log u_i - 1) + 1)


def boltzmann_entropy(u: Array) -> Array:
    u = np.asarray(u, dtype=float)
    n = u.shape[0]
    u0 = solvent(u)
    # 0 log 0 = 0 through xlogy
    return (xlogy(u, u) - u).sum(axis=0) + xlogy(u0, u0) - u0 + (n + 1)


def boltzmann_grad(u: Array) -> Array:
    u = np.asarray(u, dtype=float)
    return np.log(u) - np.log(solvent(u))


def boltzmann_hess(u: Array) -> Array:
    u = np.asarray(u, dtype=float)
    n = u.shape[0]
    inv0 = 1.0 / solvent(u)
    eye = np.eye(n).reshape((n, n) + (1,) * (u.ndim - 1))
    return eye / u[None, ...] + inv0


def boltzmann_inverse(w: Array) -> Array:
    """Softmax with an implicit zero logit for the solvent.

    The result is strictly interior in floating point: every component is at
    least the smallest positive normal and the component sum is below one.
    """
    w = np.asarray(w, dtype=float)
    shift = np.maximum(np.max(w, axis=0), 0.0)
    e = np.exp(w - shift)
    z = np.exp(-shift) + e.sum(axis=0)
    u = np.maximum(e / z, _TINY)
    s = np.sum(u, axis=0)
    bad = s >= 1.0
    if np.any(bad):
        # rounding pushed the sum onto the boundary; shrink by a few ulps
        limit = 1.0 - 4.0 * (u.shape[0] + 1) * _EPS
        u = np.where(bad, u * (limit / np.where(bad, s, 1.0)), u)
    return u


def diagonal_logistic_noise(u: Array) -> Array:
    """``sigma_ii = u_i u_{n+1}``, zero off the diagonal."""
    u = np.asarray(u, dtype=float)
    n = u.shape[0]
    eye = np.eye(n).reshape((n, n) + (1,) * (u.ndim - 1))
    return eye * (u * solvent(u))[None, ...]


def diagonal_logistic_noise_jacobian(u: Array) -> Array:
    u = np.asarray(u, dtype=float)
    n = u.shape[0]
    u0 = solvent(u)
    jac = np.zeros((n, n, n) + u.shape[1:])
    for i in range(n):
        jac[i, i] = -u[i]
        jac[i, i, i] = u0 - u[i]
    return jac


def diagonal_logistic_ito(u: Array) -> Array:
    """Closed-form Ito correction ``sigma_ii d sigma_ii / d u_i = u_i u_{n+1} (u_{n+1} - u_i)``."""
    u = np.asarray(u, dtype=float)
    u0 = solvent(u)
    return u * u0 * (u0 - u)


# ---------------------------------------------------------------------------
# finite-difference and Newton defaults for user models


def _fd_step(u: Array) -> Array:
    return 1e-6 * np.maximum(1.0, np.sqrt(np.sum(u * u, axis=0)))


def fd_jacobian(fn: ArrayFn) -> ArrayFn:
    """Central-difference Jacobian of a component-first map.

    The derivative with respect to ``u_k`` is stacked on a new axis placed
    right after the output's component axes.
    """

    def jac(u: Array) -> Array:
        u = np.asarray(u, dtype=float)
        n = u.shape[0]
        h = _fd_step(u)
        cols = []
        for k in range(n):
            e = np.zeros_like(u)
            e[k] = h
            cols.append((fn(u + e) - fn(u - e)) / (2.0 * h))
        out = np.stack(cols, axis=0)
        lead = out.ndim - u.ndim  # number of component axes of fn's output
        return np.moveaxis(out, 0, lead)

    return jac


def newton_inverse(grad: ArrayFn, hess: ArrayFn, n: int, tol: float = 1e-12,
                   max_iter: int = 100) -> ArrayFn:
    """Invert ``h'(u) = w`` by damped Newton started at the barycenter."""

    def inv(w: Array) -> Array:
        w = np.asarray(w, dtype=float)
        batch = w.shape[1:]
        u = np.full(w.shape, 1.0 / (n + 1))
        for _ in range(max_iter):
            r = grad(u) - w
            if np.max(np.abs(r)) <= tol * max(1.0, float(np.max(np.abs(w)))):
                return u
            H = np.moveaxis(hess(u).reshape(n, n, -1), -1, 0)
            step = -np.linalg.solve(H, np.moveaxis(r.reshape(n, -1), -1, 0)[..., None])[..., 0]
            step = np.moveaxis(step, 0, -1).reshape((n,) + batch)
            lam = np.ones(batch)
            for _ in range(60):
                trial = u + lam * step
                ok = np.all(trial > 0, axis=0) & (solvent(trial) > 0)
                if np.all(ok):
                    break
                lam = np.where(ok, lam, 0.5 * lam)
            u = u + lam * step
        raise ConvergenceError(f"entropy-gradient inversion did not converge in {max_iter} iterations")

    return inv


def make_model(
    n: int,
    diffusion: ArrayFn,
    noise: ArrayFn,
    *,
    entropy: ArrayFn | None = None,
    entropy_grad: ArrayFn | None = None,
    entropy_hess: ArrayFn | None = None,
    inv_entropy_grad: ArrayFn | None = None,
    noise_jacobian: ArrayFn | None = None,
    m: float = 0.5,
    name: str = "custom",
    known_constants: Mapping[str, float] | None = None,
    correction_matrix: Callable[[Array, float], Array] | None = None,
    ito_correction: ArrayFn | None = None,
) -> ModelSpec:
    """Build a :class:`ModelSpec` from user callables.

    Leaving the entropy unspecified selects the Boltzmann entropy with its
    closed-form derivatives and inverse.  A user entropy must come with its
    gradient; the Hessian, the noise Jacobian and the inverse gradient fall
    back to central differences and Newton's method respectively.
    """
    if entropy is None:
        if any(f is not None for f in (entropy_grad, entropy_hess, inv_entropy_grad)):
            raise ValueError("entropy derivatives given without the entropy itself")
        entropy, entropy_grad = boltzmann_entropy, boltzmann_grad
        entropy_hess, inv_entropy_grad = boltzmann_hess, boltzmann_inverse
    elif entropy_grad is None:
        raise ValueError("a user entropy needs its gradient")
    if entropy_hess is None:
        entropy_hess = fd_jacobian(entropy_grad)
    if inv_entropy_grad is None:
        inv_entropy_grad = newton_inverse(entropy_grad, entropy_hess, n)
    if noise_jacobian is None:
        noise_jacobian = fd_jacobian(noise)
    return ModelSpec(
        n=n,
        diffusion=diffusion,
        entropy=entropy,
        entropy_grad=entropy_grad,
        entropy_hess=entropy_hess,
        inv_entropy_grad=inv_entropy_grad,
        noise=noise,
        noise_jacobian=noise_jacobian,
        m=m,
        correction_matrix=correction_matrix,
        ito_correction=ito_correction,
        known_constants=dict(known_constants or {}),
        name=name,
    )


# ---------------------------------------------------------------------------
# built-in models


def maxwell_stefan(d0: float = 1.0, d1: float = 2.0, d2: float = 3.0) -> ModelSpec:
    """Three-component Maxwell--Stefan mixture (two species plus solvent).

    ``known_constants['c_h']`` is the coercivity constant that actually makes
    the regularized inequality hold, ``min(d1, d2) / max(d0 d1, d0 d2, d1 d2)``;
    the product form ``min(d0 d1, d0 d2, d1 d2)`` is kept as ``c_h_product``
    for comparison only.
    """
    if min(d0, d1, d2) <= 0:
        raise ValueError("Maxwell-Stefan coefficients must be positive")

    def a_of(u: Array) -> Array:
        return d0 * d1 * u[0] + d0 * d2 * u[1] + d1 * d2 * solvent(u)

    def diffusion(u: Array) -> Array:
        u = np.asarray(u, dtype=float)
        a = a_of(u)
        return np.stack([
            np.stack([d2 + (d0 - d2) * u[0], (d0 - d1) * u[0]]),
            np.stack([(d0 - d2) * u[1], d1 + (d0 - d1) * u[1]]),
        ]) / a

    def correction(u: Array, delta: float) -> Array:
        u = np.asarray(u, dtype=float)
        v = _regularize(u, delta)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(u > 0, u / v, 0.0)
            u0 = solvent(u)
            ratio0 = np.where(u0 > 0, 1.0 + delta, 0.0)
        r = (ratio - ratio0) / a_of(u)
        return np.stack([
            np.stack([(d0 - d2) * r[0], (d0 - d1) * r[0]]),
            np.stack([(d0 - d2) * r[1], (d0 - d1) * r[1]]),
        ])

    return ModelSpec(
        n=2,
        diffusion=diffusion,
        entropy=boltzmann_entropy,
        entropy_grad=boltzmann_grad,
        entropy_hess=boltzmann_hess,
        inv_entropy_grad=boltzmann_inverse,
        noise=diagonal_logistic_noise,
        noise_jacobian=diagonal_logistic_noise_jacobian,
        m=0.5,
        correction_matrix=correction,
        ito_correction=diagonal_logistic_ito,
        known_constants={
            "c_h": min(d1, d2) / max(d0 * d1, d0 * d2, d1 * d2),
            "c_h_product": min(d0 * d1, d0 * d2, d1 * d2),
            "C_sigma": 1.0,
        },
        name="maxwell-stefan-3",
        params={"d0": d0, "d1": d1, "d2": d2},
    )


def biofilm(n: int = 2) -> ModelSpec:
    """Biofilm / interphase-force model with ``A = I - u 1^T``."""
    if int(n) != n or n < 1:
        raise ValueError(f"biofilm species count must be a positive integer, got {n!r}")
    n = int(n)

    def diffusion(u: Array) -> Array:
        u = np.asarray(u, dtype=float)
        eye = np.eye(n).reshape((n, n) + (1,) * (u.ndim - 1))
        return eye - u[:, None, ...]

    def correction(u: Array, delta: float) -> Array:
        u = np.asarray(u, dtype=float)
        v = _regularize(u, delta)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(u > 0, u / v, 0.0)
            ratio0 = np.where(solvent(u) > 0, 1.0 + delta, 0.0)
        col = ratio0 - ratio
        return np.broadcast_to(col[:, None, ...], (n, n) + u.shape[1:]).copy()

    return ModelSpec(
        n=n,
        diffusion=diffusion,
        entropy=boltzmann_entropy,
        entropy_grad=boltzmann_grad,
        entropy_hess=boltzmann_hess,
        inv_entropy_grad=boltzmann_inverse,
        noise=diagonal_logistic_noise,
        noise_jacobian=diagonal_logistic_noise_jacobian,
        m=0.5,
        correction_matrix=correction,
        ito_correction=diagonal_logistic_ito,
        known_constants={"c_h": 1.0, "C_sigma": 1.0},
        name="biofilm-n",
        params={"n": n},
    )


def negate_diffusion(model: ModelSpec) -> ModelSpec:
    """Copy of ``model`` with ``A`` replaced by ``-A``; violates coercivity by construction."""
    base = model.diffusion
    return replace(model, diffusion=lambda u: -base(u), correction_matrix=None,
                   known_constants={}, name=f"negated-{model.name}")


BUILTIN_MODELS: dict[str, Callable[..., ModelSpec]] = {
    "maxwell-stefan-3": maxwell_stefan,
    "biofilm-n": biofilm,
}


def builtin_model(name: str, **params) -> ModelSpec:
    try:
        factory = BUILTIN_MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(BUILTIN_MODELS)}") from None
    return factory(**params)


# ---------------------------------------------------------------------------
# checked operations


def _as_points(model: ModelSpec, u: Array) -> Array:
    u = np.asarray(u, dtype=float)
    if u.ndim == 0 or u.shape[0] != model.n:
        raise ValueError(f"model has {model.n} species but the argument has shape {u.shape}")
    return u


def _require_interior(u: Array, what: str) -> None:
    if not is_interior(u):
        raise DomainError(f"{what} is undefined on the simplex boundary")


def diffusion_matrix(model: ModelSpec, u: Array) -> Array:
    return model.diffusion(project_to_simplex(_as_points(model, u)))


def entropy(model: ModelSpec, u: Array) -> Array:
    return model.entropy(project_to_simplex(_as_points(model, u)))


def entropy_grad(model: ModelSpec, u: Array) -> Array:
    u = _as_points(model, u)
    _require_interior(u, "entropy gradient")
    return model.entropy_grad(u)


def entropy_hess(model: ModelSpec, u: Array) -> Array:
    u = _as_points(model, u)
    _require_interior(u, "entropy Hessian")
    return model.entropy_hess(u)


def inv_entropy_grad(model: ModelSpec, w: Array) -> Array:
    w = _as_points(model, w)
    if not np.all(np.isfinite(w)):
        raise ValueError("entropy variables must be finite")
    return model.inv_entropy_grad(w)


def noise_coeff(model: ModelSpec, u: Array) -> Array:
    return model.noise(project_to_simplex(_as_points(model, u)))


def noise_jacobian(model: ModelSpec, u: Array) -> Array:
    return model.noise_jacobian(project_to_simplex(_as_points(model, u)))


def ito_correction_generic(model: ModelSpec, u: Array) -> Array:
    """``T_i = sum_{k,j} sigma_kj d sigma_ij / d u_k`` by the triple sum."""
    u = project_to_simplex(_as_points(model, u))
    return np.einsum("kj...,ijk...->i...", model.noise(u), model.noise_jacobian(u))


def ito_correction(model: ModelSpec, u: Array) -> Array:
    if model.ito_correction is None:
        return ito_correction_generic(model, u)
    return model.ito_correction(project_to_simplex(_as_points(model, u)))


def correction_matrix_R(model: ModelSpec, u: Array, delta: float) -> Array:
    """Closed-form correction matrix ``R_delta(u)``; ``delta = 0`` gives zero."""
    if model.correction_matrix is None:
        raise UnsupportedOperation(f"model {model.name!r} has no closed-form correction matrix")
    if delta < 0:
        raise ValueError(f"delta must be non-negative, got {delta!r}")
    return model.correction_matrix(project_to_simplex(_as_points(model, u)), float(delta))


def quadratic_form(model: ModelSpec, u: Array, z: Array, delta: float = 0.0) -> Array:
    """``z^T h''([u]_delta) A(u) z`` for matching batches of ``u`` and ``z``."""
    u = _as_points(model, u)
    v = _regularize(u, delta) if delta > 0 else u
    M = np.einsum("ij...,jk...->ik...", model.entropy_hess(v), model.diffusion(u))
    return np.einsum("i...,ij...,j...->...", z, M, z)
