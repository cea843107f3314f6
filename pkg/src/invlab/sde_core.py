"""Controlled systems, closed sets, test functions and their operators.

All evaluators are batched: ``x`` has shape ``(..., n)`` and a control point
``u`` has shape ``(k,)`` or ``(..., k)``. ``sigma`` returns ``(..., n, d)``
with the noise channels as columns, ``dsigma(x, u, i)`` returns the Jacobian
of column ``i`` with shape ``(..., n, n)``. Column and channel indices are
zero-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .numerics import central_difference


class EvaluationError(ArithmeticError):
    def __init__(self, what: str, x, u=None):
        self.x = np.asarray(x)
        self.u = None if u is None else np.asarray(u)
        super().__init__(f"non-finite {what} at x={self.x.tolist()}, u={None if u is None else self.u.tolist()}")


def _finite(arr, what, x, u):
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        bad = ~np.isfinite(arr)
        # locate the first offending state for the message
        xs = np.asarray(x, dtype=float)
        if xs.ndim > 1 and bad.ndim >= xs.ndim:
            idx = np.argwhere(bad.reshape(xs.shape[:-1] + (-1,)).any(-1))[0]
            xs = xs[tuple(idx)]
        raise EvaluationError(what, xs, u)
    return arr


@dataclass(frozen=True)
class ControlSystem:
    """``dX = b(X,u) dt + sigma(X,u) dW`` with ``u`` ranging over ``controls``."""

    n: int
    d: int
    b: Callable
    sigma: Callable
    dsigma: Callable
    controls: np.ndarray  # (n_controls, k): finite sample of U
    name: str = "system"
    bounds: tuple | None = None  # optional (lower, upper) box for U
    derivatives: str = "analytic"  # or "dual"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ValueError(f"dimensions must be positive, got n={self.n}, d={self.d}")
        ctrl = np.atleast_2d(np.asarray(self.controls, dtype=float))
        if ctrl.size == 0:
            raise ValueError("control sample U is empty")
        object.__setattr__(self, "controls", ctrl)

    @property
    def k(self) -> int:
        return self.controls.shape[1]

    def drift(self, x, u):
        return _finite(self.b(x, u), "drift", x, u)

    def diffusion(self, x, u):
        return _finite(self.sigma(x, u), "diffusion", x, u)

    def diffusion_jacobian(self, x, u, i):
        if not 0 <= i < self.d:
            raise IndexError(f"noise channel {i} out of range for d={self.d}")
        return _finite(self.dsigma(x, u, i), "diffusion Jacobian", x, u)


@dataclass(frozen=True)
class TestFunction:
    value: Callable
    grad: Callable
    hess: Callable
    name: str = "phi"

    __test__ = False  # not a pytest class


@dataclass(frozen=True)
class ClosedSet:
    """``K = {g <= 0}`` for a C^2 function ``g`` with a distance oracle."""

    g: Callable
    dg: Callable
    d2g: Callable
    distance: Callable | None = None
    name: str = "set"
    tol_set: float = 1e-10

    def dist(self, x):
        if self.distance is not None:
            return np.asarray(self.distance(x), dtype=float)
        return projected_distance(self, x)

    def contains(self, x, tol: float | None = None):
        return np.asarray(self.g(x)) <= (self.tol_set if tol is None else tol)

    def test_function(self) -> TestFunction:
        return TestFunction(self.g, self.dg, self.d2g, name=f"g[{self.name}]")


def _onto_surface(K: ClosedSet, y, iters: int = 100, tol: float = 1e-13):
    """Newton steps along the gradient until ``|g| <= tol``."""
    for _ in range(iters):
        gy = np.asarray(K.g(y))
        if np.max(np.abs(gy)) <= tol:
            break
        gr = np.asarray(K.dg(y))
        y = y - (gy / np.sum(gr * gr, axis=-1))[:, None] * gr
    return y


def projected_distance(K: ClosedSet, x, iters: int = 100, tol: float = 1e-13):
    """Distance to ``K`` for points outside, by Newton on the optimality system

        y - x + lam Dg(y) = 0,   g(y) = 0

    started from the gradient-flow projection of ``x`` onto ``{g = 0}``.
    Every candidate is a point of ``{g = 0}``, so the reported value never
    undershoots the true distance; the smallest candidate is returned."""
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1, x.shape[-1])
    out = np.zeros(flat.shape[0])
    outside = np.asarray(K.g(flat)) > K.tol_set
    if not np.any(outside):
        return out.reshape(x.shape[:-1])
    x0 = flat[outside]
    n = x0.shape[-1]
    y = _onto_surface(K, x0.copy())
    best = np.linalg.norm(y - x0, axis=-1)
    gr = np.asarray(K.dg(y))
    lam = -np.sum((y - x0) * gr, axis=-1) / np.sum(gr * gr, axis=-1)
    eye = np.eye(n)
    for _ in range(iters):
        gr = np.asarray(K.dg(y))
        F = np.concatenate([y - x0 + lam[:, None] * gr, np.asarray(K.g(y))[:, None]], axis=-1)
        if np.max(np.abs(F)) <= tol:
            break
        J = np.zeros((len(y), n + 1, n + 1))
        J[:, :n, :n] = eye + lam[:, None, None] * np.asarray(K.d2g(y))
        J[:, :n, n] = gr
        J[:, n, :n] = gr
        try:
            step = np.linalg.solve(J, -F[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        y = y + step[:, :n]
        lam = lam + step[:, n]
    ok = np.all(np.isfinite(y), axis=-1) & (np.abs(np.asarray(K.g(y))) <= 1e-9)
    cand = np.where(ok, np.linalg.norm(y - x0, axis=-1), np.inf)
    out[outside] = np.minimum(best, cand)
    return out.reshape(x.shape[:-1])


# ------------------------------------------------------------- operators


def stratonovich_drift(sys: ControlSystem, x, u):
    """``b(x,u) - 1/2 sum_i Dsigma^i(x,u) sigma^i(x,u)``."""
    bx = sys.drift(x, u)
    sig = sys.diffusion(x, u)
    corr = np.zeros_like(bx)
    for i in range(sys.d):
        corr = corr + np.einsum("...rc,...c->...r", sys.diffusion_jacobian(x, u, i), sig[..., i])
    return bx - 0.5 * corr


def _grad(phi: TestFunction, x):
    return _finite(phi.grad(x), f"gradient of {phi.name}", x, None)


def _hess(phi: TestFunction, x):
    return _finite(phi.hess(x), f"Hessian of {phi.name}", x, None)


def generator_second_order(sys: ControlSystem, phi: TestFunction, x, u):
    """``<b, Dphi> + 1/2 tr(D^2 phi sigma sigma^T)``."""
    Dphi = _grad(phi, x)
    H = _hess(phi, x)
    sig = sys.diffusion(x, u)
    first = np.sum(sys.drift(x, u) * Dphi, axis=-1)
    second = np.einsum("...ri,...rc,...ci->...", sig, H, sig)
    return first + 0.5 * second


def generator_first_order(sys: ControlSystem, phi: TestFunction, x, u):
    """``<b~, Dphi>`` with the Stratonovich drift ``b~``."""
    return np.sum(stratonovich_drift(sys, x, u) * _grad(phi, x), axis=-1)


def sigma_apply(sys: ControlSystem, phi: TestFunction, x, u, i: int):
    if not 0 <= i < sys.d:
        raise IndexError(f"noise channel {i} out of range for d={sys.d}")
    return np.sum(sys.diffusion(x, u)[..., i] * _grad(phi, x), axis=-1)


def sigma_second_apply(sys: ControlSystem, phi: TestFunction, x, u, i: int, j: int):
    """``sigma^i . D<sigma^j, Dphi>`` = ``<sigma^i, (Dsigma^j)^T Dphi + D^2phi sigma^j>``."""
    for idx in (i, j):
        if not 0 <= idx < sys.d:
            raise IndexError(f"noise channel {idx} out of range for d={sys.d}")
    sig = sys.diffusion(x, u)
    Dphi = _grad(phi, x)
    inner = (np.einsum("...rc,...r->...c", sys.diffusion_jacobian(x, u, j), Dphi)
             + np.einsum("...rc,...c->...r", _hess(phi, x), sig[..., j]))
    return np.sum(sig[..., i] * inner, axis=-1)


def assemble_A_matrix(sys: ControlSystem, phi: TestFunction, x, u):
    """Raw ``d x d`` matrix ``a_ij = sigma^i sigma^j phi``; no symmetrisation."""
    x = np.asarray(x, dtype=float)
    A = np.empty(x.shape[:-1] + (sys.d, sys.d))
    for i in range(sys.d):
        for j in range(sys.d):
            A[..., i, j] = sigma_second_apply(sys, phi, x, u, i, j)
    return A


# ------------------------------------------------------- consistency checks


def dsigma_fd_error(sys: ControlSystem, points, u, h: float = 1e-5) -> float:
    """Max abs gap between ``dsigma`` and central differences of ``sigma``."""
    worst = 0.0
    for x in np.atleast_2d(points):
        for i in range(sys.d):
            fd = central_difference(lambda y: sys.sigma(y, u)[..., i], x, h)
            worst = max(worst, float(np.max(np.abs(fd - sys.dsigma(x, u, i)))))
    return worst


def lipschitz_quotients(sys: ControlSystem, rng: np.random.Generator, n_pairs: int = 200,
                        scale: float = 2.0) -> dict:
    """Largest sampled ``|F(x)-F(y)| / |x-y|`` for ``b``, ``sigma``, ``Dsigma``."""
    x = rng.uniform(-scale, scale, size=(n_pairs, sys.n))
    y = x + rng.normal(scale=0.1, size=x.shape)
    dist = np.linalg.norm(x - y, axis=-1)
    out = {"b": 0.0, "sigma": 0.0, "dsigma": 0.0}
    for u in sys.controls:
        qb = np.linalg.norm(sys.b(x, u) - sys.b(y, u), axis=-1) / dist
        qs = np.linalg.norm((sys.sigma(x, u) - sys.sigma(y, u)).reshape(n_pairs, -1), axis=-1) / dist
        qd = max(
            np.max(np.linalg.norm((sys.dsigma(x, u, i) - sys.dsigma(y, u, i)).reshape(n_pairs, -1),
                                  axis=-1) / dist)
            for i in range(sys.d))
        out["b"] = max(out["b"], float(np.max(qb)))
        out["sigma"] = max(out["sigma"], float(np.max(qs)))
        out["dsigma"] = max(out["dsigma"], float(qd))
    return out
