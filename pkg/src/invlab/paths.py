"""Brownian drivers, Euler-Maruyama, RK4 and the Wong-Zakai smoothed noise.

Every path in a :class:`NoiseBundle` draws its increments from its own
stream ``rng_split(seed, path_index)``, so path ``p`` is the same whatever
the batch size or worker count.

Wong-Zakai driver
-----------------
For a smoothing level ``m`` the noise is

    eta^m_s = sqrt(m) * (W^(m)_{ms+1} - W^(m)_{ms}),   Y^m_t = int_0^t eta^m_s ds,

driven by the standard Brownian motion ``W^(m)_r = sqrt(m) B_{r/m}`` built
from the bundle path ``B`` by Brownian scaling. Then
``eta^m_s = m (B_{s+1/m} - B_s)`` and ``Y^m`` converges to ``B`` uniformly
on compacts, path by path, so one bundle serves every ``m``. ``B`` is
linearly interpolated between grid nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .numerics import stream
from .sde_core import ControlSystem, stratonovich_drift

BLOWUP = 1e8


class GridError(ValueError):
    pass


class ResolutionError(ValueError):
    pass


class DivergenceError(ArithmeticError):
    def __init__(self, step: int, path: int | None = None):
        self.step, self.path = step, path
        super().__init__(f"state norm exceeded {BLOWUP:g} at step {step}"
                         + ("" if path is None else f" (path {path})"))


@dataclass(frozen=True)
class TimeGrid:
    T: float
    dt: float

    def __post_init__(self):
        if not (self.T > 0 and self.dt > 0):
            raise GridError(f"need T > 0 and dt > 0, got T={self.T}, dt={self.dt}")
        steps = round(self.T / self.dt)
        if steps < 1 or abs(steps * self.dt - self.T) > 1e-12 * max(1.0, self.T):
            raise GridError(f"dt={self.dt} does not divide T={self.T}")

    @classmethod
    def from_steps(cls, steps: int, dt: float) -> "TimeGrid":
        return cls(steps * dt, dt)

    @property
    def steps(self) -> int:
        return round(self.T / self.dt)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def index(self, t: float) -> int:
        k = round(t / self.dt)
        if abs(k * self.dt - t) > 1e-9 * max(1.0, t) or not 0 <= k <= self.steps:
            raise GridError(f"time {t} is not a node of the grid")
        return k


@dataclass(frozen=True)
class NoiseBundle:
    """Brownian increments for ``n_paths`` independent paths on one grid."""

    grid: TimeGrid
    dW: np.ndarray  # (n_paths, steps, d)
    seed: int

    @property
    def d(self) -> int:
        return self.dW.shape[-1]

    @property
    def n_paths(self) -> int:
        return self.dW.shape[0]

    @cached_property
    def W(self) -> np.ndarray:
        W = np.zeros((self.n_paths, self.grid.steps + 1, self.d))
        np.cumsum(self.dW, axis=1, out=W[:, 1:])
        return W

    def iterated(self, k: int | None = None) -> np.ndarray:
        """Left-point sums ``I[p, i, j] = sum_{l<k} W^i_l dW^j_l`` (Ito)."""
        k = self.grid.steps if k is None else k
        return np.einsum("pli,plj->pij", self.W[:, :k], self.dW[:, :k])

    def iterated_path(self) -> np.ndarray:
        """Running iterated integrals, shape (n_paths, steps + 1, d, d)."""
        terms = self.W[:, :-1, :, None] * self.dW[:, :, None, :]
        out = np.zeros((self.n_paths, self.grid.steps + 1, self.d, self.d))
        np.cumsum(terms, axis=1, out=out[:, 1:])
        return out

    def at(self, t: float) -> np.ndarray:
        return self.W[:, self.grid.index(t)]

    def coarsen(self, factor: int) -> "NoiseBundle":
        """Same paths on a grid ``factor`` times coarser."""
        if self.grid.steps % factor:
            raise GridError(f"factor {factor} does not divide {self.grid.steps} steps")
        dW = self.dW.reshape(self.n_paths, -1, factor, self.d).sum(axis=2)
        return NoiseBundle(TimeGrid(self.grid.T, self.grid.dt * factor), dW, self.seed)

    def interp(self, s: float) -> np.ndarray:
        """Linear interpolation of ``W`` at time ``s``, shape (n_paths, d)."""
        pos = s / self.grid.dt
        k = min(max(int(math.floor(pos)), 0), self.grid.steps - 1)
        frac = pos - k
        if frac < -1e-9 or frac > 1 + 1e-9:
            raise GridError(f"time {s} outside [0, {self.grid.T}]")
        W = self.W
        return W[:, k] + frac * (W[:, k + 1] - W[:, k])


def sample_noise(d: int, grid: TimeGrid, seed: int, n_paths: int = 1, first: int = 0) -> NoiseBundle:
    """Paths ``first .. first + n_paths - 1`` of the family seeded by ``seed``."""
    if d < 1:
        raise ValueError(f"noise dimension must be >= 1, got {d}")
    if not isinstance(grid, TimeGrid):
        raise GridError("grid must be a TimeGrid")
    sq = math.sqrt(grid.dt)
    dW = np.empty((n_paths, grid.steps, d))
    for p in range(n_paths):
        dW[p] = stream(seed, first + p).standard_normal((grid.steps, d)) * sq
    return NoiseBundle(grid, dW, seed)


def levy_area(bundle: NoiseBundle, i: int, j: int, t: float = 1.0) -> np.ndarray:
    """``int_0^t W^i dW^j - int_0^t W^j dW^i`` per path."""
    if i == j:
        raise ValueError("Levy area needs i != j")
    if bundle.grid.T < t - 1e-12:
        raise GridError(f"bundle horizon {bundle.grid.T} shorter than {t}")
    I = bundle.iterated(bundle.grid.index(t))
    return I[:, i, j] - I[:, j, i]


# ---------------------------------------------------------------- policies


@dataclass(frozen=True)
class ConstantPolicy:
    u: tuple

    def __call__(self, t, x):
        return np.asarray(self.u, dtype=float)

    def describe(self):
        return {"type": "constant", "u": list(self.u)}


@dataclass(frozen=True)
class SchedulePolicy:
    """Piecewise-constant in time: ``controls[k]`` on ``[switch[k], switch[k+1])``."""

    switch: tuple
    controls: tuple

    def __call__(self, t, x):
        k = int(np.searchsorted(self.switch, t + 1e-12, side="right")) - 1
        return np.asarray(self.controls[max(k, 0)], dtype=float)

    def describe(self):
        return {"type": "schedule", "switch": list(self.switch),
                "controls": [list(c) for c in self.controls]}


@dataclass(frozen=True)
class FeedbackPolicy:
    fn: Callable  # (t, x[N, n]) -> u[N, k]

    def __call__(self, t, x):
        return np.asarray(self.fn(t, x), dtype=float)

    def describe(self):
        return {"type": "feedback", "fn": getattr(self.fn, "__name__", "callable")}


def as_policy(p):
    if callable(p):
        return p
    return ConstantPolicy(tuple(np.atleast_1d(np.asarray(p, dtype=float)).tolist()))


# ---------------------------------------------------------------- integrators


@dataclass
class SamplePath:
    grid: TimeGrid
    states: np.ndarray  # (n_paths, steps + 1, n)
    policy: object = None
    diverged: np.ndarray | None = None  # bool per path
    meta: dict = field(default_factory=dict)

    @property
    def times(self):
        return self.grid.times

    def final(self):
        return self.states[:, -1]

    def to_csv(self, path, index: int = 0) -> None:
        n = self.states.shape[-1]
        lines = ["t," + ",".join(f"x{i + 1}" for i in range(n))]
        for t, row in zip(self.times, self.states[index]):
            lines.append(",".join(format(float(v), ".17g") for v in (t, *row)))
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")


def _start(x0, n_paths, n):
    x0 = np.asarray(x0, dtype=float)
    if x0.shape[-1] != n:
        raise ValueError(f"initial state has dimension {x0.shape[-1]}, expected {n}")
    return np.array(np.broadcast_to(x0, (n_paths, n)))


def euler_maruyama(sys: ControlSystem, x0, policy, bundle: NoiseBundle,
                   strict: bool = True) -> SamplePath:
    """``X_{k+1} = X_k + b dt + sigma dW_k`` on the bundle grid.

    With ``strict=False`` a diverging path is frozen at NaN and flagged in
    ``diverged`` instead of raising.
    """
    if bundle.d != sys.d:
        raise ValueError(f"bundle has d={bundle.d}, system has d={sys.d}")
    policy = as_policy(policy)
    N, dt = bundle.n_paths, bundle.grid.dt
    x = _start(x0, N, sys.n)
    out = np.empty((N, bundle.grid.steps + 1, sys.n))
    out[:, 0] = x
    dead = np.zeros(N, dtype=bool)
    times = bundle.grid.times
    for k in range(bundle.grid.steps):
        u = policy(times[k], x)
        drift = sys.drift(x, u) * dt
        noise = np.einsum("prc,pc->pr", sys.diffusion(x, u), bundle.dW[:, k])
        x = x + drift + noise
        big = ~(np.linalg.norm(x, axis=-1) <= BLOWUP)
        if np.any(big & ~dead):
            if strict:
                raise DivergenceError(k + 1, int(np.argmax(big & ~dead)))
            dead |= big
        if np.any(dead):
            x[dead] = 0.0
            out[:, k + 1] = np.where(dead[:, None], np.nan, x)
        else:
            out[:, k + 1] = x
    return SamplePath(bundle.grid, out, policy, dead)


def ode_solve(field: Callable, x0, grid: TimeGrid) -> SamplePath:
    """Fixed-step classical RK4 for ``x' = field(t, x)`` (batched ``x``)."""
    x = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    out = np.empty((x.shape[0], grid.steps + 1, x.shape[1]))
    out[:, 0] = x
    h = grid.dt
    times = grid.times
    for k in range(grid.steps):
        t = times[k]
        k1 = field(t, x)
        k2 = field(t + h / 2, x + (h / 2) * k1)
        k3 = field(t + h / 2, x + (h / 2) * k2)
        k4 = field(t + h, x + h * k3)
        x = x + h * ((k1 + 2 * k2 + 2 * k3 + k4) / 6)
        if not np.all(np.linalg.norm(x, axis=-1) <= BLOWUP):
            raise DivergenceError(k + 1)
        out[:, k + 1] = x
    return SamplePath(grid, out)


def deterministic_field(sys: ControlSystem, u_ctrl, v_ctrl) -> Callable:
    """``(t, x) -> b~(x, u(t)) + sigma(x, u(t)) v(t)``; ``v(t)`` may be (d,) or (B, d)."""

    def field(t, x):
        u = np.asarray(u_ctrl(t), dtype=float)
        v = np.asarray(v_ctrl(t), dtype=float)
        return stratonovich_drift(sys, x, u) + np.einsum("...rc,...c->...r", sys.diffusion(x, u), v)

    return field


# ---------------------------------------------------------------- Wong-Zakai


def wong_zakai_bundle(d: int, T: float, m_max: int, seed: int, n_paths: int,
                      resolution: int = 10) -> NoiseBundle:
    """Bundle on ``[0, T + 1]`` with step ``1 / (resolution * m_max)``."""
    if m_max < 1:
        raise ValueError("m must be >= 1")
    dt = 1.0 / (resolution * m_max)
    return sample_noise(d, TimeGrid.from_steps(math.ceil((T + 1.0) / dt - 1e-9), dt), seed, n_paths)


def _check_wz(bundle: NoiseBundle, m: int, T: float):
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if bundle.grid.dt > 1.0 / (10 * m) + 1e-15:
        raise ResolutionError(f"driver step {bundle.grid.dt} too coarse for m={m}; need <= {1 / (10 * m)}")
    if bundle.grid.T < T + 1.0 / m - 1e-12:
        raise ResolutionError(f"driver horizon {bundle.grid.T} shorter than T + 1/m = {T + 1.0 / m}")


def scaled_driver(bundle: NoiseBundle, m: int) -> Callable:
    """``r -> sqrt(m) B_{r/m}``: a standard Brownian motion on ``[0, m T_B]``."""
    rm = math.sqrt(m)
    return lambda r: rm * bundle.interp(r / m)


def eta(bundle: NoiseBundle, m: int) -> Callable:
    """``s -> sqrt(m) (W^(m)_{ms+1} - W^(m)_{ms})``, shape (n_paths, d)."""
    W = scaled_driver(bundle, m)
    rm = math.sqrt(m)
    return lambda s: rm * (W(m * s + 1.0) - W(m * s))


@dataclass
class SmoothNoise:
    grid: TimeGrid
    Y: np.ndarray  # (n_paths, steps + 1, d)
    eta: np.ndarray  # (n_paths, steps + 1, d)
    m: int


def wong_zakai_smooth(bundle: NoiseBundle, m: int, grid: TimeGrid | None = None) -> SmoothNoise:
    """``Y^m`` on ``grid`` by trapezoid quadrature of ``eta^m``."""
    grid = grid or TimeGrid(1.0, bundle.grid.dt)
    _check_wz(bundle, m, grid.T)
    f = eta(bundle, m)
    vals = np.stack([f(s) for s in grid.times], axis=1)
    Y = np.zeros_like(vals)
    np.cumsum(0.5 * grid.dt * (vals[:, 1:] + vals[:, :-1]), axis=1, out=Y[:, 1:])
    return SmoothNoise(grid, Y, vals, m)


def wong_zakai_solve(sys: ControlSystem, x0, u, m: int, bundle: NoiseBundle,
                     grid: TimeGrid | None = None) -> SamplePath:
    """RK4 for ``x' = b~(x,u) + sigma(x,u) eta^m(t)`` on every bundle path."""
    grid = grid or TimeGrid(1.0, bundle.grid.dt)
    _check_wz(bundle, m, grid.T)
    if bundle.d != sys.d:
        raise ValueError(f"bundle has d={bundle.d}, system has d={sys.d}")
    u = np.asarray(u, dtype=float)
    f = eta(bundle, m)

    def field(t, x):
        return stratonovich_drift(sys, x, u) + np.einsum("prc,pc->pr", sys.diffusion(x, u), f(t))

    sp = ode_solve(field, _start(x0, bundle.n_paths, sys.n), grid)
    sp.policy = ConstantPolicy(tuple(u.tolist()))
    sp.meta["m"] = m
    return sp
