"""Stochastic Taylor expansion at a boundary maximum and the quadratic-form
lemma behind the necessity direction.

For a constant control ``u`` and small ``t``::

    phi(X_t) = phi(x) + sum_i alpha_i W^i_t + sum_i beta_i (W^i_t)^2
               + sum_{i != j} gamma_ij int_0^t W^i dW^j + delta t + R_t

with ``alpha_i = sigma^i phi``, ``beta_i = (sigma^i)^2 phi / 2``,
``gamma_ij = sigma^i sigma^j phi`` (operator composition, the outer field
applied last) and ``delta = <b~, Dphi>``. ``R_t / t -> 0`` in probability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import rng_split, symmetric_eigenvalues
from .paths import TimeGrid, euler_maruyama, sample_noise
from .sde_core import (ControlSystem, TestFunction, generator_first_order, sigma_apply,
                       sigma_second_apply)


class InsufficientSamples(ValueError):
    pass


@dataclass(frozen=True)
class TaylorCoefficients:
    alpha: np.ndarray  # (d,)
    beta: np.ndarray  # (d,)
    gamma: np.ndarray  # (d, d), diagonal unused and kept at zero
    delta: float

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        d = alpha.size
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        gamma = np.zeros((d, d)) if self.gamma is None else np.asarray(self.gamma, dtype=float).reshape(d, d).copy()
        if beta.size != d:
            raise ValueError(f"beta has length {beta.size}, alpha has {d}")
        np.fill_diagonal(gamma, 0.0)
        values = np.concatenate([alpha, beta, gamma.ravel(), [self.delta]])
        if not np.all(np.isfinite(values)):
            raise ValueError("Taylor coefficients must be finite")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def d(self) -> int:
        return self.alpha.size

    def to_dict(self):
        return {"alpha": self.alpha.tolist(), "beta": self.beta.tolist(),
                "gamma": self.gamma.tolist(), "delta": self.delta}


def taylor_coefficients(sys: ControlSystem, phi: TestFunction, x, u) -> TaylorCoefficients:
    x = np.asarray(x, dtype=float)
    d = sys.d
    alpha = np.array([float(sigma_apply(sys, phi, x, u, i)) for i in range(d)])
    beta = np.array([0.5 * float(sigma_second_apply(sys, phi, x, u, i, i)) for i in range(d)])
    gamma = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            if i != j:
                gamma[i, j] = float(sigma_second_apply(sys, phi, x, u, i, j))
    delta = float(generator_first_order(sys, phi, x, u))
    return TaylorCoefficients(alpha, beta, gamma, delta)


def expansion_value(coeffs: TaylorCoefficients, W, I, t):
    """Polynomial part of the expansion, per path. ``W``: (N, d), ``I``: (N, d, d)."""
    g = coeffs.gamma
    return (W @ coeffs.alpha + (W ** 2) @ coeffs.beta
            + np.einsum("pij,ij->p", I, g) + coeffs.delta * t)


@dataclass(frozen=True)
class RemainderSample:
    t: float
    r: np.ndarray  # realised R_t per path
    seed: int


def taylor_remainder_samples(sys: ControlSystem, phi: TestFunction, x, u, t: float, N: int,
                             seed: int, steps: int = 1000) -> RemainderSample:
    """``R_t = phi(X_t) - phi(x) - expansion terms`` on ``N`` Euler paths,
    with ``X``, ``W`` and the iterated integrals from one bundle."""
    if t <= 0:
        raise ValueError("t must be positive")
    if steps < 1000:
        raise ValueError("need at least 1000 steps on [0, t]")
    x = np.asarray(x, dtype=float)
    coeffs = taylor_coefficients(sys, phi, x, u)
    bundle = sample_noise(sys.d, TimeGrid.from_steps(steps, t / steps), seed, N)
    X = euler_maruyama(sys, x, u, bundle).final()
    r = (np.asarray(phi.value(X), dtype=float) - float(phi.value(x))
         - expansion_value(coeffs, bundle.W[:, -1], bundle.iterated(), t))
    return RemainderSample(float(t), r, seed)


@dataclass(frozen=True)
class DecayReport:
    times: list
    probabilities: list
    eps: float
    slack: float
    passed: bool
    seed: int | None

    def to_dict(self):
        return {"times": self.times, "probabilities": self.probabilities, "eps": self.eps,
                "slack": self.slack, "verdict": "pass" if self.passed else "fail", "seed": self.seed}


def remainder_decay_test(samples: list, eps: float) -> DecayReport:
    """Empirical ``P[|R_t|/t > eps]`` along decreasing ``t``.

    Passes when the probabilities are nonincreasing up to ``2/sqrt(N)`` and
    the last one has dropped: below the slack, or a slack below the first.
    """
    if len(samples) < 3:
        raise InsufficientSamples("need samples at >= 3 times")
    times = [s.t for s in samples]
    if any(b >= a for a, b in zip(times, times[1:])):
        raise ValueError("times must be strictly decreasing")
    N = min(s.r.size for s in samples)
    if N < 500:
        raise InsufficientSamples(f"need >= 500 samples per time, got {N}")
    probs = [float(np.mean(np.abs(s.r) / s.t > eps)) for s in samples]
    slack = 2.0 / np.sqrt(N)
    monotone = all(b <= a + slack for a, b in zip(probs, probs[1:]))
    dropped = probs[-1] <= slack or probs[-1] <= probs[0] - slack
    return DecayReport(times, probs, eps, float(slack), bool(monotone and dropped), samples[0].seed)


def assemble_A(coeffs: TaylorCoefficients) -> np.ndarray:
    A = coeffs.gamma.copy()
    np.fill_diagonal(A, 2.0 * coeffs.beta)
    return A


@dataclass(frozen=True)
class LemmaVerdict:
    alpha_zero: bool
    gamma_symmetric: bool
    A_nsd: bool
    delta_nonpositive: bool
    max_eigenvalue: float
    asymmetry: float

    @property
    def passed(self) -> bool:
        return self.alpha_zero and self.gamma_symmetric and self.A_nsd and self.delta_nonpositive

    def to_dict(self):
        return {"alpha_zero": self.alpha_zero, "gamma_symmetric": self.gamma_symmetric,
                "A_nsd": self.A_nsd, "delta_nonpositive": self.delta_nonpositive,
                "max_eigenvalue": self.max_eigenvalue, "asymmetry": self.asymmetry,
                "passed": self.passed}


def lemma_conclusion_check(coeffs: TaylorCoefficients, tol: float = 1e-8) -> LemmaVerdict:
    spec = symmetric_eigenvalues(assemble_A(coeffs))
    return LemmaVerdict(
        alpha_zero=bool(np.max(np.abs(coeffs.alpha)) <= tol),
        gamma_symmetric=bool(spec.asymmetry <= tol),
        A_nsd=bool(spec.max_eigenvalue <= tol),
        delta_nonpositive=bool(coeffs.delta <= tol),
        max_eigenvalue=spec.max_eigenvalue,
        asymmetry=spec.asymmetry,
    )


@dataclass(frozen=True)
class FalsifierReport:
    times: list
    probabilities: list
    N: int
    steps: int
    seed: int

    @property
    def max_probability(self) -> float:
        return max(self.probabilities)

    def to_dict(self):
        return {"times": self.times, "probabilities": self.probabilities,
                "max_probability": self.max_probability, "N": self.N, "steps": self.steps,
                "seed": self.seed}


def quadratic_form_samples(coeffs: TaylorCoefficients, t: float, N: int, seed: int,
                           steps: int = 5000, chunk: int = 250) -> np.ndarray:
    """Samples of ``S_t`` (the expansion with ``R = 0``) with Ito left-point
    iterated integrals on ``steps`` steps."""
    grid = TimeGrid.from_steps(steps, t / steps)
    out = np.empty(N)
    for a in range(0, N, chunk):
        n = min(chunk, N - a)
        bundle = sample_noise(coeffs.d, grid, seed, n, first=a)
        out[a:a + n] = expansion_value(coeffs, bundle.W[:, -1], bundle.iterated(), t)
    return out


def lemma_falsifier(coeffs: TaylorCoefficients, times, N: int, seed: int,
                    steps: int = 5000) -> FalsifierReport:
    """Monte-Carlo estimate of ``P[S_t > 0]`` at each ``t``."""
    times = [float(t) for t in times]
    if not times:
        raise ValueError("times must be nonempty")
    if N < 1000:
        raise InsufficientSamples(f"falsifier needs N >= 1000, got {N}")
    probs = [float(np.mean(quadratic_form_samples(coeffs, t, N, rng_split(seed, k), steps) > 0))
             for k, t in enumerate(times)]
    return FalsifierReport(times, probs, N, steps, seed)
