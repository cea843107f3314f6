"""Shared numerical utilities.

Symmetric eigenvalues (cyclic Jacobi), the two-sample Kolmogorov-Smirnov
statistic, finite-difference derivative checks and reproducible seed
splitting for parallel Monte-Carlo.

Seed splitting
--------------
``rng_split(master, index)`` is the SplitMix64 output function applied to
``master + (index + 1) * 0x9E3779B97F4A7C15 (mod 2**64)``::

    z = (master + (index + 1) * 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    z =   z ^ (z >> 31)

Both steps are bijections of the 64-bit integers, so the map is injective in
``index`` for a fixed master and injective in ``master`` for a fixed index.
Each stream seed feeds ``numpy.random.default_rng`` (PCG64 behind a
SeedSequence).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# asymptotic two-sample KS coefficients c(alpha)
KS_COEFF = {0.01: 1.628, 0.05: 1.358}


class NumericsError(ValueError):
    pass


@dataclass(frozen=True)
class SymmetricSpectrum:
    eigenvalues: np.ndarray  # ascending, of sym(A)
    asymmetry: float  # max |A - A^T| entry
    eigenvectors: np.ndarray | None = None

    @property
    def max_eigenvalue(self) -> float:
        return float(self.eigenvalues[-1])


def symmetric_eigenvalues(A, tol: float = 1e-15, max_sweeps: int = 100,
                          keep_vectors: bool = False) -> SymmetricSpectrum:
    """Eigenvalues of ``(A + A^T)/2`` by the cyclic Jacobi rotation method.

    The asymmetry of the input is measured and returned, never silently
    discarded.
    """
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NumericsError(f"expected a square matrix, got shape {A.shape}")
    d = A.shape[0]
    if d > 64:
        raise NumericsError("Jacobi eigensolver is capped at dimension 64")
    if not np.all(np.isfinite(A)):
        raise NumericsError("matrix has non-finite entries")
    asym = float(np.max(np.abs(A - A.T))) if d else 0.0
    S = 0.5 * (A + A.T)
    V = np.eye(d)
    scale = max(float(np.sqrt(np.sum(S * S))), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(S, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = S[p, q]
                if apq == 0.0:
                    continue
                g = 100.0 * abs(apq)
                if abs(S[p, p]) + g == abs(S[p, p]) and abs(S[q, q]) + g == abs(S[q, q]):
                    # below rounding of both diagonals; a rotation would be the identity
                    S[p, q] = S[q, p] = 0.0
                    continue
                theta = (S[q, q] - S[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                elif abs(theta) > 1e150:  # theta^2 would overflow; t ~ 1/(2 theta)
                    t = 0.5 / theta
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # rotate rows/cols p, q
                Sp = S[:, p].copy()
                Sq = S[:, q].copy()
                S[:, p] = c * Sp - s * Sq
                S[:, q] = s * Sp + c * Sq
                Sp = S[p, :].copy()
                Sq = S[q, :].copy()
                S[p, :] = c * Sp - s * Sq
                S[q, :] = s * Sp + c * Sq
                S[p, q] = S[q, p] = 0.0
                Vp = V[:, p].copy()
                Vq = V[:, q].copy()
                V[:, p] = c * Vp - s * Vq
                V[:, q] = s * Vp + c * Vq
    else:
        raise NumericsError("Jacobi iteration did not converge")
    lam = np.diag(S).copy()
    order = np.argsort(lam, kind="stable")
    return SymmetricSpectrum(
        eigenvalues=lam[order],
        asymmetry=asym,
        eigenvectors=V[:, order] if keep_vectors else None,
    )


@dataclass(frozen=True)
class KSResult:
    statistic: float
    critical_1pct: float
    critical_5pct: float
    n_a: int
    n_b: int

    def rejects(self, alpha: float = 0.01) -> bool:
        crit = self.critical_1pct if alpha == 0.01 else self.critical_5pct
        return self.statistic > crit


def ks_statistic(sample_a, sample_b) -> KSResult:
    """Two-sample Kolmogorov-Smirnov statistic ``sup |F_a - F_b|``."""
    a = np.sort(np.ravel(np.asarray(sample_a, dtype=float)))
    b = np.sort(np.ravel(np.asarray(sample_b, dtype=float)))
    m, n = a.size, b.size
    if m == 0 or n == 0:
        raise NumericsError("KS statistic needs two nonempty samples")
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / m
    fb = np.searchsorted(b, pts, side="right") / n
    D = float(np.max(np.abs(fa - fb)))
    factor = np.sqrt((m + n) / (m * n))
    return KSResult(D, KS_COEFF[0.01] * factor, KS_COEFF[0.05] * factor, m, n)


@dataclass(frozen=True)
class FDReport:
    max_error: float
    tol: float
    worst_point: np.ndarray | None

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol


def central_difference(f: Callable, x, h: float) -> np.ndarray:
    """Jacobian of ``f`` at ``x`` by central differences, shape (*out, n)."""
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e.flat[k] = h
        cols.append((np.asarray(f(x + e), float) - np.asarray(f(x - e), float)) / (2 * h))
    return np.stack(cols, axis=-1)


def finite_difference_check(f: Callable, df: Callable, points: Iterable, h: float = 1e-5,
                            tol: float = 1e-5) -> FDReport:
    """Compare ``df`` against central differences of ``f``.

    The error is ``|fd - df| / max(1, |df|)`` elementwise, maximised over
    all points and components.
    """
    if not 1e-7 <= h <= 1e-3:
        raise NumericsError(f"step h={h} outside [1e-7, 1e-3]")
    worst, where = 0.0, None
    for x in points:
        x = np.asarray(x, dtype=float)
        fd = central_difference(f, x, h)
        exact = np.asarray(df(x), dtype=float).reshape(fd.shape)
        err = np.abs(fd - exact) / np.maximum(1.0, np.abs(exact))
        e = float(np.max(err)) if err.size else 0.0
        if e > worst or where is None:
            worst, where = max(worst, e), x
    return FDReport(worst, tol, where)


def rng_split(master_seed: int, task_index: int) -> int:
    """Derive an independent 64-bit stream seed (see module docstring)."""
    z = (int(master_seed) + (int(task_index) + 1) * GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def rng_split_array(master_seed, task_index) -> np.ndarray:
    """Vectorised ``rng_split`` over uint64 arrays (wrapping arithmetic)."""
    with np.errstate(over="ignore"):
        m = np.asarray(master_seed, dtype=np.uint64)
        i = np.asarray(task_index, dtype=np.uint64)
        z = m + (i + np.uint64(1)) * np.uint64(GOLDEN_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))


def stream(master_seed: int, task_index: int) -> np.random.Generator:
    return np.random.default_rng(rng_split(master_seed, task_index))


def parallel_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Order-preserving map; results do not depend on ``threads``."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
