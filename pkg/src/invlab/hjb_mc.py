"""Monte-Carlo estimate of the discounted running cost

    V(x) >= E[ int_0^inf exp(-C s) g(X_s) ds ]

for each policy in a finite list, and the check that it stays below
``f(x) = 1 - 1_K(x)``, which is zero on ``K``. The maximum over a finite
policy list only lower-bounds the supremum over adapted controls, so a
pass is a necessary condition for ``V <= f``, not a certificate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .numerics import parallel_map, rng_split
from .paths import ConstantPolicy, TimeGrid, as_policy, euler_maruyama, sample_noise
from .sde_core import ClosedSet, ControlSystem


@dataclass(frozen=True)
class DiscountedProblem:
    sys: ControlSystem
    K: ClosedSet
    cost: Callable | None = None  # R^n -> [0, 1], zero exactly on K
    C: float = 1.0
    T_trunc: float = 10.0

    def __post_init__(self):
        if self.C < 1:
            raise ValueError(f"discount C must be >= 1, got {self.C}")
        if self.tail > 1e-4 + 1e-15:
            raise ValueError(f"T_trunc={self.T_trunc} leaves tail {self.tail:.3g} > 1e-4")

    @property
    def tail(self) -> float:
        """Bound on the neglected ``int_T^inf exp(-C s) g ds`` (``g <= 1``)."""
        return math.exp(-self.C * self.T_trunc) / self.C

    def running_cost(self, x):
        if self.cost is None:
            return np.minimum(self.K.dist(x), 1.0)
        return np.asarray(self.cost(x), dtype=float)

    def f(self, x):
        return np.where(self.K.dist(x) > 0, 1.0, 0.0)


@dataclass
class CostEstimate:
    estimate: float
    stderr: float
    tail: float
    n_paths: int

    def to_dict(self):
        return {"estimate": self.estimate, "stderr": self.stderr, "tail": self.tail,
                "n_paths": self.n_paths}


def discounted_integrals(prob: DiscountedProblem, x0, policy, N: int, dt: float,
                         seed: int) -> np.ndarray:
    """Per-path trapezoid value of ``int_0^T exp(-C s) g(X_s) ds``."""
    grid = TimeGrid(prob.T_trunc, dt)
    bundle = sample_noise(prob.sys.d, grid, seed, N)
    path = euler_maruyama(prob.sys, x0, as_policy(policy), bundle)
    vals = np.exp(-prob.C * grid.times) * prob.running_cost(path.states)
    return dt * (0.5 * vals[:, 0] + vals[:, 1:-1].sum(axis=1) + 0.5 * vals[:, -1])


def discounted_cost_estimate(prob: DiscountedProblem, x0, policy, N: int = 200,
                             dt: float = 1e-3, seed: int = 0) -> CostEstimate:
    per_path = discounted_integrals(prob, x0, policy, N, dt, seed)
    se = float(per_path.std(ddof=1) / np.sqrt(N)) if N > 1 else float("nan")
    return CostEstimate(float(per_path.mean()), se, prob.tail, N)


@dataclass
class ValueBoundReport:
    starts: list
    policies: list
    estimates: list  # [start][policy]
    stderrs: list
    tail: float
    slack: float
    passed: bool

    @property
    def worst_excess(self) -> float:
        return max(e - 3 * s - self.tail for row_e, row_s in zip(self.estimates, self.stderrs)
                   for e, s in zip(row_e, row_s))

    def to_dict(self):
        return {"starts": self.starts, "policies": self.policies, "estimates": self.estimates,
                "stderrs": self.stderrs, "tail": self.tail, "slack": self.slack,
                "worst_excess": self.worst_excess,
                "verdict": "pass" if self.passed else "fail"}


def constant_policies(sys: ControlSystem) -> list:
    return [ConstantPolicy(tuple(u.tolist())) for u in sys.controls]


def value_bound_check(prob: DiscountedProblem, starts, policies: Sequence | None = None,
                      N: int = 200, dt: float = 1e-3, seed: int = 0, slack: float = 0.02,
                      threads: int = 1) -> ValueBoundReport:
    """Pass iff ``estimate - 3 stderr - tail <= slack`` for every start in
    ``K`` and every policy. Constant controls of the U sample are always
    included."""
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    if np.any(prob.K.dist(starts) > prob.K.tol_set):
        raise ValueError("all starts must lie in K")
    pols = constant_policies(prob.sys)
    for p in policies or ():
        if p not in pols:
            pols.append(p)
    jobs = [(i, j) for i in range(len(starts)) for j in range(len(pols))]

    def run(job):
        i, j = job
        return discounted_cost_estimate(prob, starts[i], pols[j], N, dt,
                                        rng_split(seed, i * len(pols) + j))

    res = parallel_map(run, jobs, threads)
    est = [[0.0] * len(pols) for _ in starts]
    err = [[0.0] * len(pols) for _ in starts]
    for (i, j), r in zip(jobs, res):
        est[i][j], err[i][j] = r.estimate, r.stderr
    report = ValueBoundReport(
        starts=starts.tolist(),
        policies=[p.describe() if hasattr(p, "describe") else repr(p) for p in pols],
        estimates=est, stderrs=err, tail=prob.tail, slack=slack, passed=False)
    report.passed = bool(report.worst_excess <= slack)
    return report
