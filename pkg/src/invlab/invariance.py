"""Boundary checks of the invariance conditions, simulation-based checks,
and the audit that all of them agree.

Analytic checks run at boundary points ``x`` of ``K = {g <= 0}`` with the
test function ``phi = g``, which attains its maximum over ``K`` (zero) at
every boundary point. Extra test functions may be supplied; each must
attain its maximum over ``K`` at the given point. This family is a
heuristic certificate: it detects every violation in the catalog but is
not a proof of sufficiency for arbitrary sets.
"""

from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .numerics import parallel_map, rng_split, stream, symmetric_eigenvalues
from .paths import (ConstantPolicy, DivergenceError, NoiseBundle, SchedulePolicy, TimeGrid, deterministic_field,
                    euler_maruyama, ode_solve, sample_noise, wong_zakai_bundle, wong_zakai_solve)
from .sde_core import (ClosedSet, ControlSystem, TestFunction, assemble_A_matrix,
                       generator_first_order, generator_second_order)

log = logging.getLogger(__name__)

COMPLETENESS_CAVEAT = (
    "analytic checks use the canonical test function phi = g (plus any supplied extras); "
    "they are exact for the tested family, not for every C^2 test function")


def default_tol() -> float:
    return float(os.environ.get("INVLAB_TOL", "1e-8"))


@dataclass(frozen=True)
class Tolerances:
    eq: float = field(default_factory=default_tol)
    sym: float = field(default_factory=default_tol)
    set: float = 1e-10
    grad_floor: float = 1e-6
    mc: float = 0.05  # mean d_K allowed from Euler scheme error
    ode: float = 1e-6
    wz: float = 1e-5

    @classmethod
    def for_system(cls, sys: ControlSystem, **kw) -> "Tolerances":
        if sys.derivatives != "analytic" and "INVLAB_TOL" not in os.environ:
            kw.setdefault("eq", 1e-4)
            kw.setdefault("sym", 1e-4)
        return cls(**kw)


class ScanError(RuntimeError):
    pass


@dataclass(frozen=True)
class BoundaryPoint:
    x: np.ndarray
    phi: TestFunction

    def to_list(self):
        return [float(v) for v in self.x]


def boundary_scan(K: ClosedSet, n: int, n_points: int, seed: int, radius: float = 2.0,
                  grad_floor: float = 1e-6, max_iter: int = 100,
                  max_tries: int | None = None) -> list[BoundaryPoint]:
    """Newton-project random ambient samples onto ``{g = 0}``."""
    rng = stream(seed, 0)
    phi = K.test_function()
    points: list[BoundaryPoint] = []
    tries = 0
    max_tries = max_tries or 4 * n_points
    skipped = 0
    while len(points) < n_points and tries < max_tries:
        tries += 1
        x = rng.uniform(-radius, radius, size=n)
        ok = False
        for _ in range(max_iter):
            gx = float(K.g(x))
            grad = np.asarray(K.dg(x), dtype=float)
            nrm2 = float(grad @ grad)
            if abs(gx) <= 1e-14:
                ok = True
                break
            if nrm2 == 0.0:
                break
            x = x - gx / nrm2 * grad
        grad = np.asarray(K.dg(x), dtype=float)
        if not ok and abs(float(K.g(x))) <= K.tol_set:
            ok = True
        if not ok or np.linalg.norm(grad) < grad_floor:
            skipped += 1
            log.warning("boundary projection failed or degenerate at %s", x.tolist())
            continue
        points.append(BoundaryPoint(x, phi))
    if not points:
        raise ScanError(f"no usable boundary point of {K.name} after {tries} samples "
                        f"(gradient floor {grad_floor})")
    return points


@dataclass
class ConditionReport:
    condition: str
    checks: dict
    worst_violation: float
    witness: dict
    tolerances: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self):
        return {"condition": self.condition, "checks": dict(self.checks), "passed": self.passed,
                "worst_violation": self.worst_violation, "witness": self.witness,
                "tolerances": self.tolerances}


def _point(bp):
    if isinstance(bp, BoundaryPoint):
        return bp.phi, np.asarray(bp.x, dtype=float)
    phi, x = bp
    return phi, np.asarray(x, dtype=float)


def _orthogonality(sys, phi, x, u):
    return np.asarray(sys.diffusion(x, u), dtype=float).T @ np.asarray(phi.grad(x), dtype=float)


def condition_b_check(sys: ControlSystem, bp, tol: float | None = None) -> ConditionReport:
    """``max_u L phi <= tol`` and ``<sigma^i, Dphi> = 0`` for all ``i, u``."""
    tol = default_tol() if tol is None else tol
    phi, x = _point(bp)
    gens, orth = [], []
    for u in sys.controls:
        gens.append(float(generator_second_order(sys, phi, x, u)))
        orth.append(float(np.max(np.abs(_orthogonality(sys, phi, x, u)))))
    ig, io = int(np.argmax(gens)), int(np.argmax(orth))
    checks = {"generator": gens[ig] <= tol, "orthogonality": orth[io] <= tol}
    worst = max(gens[ig], orth[io], 0.0)
    wu = sys.controls[io if orth[io] >= gens[ig] else ig]
    return ConditionReport("b", checks, worst,
                           {"x": x.tolist(), "u": wu.tolist(), "max_generator": gens[ig],
                            "max_orthogonality": orth[io]},
                           {"tol": tol})


def condition_c_check(sys: ControlSystem, bp, tol: float | None = None,
                      tol_sym: float | None = None) -> ConditionReport:
    """First-order generator, orthogonality, and A symmetric negative semidefinite."""
    tol = default_tol() if tol is None else tol
    tol_sym = tol if tol_sym is None else tol_sym
    phi, x = _point(bp)
    rows = []
    for u in sys.controls:
        spec = symmetric_eigenvalues(assemble_A_matrix(sys, phi, x, u))
        rows.append({
            "u": u,
            "generator": float(generator_first_order(sys, phi, x, u)),
            "orthogonality": float(np.max(np.abs(_orthogonality(sys, phi, x, u)))),
            "asymmetry": spec.asymmetry,
            "max_eigenvalue": spec.max_eigenvalue,
        })
    limits = {"generator": tol, "orthogonality": tol, "asymmetry": tol_sym, "max_eigenvalue": tol}
    names = {"generator": "generator", "orthogonality": "orthogonality",
             "asymmetry": "A_symmetric", "max_eigenvalue": "A_nsd"}
    checks, excess, worst_row = {}, 0.0, rows[0]
    for key, lim in limits.items():
        top = max(rows, key=lambda r: r[key])
        checks[names[key]] = top[key] <= lim
        if top[key] - lim > excess:
            excess, worst_row = top[key] - lim, top
    worst = max(max(max(r["generator"], r["orthogonality"], r["asymmetry"], r["max_eigenvalue"])
                    for r in rows), 0.0)
    witness = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in worst_row.items()}
    witness["x"] = x.tolist()
    return ConditionReport("c", checks, worst, witness, {"tol": tol, "tol_sym": tol_sym})


def condition_e_check(sys: ControlSystem, bp, v_probe_radius: float = 1.0,
                      tol: float | None = None) -> ConditionReport:
    """Sup over ``u`` and all ``v in R^d`` of ``L' phi + <sigma v, Dphi>``.

    The sup is finite only if ``sigma^T Dphi = 0``; otherwise the report
    carries the unbounded direction ``v = sigma^T Dphi / |sigma^T Dphi|``.
    """
    tol = default_tol() if tol is None else tol
    phi, x = _point(bp)
    best_dir, best_norm, gens = None, 0.0, []
    for u in sys.controls:
        s = _orthogonality(sys, phi, x, u)
        nrm = float(np.linalg.norm(s))
        if nrm > best_norm:
            best_norm, best_dir = nrm, (u, s / nrm)
        gens.append(float(generator_first_order(sys, phi, x, u)))
    bounded = best_norm <= tol
    ig = int(np.argmax(gens))
    checks = {"bounded": bounded, "generator": gens[ig] <= tol}
    if not bounded:
        u, v = best_dir
        witness = {"x": x.tolist(), "u": u.tolist(), "v": (v_probe_radius * v).tolist(),
                   "unbounded_direction": True}
        # the sup is +inf; report the slope |sigma^T Dphi| along v
        worst = best_norm
    else:
        witness = {"x": x.tolist(), "u": sys.controls[ig].tolist(), "v": None,
                   "unbounded_direction": False, "max_generator": gens[ig]}
        worst = max(gens[ig], 0.0)
    return ConditionReport("e", checks, worst, witness, {"tol": tol})


# ------------------------------------------------------------ dynamic checks


def truncate_control(v_ctrl: Callable, n: float) -> Callable:
    """Pointwise projection of ``v(t)`` onto the closed ball of radius ``n``."""
    if n < 1:
        raise ValueError("truncation radius must be >= 1")

    def truncated(t):
        v = np.asarray(v_ctrl(t), dtype=float)
        nrm = np.linalg.norm(v, axis=-1, keepdims=True)
        return np.where(nrm > n, v * (n / np.where(nrm > 0, nrm, 1.0)), v)

    return truncated


def deterministic_invariance_check(sys: ControlSystem, K: ClosedSet, x0, u_ctrl, v_ctrl,
                                   T: float = 1.0, dt: float = 1e-3) -> float:
    """Max over the RK4 trajectory of ``d_K(x(t))``. ``u_ctrl`` may be a
    constant control point or a callable of ``t``."""
    if not callable(u_ctrl):
        fixed = np.asarray(u_ctrl, dtype=float)
        u_ctrl = lambda t: fixed  # noqa: E731
    path = ode_solve(deterministic_field(sys, u_ctrl, v_ctrl), x0, TimeGrid(T, dt))
    return float(np.max(K.dist(path.states)))


@dataclass
class MCInvariance:
    mean_final: float
    max_checkpoint_mean: float
    checkpoint_means: list
    frac_exceed: float
    eps: float
    n_paths: int
    n_diverged: int

    def to_dict(self):
        return asdict(self)


def _mc_distances(sys, K, x0, policy, T, dt, N, seed):
    grid = TimeGrid(T, dt)
    bundle = sample_noise(sys.d, grid, seed, N)
    path = euler_maruyama(sys, x0, policy, bundle, strict=False)
    idx = [grid.index(T * q / 4) for q in (1, 2, 3, 4)]
    dist = K.dist(path.states[:, idx])
    return dist, path.diverged


def mc_invariance_estimate(sys: ControlSystem, K: ClosedSet, x0, policy, T: float = 1.0,
                           dt: float = 1e-3, N: int = 500, seed: int = 0,
                           eps: float = 0.1) -> MCInvariance:
    """Distance statistics of Euler paths at ``T/4, T/2, 3T/4, T``.
    Diverged paths are excluded from the means and counted."""
    dist, dead = _mc_distances(sys, K, x0, policy, T, dt, N, seed)
    live = dist[~dead]
    means = live.mean(axis=0).tolist() if live.size else [float("nan")] * 4
    return MCInvariance(
        mean_final=float(means[-1]),
        max_checkpoint_mean=float(max(means)),
        checkpoint_means=[float(m) for m in means],
        frac_exceed=float(np.mean(live[:, -1] > eps)) if live.size else float("nan"),
        eps=eps, n_paths=N, n_diverged=int(dead.sum()))


def wong_zakai_invariance_estimate(sys: ControlSystem, K: ClosedSet, x0, u, m: int, N: int,
                                   seed: int, T: float = 1.0) -> float:
    """Mean over drivers of ``max_t d_K(X^m_t)``."""
    bundle = wong_zakai_bundle(sys.d, T, m, seed, N)
    path = wong_zakai_solve(sys, x0, u, m, bundle, TimeGrid(T, bundle.grid.dt))
    return float(np.mean(np.max(K.dist(path.states), axis=1)))


# ------------------------------------------------------------------ audit


@dataclass(frozen=True)
class AuditBudget:
    T: float = 1.0
    dt: float = 1e-3
    mc_paths: int = 64
    ode_controls: int = 5
    ode_dt: float = 1e-3
    wz_m: int = 16
    wz_paths: int = 16
    v_scale: float = 2.0


def random_v_controls(d: int, count: int, rng: np.random.Generator, scale: float = 2.0) -> list:
    """Antithetic constant pairs, a time-varying control, and truncations."""
    c1 = rng.normal(scale=scale, size=d)
    c2 = rng.normal(scale=scale, size=d)
    w = float(rng.uniform(1.0, 6.0))
    base = [
        ("const", lambda t, c=c1: c),
        ("const-flipped", lambda t, c=c1: -c),
        ("oscillating", lambda t, c=c2, w=w: c * np.cos(w * t)),
        ("truncated-1", truncate_control(lambda t, c=c1: 3.0 * c, 1)),
        ("truncated-2", truncate_control(lambda t, c=c2, w=w: -3.0 * c * (1 + np.sin(w * t)), 2)),
    ]
    out = list(base)
    while len(out) < count:
        c = rng.normal(scale=scale, size=d)
        out.append((f"const-{len(out)}", lambda t, c=c: c))
    return out[:count]


def _u_schedule(sys, rng, T):
    picks = rng.integers(0, len(sys.controls), size=4)
    return SchedulePolicy(tuple(T * q / 4 for q in range(4)),
                          tuple(tuple(sys.controls[p].tolist()) for p in picks))


def _stack_bundles(bundles):
    return NoiseBundle(bundles[0].grid, np.concatenate([b.dW for b in bundles]), bundles[0].seed)


def _dynamic_checks(sys, K, xs, seeds, budget: AuditBudget, tols: Tolerances,
                    threads: int = 1) -> list[dict]:
    """Stochastic, deterministic and Wong-Zakai checks from each start in
    ``xs``. Point ``k`` only ever sees randomness derived from ``seeds[k]``;
    all points run through the integrators as one batch."""
    P = len(xs)
    xs = np.asarray(xs, dtype=float)
    grid = TimeGrid(budget.T, budget.dt)
    checkpoints = [grid.index(budget.T * q / 4) for q in (1, 2, 3, 4)]
    N = budget.mc_paths
    out = [{"mc": {"runs": []}, "ode": {"runs": []}, "wz": {"runs": [], "m": budget.wz_m}}
           for _ in range(P)]

    # stochastic system under every constant control of the U sample
    for ui, u in enumerate(sys.controls):
        bundles = parallel_map(lambda k: sample_noise(sys.d, grid, rng_split(seeds[k], 10 + ui), N),
                               range(P), threads)
        path = euler_maruyama(sys, np.repeat(xs, N, axis=0), ConstantPolicy(tuple(u.tolist())),
                              _stack_bundles(bundles), strict=False)
        dist = K.dist(path.states[:, checkpoints]).reshape(P, N, 4)
        dead = path.diverged.reshape(P, N)
        for k in range(P):
            live = dist[k][~dead[k]]
            worst = float(live.mean(axis=0).max()) if live.size else float("inf")
            if dead[k].any():
                worst = float("inf")
            out[k]["mc"]["runs"].append({"u": u.tolist(), "max_checkpoint_mean": worst,
                                         "n_diverged": int(dead[k].sum())})

    # deterministic system: random v controls and u schedules, all in one RK4 batch
    vs, scheds, labels = [], [], []
    for k in range(P):
        rng = stream(seeds[k], 1)
        for label, v in random_v_controls(sys.d, budget.ode_controls, rng, budget.v_scale):
            vs.append(v)
            scheds.append(_u_schedule(sys, rng, budget.T))
            labels.append(label)
    V = budget.ode_controls

    def v_all(t):
        return np.stack([np.asarray(v(t), dtype=float) for v in vs])

    def u_all(t):
        return np.stack([s(t, None) for s in scheds])

    try:
        traj = ode_solve(deterministic_field(sys, u_all, v_all), np.repeat(xs, V, axis=0),
                         TimeGrid(budget.T, budget.ode_dt))
        maxdist = np.max(K.dist(traj.states), axis=1).reshape(P, V)
    except DivergenceError:
        maxdist = np.full((P, V), np.inf)
    for k in range(P):
        for j in range(V):
            out[k]["ode"]["runs"].append({"v": labels[k * V + j],
                                          "u_schedule": scheds[k * V + j].describe(),
                                          "max_distance": float(maxdist[k, j])})

    # Wong-Zakai smoothed noise, m fixed
    M = budget.wz_paths
    for ui, u in enumerate(sys.controls):
        bundles = parallel_map(
            lambda k: wong_zakai_bundle(sys.d, budget.T, budget.wz_m, rng_split(seeds[k], 100 + ui), M),
            range(P), threads)
        bundle = _stack_bundles(bundles)
        try:
            wz = wong_zakai_solve(sys, np.repeat(xs, M, axis=0), u, budget.wz_m, bundle,
                                  TimeGrid(budget.T, bundle.grid.dt))
            vals = np.max(K.dist(wz.states), axis=1).reshape(P, M).mean(axis=1)
        except DivergenceError:
            vals = np.full(P, np.inf)
        for k in range(P):
            out[k]["wz"]["runs"].append({"u": u.tolist(), "mean_max_distance": float(vals[k])})

    limits = {"mc": ("max_checkpoint_mean", tols.mc), "ode": ("max_distance", tols.ode),
              "wz": ("mean_max_distance", tols.wz)}
    for rec in out:
        for key, (field_, lim) in limits.items():
            worst = max(r[field_] for r in rec[key]["runs"])
            rec[key]["worst"] = worst if np.isfinite(worst) else None
            rec[key]["pass"] = bool(np.isfinite(worst) and worst <= lim)
    return out


@dataclass
class AuditReport:
    system: str
    set: str
    points: list
    conditions: dict
    dynamics: dict
    per_point: list
    consistent: bool
    invariant: bool | None
    seed: int
    tolerances: dict
    budget: dict

    @property
    def verdict(self) -> str:
        if not self.consistent:
            return "inconsistent: analytic and dynamic checks disagree"
        return ("invariant" if self.invariant else "non-invariant") + ", all checks agree"

    @property
    def exit_code(self) -> int:
        return 0 if self.consistent else 2

    def to_dict(self):
        return {"system": self.system, "set": self.set, "points": self.points,
                "conditions": self.conditions, "dynamics": self.dynamics,
                "per_point": self.per_point, "consistent": self.consistent,
                "invariant": self.invariant, "verdict": self.verdict, "seed": self.seed,
                "tolerances": self.tolerances, "budget": self.budget,
                "caveat": COMPLETENESS_CAVEAT}


def equivalence_audit(sys: ControlSystem, K: ClosedSet, n_boundary: int = 16, seed: int = 0,
                      budget: AuditBudget | None = None, tols: Tolerances | None = None,
                      extra_tests: Sequence[TestFunction] = (), threads: int = 1) -> AuditReport:
    """Run conditions b, c, e and the stochastic, deterministic and
    Wong-Zakai checks at every scanned boundary point."""
    budget = budget or AuditBudget()
    tols = tols or Tolerances.for_system(sys)
    pts = boundary_scan(K, sys.n, n_boundary, rng_split(seed, 0), grad_floor=tols.grad_floor)

    def analytic(bp):
        probes = [bp] + [(phi, bp.x) for phi in extra_tests]
        reps = {"b": [], "c": [], "e": []}
        for pr in probes:
            reps["b"].append(condition_b_check(sys, pr, tols.eq))
            reps["c"].append(condition_c_check(sys, pr, tols.eq, tols.sym))
            reps["e"].append(condition_e_check(sys, pr, tol=tols.eq))
        return reps

    reports = parallel_map(analytic, pts, threads)
    dyns = _dynamic_checks(sys, K, [bp.x for bp in pts],
                           [rng_split(seed, 1000 + k) for k in range(len(pts))], budget, tols, threads)
    results = list(zip(reports, dyns))

    conditions = {"b": [], "c": [], "e": []}
    dynamics = {"mc": [], "ode": [], "wz": []}
    per_point = []
    for bp, (reps, dyn) in zip(pts, results):
        flags = {}
        for c in "bce":
            conditions[c].append([r.to_dict() for r in reps[c]])
            flags[c] = all(r.passed for r in reps[c])
        for key in ("mc", "ode", "wz"):
            dynamics[key].append(dyn[key])
            flags[key] = dyn[key]["pass"]
        per_point.append({"x": bp.to_list(), "flags": flags,
                          "agree": len(set(flags.values())) == 1})
    consistent = all(p["agree"] for p in per_point)
    invariant = all(p["flags"]["b"] for p in per_point) if consistent else None
    return AuditReport(sys.name, K.name, [bp.to_list() for bp in pts], conditions, dynamics,
                       per_point, consistent, invariant, seed, asdict(tols), asdict(budget))
