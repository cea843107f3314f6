"""``invariance-lab`` command line.

    invariance-lab <audit|simulate|wz|lemma|taylor|hjb> [--config FILE]
                   [--system NAME] [--set NAME] [--seed INT] [--threads INT] [--out DIR]

Exit codes: 0 success (for ``audit``: verdicts consistent), 1 usage or
config error, 2 inconsistent audit verdicts.
"""

from __future__ import annotations

import argparse
import json
import math
import sys as _sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import catalog, exprlang
from .expansion import (TaylorCoefficients, lemma_conclusion_check, lemma_falsifier,
                        remainder_decay_test, taylor_remainder_samples)
from .hjb_mc import DiscountedProblem, value_bound_check
from .invariance import (AuditBudget, Tolerances, boundary_scan, equivalence_audit,
                         mc_invariance_estimate)
from .numerics import rng_split
from .paths import (ConstantPolicy, TimeGrid, deterministic_field, euler_maruyama, ode_solve,
                    sample_noise, wong_zakai_bundle, wong_zakai_smooth, wong_zakai_solve)
from .sde_core import ClosedSet, ControlSystem, TestFunction

COMMANDS = ("audit", "simulate", "wz", "lemma", "taylor", "hjb")

DEFAULT_STARTS = {"circle": [1.0, 0.0], "halfspace-tangent": [0.0, 0.0],
                  "halfspace-crossing": [0.0, 0.0], "inward-drift": [0.0, 0.0]}


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    system: object
    set: object
    seed: int
    params: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    out: str = "."

    def param(self, key, default):
        return self.params.get(key, default)


def load_config(path: str | None, args) -> Config:
    raw = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"config: cannot read {path}: {err}") from err
        if not isinstance(raw, dict):
            raise ConfigError("config: top level must be an object")
    system = args.system or raw.get("system")
    seed = args.seed if args.seed is not None else raw.get("seed")
    if seed is None:
        raise ConfigError("config.seed: missing; a seed is mandatory (use --seed or \"seed\")")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"config.seed: expected a nonnegative integer, got {seed!r}")
    params = raw.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("config.params: expected an object")
    return Config(system=system, set=args.set or raw.get("set"), seed=seed, params=params,
                  tolerances=raw.get("tolerances", {}),
                  out=args.out or raw.get("out", "."))


def _expr_list(items, where, n, k, count):
    if not isinstance(items, list) or len(items) != count:
        raise ConfigError(f"{where}: expected a list of {count} expressions")
    for i, s in enumerate(items):
        if not isinstance(s, str):
            raise ConfigError(f"{where}[{i}]: expected an expression string")
        try:
            exprlang.parse(s, n, k)
        except exprlang.ExprError as err:
            raise ConfigError(f"{where}[{i}]: {err}") from err


def build_system(spec) -> ControlSystem:
    if spec is None:
        raise ConfigError("config.system: missing (catalog name or expression object)")
    if isinstance(spec, str):
        try:
            return catalog.get_system(spec)
        except (KeyError, ValueError) as err:
            raise ConfigError(f"config.system: {err.args[0]}") from err
    if not isinstance(spec, dict):
        raise ConfigError("config.system: expected a catalog name or an object")
    for key in ("n", "d", "b", "sigma", "controls"):
        if key not in spec:
            raise ConfigError(f"config.system.{key}: missing")
    n, d = spec["n"], spec["d"]
    if not (isinstance(n, int) and n >= 1 and isinstance(d, int) and d >= 1):
        raise ConfigError("config.system.n/d: expected positive integers")
    try:
        controls = np.atleast_2d(np.asarray(spec["controls"], dtype=float))
    except (TypeError, ValueError) as err:
        raise ConfigError(f"config.system.controls: {err}") from err
    if controls.ndim != 2 or controls.size == 0:
        raise ConfigError("config.system.controls: expected a nonempty list of control points")
    k = controls.shape[1]
    _expr_list(spec["b"], "config.system.b", n, k, n)
    sigma = spec["sigma"]
    if not isinstance(sigma, list) or len(sigma) != n:
        raise ConfigError(f"config.system.sigma: expected {n} rows of {d} expressions")
    for r, row in enumerate(sigma):
        _expr_list(row, f"config.system.sigma[{r}]", n, k, d)
    try:
        return catalog.expression_system(n, d, spec["b"], sigma, controls,
                                         name=spec.get("name", "expr"))
    except exprlang.ExprError as err:
        raise ConfigError(f"config.system.sigma: {err}") from err


def build_set(spec, sys: ControlSystem) -> ClosedSet:
    spec = spec or sys.meta.get("default_set")
    if spec is None:
        raise ConfigError("config.set: missing")
    if isinstance(spec, str):
        try:
            return catalog.get_set(spec, sys.n)
        except KeyError as err:
            raise ConfigError(f"config.set: {err.args[0]}") from err
    if not isinstance(spec, dict) or "g" not in spec:
        raise ConfigError("config.set.g: missing")
    try:
        return catalog.expression_set(spec["g"], sys.n, name=spec.get("name"))
    except exprlang.ExprError as err:
        raise ConfigError(f"config.set.g: {err}") from err


def _start(cfg: Config, sys: ControlSystem, K: ClosedSet):
    x0 = cfg.param("x0", None)
    if x0 is None:
        if isinstance(cfg.system, str) and cfg.system in DEFAULT_STARTS:
            x0 = DEFAULT_STARTS[cfg.system]
        elif sys.name.startswith("sphere"):
            x0 = [1.0] + [0.0] * (sys.n - 1)
        else:
            x0 = boundary_scan(K, sys.n, 1, rng_split(cfg.seed, 0))[0].x.tolist()
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sys.n,):
        raise ConfigError(f"config.params.x0: expected {sys.n} coordinates")
    return x0


def _control(cfg: Config, sys: ControlSystem):
    u = cfg.param("u", None)
    u = sys.controls[0] if u is None else np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (sys.k,):
        raise ConfigError(f"config.params.u: expected {sys.k} coordinates")
    return u


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_clean(obj), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")


def _tols(cfg, sys):
    try:
        return Tolerances.for_system(sys, **cfg.tolerances)
    except TypeError as err:
        raise ConfigError(f"config.tolerances: {err}") from err


# ------------------------------------------------------------------ commands


def cmd_audit(cfg: Config, threads: int) -> int:
    sys = build_system(cfg.system)
    K = build_set(cfg.set, sys)
    fields = AuditBudget.__dataclass_fields__
    budget = AuditBudget(**{k: v for k, v in cfg.params.items() if k in fields})
    report = equivalence_audit(sys, K, int(cfg.param("n_boundary", 16)), cfg.seed, budget,
                               _tols(cfg, sys), threads=threads)
    write_json(Path(cfg.out) / "audit.json", report.to_dict())
    print(f"{sys.name} / {K.name}: {report.verdict}")
    return report.exit_code


def cmd_simulate(cfg: Config, threads: int, refine: bool = False) -> int:
    sys = build_system(cfg.system)
    K = build_set(cfg.set, sys)
    x0, u = _start(cfg, sys, K), _control(cfg, sys)
    T, dt = float(cfg.param("T", 1.0)), float(cfg.param("dt", 1e-3))
    n_paths, mode = int(cfg.param("n_paths", 3)), cfg.param("mode", "sde")
    if mode not in ("sde", "ode", "both"):
        raise ConfigError("config.params.mode: expected 'sde', 'ode' or 'both'")
    out = Path(cfg.out)
    (out / "paths").mkdir(parents=True, exist_ok=True)
    grid = TimeGrid(T, dt)
    written = []
    if mode in ("sde", "both"):
        bundle = sample_noise(sys.d, grid, cfg.seed, n_paths)
        path = euler_maruyama(sys, x0, ConstantPolicy(tuple(u.tolist())), bundle)
        for i in range(n_paths):
            name = out / "paths" / f"sde_{i:03d}.csv"
            path.to_csv(name, i)
            written.append(name.name)
    if mode in ("ode", "both"):
        v = np.asarray(cfg.param("v", [0.0] * sys.d), dtype=float)
        det = ode_solve(deterministic_field(sys, lambda t: u, lambda t: v), x0, grid)
        det.to_csv(out / "paths" / "ode.csv")
        written.append("ode.csv")
    refine = refine or bool(cfg.param("refine", False))
    N = int(cfg.param("N", 200))
    summary = {"system": sys.name, "set": K.name, "x0": x0, "u": u, "T": T, "dt": dt,
               "seed": cfg.seed, "files": written}
    stats = mc_invariance_estimate(sys, K, x0, ConstantPolicy(tuple(u.tolist())), T, dt, N,
                                   rng_split(cfg.seed, 1))
    summary["mean_distance"] = stats.mean_final
    if refine:
        fine = mc_invariance_estimate(sys, K, x0, ConstantPolicy(tuple(u.tolist())), T, dt / 2, N,
                                      rng_split(cfg.seed, 2))
        summary["refined"] = {"dt": dt / 2, "mean_distance": fine.mean_final,
                              "smaller": fine.mean_final < stats.mean_final}
    write_json(out / "summary.json", summary)
    print(f"wrote {len(written)} path file(s) to {out / 'paths'}")
    return 0


def cmd_wz(cfg: Config, threads: int, ms=None) -> int:
    sys = build_system(cfg.system)
    K = build_set(cfg.set, sys)
    ms = ms or cfg.param("m", [4, 16, 64])
    if not ms or any(not isinstance(m, int) or isinstance(m, bool) or m < 1 for m in ms):
        raise ConfigError(f"config.params.m: expected positive integers, got {ms!r}")
    x0, u = _start(cfg, sys, K), _control(cfg, sys)
    N, T = int(cfg.param("N", 100)), float(cfg.param("T", 1.0))
    bundle = wong_zakai_bundle(sys.d, T, max(ms), cfg.seed, N)
    grid = TimeGrid(T, bundle.grid.dt)
    W = bundle.W[:, :grid.steps + 1]
    exact = sys.meta.get("exact")
    rows = []
    for m in ms:
        Y = wong_zakai_smooth(bundle, m, grid)
        row = {"m": m,
               "median_sup_Y_minus_W": float(np.median(np.max(np.linalg.norm(Y.Y - W, axis=-1), axis=1)))}
        X = wong_zakai_solve(sys, x0, u, m, bundle, grid)
        row["mean_max_distance"] = float(np.mean(np.max(K.dist(X.states), axis=1)))
        if exact is not None:
            ref = exact(x0, u, W[:, -1, 0])
            row["median_endpoint_error"] = float(np.median(np.linalg.norm(X.final() - ref, axis=-1)))
        rows.append(row)
    write_json(Path(cfg.out) / "wz.json", {"system": sys.name, "set": K.name, "seed": cfg.seed,
                                           "N": N, "T": T, "driver_dt": bundle.grid.dt,
                                           "rows": rows})
    cols = [c for c in ("m", "median_sup_Y_minus_W", "median_endpoint_error", "mean_max_distance")
            if c in rows[0]]
    print("  ".join(f"{c:>22}" for c in cols))
    for r in rows:
        print("  ".join(f"{r[c]:>22.6g}" if c != "m" else f"{r[c]:>22d}" for c in cols))
    return 0


def _coeffs(spec) -> TaylorCoefficients:
    if not isinstance(spec, dict) or "alpha" not in spec:
        raise ConfigError("config.params.coefficients.alpha: missing")
    d = len(spec["alpha"])
    try:
        return TaylorCoefficients(spec["alpha"], spec.get("beta", [0.0] * d),
                                  spec.get("gamma"), spec.get("delta", 0.0))
    except ValueError as err:
        raise ConfigError(f"config.params.coefficients: {err}") from err


def cmd_lemma(cfg: Config, threads: int) -> int:
    coeffs = _coeffs(cfg.param("coefficients", None))
    times = cfg.param("times", [0.01, 0.1, 1.0])
    N = int(cfg.param("N", 4000))
    verdict = lemma_conclusion_check(coeffs, float(cfg.param("tol", 1e-8)))
    fals = lemma_falsifier(coeffs, times, N, cfg.seed, int(cfg.param("steps", 5000)))
    write_json(Path(cfg.out) / "lemma.json", {"coefficients": coeffs.to_dict(),
                                              "conclusions": verdict.to_dict(),
                                              "falsifier": fals.to_dict(), "seed": cfg.seed})
    print(f"conclusions {'hold' if verdict.passed else 'fail'}; "
          f"max P[S_t > 0] = {fals.max_probability:.4f}")
    return 0


def _test_function(cfg, sys, K) -> TestFunction:
    src = cfg.param("phi", None)
    if src is None:
        return K.test_function()
    try:
        return catalog.expression_test_function(src, sys.n)
    except exprlang.ExprError as err:
        raise ConfigError(f"config.params.phi: {err}") from err


def cmd_taylor(cfg: Config, threads: int) -> int:
    sys = build_system(cfg.system)
    K = build_set(cfg.set, sys)
    phi = _test_function(cfg, sys, K)
    x0, u = _start(cfg, sys, K), _control(cfg, sys)
    times = cfg.param("times", [0.1, 0.05, 0.025])
    N, steps = int(cfg.param("N", 1000)), int(cfg.param("steps", 5000))
    samples = [taylor_remainder_samples(sys, phi, x0, u, t, N, rng_split(cfg.seed, k), steps)
               for k, t in enumerate(times)]
    rep = remainder_decay_test(samples, float(cfg.param("eps", 0.1)))
    out = rep.to_dict()
    out["seed"] = cfg.seed
    write_json(Path(cfg.out) / "taylor.json", out)
    print(f"remainder decay: {out['verdict']} {out['probabilities']}")
    return 0


def cmd_hjb(cfg: Config, threads: int) -> int:
    sys = build_system(cfg.system)
    K = build_set(cfg.set, sys)
    starts = cfg.param("starts", None)
    if starts is None:
        starts = [_start(cfg, sys, K).tolist()]
    try:
        prob = DiscountedProblem(sys, K, C=float(cfg.param("C", 1.0)),
                                 T_trunc=float(cfg.param("T_trunc", 10.0)))
        rep = value_bound_check(prob, starts, N=int(cfg.param("N", 200)),
                                dt=float(cfg.param("dt", 1e-3)), seed=cfg.seed, threads=threads)
    except ValueError as err:
        raise ConfigError(f"config.params: {err}") from err
    out = rep.to_dict()
    out.update(system=sys.name, set=K.name, seed=cfg.seed)
    write_json(Path(cfg.out) / "hjb.json", out)
    print(f"value bound: {out['verdict']} (worst excess {rep.worst_excess:.4g})")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(_sys.stderr)
        print(f"{self.prog}: error: {message}", file=_sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="invariance-lab", description=__doc__.split("\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--system", help="catalog system (overrides config)")
    p.add_argument("--set", help="catalog set (overrides config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", help="output directory")
    p.add_argument("--refine", action="store_true", help="simulate: also run at dt/2")
    p.add_argument("--m", type=int, nargs="+", help="wz: smoothing levels")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads: must be >= 1")
        cfg = load_config(args.config, args)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.threads, args.refine)
        if args.command == "wz":
            return cmd_wz(cfg, args.threads, args.m)
        return {"audit": cmd_audit, "lemma": cmd_lemma, "taylor": cmd_taylor,
                "hjb": cmd_hjb}[args.command](cfg, args.threads)
    except ConfigError as err:
        print(f"invariance-lab: {err}", file=_sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
