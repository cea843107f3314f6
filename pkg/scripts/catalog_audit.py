"""Audit every catalog (system, set) pair and print one verdict per pair.

    python scripts/catalog_audit.py --seed 7 --points 16 --out runs/audit
"""

import argparse
import json
import time
from pathlib import Path

from invlab import catalog
from invlab.cli import write_json
from invlab.invariance import AuditBudget, equivalence_audit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--points", type=int, default=16)
    ap.add_argument("--mc-paths", type=int, default=64)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="runs/audit")
    args = ap.parse_args()

    out = Path(args.out)
    budget = AuditBudget(mc_paths=args.mc_paths)
    print(f"{'system':>20} {'set':>10} {'expected':>9} {'seconds':>8}  verdict")
    worst = 0
    for sys_name, set_name in catalog.PAIRS:
        sys = catalog.get_system(sys_name)
        K = catalog.get_set(set_name, sys.n)
        t0 = time.perf_counter()
        rep = equivalence_audit(sys, K, args.points, args.seed, budget, threads=args.threads)
        dt = time.perf_counter() - t0
        write_json(out / f"{sys_name}.json", rep.to_dict())
        expected = "inv" if sys.meta["invariant"] else "non-inv"
        print(f"{sys_name:>20} {set_name:>10} {expected:>9} {dt:8.1f}  {rep.verdict}")
        worst = max(worst, rep.exit_code)
    print(json.dumps({"reports": str(out)}))
    return worst


if __name__ == "__main__":
    raise SystemExit(main())
