#!/usr/bin/env python3
"""Error-shrinkage check for the QV estimator over a design grid.

For each (n, delta) cell the study simulates finely, downsamples and
re-estimates; mean absolute errors should shrink as n*delta grows and
delta shrinks.  Prints the error table and a per-parameter verdict.

Example:
    python scripts/consistency_grid.py --replications 20 --out sweep.csv
"""

import argparse
import dataclasses
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from hyposde import harness


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=os.path.join(os.path.dirname(__file__), "..",
                                                     "configs", "sweep.json"))
    ap.add_argument("--replications", type=int, default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", default=None, help="output CSV")
    args = ap.parse_args()

    cfg = harness.load_config(args.config)
    if args.replications is not None:
        cfg = dataclasses.replace(cfg, n_replications=args.replications)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)

    rows = harness.sweep_from_config(cfg)
    print("n,delta,param,mean_abs_err,sd")
    for row in rows:
        print(f"{row.n},{row.delta},{row.param},{row.mean_abs_err:.6g},{row.sd:.6g}")

    params = sorted({row.param for row in rows})
    designs = list(dict.fromkeys((row.n, row.delta) for row in rows))
    for param in params:
        errs = [next(r.mean_abs_err for r in rows if r.param == param and (r.n, r.delta) == d)
                for d in designs]
        shrinking = all(b <= a * 1.1 for a, b in zip(errs, errs[1:]))
        print(f"{param}: errors {' -> '.join(f'{e:.4g}' for e in errs)} "
              f"{'(shrinking)' if shrinking else '(NOT shrinking)'}")
    if args.out:
        harness.write_sweep_csv(rows, args.out)
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
