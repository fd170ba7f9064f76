"""Command-line interface.

Subcommands:
  simulate  --config F --out D     write one trajectory (CSV + meta sidecar)
  estimate  --data F --method M --config F --out F   fit one dataset
  replicate --config F --out D     replication study: summary, table, densities
  diagnose  --config F             scheme and model sanity checks
  sweep     --config F [--out F]   error table over an (n, delta) design grid

Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys

import numpy as np

from . import harness
from .estimators import Dataset, estimate_linearized, estimate_qv, sigma_explicit
from .model import State, check_hypoellipticity, check_partials, fhn_from_config
from .scheme import (
    one_step_moments_mc,
    read_trajectory,
    sigma_delta,
    simulate,
    write_trajectory,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we use 1
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="hyposde", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate one trajectory")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("estimate", help="estimate parameters from a trajectory CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--method", required=True, choices=["linearized", "qv", "explicit-sigma"])
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output JSON file")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("replicate", help="run a replication study")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("diagnose", help="run scheme/model diagnostics")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("sweep", help="consistency sweep over a design grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="output CSV file")
    p.add_argument("--seed", type=int, default=None)
    return parser


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ValueError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValueError(f"config file {path} is not valid JSON: {exc}") from None


_SIM_KEYS = {"model", "delta", "n", "seed", "z0"}


def _cmd_simulate(args) -> int:
    raw = _load_json(args.config)
    for key in raw:
        if key not in _SIM_KEYS:
            raise ValueError(f"unknown config key {key!r}")
    if "model" not in raw:
        raise ValueError("config missing key 'model'")
    model, params = fhn_from_config(raw["model"])
    delta = float(raw.get("delta", 0.001))
    n = int(raw.get("n", 1000))
    seed = int(raw.get("seed", 0)) if args.seed is None else args.seed
    z0 = tuple(float(v) for v in raw.get("z0", (0.0, 0.0)))
    traj = simulate(model, params.drift_params(), params.diffusion(), z0, delta, n, seed)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "trajectory.csv")
    write_trajectory(traj, out_path)
    print(f"wrote {out_path} ({traj.n} steps, delta={traj.delta})")
    return 0


# estimate accepts simulate-style configs so one file can drive the pipeline
_EST_KEYS = _SIM_KEYS | {"optim"}


def _cmd_estimate(args) -> int:
    raw = _load_json(args.config)
    for key in raw:
        if key not in _EST_KEYS:
            raise ValueError(f"unknown config key {key!r}")
    if "model" not in raw:
        raise ValueError("config missing key 'model'")
    model, params = fhn_from_config(raw["model"])
    options = harness.config_from_dict({"model": raw["model"], "optim": raw.get("optim", {})}).optim
    data = Dataset(read_trajectory(args.data), model)
    x0_theta = model.unpack(params.drift_params())
    if args.method == "linearized":
        est = estimate_linearized(data, x0_theta, params.sigma**2, options)
    elif args.method == "qv":
        est = estimate_qv(data, x0_theta, options)
    else:
        s2 = sigma_explicit(data)
        est = None
    payload = {
        "method": args.method,
        "data": os.path.basename(args.data),
        "n": data.trajectory.n,
        "delta": data.trajectory.delta,
    }
    if est is not None:
        payload["params"] = est.params()
        payload["optim"] = {
            "converged": est.optim.converged,
            "n_evals": est.optim.n_evals,
            "min_value": est.optim.min_value,
            "restarts_used": est.optim.restarts_used,
        }
    else:
        payload["params"] = {"sigma2": s2, "sigma": math.sqrt(s2)}
    with open(args.out, "w", newline="") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"wrote {args.out}")
    return 0


def _cmd_replicate(args) -> int:
    cfg = harness.load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    summary = harness.run_experiment(cfg)
    written = harness.write_summary_files(cfg, summary, args.out)
    for row in summary.table():
        if row["param"] == "sigma2":
            continue
        print(
            f"{row['method']:>14s}  {row['param']:>8s}  mean={row['mean']:.4f}  "
            f"sd={row['sd']:.4f}  n={row['n']}"
        )
    print(f"wrote {len(written)} files to {args.out}")
    return 0


def _cmd_diagnose(args) -> int:
    raw = _load_json(args.config)
    if "model" not in raw:
        raise ValueError("config missing key 'model'")
    model, params = fhn_from_config(raw["model"])
    theta = params.drift_params()
    sigma = params.diffusion()
    seed = int(raw.get("seed", 0)) if args.seed is None else args.seed
    ok = True

    probes = [State(x, y) for x in np.linspace(-3, 3, 5) for y in np.linspace(-3, 3, 5)]
    hypo = check_hypoellipticity(model, theta, probes)
    print(f"hypoellipticity (|da1/dy| > {hypo.tol:g} at {len(probes)} probes): "
          f"{'PASS' if hypo.passed else 'FAIL'}")
    ok &= hypo.passed

    partials = check_partials(model, theta, probes)
    print(f"partials vs finite differences (rel tol {partials.rel_tol:g}): "
          f"{'PASS' if partials.passed else 'FAIL'} (worst {partials.worst_error:.2e})")
    ok &= partials.passed

    z = State(0.0, 0.0)
    p = float(model.dy_a1(z.x, z.y, theta))
    b = float(model.b(z.x, z.y, sigma.sigma))
    targets = {"var_x/d^3": p * p * b * b / 3.0, "var_y/d": b * b, "cov_xy/d^2": p * b * b / 2.0}
    # n_mc keeps the 4-SE window wider than the order-delta truncation gap
    for k, delta in enumerate((0.02, 0.01, 0.005)):
        m = one_step_moments_mc(model, theta, sigma, z, delta, 20000, (seed, k))
        checks = [
            ("var_x/d^3", m.var_x / delta**3, m.se_var_x / delta**3),
            ("var_y/d", m.var_y / delta, m.se_var_y / delta),
            ("cov_xy/d^2", m.cov_xy / delta**2, m.se_cov_xy / delta**2),
        ]
        for name, got, se in checks:
            dev = abs(got - targets[name]) / se
            good = dev < 4.0
            ok &= good
            print(f"moments delta={delta:g}: {name} = {got:.4f} vs {targets[name]:.4f} "
                  f"({dev:.1f} SE): {'PASS' if good else 'FAIL'}")

    ratios = [sigma_delta(model, theta, sigma, z, d).det / d**4 for d in (1e-2, 1e-3, 1e-4)]
    spread = (max(ratios) - min(ratios)) / max(ratios)
    good = spread < 0.05
    ok &= good
    print(f"det(Sigma)/delta^4 over deltas 1e-2..1e-4: spread {spread:.2%}: "
          f"{'PASS' if good else 'FAIL'}")
    return 0 if ok else 2


def _cmd_sweep(args) -> int:
    cfg = harness.load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    rows = harness.sweep_from_config(cfg)
    print("n,delta,param,mean_abs_err,sd")
    for row in rows:
        print(f"{row.n},{row.delta!r},{row.param},{row.mean_abs_err!r},{row.sd!r}")
    if args.out:
        harness.write_sweep_csv(rows, args.out)
        print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "replicate": _cmd_replicate,
    "diagnose": _cmd_diagnose,
    "sweep": _cmd_sweep,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
