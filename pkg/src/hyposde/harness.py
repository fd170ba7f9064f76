"""Replication studies: simulate, downsample, estimate, aggregate, export.

A study is described by an `ExperimentConfig` (usually loaded from JSON).
Each replication r simulates a fine-grid trajectory with its own noise
stream keyed by (seed, r), downsamples it to the observation grid, and runs
the requested estimators from an initial point drawn by the configured
policy.  Replications are independent given their streams, so results do
not depend on execution order; failed replications are counted and excluded
from the statistics.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from . import optimize
from .estimators import Dataset, SweepCell, consistency_sweep, estimate_linearized, estimate_qv, sigma_explicit
from .model import fhn_from_config
from .scheme import downsample, simulate, substream

METHODS = ("linearized", "qv", "explicit-sigma")


@dataclass(frozen=True)
class InitPolicy:
    """Optimizer start: the truth, the truth perturbed by a uniform +-fraction
    per coordinate, or explicit values."""

    policy: str = "perturbed"
    fraction: float = 0.2
    values: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.policy not in ("truth", "perturbed", "explicit"):
            raise ValueError(f"unknown init policy {self.policy!r}")
        if self.policy == "explicit" and self.values is None:
            raise ValueError("explicit init policy needs values")


@dataclass(frozen=True)
class ExperimentConfig:
    model_config: dict
    fine_delta: float = 0.001
    fine_n: int = 500000
    stride: int = 10
    n_replications: int = 100
    methods: tuple[str, ...] = ("linearized", "qv")
    seed: int = 0
    optim: optimize.Options = field(default_factory=optimize.Options)
    init: InitPolicy = field(default_factory=InitPolicy)
    z0: tuple[float, float] = (0.0, 0.0)
    grid: Optional[tuple[tuple[int, float], ...]] = None  # used by the sweep command

    def __post_init__(self):
        if not self.fine_delta > 0:
            raise ValueError("fine_delta must be positive")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.n_replications < 1:
            raise ValueError("n_replications must be >= 1")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r} (config key 'methods')")

    def to_dict(self) -> dict:
        out = {
            "model": dict(self.model_config),
            "fine_delta": self.fine_delta,
            "fine_n": self.fine_n,
            "stride": self.stride,
            "n_replications": self.n_replications,
            "methods": list(self.methods),
            "seed": self.seed,
            "optim": asdict(self.optim),
            "init": {k: v for k, v in asdict(self.init).items() if v is not None},
            "z0": list(self.z0),
        }
        if self.grid is not None:
            out["grid"] = [[n, d] for n, d in self.grid]
        return out


_CONFIG_KEYS = {
    "model", "fine_delta", "fine_n", "stride", "n_replications",
    "methods", "seed", "optim", "init", "z0", "grid",
}
_OPTIM_KEYS = {"tol_f", "tol_x", "max_evals", "restarts"}
_INIT_KEYS = {"policy", "fraction", "values"}


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Validate and build an ExperimentConfig; errors name the offending key."""
    if not isinstance(raw, dict):
        raise ValueError("config must be a JSON object")
    for key in raw:
        if key not in _CONFIG_KEYS:
            raise ValueError(f"unknown config key {key!r}")
    if "model" not in raw:
        raise ValueError("config missing key 'model'")
    optim_raw = raw.get("optim", {})
    for key in optim_raw:
        if key not in _OPTIM_KEYS:
            raise ValueError(f"unknown config key 'optim.{key}'")
    init_raw = raw.get("init", {})
    for key in init_raw:
        if key not in _INIT_KEYS:
            raise ValueError(f"unknown config key 'init.{key}'")
    init_values = init_raw.get("values")
    grid = raw.get("grid")
    try:
        return ExperimentConfig(
            model_config=dict(raw["model"]),
            fine_delta=float(raw.get("fine_delta", 0.001)),
            fine_n=int(raw.get("fine_n", 500000)),
            stride=int(raw.get("stride", 10)),
            n_replications=int(raw.get("n_replications", 100)),
            methods=tuple(raw.get("methods", ["linearized", "qv"])),
            seed=int(raw.get("seed", 0)),
            optim=optimize.Options(**{k: float(v) if k.startswith("tol") else int(v)
                                      for k, v in optim_raw.items()}),
            init=InitPolicy(
                policy=init_raw.get("policy", "perturbed"),
                fraction=float(init_raw.get("fraction", 0.2)),
                values=tuple(float(v) for v in init_values) if init_values is not None else None,
            ),
            z0=tuple(float(v) for v in raw.get("z0", (0.0, 0.0))),
            grid=tuple((int(n), float(d)) for n, d in grid) if grid is not None else None,
        )
    except (TypeError, ValueError) as exc:
        raise ValueError(f"malformed config: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ValueError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValueError(f"config file {path} is not valid JSON: {exc}") from None
    return config_from_dict(raw)


@dataclass
class ReplicationSummary:
    """Per-method, per-parameter replication values plus failure counts."""

    n_replications: int
    values: dict  # method -> {param -> list of floats}
    failures: dict  # method -> int

    def table(self) -> list[dict]:
        rows = []
        for method in sorted(self.values):
            for param in self.values[method]:
                vals = self.values[method][param]
                mean, sd = summarize(vals) if vals else (math.nan, math.nan)
                rows.append(
                    {"method": method, "param": param, "mean": mean, "sd": sd,
                     "n": len(vals), "failures": self.failures[method]}
                )
        return rows

    def mean(self, method: str, param: str) -> float:
        return summarize(self.values[method][param])[0]


def summarize(values: Sequence[float]) -> tuple[float, float]:
    """Sample mean and sample standard deviation (n-1 denominator)."""
    n = len(values)
    if n == 0:
        raise ValueError("cannot summarize an empty list")
    mean = sum(values) / n
    if n == 1:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var)


def _draw_x0(truth_vec, sigma2_0, init: InitPolicy, rng) -> tuple[np.ndarray, float]:
    full_truth = np.append(np.asarray(truth_vec, dtype=float), sigma2_0)
    if init.policy == "truth":
        return full_truth[:-1], float(full_truth[-1])
    if init.policy == "explicit":
        vals = np.asarray(init.values, dtype=float)
        if vals.size == full_truth.size:
            return vals[:-1], float(vals[-1])
        if vals.size == full_truth.size - 1:
            return vals, float(sigma2_0)
        raise ValueError("explicit init values have the wrong length")
    perturb = 1.0 + init.fraction * rng.uniform(-1.0, 1.0, full_truth.size)
    started = full_truth * perturb
    return started[:-1], float(started[-1])


def _init_stream(seed: int, replication: int) -> np.random.Generator:
    key = np.array(substream(seed, replication), dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key).jumped(1))


def run_experiment(cfg: ExperimentConfig) -> ReplicationSummary:
    """Run the replication study described by cfg.

    Raises RuntimeError("experiment unstable") when more than half of the
    replications fail for any requested method.
    """
    model, truth = fhn_from_config(cfg.model_config)
    theta0 = truth.drift_params()
    sigma0 = truth.diffusion()
    truth_vec = model.unpack(theta0)
    sigma2_0 = sigma0.sigma**2

    param_lists = {
        "linearized": list(model.param_names) + ["sigma", "sigma2"],
        "qv": list(model.param_names) + ["sigma", "sigma2"],
        "explicit-sigma": ["sigma", "sigma2"],
    }
    values = {m: {p: [] for p in param_lists[m]} for m in cfg.methods}
    failures = {m: 0 for m in cfg.methods}

    for r in range(cfg.n_replications):
        key = substream(cfg.seed, r)
        try:
            fine = simulate(model, theta0, sigma0, cfg.z0, cfg.fine_delta, cfg.fine_n, key)
            data = Dataset(downsample(fine, cfg.stride), model)
        except Exception:
            for m in cfg.methods:
                failures[m] += 1
            continue
        x0_theta, x0_sigma2 = _draw_x0(truth_vec, sigma2_0, cfg.init, _init_stream(cfg.seed, r))
        for method in cfg.methods:
            try:
                if method == "linearized":
                    est = estimate_linearized(data, x0_theta, x0_sigma2, cfg.optim,
                                              truth=(truth_vec, sigma2_0))
                    rec = est.params()
                elif method == "qv":
                    est = estimate_qv(data, x0_theta, cfg.optim, truth=truth_vec)
                    rec = est.params()
                else:
                    s2 = sigma_explicit(data)
                    rec = {"sigma": math.sqrt(s2), "sigma2": s2}
            except Exception:
                failures[method] += 1
                continue
            for param in param_lists[method]:
                values[method][param].append(float(rec[param]))

    if any(failures[m] > cfg.n_replications / 2 for m in cfg.methods):
        raise RuntimeError("experiment unstable: more than half of the replications failed")
    return ReplicationSummary(n_replications=cfg.n_replications, values=values, failures=failures)


@dataclass(frozen=True)
class DensityExport:
    """Gaussian kernel density on a fixed grid, normalized to unit trapezoid
    integral; degenerate samples collapse to a point mass."""

    point_mass: bool
    value: Optional[float]
    grid: Optional[np.ndarray]
    density: Optional[np.ndarray]


def export_density(values: Sequence[float], grid_points: int = 200) -> DensityExport:
    """Kernel density of replication values with the Silverman bandwidth
    1.06 * sd * n^(-1/5) on a 200-point grid spanning [min-2h, max+2h]."""
    vals = np.asarray(values, dtype=float)
    if vals.size < 2:
        raise ValueError("need at least 2 values for a density")
    sd = float(vals.std(ddof=1))
    if sd == 0.0:
        return DensityExport(point_mass=True, value=float(vals[0]), grid=None, density=None)
    h = 1.06 * sd * vals.size ** (-0.2)
    grid = np.linspace(vals.min() - 2.0 * h, vals.max() + 2.0 * h, grid_points)
    z = (grid[:, None] - vals[None, :]) / h
    dens = np.exp(-0.5 * z * z).sum(axis=1) / (vals.size * h * math.sqrt(2.0 * math.pi))
    dens /= np.trapezoid(dens, grid)
    return DensityExport(point_mass=False, value=None, grid=grid, density=dens)


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_summary_files(cfg: ExperimentConfig, summary: ReplicationSummary, out_dir) -> list[str]:
    """Write summary.json, table.csv, estimates.csv and density CSVs.

    All numeric output is full double precision with '.' decimals and LF
    endings, so identical (config, seed) runs are byte-identical.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []

    payload = {"config": cfg.to_dict(), "methods": {}}
    for method in sorted(summary.values):
        stats = {}
        for param, vals in summary.values[method].items():
            if vals:
                mean, sd = summarize(vals)
                stats[param] = {"mean": mean, "sd": sd, "n": len(vals)}
        payload["methods"][method] = {"failures": summary.failures[method], "params": stats}
    path = os.path.join(out_dir, "summary.json")
    with open(path, "w", newline="") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    written.append(path)

    table_params = None
    for method in summary.values:
        names = [p for p in summary.values[method] if p != "sigma2"]
        if table_params is None or len(names) > len(table_params):
            table_params = names
    path = os.path.join(out_dir, "table.csv")
    with open(path, "w", newline="") as fh:
        header = ["method"]
        for p in table_params:
            header += [f"{p}_mean", f"{p}_sd"]
        fh.write(",".join(header) + "\n")
        for method in sorted(summary.values):
            row = [method]
            for p in table_params:
                vals = summary.values[method].get(p, [])
                if vals:
                    mean, sd = summarize(vals)
                    row += [_fmt(mean), _fmt(sd)]
                else:
                    row += ["", ""]
            fh.write(",".join(row) + "\n")
    written.append(path)

    path = os.path.join(out_dir, "estimates.csv")
    with open(path, "w", newline="") as fh:
        fh.write("replication,method,param,value\n")
        for method in sorted(summary.values):
            for param, vals in summary.values[method].items():
                for i, v in enumerate(vals):
                    fh.write(f"{i},{method},{param},{_fmt(v)}\n")
    written.append(path)

    for method in sorted(summary.values):
        for param, vals in summary.values[method].items():
            if param == "sigma2" or len(vals) < 2:
                continue
            dens = export_density(vals)
            path = os.path.join(out_dir, f"density_{method}_{param}.csv")
            with open(path, "w", newline="") as fh:
                if dens.point_mass:
                    fh.write("point_mass\n")
                    fh.write(_fmt(dens.value) + "\n")
                else:
                    fh.write("value,density\n")
                    for g, d in zip(dens.grid, dens.density):
                        fh.write(f"{_fmt(g)},{_fmt(d)}\n")
            written.append(path)
    return written


def write_sweep_csv(rows: Sequence[SweepCell], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("n,delta,param,mean_abs_err,sd\n")
        for row in rows:
            fh.write(f"{row.n},{_fmt(row.delta)},{row.param},{_fmt(row.mean_abs_err)},{_fmt(row.sd)}\n")


def sweep_from_config(cfg: ExperimentConfig) -> list[SweepCell]:
    if cfg.grid is None:
        raise ValueError("config missing key 'grid' for the consistency sweep")
    model, truth = fhn_from_config(cfg.model_config)
    return consistency_sweep(
        model,
        truth.drift_params(),
        truth.diffusion(),
        cfg.grid,
        n_replications=cfg.n_replications,
        seed=cfg.seed,
        stride=cfg.stride,
        z0=cfg.z0,
        options=cfg.optim,
        init_fraction=cfg.init.fraction if cfg.init.policy == "perturbed" else 0.0,
    )
