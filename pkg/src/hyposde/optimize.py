"""Derivative-free minimization with positivity handled by log coordinates.

Nelder-Mead with the standard coefficients (reflect 1, expand 2, contract
0.5, shrink 0.5).  Positivity-constrained coordinates are searched on the
log scale, so candidate points can never leave the feasible orthant; any
other infeasibility is expressed by the objective returning a non-finite
value, which the search treats as +inf.  After the simplex converges the
search restarts from the incumbent with a fresh simplex, which cheaply
guards against premature collapse in narrow valleys.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

IDENTITY = "identity"
LOG = "log"


class InfeasibleStartError(ValueError):
    pass


@dataclass(frozen=True)
class Options:
    tol_f: float = 1e-10
    tol_x: float = 1e-8
    max_evals: int = 20000
    restarts: int = 2


@dataclass(frozen=True)
class Objective:
    """Scalar objective over a real vector on its original scale.

    `transforms` tags each coordinate 'identity' or 'log'; log-tagged
    coordinates must be strictly positive.  The evaluator may return inf or
    nan to mark an infeasible point.
    """

    evaluator: Callable[[np.ndarray], float]
    dimension: int
    transforms: tuple[str, ...]

    def __post_init__(self):
        if len(self.transforms) != self.dimension:
            raise ValueError("one transform tag per coordinate required")
        for tag in self.transforms:
            if tag not in (IDENTITY, LOG):
                raise ValueError(f"unknown transform tag {tag!r}")


@dataclass(frozen=True)
class OptimResult:
    argmin: tuple[float, ...]
    min_value: float
    n_evals: int
    converged: bool
    restarts_used: int


def transform(v: Sequence[float], tags: Sequence[str]) -> np.ndarray:
    out = np.array([float(c) for c in v])
    for i, tag in enumerate(tags):
        if tag == LOG:
            if not out[i] > 0:
                raise ValueError(f"log of non-positive coordinate {i} ({out[i]})")
            out[i] = math.log(out[i])
    return out


def untransform(v: Sequence[float], tags: Sequence[str]) -> np.ndarray:
    out = np.array([float(c) for c in v])
    for i, tag in enumerate(tags):
        if tag == LOG:
            out[i] = math.exp(out[i])
    return out


def _initial_simplex(t0: np.ndarray) -> np.ndarray:
    # edge = 10% of the coordinate magnitude, floored at 0.1 (transformed scale)
    dim = t0.size
    simplex = np.tile(t0, (dim + 1, 1))
    for i in range(dim):
        simplex[i + 1, i] += max(0.1, 0.1 * abs(t0[i]))
    return simplex


def minimize(obj: Objective, x0: Sequence[float], options: Options = Options()) -> OptimResult:
    """Minimize `obj` starting from the feasible point x0 (original scale)."""
    tags = obj.transforms
    t0 = transform(x0, tags)
    if not np.isfinite(t0).all():
        raise ValueError("x0 must be finite")

    n_evals = 0

    def evaluate(t: np.ndarray) -> float:
        nonlocal n_evals
        n_evals += 1
        with np.errstate(all="ignore"):
            val = obj.evaluator(untransform(t, tags))
        val = float(val)
        return val if math.isfinite(val) else math.inf

    best_t = t0.copy()
    best_f = evaluate(t0)
    if not math.isfinite(best_f):
        raise InfeasibleStartError("infeasible start")

    converged = False
    restarts_used = 0
    for run in range(options.restarts + 1):
        if run > 0:
            if n_evals >= options.max_evals:
                break
            restarts_used += 1
        best_t, best_f, ok = _nelder_mead(
            evaluate, best_t, best_f, options, lambda: n_evals
        )
        converged = ok
        if not ok:  # ran out of budget
            break

    return OptimResult(
        argmin=tuple(float(c) for c in untransform(best_t, tags)),
        min_value=best_f,
        n_evals=n_evals,
        converged=converged,
        restarts_used=restarts_used,
    )


def _nelder_mead(evaluate, t0, f0, options: Options, evals_so_far) -> tuple[np.ndarray, float, bool]:
    dim = t0.size
    simplex = _initial_simplex(t0)
    values = np.empty(dim + 1)
    values[0] = f0
    for i in range(1, dim + 1):
        values[i] = evaluate(simplex[i])
    if not np.isfinite(values).any():
        raise InfeasibleStartError("infeasible start")

    while True:
        order = np.argsort(values, kind="stable")
        simplex = simplex[order]
        values = values[order]

        diameter = np.max(np.abs(simplex[1:] - simplex[0]))
        spread = values[-1] - values[0]
        if diameter < options.tol_x and spread < options.tol_f:
            return simplex[0], values[0], True
        if evals_so_far() >= options.max_evals:
            return simplex[0], values[0], False

        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        reflected = centroid + (centroid - worst)
        f_r = evaluate(reflected)
        if values[0] <= f_r < values[-2]:
            simplex[-1], values[-1] = reflected, f_r
            continue
        if f_r < values[0]:
            expanded = centroid + 2.0 * (centroid - worst)
            f_e = evaluate(expanded)
            if f_e < f_r:
                simplex[-1], values[-1] = expanded, f_e
            else:
                simplex[-1], values[-1] = reflected, f_r
            continue
        if f_r < values[-1]:
            contracted = centroid + 0.5 * (reflected - centroid)
        else:
            contracted = centroid + 0.5 * (worst - centroid)
        f_c = evaluate(contracted)
        if f_c < min(f_r, values[-1]):
            simplex[-1], values[-1] = contracted, f_c
            continue
        # shrink toward the best vertex
        for i in range(1, dim + 1):
            simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0])
            values[i] = evaluate(simplex[i])
