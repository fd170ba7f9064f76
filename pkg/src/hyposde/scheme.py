"""Local-linearization discretization for 2-D degenerate-noise SDEs.

One observation step of size delta is approximated by a Gaussian transition

    Z_next ~ Normal(drift_approx(Z), sigma_delta(Z)),

where the conditional mean expands the drift to second order in delta and the
covariance is the third-order Taylor expansion of the frozen linear system's
covariance.  Unlike Euler-Maruyama, this covariance has full rank: the noise
reaches the smooth coordinate at order delta^3 through da1/dy.  Its (2,2)
entry carries the coefficient delta^2 on da2/dy (twice the cross moment of
the underlying stochastic integrals), which makes the determinant exactly
b^4 (da1/dy)^2 delta^4 / 12.

All one-step quantities broadcast over array-valued states; `simulate` runs
the sequential scalar recursion.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import DiffusionParams, DriftParams, ModelSpec, State

# Simulation divergence guard: beyond this the trajectory is declared lost.
STATE_BOUND = 1e6


class DriftOverflowError(ValueError):
    """Raised when the drift expansion produces a non-finite value."""


class NotPSDError(ValueError):
    """Raised when a matrix handed to cholesky2 is not positive semidefinite."""


class TrajectoryDivergedError(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"trajectory diverged at step {step}")
        self.step = step


@dataclass(frozen=True)
class CovMatrix2:
    """Symmetric 2x2 one-step covariance."""

    s11: float
    s12: float
    s22: float

    @property
    def det(self) -> float:
        return self.s11 * self.s22 - self.s12 * self.s12

    def as_array(self) -> np.ndarray:
        return np.array([[self.s11, self.s12], [self.s12, self.s22]])


@dataclass(frozen=True)
class LowerFactor2:
    """Lower-triangular factor L with L L^T equal to a CovMatrix2."""

    l11: float
    l21: float
    l22: float

    def as_array(self) -> np.ndarray:
        return np.array([[self.l11, 0.0], [self.l21, self.l22]])


@dataclass(frozen=True)
class Trajectory:
    """Equally spaced observations: states[i] is the value at time i*delta."""

    states: np.ndarray  # (n+1, 2) float64
    delta: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        object.__setattr__(self, "states", states)
        if states.ndim != 2 or states.shape[1] != 2 or states.shape[0] < 2:
            raise ValueError("states must be an (n+1, 2) array with n >= 1")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not np.isfinite(states).all():
            raise ValueError("non-finite state in trajectory")

    @property
    def n(self) -> int:
        return self.states.shape[0] - 1

    @property
    def x(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.states[:, 1]

    def state(self, i: int) -> State:
        return State(float(self.states[i, 0]), float(self.states[i, 1]))


@dataclass(frozen=True)
class StepMoments:
    """Monte-Carlo one-step moments of the sampler around the drift mean,
    with their Monte-Carlo standard errors."""

    delta: float
    n_mc: int
    mean_x_err: float
    mean_y_err: float
    var_x: float
    var_y: float
    cov_xy: float
    se_mean_x: float
    se_mean_y: float
    se_var_x: float
    se_var_y: float
    se_cov_xy: float


def noise_stream(seed) -> np.random.Generator:
    """Counter-based Philox stream.  `seed` is an int or a (word0, word1)
    pair; distinct keys give independent, scheduling-independent streams."""
    key = np.zeros(2, dtype=np.uint64)
    if isinstance(seed, (tuple, list)):
        if len(seed) > 2:
            raise ValueError("seed tuple may have at most 2 words")
        for i, w in enumerate(seed):
            key[i] = np.uint64(w)
    else:
        key[0] = np.uint64(seed)
    return np.random.Generator(np.random.Philox(key=key))


def substream(seed, index: int) -> tuple[int, int]:
    """Key for the index-th child stream of an experiment seed."""
    return (int(seed), int(index))


def drift_mean(model: ModelSpec, theta: DriftParams, x, y, delta: float):
    """Second-order drift expansion, vectorized over (x, y):
    z + delta*A(z) + delta^2/2 * J(z) A(z)."""
    a1 = model.a1(x, y, theta)
    a2 = model.a2(x, y, theta)
    j11 = model.dx_a1(x, y, theta)
    j12 = model.dy_a1(x, y, theta)
    j21 = model.dx_a2(x, y, theta)
    j22 = model.dy_a2(x, y, theta)
    h = 0.5 * delta * delta
    mx = x + delta * a1 + h * (j11 * a1 + j12 * a2)
    my = y + delta * a2 + h * (j21 * a1 + j22 * a2)
    return mx, my


def drift_approx(model: ModelSpec, theta: DriftParams, z, delta: float) -> State:
    """One-step conditional-mean approximation at a single state."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    mx, my = drift_mean(model, theta, float(z[0]), float(z[1]), delta)
    mx, my = float(mx), float(my)
    if not (math.isfinite(mx) and math.isfinite(my)):
        raise DriftOverflowError("drift overflow")
    return State(mx, my)


def sigma_delta_entries(model: ModelSpec, theta: DriftParams, sigma: float, x, y, delta: float):
    """Entries (s11, s12, s22) of the one-step covariance, vectorized.

    With p = da1/dy and q = da2/dy, both at (x, y):

        s11 = b^2 p^2 delta^3 / 3
        s12 = b^2 (p delta^2 / 2 + p q delta^3 / 3)
        s22 = b^2 (delta + q delta^2 + q^2 delta^3 / 3)
    """
    p = model.dy_a1(x, y, theta)
    q = model.dy_a2(x, y, theta)
    b = model.b(x, y, sigma)
    b2 = b * b
    d2 = delta * delta
    d3 = d2 * delta
    s11 = b2 * p * p * d3 / 3.0
    s12 = b2 * (p * d2 / 2.0 + p * q * d3 / 3.0)
    s22 = b2 * (delta + q * d2 + q * q * d3 / 3.0)
    return s11, s12, s22


def sigma_delta(
    model: ModelSpec, theta: DriftParams, sigma: DiffusionParams, z, delta: float
) -> CovMatrix2:
    if not delta > 0:
        raise ValueError("delta must be positive")
    s11, s12, s22 = sigma_delta_entries(model, theta, sigma.sigma, float(z[0]), float(z[1]), delta)
    return CovMatrix2(float(s11), float(s12), float(s22))


def cholesky2(cov: CovMatrix2) -> LowerFactor2:
    """Lower Cholesky factor of a (possibly degenerate) 2x2 covariance.

    An exactly zero s11 is treated as a degenerate smooth coordinate:
    the factor is [[0, 0], [0, sqrt(s22)]].
    """
    s11, s12, s22 = cov.s11, cov.s12, cov.s22
    scale = max(abs(s11), abs(s22), 1.0)
    tol = 1e-12 * scale
    if s11 < -tol or s22 < -tol or cov.det < -(tol * scale):
        raise NotPSDError("not PSD")
    if s11 <= 0.0:
        if s22 < 0.0:
            raise NotPSDError("not PSD")
        return LowerFactor2(0.0, 0.0, math.sqrt(max(s22, 0.0)))
    l11 = math.sqrt(s11)
    l21 = s12 / l11
    rem = s22 - l21 * l21
    if rem < -(tol * scale):
        raise NotPSDError("not PSD")
    return LowerFactor2(l11, l21, math.sqrt(max(rem, 0.0)))


def ll_step(
    model: ModelSpec,
    theta: DriftParams,
    sigma: DiffusionParams,
    z,
    delta: float,
    gaussian_pair: Sequence[float],
) -> State:
    """One transition of the scheme driven by a supplied standard-normal pair."""
    mean = drift_approx(model, theta, z, delta)
    fac = cholesky2(sigma_delta(model, theta, sigma, z, delta))
    g1, g2 = float(gaussian_pair[0]), float(gaussian_pair[1])
    return State(mean.x + fac.l11 * g1, mean.y + fac.l21 * g1 + fac.l22 * g2)


def _trajectory_meta(model, theta, sigma, delta, n, seed, scheme):
    return {
        "model": model.name,
        "scheme": scheme,
        "params": {name: val for name, val in zip(model.param_names, model.unpack(theta))},
        "sigma": sigma.sigma,
        "constants": dict(model.constants),
        "delta": delta,
        "n": n,
        "seed": list(seed) if isinstance(seed, (tuple, list)) else seed,
    }


def simulate(
    model: ModelSpec,
    theta: DriftParams,
    sigma: DiffusionParams,
    z0,
    delta: float,
    n: int,
    seed,
) -> Trajectory:
    """Iterate the local-linearization step n times from z0.

    The noise comes from a Philox stream keyed by `seed`, so repeated calls
    are bitwise reproducible.  States escaping [-1e6, 1e6]^2 abort the run.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = noise_stream(seed)
    xi = rng.standard_normal((n, 2))
    out = np.empty((n + 1, 2))
    x, y = float(z0[0]), float(z0[1])
    out[0] = (x, y)
    a1, a2 = model.a1, model.a2
    dx_a1, dy_a1 = model.dx_a1, model.dy_a1
    dx_a2, dy_a2 = model.dx_a2, model.dy_a2
    bfun = model.b
    sig = sigma.sigma
    half = 0.5 * delta * delta
    d2 = delta * delta
    d3 = d2 * delta
    sqrt = math.sqrt
    for i in range(n):
        v1 = a1(x, y, theta)
        v2 = a2(x, y, theta)
        j11 = dx_a1(x, y, theta)
        j12 = dy_a1(x, y, theta)
        j21 = dx_a2(x, y, theta)
        j22 = dy_a2(x, y, theta)
        mx = x + delta * v1 + half * (j11 * v1 + j12 * v2)
        my = y + delta * v2 + half * (j21 * v1 + j22 * v2)
        b = bfun(x, y, sig)
        b2 = b * b
        s11 = b2 * j12 * j12 * d3 / 3.0
        s12 = b2 * (j12 * d2 / 2.0 + j12 * j22 * d3 / 3.0)
        s22 = b2 * (delta + j22 * d2 + j22 * j22 * d3 / 3.0)
        if s11 > 0.0:
            l11 = sqrt(s11)
            l21 = s12 / l11
            l22 = sqrt(max(s22 - l21 * l21, 0.0))
        else:
            l11 = l21 = 0.0
            l22 = sqrt(max(s22, 0.0))
        g1, g2 = xi[i]
        x = mx + l11 * g1
        y = my + l21 * g1 + l22 * g2
        if not (-STATE_BOUND <= x <= STATE_BOUND and -STATE_BOUND <= y <= STATE_BOUND):
            raise TrajectoryDivergedError(i + 1)
        out[i + 1] = (x, y)
    meta = _trajectory_meta(model, theta, sigma, delta, n, seed, "local-linearization")
    return Trajectory(states=out, delta=delta, meta=meta)


def euler_maruyama(
    model: ModelSpec,
    theta: DriftParams,
    sigma: DiffusionParams,
    z0,
    delta: float,
    n: int,
    seed,
) -> Trajectory:
    """Euler-Maruyama baseline.  Noise enters only the rough coordinate, so
    the one-step law of the smooth coordinate is a point mass."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = noise_stream(seed)
    xi = rng.standard_normal(n)
    out = np.empty((n + 1, 2))
    x, y = float(z0[0]), float(z0[1])
    out[0] = (x, y)
    sqdt = math.sqrt(delta)
    sig = sigma.sigma
    for i in range(n):
        v1 = model.a1(x, y, theta)
        v2 = model.a2(x, y, theta)
        b = model.b(x, y, sig)
        x = x + delta * v1
        y = y + delta * v2 + b * sqdt * xi[i]
        if not (-STATE_BOUND <= x <= STATE_BOUND and -STATE_BOUND <= y <= STATE_BOUND):
            raise TrajectoryDivergedError(i + 1)
        out[i + 1] = (x, y)
    meta = _trajectory_meta(model, theta, sigma, delta, n, seed, "euler-maruyama")
    return Trajectory(states=out, delta=delta, meta=meta)


def downsample(traj: Trajectory, stride: int) -> Trajectory:
    """Keep every stride-th state and widen the step accordingly."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    states = traj.states[::stride]
    if states.shape[0] < 2:
        raise ValueError("stride leaves fewer than 2 states")
    meta = dict(traj.meta)
    meta["downsampled_by"] = stride * meta.get("downsampled_by", 1)
    return Trajectory(states=states.copy(), delta=traj.delta * stride, meta=meta)


def one_step_moments_mc(
    model: ModelSpec,
    theta: DriftParams,
    sigma: DiffusionParams,
    z,
    delta: float,
    n_mc: int,
    seed,
) -> StepMoments:
    """Monte-Carlo moments of (Z_next - drift_approx(z)) over n_mc sampler draws.

    Leading orders to compare against: var_y ~ delta b^2,
    var_x ~ (da1/dy)^2 b^2 delta^3 / 3, cov_xy ~ (da1/dy) b^2 delta^2 / 2.
    """
    if n_mc < 1000:
        raise ValueError("n_mc must be >= 1000")
    rng = noise_stream(seed)
    xi = rng.standard_normal((n_mc, 2))
    fac = cholesky2(sigma_delta(model, theta, sigma, z, delta))
    ex = fac.l11 * xi[:, 0]
    ey = fac.l21 * xi[:, 0] + fac.l22 * xi[:, 1]
    sq_x = ex * ex
    sq_y = ey * ey
    pr = ex * ey
    root_n = math.sqrt(n_mc)
    return StepMoments(
        delta=delta,
        n_mc=n_mc,
        mean_x_err=float(ex.mean()),
        mean_y_err=float(ey.mean()),
        var_x=float(sq_x.mean()),
        var_y=float(sq_y.mean()),
        cov_xy=float(pr.mean()),
        se_mean_x=float(ex.std(ddof=1) / root_n),
        se_mean_y=float(ey.std(ddof=1) / root_n),
        se_var_x=float(sq_x.std(ddof=1) / root_n),
        se_var_y=float(sq_y.std(ddof=1) / root_n),
        se_cov_xy=float(pr.std(ddof=1) / root_n),
    )


def write_trajectory(traj: Trajectory, path) -> None:
    """Write `t,x,y` CSV (full double precision, '.' decimal, LF endings) and
    a JSON meta sidecar next to it."""
    path = str(path)
    with open(path, "w", newline="") as fh:
        fh.write("t,x,y\n")
        delta = traj.delta
        for i, (x, y) in enumerate(traj.states):
            fh.write(f"{repr(i * delta)},{repr(float(x))},{repr(float(y))}\n")
    with open(_meta_path(path), "w", newline="") as fh:
        json.dump(traj.meta, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_trajectory(path) -> Trajectory:
    """Read a `t,x,y` CSV written by `write_trajectory` (meta sidecar optional)."""
    path = str(path)
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if rows.shape[0] < 2 or rows.shape[1] != 3:
        raise ValueError(f"trajectory file {path} must have >= 2 rows of t,x,y")
    delta = float(rows[1, 0] - rows[0, 0])
    meta: dict = {}
    try:
        with open(_meta_path(path)) as fh:
            meta = json.load(fh)
        delta = float(meta.get("delta", delta))
    except FileNotFoundError:
        pass
    return Trajectory(states=rows[:, 1:3].copy(), delta=delta, meta=meta)


def _meta_path(path: str) -> str:
    return (path[: -len(".csv")] if path.endswith(".csv") else path) + ".meta.json"
