"""Two-dimensional SDE models where noise drives only the second coordinate.

The systems handled here have the form

    dX_t = a1(X_t, Y_t; theta) dt
    dY_t = a2(X_t, Y_t; theta) dt + b(X_t, Y_t; sigma) dW_t,

so the covariance of the driving noise is singular, but the noise reaches the
first ("smooth") coordinate through the state dependence of a1 on Y.  A model
is usable downstream only if da1/dy stays away from zero everywhere it is
evaluated; `check_hypoellipticity` probes exactly that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

# Below this floor on |da1/dy| the one-step covariance is numerically singular.
HYPOELLIPTICITY_TOL = 1e-12


class State(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class DriftParams:
    """Drift parameters split by equation: phi enters a1, psi enters a2."""

    phi: tuple[float, ...]
    psi: tuple[float, ...]


@dataclass(frozen=True)
class DiffusionParams:
    """Noise amplitude.  sigma = 0 is allowed for noiseless simulation probes;
    estimation routines require sigma > 0."""

    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma >= 0.0):
            raise ValueError(f"sigma must be finite and >= 0, got {self.sigma}")


@dataclass(frozen=True)
class ParamBounds:
    """Box bounds for the drift parameter vector, aligned with the model's
    parameter names.  Positivity-flagged coordinates are log-transformed by
    the optimizer and must have a nonnegative lower bound."""

    names: tuple[str, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    positive: tuple[bool, ...]

    def __post_init__(self):
        k = len(self.names)
        if not (len(self.lower) == len(self.upper) == len(self.positive) == k):
            raise ValueError("bounds fields must align with parameter names")
        for name, lo, hi, pos in zip(self.names, self.lower, self.upper, self.positive):
            if not lo < hi:
                raise ValueError(f"bound for {name!r} must satisfy lower < upper")
            if pos and lo < 0.0:
                raise ValueError(f"positive parameter {name!r} needs lower >= 0")

    def contains(self, vector: Sequence[float]) -> bool:
        if len(vector) != len(self.names):
            return False
        return all(lo <= v <= hi for v, lo, hi in zip(vector, self.lower, self.upper))


Evaluator = Callable[..., object]  # (x, y, DriftParams) -> float or ndarray


@dataclass(frozen=True)
class ModelSpec:
    """A concrete model: drift pair, noise amplitude and the four drift
    partials, all broadcasting over array-valued (x, y).

    Partial derivatives are supplied analytically; `check_partials` guards
    them against finite differences.  `factor` is the state factor f of a
    multiplicatively parameterized amplitude b = sigma * f(x, y) and is
    required by the explicit diffusion estimator.  `pack`/`unpack` translate
    between the flat, named parameter vector used for optimization and
    reporting (ordered as `param_names`) and the per-equation `DriftParams`.
    """

    name: str
    a1: Evaluator
    a2: Evaluator
    b: Callable
    dx_a1: Evaluator
    dy_a1: Evaluator
    dx_a2: Evaluator
    dy_a2: Evaluator
    param_names: tuple[str, ...]
    bounds: ParamBounds
    pack: Callable[[Sequence[float]], DriftParams]
    unpack: Callable[[DriftParams], tuple[float, ...]]
    factor: Optional[Callable] = None
    constants: dict = field(default_factory=dict)


@dataclass(frozen=True)
class FhnParams:
    """FitzHugh-Nagumo parameter set.  The stimulus magnitude s is a known
    constant of the experiment, not an estimated parameter."""

    gamma: float
    beta: float
    epsilon: float
    sigma: float
    s: float = 0.01

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    def drift_params(self) -> DriftParams:
        return DriftParams(phi=(self.epsilon,), psi=(self.gamma, self.beta))

    def diffusion(self) -> DiffusionParams:
        return DiffusionParams(self.sigma)

    def theta_vector(self) -> tuple[float, float, float]:
        return (self.gamma, self.beta, self.epsilon)


def fhn_drift(z, p: FhnParams) -> tuple[float, float]:
    """Drift of the FitzHugh-Nagumo neuron at state z = (x, y):
    ((x - x^3 - y - s)/epsilon, gamma*x - y + beta)."""
    x, y = z
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError("non-finite state")
    return ((x - x**3 - y - p.s) / p.epsilon, p.gamma * x - y + p.beta)


def fhn_jacobian(z, p: FhnParams) -> np.ndarray:
    """Drift Jacobian [[(1-3x^2)/eps, -1/eps], [gamma, -1]] at z = (x, y)."""
    x, y = z
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError("non-finite state")
    return np.array(
        [
            [(1.0 - 3.0 * x * x) / p.epsilon, -1.0 / p.epsilon],
            [p.gamma, -1.0],
        ]
    )


def fhn_model(s: float = 0.01) -> ModelSpec:
    """Build the FitzHugh-Nagumo ModelSpec for a known stimulus magnitude s.

    Estimated drift parameters, in reporting order: (gamma, beta, epsilon).
    epsilon is positivity-flagged.  The noise amplitude is the constant
    sigma, i.e. factor f = 1.
    """

    def a1(x, y, p):
        return (x - x**3 - y - s) / p.phi[0]

    def a2(x, y, p):
        return p.psi[0] * x - y + p.psi[1]

    def dx_a1(x, y, p):
        return (1.0 - 3.0 * x * x) / p.phi[0]

    def dy_a1(x, y, p):
        return -1.0 / p.phi[0]

    def dx_a2(x, y, p):
        return p.psi[0]

    def dy_a2(x, y, p):
        return -1.0

    def b(x, y, sigma):
        return sigma

    def factor(x, y):
        return 1.0

    bounds = ParamBounds(
        names=("gamma", "beta", "epsilon"),
        lower=(-10.0, -10.0, 1e-4),
        upper=(10.0, 10.0, 10.0),
        positive=(False, False, True),
    )
    return ModelSpec(
        name="fhn",
        a1=a1,
        a2=a2,
        b=b,
        dx_a1=dx_a1,
        dy_a1=dy_a1,
        dx_a2=dx_a2,
        dy_a2=dy_a2,
        param_names=("gamma", "beta", "epsilon"),
        bounds=bounds,
        pack=lambda v: DriftParams(phi=(float(v[2]),), psi=(float(v[0]), float(v[1]))),
        unpack=lambda p: (p.psi[0], p.psi[1], p.phi[0]),
        factor=factor,
        constants={"s": s},
    )


FHN_CONFIG_KEYS = ("gamma", "beta", "epsilon", "sigma", "s")


def fhn_from_config(cfg: dict) -> tuple[ModelSpec, FhnParams]:
    """Parse a model configuration object like
    {"model": "fhn", "gamma": .., "beta": .., "epsilon": .., "sigma": .., "s": ..}."""
    kind = cfg.get("model")
    if kind != "fhn":
        raise ValueError(f"unsupported model {kind!r} (config key 'model')")
    values = {}
    for key in FHN_CONFIG_KEYS:
        if key not in cfg:
            raise ValueError(f"model config missing key {key!r}")
        try:
            values[key] = float(cfg[key])
        except (TypeError, ValueError):
            raise ValueError(f"model config key {key!r} is not a number") from None
    params = FhnParams(**values)
    return fhn_model(s=params.s), params


@dataclass(frozen=True)
class HypoellipticityReport:
    passed: bool
    tol: float
    violations: tuple[tuple[State, float], ...]  # (probe, da1/dy value)


def check_hypoellipticity(
    model: ModelSpec,
    theta: DriftParams,
    probes: Sequence[State],
    tol: float = HYPOELLIPTICITY_TOL,
) -> HypoellipticityReport:
    """Verify |da1/dy| > tol at every probe state; violations are reported,
    not raised."""
    if len(probes) == 0:
        raise ValueError("probes must be non-empty")
    violations = []
    for z in probes:
        val = float(model.dy_a1(z[0], z[1], theta))
        if not abs(val) > tol:
            violations.append((State(*z), val))
    return HypoellipticityReport(passed=not violations, tol=tol, violations=tuple(violations))


@dataclass(frozen=True)
class PartialsReport:
    passed: bool
    rel_tol: float
    worst_error: float
    worst_probe: Optional[State]
    worst_partial: Optional[str]


def check_partials(
    model: ModelSpec,
    theta: DriftParams,
    probes: Sequence[State],
    rel_tol: float = 1e-5,
) -> PartialsReport:
    """Compare the declared drift partials against central finite differences.

    Step h = 1e-6 * max(1, |coordinate|); errors are measured relative to
    max(1, |declared partial|) so exact zeros are handled gracefully.
    """
    pairs = [
        ("dx_a1", model.a1, model.dx_a1, 0),
        ("dy_a1", model.a1, model.dy_a1, 1),
        ("dx_a2", model.a2, model.dx_a2, 0),
        ("dy_a2", model.a2, model.dy_a2, 1),
    ]
    worst = (0.0, None, None)
    for z in probes:
        x, y = float(z[0]), float(z[1])
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ValueError("non-finite probe state")
        for name, func, partial, axis in pairs:
            coord = x if axis == 0 else y
            h = 1e-6 * max(1.0, abs(coord))
            if axis == 0:
                fd = (func(x + h, y, theta) - func(x - h, y, theta)) / (2.0 * h)
            else:
                fd = (func(x, y + h, theta) - func(x, y - h, theta)) / (2.0 * h)
            declared = float(partial(x, y, theta))
            err = abs(float(fd) - declared) / max(1.0, abs(declared))
            if err > worst[0]:
                worst = (err, State(x, y), name)
    return PartialsReport(
        passed=worst[0] <= rel_tol,
        rel_tol=rel_tol,
        worst_error=worst[0],
        worst_probe=worst[1],
        worst_partial=worst[2],
    )
