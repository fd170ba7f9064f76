import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyposde import (
    CovMatrix2,
    DriftParams,
    DiffusionParams,
    State,
    cholesky2,
    downsample,
    drift_approx,
    euler_maruyama,
    ll_step,
    noise_stream,
    one_step_moments_mc,
    read_trajectory,
    sigma_delta,
    simulate,
    write_trajectory,
)
from hyposde.model import ModelSpec, ParamBounds
from hyposde.scheme import (
    DriftOverflowError,
    NotPSDError,
    Trajectory,
    TrajectoryDivergedError,
)

NO_PARAMS = DriftParams((), ())


def _plain_bounds():
    return ParamBounds(names=(), lower=(), upper=(), positive=())


def rotation_model() -> ModelSpec:
    return ModelSpec(
        name="rotation",
        a1=lambda x, y, p: y,
        a2=lambda x, y, p: -x,
        b=lambda x, y, sigma: sigma,
        dx_a1=lambda x, y, p: 0.0,
        dy_a1=lambda x, y, p: 1.0,
        dx_a2=lambda x, y, p: -1.0,
        dy_a2=lambda x, y, p: 0.0,
        param_names=(),
        bounds=_plain_bounds(),
        pack=lambda v: NO_PARAMS,
        unpack=lambda p: (),
        factor=lambda x, y: 1.0,
    )


def const_partials_model(p: float, q: float) -> ModelSpec:
    """Linear drift a1 = p*y, a2 = q*y so the y-partials are exactly (p, q)."""
    return ModelSpec(
        name="const-partials",
        a1=lambda x, y, _: p * y,
        a2=lambda x, y, _: q * y,
        b=lambda x, y, sigma: sigma,
        dx_a1=lambda x, y, _: 0.0,
        dy_a1=lambda x, y, _: p,
        dx_a2=lambda x, y, _: 0.0,
        dy_a2=lambda x, y, _: q,
        param_names=(),
        bounds=_plain_bounds(),
        pack=lambda v: NO_PARAMS,
        unpack=lambda _: (),
        factor=lambda x, y: 1.0,
    )


class TestDriftApprox:
    def test_rotation_step(self):
        # one step of the unit rotation field from (1, 0)
        out = drift_approx(rotation_model(), NO_PARAMS, State(1.0, 0.0), 0.1)
        assert out == pytest.approx((0.995, -0.1), rel=1e-12)

    def test_zero_delta_is_identity(self, fhn, set1):
        z = State(0.4, -0.7)
        assert drift_approx(fhn, set1.drift_params(), z, 0.0) == z

    def test_fhn_composition(self, fhn, set1):
        out = drift_approx(fhn, set1.drift_params(), State(0.0, 0.0), 0.01)
        assert out == pytest.approx((-0.0012, 0.0029775), rel=1e-12)

    def test_overflow_reported(self):
        model = dataclasses.replace(
            rotation_model(),
            a1=lambda x, y, p: 1e308 * (x + 1.0),
            dx_a1=lambda x, y, p: 1e308,
        )
        with pytest.raises(DriftOverflowError, match="drift overflow"):
            drift_approx(model, NO_PARAMS, State(1.0, 1.0), 1.0)

    def test_negative_delta_rejected(self, fhn, set1):
        with pytest.raises(ValueError):
            drift_approx(fhn, set1.drift_params(), State(0.0, 0.0), -0.1)


# Exact covariance of the frozen linear system at (0,0) for set-1 values,
# integrated by high-order quadrature (60-node Gauss-Legendre on the matrix
# exponential integrand).  Frozen here; re-derived by _exact_linear_cov below.
EXACT_COV = {
    0.02: (0.000110077830850213, -0.0007536728229890605, 0.007043142744956907),
    0.01: (1.284384923034686e-05, -0.0001842076591428802, 0.003562416345766694),
    0.005: (1.5516665035305226e-06, -4.552556946827745e-05, 0.001790803519958043),
}


def _exact_linear_cov(J: np.ndarray, BBt: np.ndarray, delta: float) -> np.ndarray:
    from scipy.linalg import expm

    nodes, weights = np.polynomial.legendre.leggauss(60)
    s = 0.5 * delta * (nodes + 1.0)
    w = 0.5 * delta * weights
    out = np.zeros((2, 2))
    for si, wi in zip(s, w):
        e = expm(J * si)
        out += wi * (e @ BBt @ e.T)
    return out


class TestSigmaDelta:
    def test_zero_noise_gives_zero_matrix(self, fhn, set1):
        cov = sigma_delta(fhn, set1.drift_params(), DiffusionParams(0.0), (0.3, 0.2), 0.01)
        assert cov == CovMatrix2(0.0, 0.0, 0.0)

    def test_set1_entries(self, fhn, set1):
        cov = sigma_delta(fhn, set1.drift_params(), set1.diffusion(), (0.0, 0.0), 0.01)
        assert cov.s11 == pytest.approx(1.2e-5, rel=1e-12)
        assert cov.s12 == pytest.approx(0.36 * (-10 * 5e-5 + 10 * (1e-6 / 3)), rel=1e-12)
        assert cov.s12 == pytest.approx(-1.788e-4, rel=1e-12)
        assert cov.s22 == pytest.approx(0.36 * (0.01 - 1e-4 + 1e-6 / 3), rel=1e-12)

    def test_matches_exact_linear_covariance(self, fhn, set1):
        J = np.array([[10.0, -10.0], [1.5, -1.0]])
        BBt = np.diag([0.0, 0.36])
        errors = []
        for delta, frozen in EXACT_COV.items():
            exact = _exact_linear_cov(J, BBt, delta)
            assert exact[0, 0] == pytest.approx(frozen[0], rel=1e-9)
            assert exact[0, 1] == pytest.approx(frozen[1], rel=1e-9)
            assert exact[1, 1] == pytest.approx(frozen[2], rel=1e-9)
            cov = sigma_delta(fhn, set1.drift_params(), set1.diffusion(), (0.0, 0.0), delta)
            rel = np.abs(cov.as_array() - exact) / np.abs(exact)
            assert rel.max() < 10.0 * delta  # truncation is O(delta) relative
            errors.append(np.abs(cov.as_array() - exact).max())
        assert errors[0] > errors[1] > errors[2]

    @given(
        p=st.floats(min_value=0.1, max_value=30.0),
        q=st.floats(min_value=-5.0, max_value=5.0),
        b=st.floats(min_value=1e-3, max_value=3.0),
        delta=st.floats(min_value=1e-4, max_value=0.1),
        sign=st.sampled_from([-1.0, 1.0]),
    )
    @settings(max_examples=200, deadline=None)
    def test_positive_definite_and_det_order(self, p, q, b, delta, sign):
        model = const_partials_model(sign * p, q)
        cov = sigma_delta(model, NO_PARAMS, DiffusionParams(b), (0.0, 0.0), delta)
        assert cov.s11 > 0
        assert cov.det > 0
        # the appendix-consistent (2,2) entry makes this determinant exact
        assert cov.det == pytest.approx(b**4 * p**2 * delta**4 / 12.0, rel=1e-9)

    def test_noise_scaling_is_exact(self, fhn, set1):
        theta = set1.drift_params()
        z = (0.7, -0.3)
        base = sigma_delta(fhn, theta, DiffusionParams(set1.sigma), z, 0.01)
        for c in (2.0, 4.0, 0.5):
            scaled = sigma_delta(fhn, theta, DiffusionParams(c * set1.sigma), z, 0.01)
            assert scaled.s11 == c * c * base.s11
            assert scaled.s12 == c * c * base.s12
            assert scaled.s22 == c * c * base.s22

    def test_delta_must_be_positive(self, fhn, set1):
        with pytest.raises(ValueError):
            sigma_delta(fhn, set1.drift_params(), set1.diffusion(), (0.0, 0.0), 0.0)

    def test_det_order_constant_over_deltas(self, fhn, set1, set2):
        for params, z in ((set1, (0.0, 0.0)), (set2, (0.5, -1.0))):
            ratios = [
                sigma_delta(fhn, params.drift_params(), params.diffusion(), z, d).det / d**4
                for d in (1e-2, 1e-3, 1e-4)
            ]
            spread = (max(ratios) - min(ratios)) / max(ratios)
            assert spread < 0.05


class TestCholesky2:
    def test_identity(self):
        fac = cholesky2(CovMatrix2(1.0, 0.0, 1.0))
        assert (fac.l11, fac.l21, fac.l22) == (1.0, 0.0, 1.0)

    def test_hand_example(self):
        fac = cholesky2(CovMatrix2(4.0, 2.0, 5.0))
        assert (fac.l11, fac.l21, fac.l22) == (2.0, 1.0, 2.0)

    def test_degenerate_smooth_coordinate(self):
        fac = cholesky2(CovMatrix2(0.0, 0.0, 9.0))
        assert (fac.l11, fac.l21, fac.l22) == (0.0, 0.0, 3.0)

    def test_reconstruction_on_random_psd(self):
        rng = np.random.default_rng(42)
        for i in range(1000):
            l11, l22 = rng.uniform(0, 3, 2)
            l21 = rng.uniform(-3, 3)
            if i % 50 == 0:
                l11 = 0.0  # exercise the degenerate branch
            cov = CovMatrix2(l11 * l11, l11 * l21, l21 * l21 + l22 * l22)
            fac = cholesky2(cov)
            rebuilt = fac.as_array() @ fac.as_array().T
            scale = max(abs(cov.s11), abs(cov.s12), abs(cov.s22), 1e-30)
            err = np.abs(rebuilt - cov.as_array()).max() / scale
            assert err <= 1e-12

    def test_indefinite_rejected(self):
        with pytest.raises(NotPSDError, match="not PSD"):
            cholesky2(CovMatrix2(1.0, 2.0, 1.0))
        with pytest.raises(NotPSDError):
            cholesky2(CovMatrix2(-1.0, 0.0, 1.0))


class TestLLStep:
    def test_zero_gaussian_pair_gives_mean(self, fhn, set1):
        z = State(0.1, 0.2)
        out = ll_step(fhn, set1.drift_params(), set1.diffusion(), z, 0.01, (0.0, 0.0))
        assert out == drift_approx(fhn, set1.drift_params(), z, 0.01)

    def test_zero_noise_any_pair(self, fhn, set1):
        z = State(0.1, 0.2)
        out = ll_step(fhn, set1.drift_params(), DiffusionParams(0.0), z, 0.01, (1.3, -2.4))
        assert out == drift_approx(fhn, set1.drift_params(), z, 0.01)

    def test_sample_mean_and_covariance(self, fhn, set1):
        theta, sig = set1.drift_params(), set1.diffusion()
        z, delta, n = State(0.0, 0.0), 0.01, 100000
        rng = noise_stream(99)
        xi = rng.standard_normal((n, 2))
        pts = np.array([ll_step(fhn, theta, sig, z, delta, xi[i]) for i in range(n)])
        mean = drift_approx(fhn, theta, z, delta)
        cov = sigma_delta(fhn, theta, sig, z, delta)
        ex, ey = pts[:, 0] - mean.x, pts[:, 1] - mean.y
        root_n = math.sqrt(n)
        # sample mean within 4 MC standard errors of the drift mean
        assert abs(ex.mean()) < 4 * ex.std(ddof=1) / root_n
        assert abs(ey.mean()) < 4 * ey.std(ddof=1) / root_n
        # sample second moments within 5 MC standard errors of the covariance
        for sample, target in (
            (ex * ex, cov.s11),
            (ey * ey, cov.s22),
            (ex * ey, cov.s12),
        ):
            se = sample.std(ddof=1) / root_n
            assert abs(sample.mean() - target) < 5 * se


class TestSimulate:
    def test_single_step_reproducible(self, fhn, set1):
        a = simulate(fhn, set1.drift_params(), set1.diffusion(), (0, 0), 0.01, 1, seed=3)
        b = simulate(fhn, set1.drift_params(), set1.diffusion(), (0, 0), 0.01, 1, seed=3)
        assert np.array_equal(a.states, b.states)

    def test_trajectories_reproducible_and_seed_sensitive(self, fhn, set1):
        args = (fhn, set1.drift_params(), set1.diffusion(), (0, 0), 0.01, 500)
        a = simulate(*args, seed=11)
        b = simulate(*args, seed=11)
        c = simulate(*args, seed=12)
        assert np.array_equal(a.states, b.states)
        assert not np.array_equal(a.states, c.states)

    def test_meta_records_run(self, fhn, set1):
        traj = simulate(fhn, set1.drift_params(), set1.diffusion(), (0, 0), 0.01, 10, seed=5)
        assert traj.meta["model"] == "fhn"
        assert traj.meta["params"] == {"gamma": 1.5, "beta": 0.3, "epsilon": 0.1}
        assert traj.meta["seed"] == 5
        assert traj.meta["n"] == 10

    def test_reference_design_has_finite_positive_stationary_variance(self, fhn, set1):
        traj = simulate(fhn, set1.drift_params(), set1.diffusion(), (0, 0), 0.001, 500000, seed=17)
        var_y = float(traj.y.var())
        var_x = float(traj.x.var())
        assert math.isfinite(var_y) and var_y > 0
        assert math.isfinite(var_x) and var_x > 0

    def test_divergence_guard_names_step(self, fhn, set1):
        with pytest.raises(TrajectoryDivergedError) as err:
            simulate(fhn, set1.drift_params(), set1.diffusion(), (0, 0), 10.0, 50, seed=1)
        assert err.value.step >= 1

    def test_noiseless_path_matches_ode_and_oscillates(self, fhn, set1):
        theta = set1.drift_params()
        traj = simulate(fhn, theta, DiffusionParams(0.0), (0, 0), 0.001, 20000, seed=0)

        def rhs(x, y):
            return (x - x**3 - y - 0.01) / 0.1, 1.5 * x - y + 0.3

        # classical RK4 at half the step as the reference integration
        h = 0.0005
        x, y = 0.0, 0.0
        ref = [(x, y)]
        for _ in range(40000):
            k1 = rhs(x, y)
            k2 = rhs(x + 0.5 * h * k1[0], y + 0.5 * h * k1[1])
            k3 = rhs(x + 0.5 * h * k2[0], y + 0.5 * h * k2[1])
            k4 = rhs(x + h * k3[0], y + h * k3[1])
            x += h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            y += h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            ref.append((x, y))
        ref = np.asarray(ref[::2])
        err = np.abs(traj.states - ref).max()
        assert err < 5e-3
        xs = traj.x
        assert xs.max() > 0.9 and xs.min() < -0.9  # relaxation swings
        assert int(np.sum(np.diff(np.sign(xs[xs != 0])) != 0)) >= 3


class TestEulerMaruyama:
    def test_noiseless_equals_explicit_euler(self, fhn, set1):
        theta = set1.drift_params()
        traj = euler_maruyama(fhn, theta, DiffusionParams(0.0), (0.1, 0.2), 0.01, 200, seed=4)
        x, y = 0.1, 0.2
        for i in range(200):
            fx = (x - x**3 - y - 0.01) / 0.1
            fy = 1.5 * x - y + 0.3
            x, y = x + 0.01 * fx, y + 0.01 * fy
        assert traj.states[-1] == pytest.approx((x, y), rel=1e-12)

    def test_smooth_coordinate_one_step_variance_is_zero(self, fhn, set1):
        theta, sig = set1.drift_params(), set1.diffusion()
        xs = [
            euler_maruyama(fhn, theta, sig, (0.3, -0.1), 0.01, 1, seed=k).states[1, 0]
            for k in range(200)
        ]
        assert max(xs) == min(xs)  # no noise ever enters X in one step

    def test_reproducible(self, fhn, set1):
        a = euler_maruyama(fhn, set1.drift_params(), set1.diffusion(), (0, 0), 0.01, 100, seed=8)
        b = euler_maruyama(fhn, set1.drift_params(), set1.diffusion(), (0, 0), 0.01, 100, seed=8)
        assert np.array_equal(a.states, b.states)


class TestDownsample:
    def test_stride_one_is_identity(self, fhn, set1):
        traj = simulate(fhn, set1.drift_params(), set1.diffusion(), (0, 0), 0.01, 20, seed=2)
        out = downsample(traj, 1)
        assert np.array_equal(out.states, traj.states)
        assert out.delta == traj.delta

    def test_selection_semantics(self):
        states = np.stack([np.arange(101.0), -np.arange(101.0)], axis=1)
        traj = Trajectory(states=states, delta=0.001)
        out = downsample(traj, 10)
        assert np.array_equal(out.states[:, 0], np.arange(0.0, 101.0, 10.0))

    def test_reference_design_counts(self):
        states = np.zeros((500001, 2))
        states[:, 0] = np.arange(500001.0)
        out = downsample(Trajectory(states=states, delta=0.001), 10)
        assert out.n == 50000
        assert out.delta == pytest.approx(0.01, rel=1e-15)

    def test_invalid_stride(self, fhn, set1):
        traj = simulate(fhn, set1.drift_params(), set1.diffusion(), (0, 0), 0.01, 20, seed=2)
        with pytest.raises(ValueError):
            downsample(traj, 0)
        with pytest.raises(ValueError):
            downsample(traj, 100)


class TestOneStepMoments:
    def test_leading_order_ratios(self, fhn, set1):
        theta, sig = set1.drift_params(), set1.diffusion()
        z, delta = State(0.0, 0.0), 0.01
        m = one_step_moments_mc(fhn, theta, sig, z, delta, 200000, seed=21)
        p, b2 = -10.0, 0.36
        assert m.var_y / delta == pytest.approx(b2, abs=4 * m.se_var_y / delta)
        assert m.var_x / delta**3 == pytest.approx(p * p * b2 / 3, abs=4 * m.se_var_x / delta**3)
        assert m.cov_xy / delta**2 == pytest.approx(p * b2 / 2, abs=4 * m.se_cov_xy / delta**2)
        assert abs(m.mean_x_err) < 4 * m.se_mean_x
        assert abs(m.mean_y_err) < 4 * m.se_mean_y

    def test_requires_enough_draws(self, fhn, set1):
        with pytest.raises(ValueError):
            one_step_moments_mc(fhn, set1.drift_params(), set1.diffusion(), (0, 0), 0.01, 10, 0)


class TestNoiseStream:
    def test_keyed_streams(self):
        a = noise_stream(7).standard_normal(5)
        b = noise_stream(7).standard_normal(5)
        c = noise_stream(8).standard_normal(5)
        d = noise_stream((7, 1)).standard_normal(5)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
        assert not np.array_equal(a, d)


class TestTrajectoryIO:
    def test_csv_roundtrip(self, fhn, set1, tmp_path):
        traj = simulate(fhn, set1.drift_params(), set1.diffusion(), (0, 0), 0.01, 50, seed=13)
        path = tmp_path / "traj.csv"
        write_trajectory(traj, path)
        back = read_trajectory(path)
        assert np.array_equal(back.states, traj.states)
        assert back.delta == traj.delta
        assert back.meta == traj.meta

    def test_header_and_line_endings(self, fhn, set1, tmp_path):
        traj = simulate(fhn, set1.drift_params(), set1.diffusion(), (0, 0), 0.01, 5, seed=13)
        path = tmp_path / "traj.csv"
        write_trajectory(traj, path)
        raw = path.read_bytes()
        assert raw.startswith(b"t,x,y\n")
        assert b"\r" not in raw

    def test_validation(self):
        with pytest.raises(ValueError):
            Trajectory(states=np.zeros((1, 2)), delta=0.1)
        with pytest.raises(ValueError):
            Trajectory(states=np.zeros((5, 2)), delta=0.0)
        bad = np.zeros((5, 2))
        bad[3, 1] = np.nan
        with pytest.raises(ValueError):
            Trajectory(states=bad, delta=0.1)
