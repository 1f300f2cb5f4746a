import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spdescore.errors import HorizonError, InvalidParameterError
from spdescore.reverse import (
    ReverseConfig,
    ScoreSchedule,
    discrete_moments,
    flow_drift,
    probability_flow_step,
    reverse_sde_step,
    run_reverse,
)
from spdescore.score import make_score_context
from spdescore.spectral import ModeSpectrum, make_dense_q, make_dirichlet_laplacian, make_power_law_q, semigroup_apply

SCALAR = ModeSpectrum(np.array([-1.0]), "scalar")
Q1 = make_power_law_q(1, 1.0, 2.0)


def moments_ok(res, m_disc, P_disc, k=3.0):
    """Empirical moments at t_min within k sigma plus the exact scheme offset."""
    x = res.end
    n = x.shape[0]
    emp_m = x.mean(axis=0)
    emp_P = np.atleast_2d(np.cov(x, rowvar=False))
    d = np.diag(emp_P)
    se_m = np.sqrt(d / n)
    se_P = np.sqrt((np.outer(d, d) + emp_P**2) / n)
    ok_m = np.abs(emp_m - res.mean_tmin) <= k * se_m + np.abs(m_disc - res.mean_tmin)
    ok_P = np.abs(emp_P - res.cov_tmin) <= k * se_P + np.abs(P_disc - res.cov_tmin)
    return bool(ok_m.all() and ok_P.all())


class TestConfig:
    def test_default_tmin(self):
        assert ReverseConfig(2.0, 10).t_min == pytest.approx(2e-3)

    @pytest.mark.parametrize("kw", [dict(t_min=0.0), dict(t_min=3.0), dict(n_steps=0), dict(mode="x"), dict(grid="x")])
    def test_invalid(self, kw):
        args = dict(T=1.0, n_steps=10)
        args.update(kw)
        with pytest.raises(InvalidParameterError):
            ReverseConfig(**args)

    @pytest.mark.parametrize("grid", ["geometric", "uniform"])
    def test_times(self, grid):
        t = ReverseConfig(1.0, 16, grid=grid).times()
        assert t[0] == 1.0 and t[-1] == 1e-3 and t.size == 17 and np.all(np.diff(t) < 0)


class TestSteps:
    def test_noiseless_backward_flow(self):
        spec = make_dirichlet_laplacian(3)
        Q = make_dense_q(np.zeros((3, 3)))
        prov = ScoreSchedule(spec, Q, np.ones(3), [1.0])
        x = np.array([1.0, -2.0, 0.5])
        a = reverse_sde_step(spec, Q, prov, x, 1.0, 0.01, 0)
        b = probability_flow_step(spec, Q, prov, x, 1.0, 0.01)
        np.testing.assert_allclose(a, x - 0.01 * spec.lambdas * x, rtol=1e-15)
        np.testing.assert_array_equal(a, b)

    def test_horizon_error(self):
        prov = ScoreSchedule(SCALAR, Q1, [0.0], [1.0])
        with pytest.raises(HorizonError):
            reverse_sde_step(SCALAR, Q1, prov, [0.0], 0.5, 0.5, 0, t_min=0.1)
        with pytest.raises(HorizonError):
            probability_flow_step(SCALAR, Q1, prov, [0.0], 0.5, 0.45, t_min=0.1)

    def test_step_formula(self):
        spec = make_dirichlet_laplacian(2, np.pi, 1.0)
        Q = make_dense_q([[1.0, 0.2], [0.2, 0.5]])
        prov = ScoreSchedule(spec, Q, [1.0, 1.0], [1.0])
        x = np.array([0.3, -0.1])
        ctx = prov(1.0)
        s = -ctx.cov.pinv @ (x - ctx.mean)
        ode = probability_flow_step(spec, Q, prov, x, 1.0, 0.01)
        np.testing.assert_allclose(ode, x - 0.01 * (spec.lambdas * x - 0.5 * Q.q @ s), rtol=1e-13)
        xi = np.random.default_rng(3).standard_normal(2)
        sde = reverse_sde_step(spec, Q, prov, x, 1.0, 0.01, np.random.default_rng(3))
        expect = x - 0.01 * (spec.lambdas * x - Q.q @ s) + Q.sqrt_q @ xi * 0.1
        np.testing.assert_allclose(sde, expect, rtol=1e-13)

    def test_mean_stays_on_mean(self):
        """At m(t) the reverse drift equals A m(t), so m solves the backward flow."""
        spec = make_dirichlet_laplacian(4, np.pi, 0.5)
        Q = make_dense_q(np.diag([1.0, 0.5, 0.2, 0.1]) + 0.05)
        u0 = np.array([1.0, -0.5, 0.25, 0.1])
        for t in np.geomspace(1.0, 1e-3, 20):
            ctx = make_score_context(spec, Q, u0, t)
            for mode in ("sde", "ode"):
                res = flow_drift(spec, Q, ctx, ctx.mean, mode) - spec.lambdas * ctx.mean
                assert np.abs(res).max() <= 1e-10

    @given(n=st.integers(1, 6), nu=st.floats(0.1, 2), T=st.floats(0.5, 2), steps=st.integers(4, 64))
    def test_noiseless_roundtrip(self, n, nu, T, steps):
        """Q = 0: the reverse map undoes the forward semigroup over [t_min, T]."""
        spec = make_dirichlet_laplacian(n, np.pi, nu)
        Q = make_dense_q(np.zeros((n, n)))
        cfg = ReverseConfig(T, steps)
        times = cfg.times()
        prov = ScoreSchedule(spec, Q, np.zeros(n), times[:-1])
        x0 = np.linspace(1, 2, n)
        x = semigroup_apply(spec, T - cfg.t_min, x0)
        for t, t_next in zip(times[:-1], times[1:]):
            x = reverse_sde_step(spec, Q, prov, x, t, t - t_next, 0, t_min=cfg.t_min, exact_linear=True)
        np.testing.assert_allclose(x, x0, rtol=1e-10)


class TestPipeline:
    def test_scalar_sde(self):
        cfg = ReverseConfig(1.0, 512, seed=4)
        res = run_reverse(SCALAR, Q1, [1.0], cfg, 100_000)
        m, P = discrete_moments(SCALAR, Q1, [1.0], cfg)
        assert moments_ok(res, m, P)
        np.testing.assert_allclose(res.mean_tmin, np.exp(-cfg.t_min), rtol=1e-14)

    def test_start_law(self):
        spec = make_dirichlet_laplacian(2, np.pi, 0.5)
        Q = make_power_law_q(2, 1, 2)
        res = run_reverse(spec, Q, [1.0, 0.5], ReverseConfig(1.0, 8, seed=2), 100_000)
        n = res.start.shape[0]
        se = np.sqrt(np.diag(res.cov_T) / n)
        assert np.all(np.abs(res.start.mean(axis=0) - res.mean_T) <= 3 * se)

    def test_ode_deterministic_given_start(self):
        spec = make_dirichlet_laplacian(2, np.pi, 0.5)
        Q = make_power_law_q(2, 1, 2)
        cfg = ReverseConfig(1.0, 64, mode="ode", seed=3)
        a = run_reverse(spec, Q, [1, 1], cfg, 500)
        b = run_reverse(spec, Q, [1, 1], cfg, 500)
        assert a.end.tobytes() == b.end.tobytes()
        # and the end state is a deterministic function of the start
        times = cfg.times()
        prov = ScoreSchedule(spec, Q, [1, 1], times[:-1])
        x = a.start[7]
        for t, t_next in zip(times[:-1], times[1:]):
            x = probability_flow_step(spec, Q, prov, x, t, t - t_next, t_min=cfg.t_min)
        np.testing.assert_allclose(x, a.end[7], rtol=1e-12)

    @pytest.mark.parametrize("mode", ["sde", "ode"])
    def test_first_order_in_dt(self, mode):
        spec = make_dirichlet_laplacian(3, np.pi, 0.5)
        Q = make_power_law_q(3, 1, 2)
        u0 = [1.0, 0.5, 0.25]
        errs = []
        for k in (128, 256, 512):
            cfg = ReverseConfig(1.0, k, mode=mode)
            _, P = discrete_moments(spec, Q, u0, cfg)
            ctx = make_score_context(spec, Q, u0, cfg.t_min)
            errs.append(np.abs(P - ctx.cov.gamma).max())
        assert errs[0] / errs[1] == pytest.approx(2.0, abs=0.3)
        assert errs[1] / errs[2] == pytest.approx(2.0, abs=0.3)

    def test_ode_ensemble(self):
        spec = make_dirichlet_laplacian(2, np.pi, 0.5)
        Q = make_power_law_q(2, 1, 2)
        cfg = ReverseConfig(1.0, 256, mode="ode", seed=9)
        res = run_reverse(spec, Q, [1.0, 0.5], cfg, 100_000)
        m, P = discrete_moments(spec, Q, [1.0, 0.5], cfg)
        assert moments_ok(res, m, P)

    def test_discrete_moments_match_mc(self):
        """The exact scheme recursion and the sampler describe the same process."""
        spec = make_dirichlet_laplacian(2, np.pi, 0.5)
        Q = make_dense_q([[1.0, 0.3], [0.3, 0.4]])
        cfg = ReverseConfig(1.0, 16, seed=1, grid="uniform")
        res = run_reverse(spec, Q, [1.0, 0.0], cfg, 100_000)
        m, P = discrete_moments(spec, Q, [1.0, 0.0], cfg)
        n = res.end.shape[0]
        emp_P = np.cov(res.end, rowvar=False)
        d = np.diag(P)
        assert np.all(np.abs(res.end.mean(axis=0) - m) <= 3 * np.sqrt(d / n))
        assert np.all(np.abs(emp_P - P) <= 3 * np.sqrt((np.outer(d, d) + P**2) / n))

    def test_worker_independent(self):
        spec = make_dirichlet_laplacian(2, np.pi, 0.5)
        Q = make_power_law_q(2, 1, 2)
        cfg = ReverseConfig(1.0, 64, seed=5)
        a = run_reverse(spec, Q, [1, 1], cfg, 5000, workers=1)
        b = run_reverse(spec, Q, [1, 1], cfg, 5000, workers=4)
        assert a.end.tobytes() == b.end.tobytes() and a.start.tobytes() == b.start.tobytes()
