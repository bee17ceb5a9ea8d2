import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aicp.bootstrap import (
    BootstrapPlan,
    derivative_scatter,
    make_bootstrap,
    meff_single,
    run_bootstrap,
    scatter_bienayme,
    write_iterations,
)
from aicp.models import ModelSpec
from aicp.oracle import analytic_meff
from aicp.solver import LMOptions, fit


def _boot(spec, data, n_boot=500, seed=42, **kw):
    fy = fit(spec, data)
    return run_bootstrap(spec, data, fy, BootstrapPlan(n_boot, seed), **kw)


class TestPlan:
    def test_stream_depends_only_on_seed_and_kappa(self):
        a = BootstrapPlan(10, 7).stream(3).standard_normal(5)
        b = BootstrapPlan(500, 7).stream(3).standard_normal(5)
        np.testing.assert_array_equal(a, b)
        c = BootstrapPlan(10, 8).stream(3).standard_normal(5)
        assert not np.array_equal(a, c)

    def test_unit_noise_rows_are_streams(self):
        plan = BootstrapPlan(4, 11)
        noise = plan.unit_noise(6)
        assert noise.shape == (4, 6)
        np.testing.assert_array_equal(noise[2], plan.stream(3).standard_normal(6))
        np.testing.assert_array_equal(plan.unit_noise(6, kappas=[2, 4]), noise[[1, 3]])

    def test_same_z_for_any_model_family(self, fig1_mock):
        data, _ = fig1_mock
        plan = BootstrapPlan(5, 42)
        fy = fit(ModelSpec.nonparametric(1e6), data)
        z1 = make_bootstrap(fy, data, plan, 2)
        z2 = fy.fitted + data.eps * plan.stream(2).standard_normal(data.n_data)
        assert z1.y.tobytes() == z2.tobytes()

    def test_stream_statistics(self, fig1_mock):
        data, _ = fig1_mock
        noise = BootstrapPlan(10_000, 99).unit_noise(data.n_data)
        assert np.all(np.abs(noise.mean(axis=0)) < 0.05)
        assert np.all(np.abs(noise.var(axis=0) - 1.0) < 0.05)

    @pytest.mark.parametrize("kwargs", [dict(n_boot=0, master_seed=1), dict(n_boot=1, master_seed=-1)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            BootstrapPlan(**kwargs)

    def test_kappa_is_one_based(self):
        with pytest.raises(ValueError):
            BootstrapPlan(3, 1).stream(0)


class TestMeffSingle:
    def test_zero_response(self, fig1_mock):
        data, _ = fig1_mock
        fy = fit(ModelSpec.nonparametric(1e6), data)
        z = make_bootstrap(fy, data, BootstrapPlan(1, 3), 1)
        m, a, b = meff_single(fy, fy, z, data)
        assert m == 0.0
        np.testing.assert_array_equal(a, 0.0)

    def test_interpolation_gives_sum_of_squares(self, fig1_mock):
        data, _ = fig1_mock
        spec = ModelSpec.nonparametric(0.0)
        fy = fit(spec, data)
        z = make_bootstrap(fy, data, BootstrapPlan(1, 3), 1)
        m, a, b = meff_single(fy, fit(spec, z), z, data)
        np.testing.assert_allclose(a, b, rtol=1e-12)
        np.testing.assert_allclose(m, np.sum(b * b), rtol=1e-12)


class TestRunBootstrap:
    def test_interpolation_identity(self, fig1_mock):
        data, _ = fig1_mock
        s = _boot(ModelSpec.nonparametric(0.0), data)
        assert abs(s.m_eff - 71) <= 3 * math.sqrt(2 * 71 / 500)
        assert abs(s.m_eff - 71) <= 3 * math.sqrt(s.var_direct)
        # single-iteration variance of a chi^2_71 variable is 142
        assert abs(s.scatter.var_meff_kappa - 142) <= 0.3 * 142

    @pytest.mark.parametrize("order", [4, 10])
    def test_counted_parameters(self, snr100_mock, order):
        s = _boot(ModelSpec.gauss_hermite(order), snr100_mock[0], n_boot=200)
        assert s.valid and s.n_failed == 0
        assert abs(s.m_eff - (order + 1)) <= 0.5

    @pytest.mark.parametrize("alpha", [1e5, 1e7, 1e9])
    def test_linear_expectation_is_hat_trace(self, fig1_mock, alpha):
        data, _ = fig1_mock
        s = _boot(ModelSpec.nonparametric(alpha), data)
        tr = analytic_meff(None, data.eps**2, None, alpha)
        assert abs(s.m_eff - tr) <= 3 * math.sqrt(s.var_direct)

    def test_single_iteration(self, fig1_mock):
        s = _boot(ModelSpec.nonparametric(1e6), fig1_mock[0], n_boot=1)
        assert s.var_direct is None and s.scatter is None
        assert s.m_eff == s.m_eff_per_iter[0]
        assert s.valid and s.sd_meff is None

    def test_bienayme_matches_direct(self, fig1_mock):
        s = _boot(ModelSpec.nonparametric(3e6), fig1_mock[0], n_boot=50)
        np.testing.assert_allclose(s.var_bienayme, s.var_direct, rtol=1e-9)

    def test_failed_refits_flag_summary(self, snr100_mock):
        data, _ = snr100_mock
        spec = ModelSpec.gauss_hermite(10)
        fy = fit(spec, data)
        s = run_bootstrap(spec, data, fy, BootstrapPlan(20, 1), options=LMOptions(max_iter=1))
        assert s.n_failed > 2
        assert not s.valid

    def test_noise_shape_checked(self, fig1_mock):
        data, _ = fig1_mock
        spec = ModelSpec.nonparametric(1.0)
        with pytest.raises(ValueError):
            run_bootstrap(spec, data, fit(spec, data), BootstrapPlan(3, 1), noise=np.zeros((2, 71)))

    def test_reproducible(self, fig1_mock):
        a = _boot(ModelSpec.nonparametric(1e6), fig1_mock[0], n_boot=30)
        b = _boot(ModelSpec.nonparametric(1e6), fig1_mock[0], n_boot=30)
        assert a.m_eff_per_iter.tobytes() == b.m_eff_per_iter.tobytes()

    def test_iteration_dump(self, tmp_path, fig1_mock):
        s = _boot(ModelSpec.nonparametric(1e6), fig1_mock[0], n_boot=4)
        path = tmp_path / "it.csv"
        write_iterations(s, path, comments=["seed 42"])
        lines = path.read_text().splitlines()
        assert lines[0] == "# seed 42"
        assert lines[1] == "kappa,m_eff_kappa,chi2_boot"
        assert len(lines) == 6
        assert float(lines[2].split(",")[1]) == s.m_eff_per_iter[0]


class TestScatter:
    @settings(max_examples=40, deadline=None)
    @given(K=st.integers(2, 40), N=st.integers(1, 12), seed=st.integers(0, 2**32 - 1))
    def test_bienayme_identity(self, K, N, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(K, N)) * rng.uniform(0.1, 3, size=N)
        b = rng.normal(size=(K, N)) + 0.3 * a
        est = scatter_bienayme(a, b)
        direct = np.var((a * b).sum(axis=1), ddof=1)
        np.testing.assert_allclose(est.var_meff_kappa, direct, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(est.var_meff, direct / K, rtol=1e-9, atol=1e-12)
        # per-point product-moment reconstruction is exact as well
        np.testing.assert_allclose(est.var_c_product_moments, est.var_c, rtol=1e-9, atol=1e-12)

    def test_unit_b_forms_close_for_standard_b(self, rng):
        K, N = 20_000, 3
        b = rng.normal(size=(K, N))
        a = 0.5 * b + 0.2 * rng.normal(size=(K, N))
        est = scatter_bienayme(a, b)
        np.testing.assert_allclose(est.var_c_unit_b, est.var_c, rtol=0.05)

    def test_constant_contributions(self):
        a = np.ones((5, 3))
        b = np.full((5, 3), 2.0)
        est = scatter_bienayme(a, b)
        assert est.var_meff_kappa == 0.0
        np.testing.assert_array_equal(est.var_c, 0.0)

    def test_needs_two_iterations(self):
        with pytest.raises(ValueError):
            scatter_bienayme(np.ones((1, 3)), np.ones((1, 3)))


class TestDerivativeScatter:
    def test_identical_models(self, fig1_mock):
        s = _boot(ModelSpec.nonparametric(1e6), fig1_mock[0], n_boot=20)
        d = derivative_scatter(s, s)
        assert d.dm_eff == 0.0 and d.var_dm == 0.0 and d.var_dchi2 == 0.0

    def test_common_random_numbers_reduce_variance(self, snr100_mock):
        data, _ = snr100_mock
        grid = np.logspace(5, 8, 7)
        plan = BootstrapPlan(50, 42)
        noise = plan.unit_noise(data.n_data)
        sums = [
            run_bootstrap(ModelSpec.nonparametric(a), data, fit(ModelSpec.nonparametric(a), data), plan, noise=noise)
            for a in grid
        ]
        for s1, s2 in zip(sums, sums[1:]):
            d = derivative_scatter(s1, s2)
            assert d.var_dm < d.var_dm_independent
            assert d.var_dchi2 < d.var_dchi2_independent
            assert d.correlation > 0.8

    def test_plan_mismatch(self, fig1_mock):
        a = _boot(ModelSpec.nonparametric(1e6), fig1_mock[0], n_boot=5, seed=1)
        b = _boot(ModelSpec.nonparametric(1e6), fig1_mock[0], n_boot=5, seed=2)
        with pytest.raises(ValueError, match="plans"):
            derivative_scatter(a, b)
