import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aicp.bootstrap import BootstrapPlan
from aicp.oracle import (
    OracleReport,
    analytic_meff,
    hat_matrix,
    hat_trace_columnwise,
    validate_bootstrap,
    write_reports,
)

ORACLE_GRID = np.logspace(8, 12, 10)


def _poly(x, degree=4):
    return np.polynomial.legendre.legvander(x / np.abs(x).max(), degree)


class TestAnalyticMeff:
    def test_identity_unpenalized(self, fig1_mock):
        data, _ = fig1_mock
        assert analytic_meff(None, data.eps**2, None, 0.0) == 71.0
        np.testing.assert_allclose(np.trace(hat_matrix(np.eye(71), data.eps**2)), 71.0, rtol=1e-12)

    def test_infinite_penalty_limit(self, fig1_mock):
        data, _ = fig1_mock
        assert abs(analytic_meff(None, data.eps**2, None, 1e20) - 2.0) <= 1e-6

    @pytest.mark.parametrize("m", [1, 3, 5, 9])
    def test_unpenalized_counts_columns(self, fig1_mock, m):
        data, _ = fig1_mock
        A = _poly(data.x, m - 1)
        np.testing.assert_allclose(analytic_meff(A, data.eps**2), m, rtol=1e-12)
        np.testing.assert_allclose(np.trace(hat_matrix(A, data.eps**2)), m, rtol=1e-10)

    @pytest.mark.parametrize("alpha", [0.0, 1e4, 1e7, 1e9, 1e11])
    def test_three_routes_agree(self, fig1_mock, alpha):
        data, _ = fig1_mock
        s2 = data.eps**2
        inv = np.trace(hat_matrix(np.eye(71), s2, None, alpha))
        cols = hat_trace_columnwise(np.eye(71), s2, None, alpha)
        np.testing.assert_allclose(cols, inv, rtol=1e-10)
        np.testing.assert_allclose(analytic_meff(None, s2, None, alpha), inv, rtol=1e-8)

    def test_full_covariance_matches_vector(self, fig1_mock):
        data, _ = fig1_mock
        A = _poly(data.x, 6)
        v = analytic_meff(A, data.eps**2, None, 1e3)
        M = analytic_meff(A, np.diag(data.eps**2), None, 1e3)
        np.testing.assert_allclose(M, v, rtol=1e-10)

    def test_strictly_decreasing(self, fig1_mock):
        data, _ = fig1_mock
        tr = [analytic_meff(None, data.eps**2, None, a) for a in np.logspace(0, 16, 40)]
        assert np.all(np.diff(tr) < 0)

    @settings(max_examples=30, deadline=None)
    @given(log_alpha=st.floats(-5, 18), n=st.integers(3, 30), seed=st.integers(0, 1000))
    def test_bounds(self, log_alpha, n, seed):
        eps2 = np.random.default_rng(seed).uniform(0.5, 2.0, n)
        tr = analytic_meff(None, eps2, None, 10.0**log_alpha)
        assert 2.0 - 1e-9 <= tr <= n + 1e-9

    def test_rank_deficient(self):
        with pytest.raises(ValueError, match="singular"):
            analytic_meff(np.ones((10, 2)), np.ones(10), None, 0.0)

    def test_shape_checks(self):
        with pytest.raises(ValueError):
            analytic_meff(np.eye(4), np.ones(3))
        with pytest.raises(ValueError):
            analytic_meff(np.eye(4), np.ones(4), None, -1.0)


@pytest.fixture(scope="module")
def zero_alpha(fig1_mock):
    return validate_bootstrap(fig1_mock[0], BootstrapPlan(500, 42), [0.0])[0]


class TestValidateBootstrap:
    def test_prior_posterior_at_zero(self, zero_alpha):
        r = zero_alpha
        assert abs(r.chi2_prior_mean - 71) <= 3 * math.sqrt(2 * 71 / 500)
        assert r.chi2_posterior_mean == 0.0
        assert r.identity_checks["chi2_prior_ok"]
        assert r.identity_checks["chi2_posterior_ok"]

    def test_difference_identity(self, zero_alpha):
        r = zero_alpha
        assert abs((r.chi2_prior_mean - r.chi2_posterior_mean) - r.m_eff_bootstrap) <= 3 * math.sqrt(r.var_meff)
        assert r.identity_checks["difference_ok"]

    def test_linear_model_posterior(self, fig1_mock):
        data, _ = fig1_mock
        r = validate_bootstrap(data, BootstrapPlan(500, 42), [0.0], design=_poly(data.x))[0]
        assert r.m_eff_analytic == pytest.approx(5.0, rel=1e-12)
        assert abs(r.chi2_posterior_mean - 66) <= 3 * math.sqrt(2 * 66 / 500)
        assert abs(r.m_eff_bootstrap - 5.0) <= 3 * math.sqrt(r.var_meff)
        assert all(v for k, v in r.identity_checks.items() if k.endswith("_ok"))

    def test_grid_agreement(self, snr100_mock):
        reports = validate_bootstrap(snr100_mock[0], BootstrapPlan(500, 42), ORACLE_GRID)
        z = np.array([r.z_score for r in reports])
        assert np.sum(np.abs(z) <= 3) >= 9
        for r in reports:
            assert r.identity_checks is None
            assert 0 <= r.m_eff_analytic <= 71

    def test_write(self, fig1_mock, tmp_path):
        reports = validate_bootstrap(fig1_mock[0], BootstrapPlan(3, 1), [0.0, 1e6])
        path = tmp_path / "o.csv"
        write_reports(reports, path, comments=["c"])
        lines = path.read_text().splitlines()
        assert lines[1] == ",".join(OracleReport.CSV_COLUMNS)
        assert len(lines) == 4
