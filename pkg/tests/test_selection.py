import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aicp.bootstrap import BootstrapPlan
from aicp.data import TABLE1_MODEL, DataSet, eval_generating
from aicp.models import ModelSpec
from aicp.solver import fit
from aicp.selection import (
    DEFAULT_ALPHA_GRID,
    SelectionEntry,
    _select,
    aic,
    aicp,
    default_alpha_grid,
    is_viable,
    rms_truth,
    scan_alpha,
    scan_parametric,
    viability_band,
)

UPPER = 71 + 3 * math.sqrt(142)


@pytest.fixture(scope="module")
def order_scan(snr100_mock):
    data, truth = snr100_mock
    return scan_parametric(data, range(4, 21, 2), BootstrapPlan(100, 42), truth=truth)


@pytest.fixture(scope="module")
def alpha_scan(snr100_mock):
    data, truth = snr100_mock
    return scan_alpha(data, plan=BootstrapPlan(100, 42), truth=truth)


class TestCriterion:
    def test_examples(self):
        assert aicp(0.0, 71.0) == 142.0
        assert aicp(71.0, 0.0) == 71.0
        assert aic(50.0, 11) == 72.0

    def test_negative_chi2(self):
        with pytest.raises(ValueError):
            aicp(-1.0, 3.0)

    @given(st.floats(0, 1e6), st.floats(0, 1e3))
    def test_linear_in_meff(self, chi2, m):
        assert aicp(chi2, m + 1.0) - aicp(chi2, m) == pytest.approx(2.0)

    def test_rms(self):
        t = np.linspace(0, 1, 10)
        assert rms_truth(t, t) == 0.0
        np.testing.assert_allclose(rms_truth(t + 0.3, t), 0.3)
        with pytest.raises(ValueError):
            rms_truth(t[:3], t)

    def test_viability_band(self):
        lo, hi = viability_band(71)
        np.testing.assert_allclose([lo, hi], [71 - 3 * math.sqrt(142), UPPER])
        assert is_viable(60.0, 11.0, 71)
        assert not is_viable(3000.0, 9.0, 71)

    def test_default_grid(self):
        assert DEFAULT_ALPHA_GRID.size == 25
        np.testing.assert_allclose(DEFAULT_ALPHA_GRID[[0, -1]], [1e4, 1e10])
        np.testing.assert_allclose(np.diff(np.log10(DEFAULT_ALPHA_GRID)), 0.25)
        assert default_alpha_grid(1, 100, 3).tolist() == [1.0, 10.0, 100.0]


def _entry(aic_p, m_eff, valid=True):
    return SelectionEntry(ModelSpec.gauss_hermite(4), 0.0, m_eff, None, aic_p, valid=valid)


class TestSelectRule:
    def test_tie_prefers_fewer_parameters(self):
        assert _select([_entry(10.0, 5.0), _entry(10.0, 3.0), _entry(12.0, 1.0)]) == 1

    def test_invalid_skipped(self):
        assert _select([_entry(1.0, 1.0, valid=False), _entry(5.0, 2.0)]) == 1
        assert _select([_entry(1.0, 1.0, valid=False)]) is None


class TestOrderScan:
    def test_selects_generating_order(self, order_scan):
        assert order_scan.best.spec.n_gh == 10

    def test_low_orders_not_viable(self, order_scan):
        for e in order_scan.entries:
            if e.spec.n_gh < 10:
                assert e.chi2 + e.m_eff > UPPER
                assert not e.viable
            else:
                assert e.viable

    def test_unpenalized_aicp_is_aic(self, order_scan):
        e = order_scan.entries[3]
        assert e.spec.n_gh == 10
        assert abs(e.aic_p - aic(e.chi2, 11)) <= 2 * 0.5

    def test_noise_free_selects_smallest_exact_order(self):
        x = np.linspace(-2800, 2800, 71)
        truth = eval_generating(TABLE1_MODEL, x)
        data = DataSet(x, truth, np.full(71, truth.max() / 100))
        table = scan_parametric(data, [8, 10, 12, 14], BootstrapPlan(30, 5), truth=truth)
        chi2 = table.column("chi2")
        assert np.all(chi2[1:] < 1e-6)
        assert table.best.spec.n_gh == 10
        np.testing.assert_allclose(np.diff(table.column("aic_p")[1:]), 4.0, atol=0.5)

    def test_bad_orders(self, snr100_mock):
        plan = BootstrapPlan(2, 1)
        with pytest.raises(ValueError, match="steps of two"):
            scan_parametric(snr100_mock[0], [4, 8], plan)
        with pytest.raises(ValueError):
            scan_parametric(snr100_mock[0], [0, 2], plan)
        with pytest.raises(ValueError):
            scan_parametric(snr100_mock[0], [], plan)

    def test_csv(self, order_scan, tmp_path):
        path = tmp_path / "s.csv"
        order_scan.write_csv(path, comments=["x"])
        lines = path.read_text().splitlines()
        assert lines[1] == "axis_value,chi2,m_eff,var_meff,aic_p,rms_truth,viable,selected"
        assert sum(int(ln.split(",")[-1]) for ln in lines[2:]) == 1


class TestAlphaScan:
    def test_selection_near_rms_minimum(self, alpha_scan):
        assert abs(alpha_scan.selected - alpha_scan.rms_argmin()) <= 1

    def test_selected_point_brackets_slopes(self, alpha_scan):
        k = alpha_scan.selected
        assert 0 < k < len(alpha_scan.entries) - 1
        before = alpha_scan.derivatives[k - 1]
        after = alpha_scan.derivatives[k]
        # discrete optimality: dchi2/dlog a and -2 dm_eff/dlog a swap order
        assert before["dchi2_dlog_alpha"] <= -2 * before["dmeff_dlog_alpha"]
        assert after["dchi2_dlog_alpha"] >= -2 * after["dmeff_dlog_alpha"]
        assert before["daicp_dlog_alpha"] <= 0 <= after["daicp_dlog_alpha"]

    def test_monotone_trends(self, alpha_scan):
        assert np.all(np.diff(alpha_scan.column("chi2")) >= 0)
        assert np.all(np.diff(alpha_scan.column("m_eff")) < 0)

    def test_csv_has_derivative_columns(self, alpha_scan, tmp_path):
        path = tmp_path / "a.csv"
        alpha_scan.write_csv(path)
        header = path.read_text().splitlines()[0].split(",")
        assert header[-4:] == ["dchi2_dlog_alpha", "dmeff_dlog_alpha", "daicp_dlog_alpha", "sd_dmeff"]

    def test_json(self, alpha_scan, tmp_path):
        path = tmp_path / "a.json"
        alpha_scan.write_json(path)
        d = json.loads(path.read_text())
        assert d["n_boot"] == 100 and d["master_seed"] == 42
        assert len(d["grid"]) == 25 and d["selected"] == alpha_scan.selected

    def test_extremes_at_low_snr(self, fig1_mock):
        data, _ = fig1_mock
        low = fit(ModelSpec.nonparametric(10.0), data)
        table = scan_alpha(data, [10.0, 1e11], BootstrapPlan(200, 3))
        lo, hi = table.entries
        assert lo.m_eff > 69 and low.chi2 < 0.01
        assert hi.chi2 > UPPER

    @pytest.mark.parametrize("grid", [[1e5, 1e4], [0.0, 1.0], []])
    def test_bad_grid(self, snr100_mock, grid):
        with pytest.raises(ValueError):
            scan_alpha(snr100_mock[0], grid, BootstrapPlan(2, 1))

    def test_needs_plan(self, snr100_mock):
        with pytest.raises(ValueError):
            scan_alpha(snr100_mock[0])

    def test_jobs_do_not_change_results(self, snr100_mock):
        data, truth = snr100_mock
        grid = np.logspace(5, 7, 5)
        a = scan_alpha(data, grid, BootstrapPlan(20, 4), truth=truth, jobs=1)
        b = scan_alpha(data, grid, BootstrapPlan(20, 4), truth=truth, jobs=3)
        np.testing.assert_array_equal(a.column("aic_p"), b.column("aic_p"))
