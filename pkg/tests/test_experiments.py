import csv
import filecmp
import json

import numpy as np
import pytest

from aicp.experiments import (
    ExperimentConfig,
    ExperimentError,
    _Runner,
    mock_seed,
    run_figure_suite,
)


def _read(path):
    with open(path) as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    return rows


def _small(out, **kw):
    base = dict(
        n_mocks=2, n_mocks_average=3, orders=(8, 10, 12), n_boot=20,
        n_boot_values=(1, 5, 20), output_dir=str(out),
    )
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def small_suite(tmp_path_factory):
    out = tmp_path_factory.mktemp("small")
    return out, run_figure_suite(_small(out))


class TestConfig:
    @pytest.mark.parametrize("kwargs", [
        dict(n_mocks=0), dict(n_boot=0), dict(n_boot_values=(1, 0)),
        dict(snr_values=(100.0,)), dict(figures=("fig9",)), dict(master_seed=-1),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            ExperimentConfig(**kwargs)

    def test_hash_ignores_output_location(self, tmp_path):
        a = _Runner(_small(tmp_path / "a")).hash
        b = _Runner(_small(tmp_path / "b", jobs=4)).hash
        c = _Runner(_small(tmp_path / "a", n_boot=21)).hash
        assert a == b != c

    def test_mock_seeds_distinct(self):
        seeds = {mock_seed(42, j) for j in range(20)}
        assert len(seeds) == 20
        assert mock_seed(42, 3) == mock_seed(42, 3)


class TestSmallSuite:
    def test_layout(self, small_suite):
        out, manifest = small_suite
        for fig in ("fig3", "fig4", "fig5", "fig6", "fig7", "fig8"):
            assert manifest["figures"][fig]["status"] == "ok"
            for rel in manifest["figures"][fig]["files"]:
                assert (out / rel).is_file()
        assert (out / "fig6" / "iterations_nboot5.csv").is_file()
        saved = json.loads((out / "manifest.json").read_text())
        assert saved["master_seed"] == 42
        assert saved["config"]["n_boot"] == 20

    def test_provenance_comment(self, small_suite):
        out, manifest = small_suite
        first = (out / "fig4" / "summary.csv").read_text().splitlines()[0]
        assert first == f"# aicp config_hash={manifest['config_hash']} master_seed=42"

    def test_scan_bundles_carry_viability_triple(self, small_suite):
        out, _ = small_suite
        for row in _read(out / "fig4" / "parametric_mock1.csv"):
            chi2, meff, tot = float(row["chi2"]), float(row["m_eff"]), float(row["chi2_plus_meff"])
            assert tot == pytest.approx(chi2 + meff)

    def test_average_is_mean_of_mocks(self, small_suite):
        out, _ = small_suite
        avg = _read(out / "fig8" / "alpha_average.csv")
        # the first two averaged mocks are the fig4 mocks; rebuild from a fresh run
        runner = _Runner(_small(out))
        chi2 = np.mean([runner.scan("alpha", 100.0, j, 20).column("chi2") for j in range(3)], axis=0)
        np.testing.assert_allclose([float(r["chi2_mean"]) for r in avg], chi2, rtol=1e-12)

    def test_deterministic_and_jobs_invariant(self, small_suite, tmp_path):
        out, _ = small_suite
        other = tmp_path / "again"
        run_figure_suite(_small(other, jobs=3))
        for fig in ("fig3", "fig4", "fig5", "fig6", "fig7", "fig8"):
            cmp = filecmp.dircmp(out / fig, other / fig)
            assert not cmp.left_only and not cmp.right_only
            _, mismatch, errors = filecmp.cmpfiles(out / fig, other / fig, cmp.common_files, shallow=False)
            assert not mismatch and not errors
        assert (out / "manifest.json").read_bytes() == (other / "manifest.json").read_bytes()

    def test_figure_subset(self, tmp_path):
        manifest = run_figure_suite(_small(tmp_path, figures=("fig6",)))
        assert list(manifest["figures"]) == ["fig6"]
        assert not (tmp_path / "fig4").exists()


def test_failure_is_labelled(tmp_path, monkeypatch):
    def boom(self):
        raise RuntimeError("synthetic")

    monkeypatch.setattr(_Runner, "fig3", boom)
    with pytest.raises(ExperimentError, match="fig3"):
        run_figure_suite(_small(tmp_path, figures=("fig3", "fig6")))
    failed = json.loads((tmp_path / "fig3" / "FAILED.json").read_text())
    assert "synthetic" in failed["error"]
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["figures"]["fig6"]["status"] == "ok"
    assert manifest["figures"]["fig3"]["status"].startswith("failed")


class TestDefaultSuite:
    """Claims about the default-configuration bundles."""

    def test_fig3_counted_parameters(self, default_suite):
        out, _ = default_suite
        for row in _read(out / "fig3" / "meff_vs_order.csv"):
            assert abs(float(row["m_eff"]) - float(row["n_params"])) <= 0.5

    def test_fig6_few_bootstraps_same_alpha(self, default_suite):
        out, _ = default_suite
        sel = {int(r["n_boot"]): int(r["selected_index"]) for r in _read(out / "fig6" / "selection.csv")}
        assert sel[5] == sel[500]

    def test_selected_entries_viable(self, default_suite):
        out, manifest = default_suite
        for fig in ("fig4", "fig5"):
            for rel in manifest["figures"][fig]["files"]:
                if rel.endswith("summary.csv"):
                    continue
                selected = [r for r in _read(out / rel) if r["selected"] in ("1", "True")]
                assert len(selected) == 1
                assert selected[0]["viable"] in ("1", "True"), rel

    def test_fig8_average_chi2_monotone(self, default_suite):
        out, _ = default_suite
        chi2 = [float(r["chi2_mean"]) for r in _read(out / "fig8" / "parametric_average.csv")]
        assert np.all(np.diff(chi2) <= 0)

    def test_fig8_averages_all_valid(self, default_suite):
        out, _ = default_suite
        for name in ("parametric_average", "alpha_average"):
            assert all(int(r["n_valid"]) == 20 for r in _read(out / "fig8" / f"{name}.csv"))
