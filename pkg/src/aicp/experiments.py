"""Desk-scale reproductions of the selection experiments as CSV bundles.

:func:`run_figure_suite` writes one directory per figure plus a
``manifest.json``. Output depends only on the configuration and its master
seed, so two runs with the same configuration produce byte-identical files.

Bundles
-------
fig3
    m_eff against Gauss-Hermite order for the first SNR-100 mock.
fig4, fig5
    Per-mock order and alpha scans at the first and second SNR value
    (chi^2, m_eff, chi^2 + m_eff, AIC_p, rms to the truth).
fig6
    Alpha scans of the first SNR-100 mock for each N_boot of the ladder,
    with scatter bands for m_eff and its log-alpha derivative and, for small
    N_boot, the individual iterations.
fig7
    The fig4 scans repeated with a single bootstrap iteration.
fig8
    Scans averaged over ``n_mocks_average`` SNR-100 mocks.
"""

from __future__ import annotations

import csv
import json
import math
import os
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy

from .bootstrap import BootstrapPlan
from .data import MockConfig, generate_mock
from .provenance import config_hash, provenance_lines
from .selection import DEFAULT_ALPHA_GRID, scan_alpha, scan_parametric

__all__ = [
    "ALL_FIGURES",
    "ExperimentConfig",
    "ExperimentError",
    "mock_seed",
    "run_figure_suite",
]

ALL_FIGURES = ("fig3", "fig4", "fig5", "fig6", "fig7", "fig8")
ITERATION_DUMP_MAX = 50


class ExperimentError(RuntimeError):
    """One or more figure bundles could not be produced."""


@dataclass
class ExperimentConfig:
    """Settings of a figure-suite run.

    ``mock`` supplies the generating model and grid; its ``seed`` and
    ``snr_peak`` are replaced per mock (seeds derive from ``master_seed``,
    SNRs come from ``snr_values``).
    """

    mock: MockConfig = field(default_factory=MockConfig)
    n_mocks: int = 5
    n_mocks_average: int = 20
    orders: tuple = tuple(range(4, 21, 2))
    alpha_grid: tuple = tuple(float(a) for a in DEFAULT_ALPHA_GRID)
    n_boot: int = 500
    n_boot_values: tuple = (1, 5, 10, 50, 500, 2500)
    snr_values: tuple = (100.0, 10.0)
    master_seed: int = 42
    figures: tuple = ALL_FIGURES
    output_dir: str = "figures"
    jobs: int = 1

    def __post_init__(self):
        self.orders = tuple(int(n) for n in self.orders)
        self.alpha_grid = tuple(float(a) for a in self.alpha_grid)
        self.n_boot_values = tuple(int(k) for k in self.n_boot_values)
        self.snr_values = tuple(float(s) for s in self.snr_values)
        self.figures = tuple(self.figures)
        if self.n_mocks < 1 or self.n_mocks_average < 1:
            raise ValueError("n_mocks must be >= 1")
        if self.n_boot < 1 or any(k < 1 for k in self.n_boot_values):
            raise ValueError("every N_boot must be >= 1")
        if len(self.snr_values) != 2 or any(s <= 0 for s in self.snr_values):
            raise ValueError("snr_values must hold two positive values")
        unknown = set(self.figures) - set(ALL_FIGURES)
        if unknown:
            raise ValueError(f"unknown figures: {sorted(unknown)}")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    def to_dict(self):
        """Everything that affects the numbers; output_dir and jobs do not."""
        d = asdict(self)
        d.pop("output_dir")
        d.pop("jobs")
        d["mock"].pop("seed")
        d["mock"].pop("snr_peak")
        d["mock"]["generating"]["h"] = {
            str(k): v for k, v in sorted(self.mock.generating.h.items())
        }
        return d


def mock_seed(master_seed, index):
    """64-bit seed of mock ``index``, independent of the bootstrap streams."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(2, int(index)))
    return int(ss.generate_state(1, np.uint64)[0])


# --------------------------------------------------------------------------
# writing helpers
# --------------------------------------------------------------------------

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    v = float(v)
    return repr(v) if math.isfinite(v) else ""


def _write(path, header, rows, comments):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(_fmt(row[h]) for h in header)


SCAN_COLUMNS = (
    "axis_value", "chi2", "m_eff", "sd_meff", "chi2_plus_meff", "aic_p",
    "rms_truth", "viable", "selected",
)


def _scan_rows(table):
    rows = []
    for k, e in enumerate(table.entries):
        rows.append(
            {
                "axis_value": e.axis_value,
                "chi2": e.chi2,
                "m_eff": e.m_eff,
                "sd_meff": e.bootstrap.sd_meff,
                "chi2_plus_meff": e.chi2 + e.m_eff,
                "aic_p": e.aic_p,
                "rms_truth": e.rms_truth,
                "viable": e.viable,
                "selected": k == table.selected,
            }
        )
    return rows


def _axis_or_none(table, index):
    return None if index is None else table.entries[index].axis_value


# --------------------------------------------------------------------------
# the suite
# --------------------------------------------------------------------------

class _Runner:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.hash = config_hash(cfg.to_dict())
        self._mocks = {}
        self._scans = {}
        self.files = {}

    # -- cached building blocks ------------------------------------------
    def mock(self, snr, j):
        key = (snr, j)
        if key not in self._mocks:
            base = self.cfg.mock
            mc = MockConfig(
                generating=base.generating,
                n_data=base.n_data,
                x_range_sigmas=base.x_range_sigmas,
                snr_peak=snr,
                seed=mock_seed(self.cfg.master_seed, j),
            )
            self._mocks[key] = generate_mock(mc)
        return self._mocks[key]

    def scan(self, kind, snr, j, n_boot):
        key = (kind, snr, j, n_boot)
        if key not in self._scans:
            self.mock(snr, j)
            self._scans[key] = self._compute(key)
        return self._scans[key]

    def prefetch(self, keys):
        """Run missing scans, in parallel when ``jobs > 1``.

        Results are stored by key, so the order of completion never affects
        the output.
        """
        todo = [k for k in dict.fromkeys(keys) if k not in self._scans]
        if self.cfg.jobs <= 1 or len(todo) < 2:
            for k in todo:
                self.scan(*k)
            return
        for snr, j in dict.fromkeys((k[1], k[2]) for k in todo):
            self.mock(snr, j)
        with ThreadPoolExecutor(max_workers=self.cfg.jobs) as pool:
            tables = list(pool.map(lambda k: self._compute(k), todo))
        for k, t in zip(todo, tables):
            self._scans[k] = t

    def _compute(self, key):
        kind, snr, j, n_boot = key
        data, truth = self._mocks[(snr, j)]
        plan = BootstrapPlan(n_boot, self.cfg.master_seed)
        if kind == "parametric":
            return scan_parametric(data, self.cfg.orders, plan, truth=truth)
        return scan_alpha(data, self.cfg.alpha_grid, plan, truth=truth)

    # -- output ----------------------------------------------------------
    def write(self, fig, name, header, rows, label):
        rel = f"{fig}/{name}.csv"
        path = os.path.join(self.cfg.output_dir, rel)
        comments = provenance_lines(self.cfg.to_dict(), self.cfg.master_seed, label)
        _write(path, header, rows, comments)
        self.files.setdefault(fig, []).append(rel)

    # -- figures ---------------------------------------------------------
    def fig3(self):
        snr = self.cfg.snr_values[0]
        table = self.scan("parametric", snr, 0, self.cfg.n_boot)
        rows = []
        for e in table.entries:
            s = e.bootstrap
            rows.append(
                {
                    "n_gh": e.spec.n_gh,
                    "n_params": e.spec.n_gh + 1,
                    "m_eff": e.m_eff,
                    "sd_meff": s.sd_meff,
                    "sd_meff_bienayme": None
                    if s.var_bienayme is None
                    else math.sqrt(s.var_bienayme),
                    "n_used": s.n_used,
                }
            )
        self.write(
            "fig3", "meff_vs_order",
            ("n_gh", "n_params", "m_eff", "sd_meff", "sd_meff_bienayme", "n_used"),
            rows, f"m_eff against order; snr={snr:g} n_boot={self.cfg.n_boot}",
        )

    def _scan_figure(self, fig, snr, n_boot, n_mocks):
        keys = [
            (kind, snr, j, n_boot)
            for j in range(n_mocks)
            for kind in ("parametric", "alpha")
        ]
        self.prefetch(keys)
        summary = []
        for j in range(n_mocks):
            for kind in ("parametric", "alpha"):
                table = self.scan(kind, snr, j, n_boot)
                self.write(
                    fig, f"{kind}_mock{j}", SCAN_COLUMNS, _scan_rows(table),
                    f"{kind} scan; snr={snr:g} n_boot={n_boot} mock={j} "
                    f"mock_seed={mock_seed(self.cfg.master_seed, j)}",
                )
                best = table.best
                rms_idx = table.rms_argmin()
                summary.append(
                    {
                        "mock": j,
                        "scan": kind,
                        "selected_axis": _axis_or_none(table, table.selected),
                        "rms_argmin_axis": _axis_or_none(table, rms_idx),
                        "selected_index": table.selected,
                        "rms_argmin_index": rms_idx,
                        "selected_rms": None if best is None else best.rms_truth,
                        "min_rms": None
                        if rms_idx is None
                        else table.entries[rms_idx].rms_truth,
                    }
                )
        self.write(
            fig, "summary",
            ("mock", "scan", "selected_axis", "rms_argmin_axis", "selected_index",
             "rms_argmin_index", "selected_rms", "min_rms"),
            summary, f"selection summary; snr={snr:g} n_boot={n_boot}",
        )

    def fig4(self):
        self._scan_figure("fig4", self.cfg.snr_values[0], self.cfg.n_boot, self.cfg.n_mocks)

    def fig5(self):
        self._scan_figure("fig5", self.cfg.snr_values[1], self.cfg.n_boot, self.cfg.n_mocks)

    def fig6(self):
        snr = self.cfg.snr_values[0]
        self.prefetch([("alpha", snr, 0, k) for k in self.cfg.n_boot_values])
        selection = []
        for K in self.cfg.n_boot_values:
            table = self.scan("alpha", snr, 0, K)
            rows = []
            for k, e in enumerate(table.entries):
                s = e.bootstrap
                d = table.derivatives[k] if k < len(table.derivatives) else {}
                ds = d.get("scatter")
                dlog = None
                if k + 1 < len(table.entries):
                    dlog = math.log10(table.entries[k + 1].axis_value) - math.log10(e.axis_value)
                rows.append(
                    {
                        "alpha": e.axis_value,
                        "m_eff": e.m_eff,
                        "sd_meff": s.sd_meff,
                        "sd_meff_bienayme": None
                        if s.var_bienayme is None
                        else math.sqrt(max(s.var_bienayme, 0.0)),
                        "dmeff_dlog_alpha": d.get("dmeff_dlog_alpha"),
                        "sd_dmeff_dlog_alpha": d.get("sd_dmeff"),
                        "sd_dmeff_dlog_alpha_independent": None
                        if ds is None or ds.var_dm_independent is None
                        else math.sqrt(ds.var_dm_independent) / dlog,
                        "correlation": None if ds is None else ds.correlation,
                        "chi2": e.chi2,
                        "aic_p": e.aic_p,
                        "selected": k == table.selected,
                    }
                )
            self.write(
                "fig6", f"nboot{K}",
                ("alpha", "m_eff", "sd_meff", "sd_meff_bienayme", "dmeff_dlog_alpha",
                 "sd_dmeff_dlog_alpha", "sd_dmeff_dlog_alpha_independent",
                 "correlation", "chi2", "aic_p", "selected"),
                rows, f"alpha scan scatter; snr={snr:g} n_boot={K} mock=0",
            )
            if K <= ITERATION_DUMP_MAX:
                it_rows = [
                    {"alpha": e.axis_value, "kappa": kappa, "m_eff_kappa": m}
                    for e in table.entries
                    for kappa, m in enumerate(e.bootstrap.m_eff_per_iter, start=1)
                ]
                self.write(
                    "fig6", f"iterations_nboot{K}", ("alpha", "kappa", "m_eff_kappa"),
                    it_rows, f"per-iteration m_eff; snr={snr:g} n_boot={K} mock=0",
                )
            selection.append(
                {
                    "n_boot": K,
                    "selected_index": table.selected,
                    "selected_alpha": _axis_or_none(table, table.selected),
                }
            )
        self.write(
            "fig6", "selection", ("n_boot", "selected_index", "selected_alpha"),
            selection, f"AIC_p argmin per n_boot; snr={snr:g} mock=0",
        )

    def fig7(self):
        snr = self.cfg.snr_values[0]
        self._scan_figure("fig7", snr, 1, self.cfg.n_mocks)
        self.prefetch(
            [(kind, snr, j, self.cfg.n_boot) for j in range(self.cfg.n_mocks)
             for kind in ("parametric", "alpha")]
        )
        rows = []
        for j in range(self.cfg.n_mocks):
            for kind in ("parametric", "alpha"):
                one = self.scan(kind, snr, j, 1)
                ref = self.scan(kind, snr, j, self.cfg.n_boot)
                shift = None
                if one.selected is not None and ref.selected is not None:
                    shift = one.selected - ref.selected
                rows.append(
                    {
                        "mock": j,
                        "scan": kind,
                        "selected_nboot1": _axis_or_none(one, one.selected),
                        "selected_reference": _axis_or_none(ref, ref.selected),
                        "index_shift": shift,
                        "rms_nboot1": None if one.best is None else one.best.rms_truth,
                        "rms_reference": None if ref.best is None else ref.best.rms_truth,
                    }
                )
        self.write(
            "fig7", "comparison",
            ("mock", "scan", "selected_nboot1", "selected_reference", "index_shift",
             "rms_nboot1", "rms_reference"),
            rows, f"N_boot=1 against N_boot={self.cfg.n_boot}; snr={snr:g}",
        )

    def fig8(self):
        snr = self.cfg.snr_values[0]
        n = self.cfg.n_mocks_average
        self.prefetch(
            [(kind, snr, j, self.cfg.n_boot) for j in range(n)
             for kind in ("parametric", "alpha")]
        )
        for kind in ("parametric", "alpha"):
            tables = [self.scan(kind, snr, j, self.cfg.n_boot) for j in range(n)]
            cols = {
                name: np.array([t.column(name) for t in tables])
                for name in ("chi2", "m_eff", "aic_p", "rms_truth")
            }
            valid = np.array([[e.valid for e in t.entries] for t in tables])
            rows = []
            for k, e in enumerate(tables[0].entries):
                chi2 = cols["chi2"][:, k]
                meff = cols["m_eff"][:, k]
                rows.append(
                    {
                        "axis_value": e.axis_value,
                        "chi2_mean": chi2.mean(),
                        "chi2_sd": chi2.std(ddof=1) if n > 1 else None,
                        "m_eff_mean": meff.mean(),
                        "chi2_plus_meff_mean": (chi2 + meff).mean(),
                        "aic_p_mean": cols["aic_p"][:, k].mean(),
                        "rms_truth_mean": cols["rms_truth"][:, k].mean(),
                        "n_valid": int(valid[:, k].sum()),
                    }
                )
            self.write(
                "fig8", f"{kind}_average",
                ("axis_value", "chi2_mean", "chi2_sd", "m_eff_mean",
                 "chi2_plus_meff_mean", "aic_p_mean", "rms_truth_mean", "n_valid"),
                rows, f"{kind} scans averaged over {n} mocks; snr={snr:g} "
                f"n_boot={self.cfg.n_boot}",
            )

    # -- manifest ----------------------------------------------------------
    def manifest(self, status):
        from . import __version__

        n_seeds = max(self.cfg.n_mocks, self.cfg.n_mocks_average)
        return {
            "config": self.cfg.to_dict(),
            "config_hash": self.hash,
            "master_seed": int(self.cfg.master_seed),
            "mock_seeds": [mock_seed(self.cfg.master_seed, j) for j in range(n_seeds)],
            "versions": {
                "aicp": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
            "figures": {
                fig: {"status": status[fig], "files": self.files.get(fig, [])}
                for fig in self.cfg.figures
            },
        }


def _plot_hook(cfg):
    return (
        "# Minimal plotting hook; needs matplotlib, which aicp does not depend on.\n"
        "import csv, sys\n"
        "import matplotlib.pyplot as plt\n\n"
        "def load(path):\n"
        "    with open(path) as fh:\n"
        "        rows = list(csv.DictReader(line for line in fh if not line.startswith('#')))\n"
        "    return rows\n\n"
        "if __name__ == '__main__':\n"
        "    path, xcol, ycol = sys.argv[1:4]\n"
        "    rows = load(path)\n"
        "    plt.plot([float(r[xcol]) for r in rows], [float(r[ycol]) for r in rows], 'o-')\n"
        "    if xcol in ('alpha', 'axis_value') and 'alpha' in path:\n"
        "        plt.xscale('log')\n"
        "    plt.xlabel(xcol); plt.ylabel(ycol); plt.show()\n"
    )


def run_figure_suite(cfg: ExperimentConfig):
    """Write the requested figure bundles and ``manifest.json``.

    A figure that fails leaves a ``FAILED.json`` in its directory and is
    marked in the manifest; the remaining figures are still produced and an
    :class:`ExperimentError` is raised at the end.

    Returns
    -------
    dict
        The manifest.
    """
    runner = _Runner(cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)
    status = {}
    for fig in ALL_FIGURES:
        if fig not in cfg.figures:
            continue
        try:
            getattr(runner, fig)()
            status[fig] = "ok"
        except Exception as exc:  # labelled and re-raised below
            status[fig] = f"failed: {type(exc).__name__}: {exc}"
            fig_dir = os.path.join(cfg.output_dir, fig)
            os.makedirs(fig_dir, exist_ok=True)
            with open(os.path.join(fig_dir, "FAILED.json"), "w", encoding="utf-8") as fh:
                json.dump({"figure": fig, "error": status[fig]}, fh, indent=2)
                fh.write("\n")
    with open(os.path.join(cfg.output_dir, "plot_hook.py"), "w", encoding="utf-8") as fh:
        fh.write(_plot_hook(cfg))
    manifest = runner.manifest(status)
    with open(os.path.join(cfg.output_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    failed = [f for f, s in status.items() if s != "ok"]
    if failed:
        raise ExperimentError(f"figures failed: {', '.join(failed)}")
    return manifest
