"""Model selection with AIC_p = chi^2 + 2 m_eff.

Two scans are provided: over Gauss-Hermite order (discrete, parametric) and
over the penalty strength alpha of the non-parametric family. Both evaluate
every candidate with the same bootstrap plan and pick the grid minimum.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bootstrap import BootstrapPlan, BootstrapSummary, derivative_scatter, run_bootstrap
from .data import DataSet
from .models import ModelSpec
from .solver import FitError, FitResult, fit

__all__ = [
    "DEFAULT_ALPHA_GRID",
    "SelectionEntry",
    "SelectionTable",
    "aic",
    "aicp",
    "default_alpha_grid",
    "is_viable",
    "rms_truth",
    "scan_alpha",
    "scan_parametric",
]

AXIS_ORDER = "order"
AXIS_ALPHA = "log10_alpha"


def default_alpha_grid(lo=1e4, hi=1e10, n=25):
    """Log-spaced penalty strengths; the default brackets the toy problem."""
    return np.logspace(math.log10(lo), math.log10(hi), n)


DEFAULT_ALPHA_GRID = default_alpha_grid()


def aicp(chi2, m_eff):
    """Generalized criterion ``chi2 + 2 m_eff``."""
    if chi2 < 0:
        raise ValueError("chi2 must be non-negative")
    return chi2 + 2.0 * m_eff


def aic(chi2, m):
    """Classical AIC for a fit with ``m`` counted free parameters."""
    return aicp(chi2, m)


def rms_truth(fitted, truth):
    """Root-mean-square difference between a fit and the noise-free truth."""
    fitted = np.asarray(fitted, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if fitted.shape != truth.shape:
        raise ValueError("fitted and truth differ in length")
    return float(np.sqrt(np.mean((fitted - truth) ** 2)))


def viability_band(n_data):
    half = 3.0 * math.sqrt(2.0 * n_data)
    return n_data - half, n_data + half


def is_viable(chi2, m_eff, n_data):
    """True when chi2 + m_eff lies within N +- 3 sqrt(2N)."""
    lo, hi = viability_band(n_data)
    return bool(lo <= chi2 + m_eff <= hi)


@dataclass
class SelectionEntry:
    spec: ModelSpec
    chi2: float
    m_eff: float
    var_meff: float | None
    aic_p: float
    rms_truth: float | None = None
    viable: bool = False
    valid: bool = True
    fit: FitResult | None = field(default=None, repr=False)
    bootstrap: BootstrapSummary | None = field(default=None, repr=False)

    @property
    def axis_value(self):
        if self.spec.kind == "gauss_hermite":
            return float(self.spec.n_gh)
        return float(self.spec.alpha)


@dataclass
class SelectionTable:
    """Scanned candidates in scan order and the index of the AIC_p minimum.

    For alpha scans ``derivatives`` holds one record per consecutive pair of
    grid points: forward differences in log10(alpha) of chi^2, m_eff and
    AIC_p, and the common-random-number scatter of the m_eff difference.
    """

    entries: list
    selected: int | None
    scan_axis: str
    n_data: int
    plan: BootstrapPlan
    derivatives: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def best(self) -> SelectionEntry | None:
        return None if self.selected is None else self.entries[self.selected]

    def column(self, name):
        return np.array([getattr(e, name) for e in self.entries], dtype=float)

    def rms_argmin(self):
        vals = [e.rms_truth for e in self.entries]
        if any(v is None for v in vals):
            return None
        return int(np.argmin(vals))

    # ------------------------------------------------------------------
    # serialization
    # ------------------------------------------------------------------
    CSV_COLUMNS = (
        "axis_value", "chi2", "m_eff", "var_meff", "aic_p", "rms_truth",
        "viable", "selected",
    )
    DERIVATIVE_COLUMNS = (
        "dchi2_dlog_alpha", "dmeff_dlog_alpha", "daicp_dlog_alpha", "sd_dmeff",
    )

    def rows(self):
        out = []
        for k, e in enumerate(self.entries):
            row = {
                "axis_value": e.axis_value,
                "chi2": e.chi2,
                "m_eff": e.m_eff,
                "var_meff": e.var_meff,
                "aic_p": e.aic_p,
                "rms_truth": e.rms_truth,
                "viable": int(e.viable),
                "selected": int(k == self.selected),
            }
            if self.scan_axis == AXIS_ALPHA:
                d = self.derivatives[k] if k < len(self.derivatives) else {}
                for col in self.DERIVATIVE_COLUMNS:
                    row[col] = d.get(col)
            out.append(row)
        return out

    def write_csv(self, path, comments=()):
        cols = list(self.CSV_COLUMNS)
        if self.scan_axis == AXIS_ALPHA:
            cols += list(self.DERIVATIVE_COLUMNS)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for c in comments:
                fh.write(f"# {c}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in self.rows():
                w.writerow(_csv_value(row[c]) for c in cols)

    def to_dict(self):
        return {
            "scan_axis": self.scan_axis,
            "n_data": self.n_data,
            "n_boot": self.plan.n_boot,
            "master_seed": self.plan.master_seed,
            "grid": [e.axis_value for e in self.entries],
            "selected": self.selected,
            "rows": self.rows(),
            **self.metadata,
        }

    def write_json(self, path, extra=None):
        payload = self.to_dict()
        if extra:
            payload.update(extra)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def _select(entries):
    """Index of the minimum AIC_p among valid entries; ties -> smaller m_eff."""
    best = None
    for k, e in enumerate(entries):
        if not e.valid or not np.isfinite(e.aic_p):
            continue
        if best is None:
            best = k
            continue
        b = entries[best]
        if e.aic_p < b.aic_p or (e.aic_p == b.aic_p and e.m_eff < b.m_eff):
            best = k
    return best


def _entry(spec, data, fit_y, plan, truth, noise):
    boot = run_bootstrap(spec, data, fit_y, plan, noise=noise)
    valid = bool(fit_y.converged and boot.valid)
    return SelectionEntry(
        spec=spec,
        chi2=fit_y.chi2,
        m_eff=boot.m_eff,
        var_meff=boot.var_direct,
        aic_p=fit_y.chi2 + 2.0 * boot.m_eff,
        rms_truth=None if truth is None else rms_truth(fit_y.fitted, truth),
        viable=is_viable(fit_y.chi2, boot.m_eff, data.n_data),
        valid=valid,
        fit=fit_y,
        bootstrap=boot,
    )


def _fit_orders(data, orders):
    """Fit each order, also trying the previous order's optimum padded with
    zero coefficients as a start; the lower objective wins."""
    fits = []
    prev = None
    for n in orders:
        spec = ModelSpec.gauss_hermite(n)
        candidates = []
        try:
            candidates.append(fit(spec, data))
        except FitError:
            pass
        if prev is not None and prev.spec.n_gh < n:
            pad = np.zeros(n - prev.spec.n_gh)
            try:
                candidates.append(fit(spec, data, init=np.concatenate([prev.theta_hat, pad])))
            except FitError:
                pass
        if not candidates:
            raise FitError(f"{spec.label()}: no starting point gave a finite objective")
        best = min(candidates, key=lambda r: (not r.converged, r.objective))
        fits.append(best)
        prev = best
    return fits


def _map(func, items, jobs):
    if jobs is None or jobs <= 1:
        return [func(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, items))


def scan_parametric(data: DataSet, orders, plan: BootstrapPlan, truth=None, jobs=1):
    """AIC_p over Gauss-Hermite orders.

    Orders must be ascending in steps of two and each >= 2.
    """
    orders = [int(n) for n in orders]
    if not orders:
        raise ValueError("no orders to scan")
    if any(n < 2 for n in orders):
        raise ValueError("Gauss-Hermite orders must be >= 2")
    if any(b - a != 2 for a, b in zip(orders, orders[1:])):
        raise ValueError("orders must increase in steps of two")
    fits = _fit_orders(data, orders)
    noise = plan.unit_noise(data.n_data)
    entries = _map(
        lambda f: _entry(f.spec, data, f, plan, truth, noise), fits, jobs
    )
    return SelectionTable(
        entries=entries,
        selected=_select(entries),
        scan_axis=AXIS_ORDER,
        n_data=data.n_data,
        plan=plan,
    )


def scan_alpha(data: DataSet, grid=None, plan: BootstrapPlan = None, truth=None, jobs=1):
    """AIC_p over penalty strengths of the non-parametric family.

    Every grid point uses the exact linear solve and the same noise streams.
    """
    if plan is None:
        raise ValueError("a bootstrap plan is required")
    grid = DEFAULT_ALPHA_GRID if grid is None else np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1:
        raise ValueError("alpha grid must be a non-empty 1-D sequence")
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("alpha grid must be positive and increasing")
    if not data.is_uniform():
        raise ValueError("the non-parametric family requires a uniform x grid")
    noise = plan.unit_noise(data.n_data)

    def one(alpha):
        spec = ModelSpec.nonparametric(alpha)
        return _entry(spec, data, fit(spec, data), plan, truth, noise)

    entries = _map(one, grid, jobs)
    table = SelectionTable(
        entries=entries,
        selected=_select(entries),
        scan_axis=AXIS_ALPHA,
        n_data=data.n_data,
        plan=plan,
    )
    table.derivatives = _alpha_derivatives(entries)
    return table


def _alpha_derivatives(entries):
    out = []
    for e1, e2 in zip(entries, entries[1:]):
        dlog = math.log10(e2.spec.alpha) - math.log10(e1.spec.alpha)
        ds = derivative_scatter(e1.bootstrap, e2.bootstrap)
        sd = None if ds.var_dm is None else math.sqrt(ds.var_dm) / dlog
        out.append(
            {
                "dchi2_dlog_alpha": (e2.chi2 - e1.chi2) / dlog,
                "dmeff_dlog_alpha": (e2.m_eff - e1.m_eff) / dlog,
                "daicp_dlog_alpha": (e2.aic_p - e1.aic_p) / dlog,
                "sd_dmeff": sd,
                "scatter": ds,
            }
        )
    return out
