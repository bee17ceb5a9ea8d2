"""Bootstrap estimate of the effective number of free parameters.

Each iteration kappa adds Gaussian noise of the observed amplitude to the
best fit, ``z = f(theta_y) + eps * n_kappa``, refits the same model to ``z``
and scores

    m_eff^kappa = sum_i a_i b_i,
    a_i = (f_i(theta_z) - f_i(theta_y)) / eps_i,
    b_i = (z_i - f_i(theta_y)) / eps_i.

The noise vector ``n_kappa`` comes from a stream keyed only by
``(master_seed, kappa)``: every model evaluated with the same plan sees the
same noise patterns (common random numbers), which is what makes differences
between neighbouring models precise.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .data import DataSet
from .models import ModelSpec
from .solver import FitResult, LMOptions, chi_square, fit_batch

log = logging.getLogger(__name__)

__all__ = [
    "BootstrapPlan",
    "BootstrapSummary",
    "DerivativeScatter",
    "PerPointMoments",
    "ScatterEstimate",
    "derivative_scatter",
    "make_bootstrap",
    "meff_single",
    "run_bootstrap",
    "scatter_bienayme",
    "write_iterations",
]

# Domain tag separating bootstrap streams from mock-data streams.
_BOOT_STREAM_TAG = 1

#: Fraction of failed refits above which a summary is flagged invalid.
MAX_FAILED_FRACTION = 0.10


@dataclass(frozen=True)
class BootstrapPlan:
    """Number of iterations and the seed the noise streams derive from.

    Stream ``kappa`` (1-based) is ``SeedSequence(master_seed,
    spawn_key=(1, kappa))``; it depends on nothing else.
    """

    n_boot: int
    master_seed: int

    def __post_init__(self):
        if int(self.n_boot) < 1:
            raise ValueError("n_boot must be >= 1")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    def stream(self, kappa):
        if not 1 <= kappa:
            raise ValueError("kappa is 1-based")
        seq = np.random.SeedSequence(
            int(self.master_seed), spawn_key=(_BOOT_STREAM_TAG, int(kappa))
        )
        return np.random.default_rng(seq)

    def unit_noise(self, n_data, kappas=None):
        """Standard-normal noise, one row per iteration: shape (K, n_data)."""
        if kappas is None:
            kappas = range(1, self.n_boot + 1)
        return np.stack([self.stream(k).standard_normal(n_data) for k in kappas])


def make_bootstrap(fit: FitResult, data: DataSet, plan: BootstrapPlan, kappa):
    """Bootstrap sample ``z^kappa = f(theta_y) + N(0, eps)``."""
    noise = plan.stream(kappa).standard_normal(data.n_data)
    return data.with_y(fit.fitted + data.eps * noise)


def meff_single(fit_y: FitResult, fit_z: FitResult, z: DataSet, data: DataSet):
    """Single-iteration ``m_eff^kappa`` and the per-point factors a, b."""
    if not (fit_y.fitted.shape == fit_z.fitted.shape == z.y.shape == data.y.shape):
        raise ValueError("fits and datasets must share the data grid")
    a = (fit_z.fitted - fit_y.fitted) / data.eps
    b = (z.y - fit_y.fitted) / data.eps
    return float(np.dot(a, b)), a, b


# --------------------------------------------------------------------------
# scatter
# --------------------------------------------------------------------------

@dataclass
class PerPointMoments:
    """Sample moments over iterations for each data point.

    All moments use the 1/K normalization except where noted, so the
    product-moment decomposition of Var(c_i) is an exact identity.
    """

    mean_a: np.ndarray
    mean_b: np.ndarray
    var_a: np.ndarray
    var_b: np.ndarray
    cov_ab: np.ndarray
    cov_a2b2: np.ndarray
    mean_a2: np.ndarray
    var_a2: np.ndarray


@dataclass
class ScatterEstimate:
    """Variance of m_eff^kappa reconstructed from per-point contributions.

    Attributes
    ----------
    var_meff_kappa : float
        ``sum_i Var(c_i) + sum_{i != j} Cov(c_i, c_j)`` (unbiased sample
        moments), i.e. the variance of a single iteration.
    var_meff : float
        ``var_meff_kappa / K``, the variance of the averaged m_eff.
    var_c : numpy.ndarray
        Unbiased per-point Var(c_i).
    var_c_product_moments : numpy.ndarray
        Var(c_i) rebuilt from moments of a and b (general form, exact).
    var_c_unit_b : numpy.ndarray
        Same with E(b)=0, Var(b)=1 substituted; last term E(a_i^2).
    var_c_unit_b_printed : numpy.ndarray
        Same simplification with Var(a_i^2) as the last term.
    independent_sum : float
        ``sum_i Var(c_i)`` alone (cross-covariances dropped).
    """

    var_meff_kappa: float
    var_meff: float
    var_c: np.ndarray
    var_c_product_moments: np.ndarray
    var_c_unit_b: np.ndarray
    var_c_unit_b_printed: np.ndarray
    independent_sum: float
    moments: PerPointMoments


def scatter_bienayme(a, b):
    """Scatter of m_eff from per-point factors ``a``, ``b`` (shape (K, N)).

    Raises
    ------
    ValueError
        If fewer than two iterations are given.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    K = a.shape[0]
    if K < 2:
        raise ValueError("scatter needs at least 2 bootstrap iterations")
    if a.shape != b.shape:
        raise ValueError("a and b must have the same shape")
    c = a * b
    cov_c = np.cov(c, rowvar=False, ddof=1)
    cov_c = np.atleast_2d(cov_c)
    var_c = np.diag(cov_c).copy()
    var_kappa = float(cov_c.sum())

    def _mean(v):
        return v.mean(axis=0)

    def _cov(u, v):
        return _mean((u - _mean(u)) * (v - _mean(v)))

    mom = PerPointMoments(
        mean_a=_mean(a),
        mean_b=_mean(b),
        var_a=_cov(a, a),
        var_b=_cov(b, b),
        cov_ab=_cov(a, b),
        cov_a2b2=_cov(a * a, b * b),
        mean_a2=_mean(a * a),
        var_a2=_cov(a * a, a * a),
    )
    general = (
        mom.cov_a2b2
        - (mom.cov_ab + mom.mean_a * mom.mean_b) ** 2
        + (mom.var_a + mom.mean_a**2) * (mom.var_b + mom.mean_b**2)
    ) * (K / (K - 1.0))
    unit_b = (mom.cov_a2b2 - mom.cov_ab**2 + mom.mean_a2) * (K / (K - 1.0))
    printed = (mom.cov_a2b2 - mom.cov_ab**2 + mom.var_a2) * (K / (K - 1.0))
    return ScatterEstimate(
        var_meff_kappa=var_kappa,
        var_meff=var_kappa / K,
        var_c=var_c,
        var_c_product_moments=general,
        var_c_unit_b=unit_b,
        var_c_unit_b_printed=printed,
        independent_sum=float(var_c.sum()),
        moments=mom,
    )


# --------------------------------------------------------------------------
# full runs
# --------------------------------------------------------------------------

@dataclass
class BootstrapSummary:
    """Outcome of :func:`run_bootstrap`.

    Per-iteration arrays cover all ``n_boot`` iterations in kappa order;
    ``converged`` marks the ones entering the averages.
    """

    spec: ModelSpec
    plan: BootstrapPlan
    m_eff_per_iter: np.ndarray
    converged: np.ndarray
    m_eff: float
    var_direct: float | None
    var_bienayme: float | None
    scatter: ScatterEstimate | None
    chi2_boot_per_iter: np.ndarray
    chi2_prior_per_iter: np.ndarray
    a: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    n_failed: int = 0
    valid: bool = True

    @property
    def n_used(self):
        return int(self.converged.sum())

    @property
    def sd_meff(self):
        return None if self.var_direct is None else float(np.sqrt(self.var_direct))


def run_bootstrap(
    spec: ModelSpec,
    data: DataSet,
    fit_y: FitResult,
    plan: BootstrapPlan,
    options=LMOptions(),
    noise=None,
):
    """Estimate m_eff for ``spec`` from ``plan.n_boot`` refits.

    Refits start at ``fit_y.theta_hat``. Non-converged refits are left out
    of every average; more than 10% of them flags the summary invalid.

    ``noise`` may carry a precomputed ``plan.unit_noise(N)`` matrix so a scan
    over many models draws the streams once.
    """
    if noise is None:
        noise = plan.unit_noise(data.n_data)
    if noise.shape != (plan.n_boot, data.n_data):
        raise ValueError("noise matrix does not match the plan")
    Z = fit_y.fitted + data.eps * noise
    refit = fit_batch(spec, data, Z, fit_y.theta_hat, options)
    a = (refit.fitted - fit_y.fitted) / data.eps
    b = (Z - fit_y.fitted) / data.eps
    m_iter = np.sum(a * b, axis=1)
    ok = refit.converged & np.isfinite(m_iter)
    n_failed = int((~ok).sum())
    valid = n_failed <= MAX_FAILED_FRACTION * plan.n_boot and ok.any()
    if n_failed:
        log.info("%s: %d of %d refits failed", spec.label(), n_failed, plan.n_boot)

    n_ok = int(ok.sum())
    m_eff = float(m_iter[ok].mean()) if n_ok else float("nan")
    var_direct = scatter = var_bienayme = None
    if n_ok >= 2:
        var_direct = float(np.var(m_iter[ok], ddof=1) / n_ok)
        scatter = scatter_bienayme(a[ok], b[ok])
        var_bienayme = scatter.var_meff
    return BootstrapSummary(
        spec=spec,
        plan=plan,
        m_eff_per_iter=m_iter,
        converged=ok,
        m_eff=m_eff,
        var_direct=var_direct,
        var_bienayme=var_bienayme,
        scatter=scatter,
        chi2_boot_per_iter=chi_square(Z, refit.fitted, data.eps),
        chi2_prior_per_iter=np.sum(b * b, axis=1),
        a=a,
        b=b,
        n_failed=n_failed,
        valid=bool(valid),
    )


@dataclass
class DerivativeScatter:
    """Difference between two bootstrap summaries sharing a plan."""

    dm_eff: float
    var_dm_kappa: float | None
    var_dm: float | None
    var_dm_independent: float | None
    dchi2: float
    var_dchi2: float | None
    var_dchi2_independent: float | None
    correlation: float | None


def _diff_var(u, v):
    K = u.size
    if K < 2:
        return None, None, None
    var_u = np.var(u, ddof=1)
    var_v = np.var(v, ddof=1)
    # equals var_u + var_v - 2 cov(u, v) without the cancellation
    var_diff = np.var(v - u, ddof=1)
    return var_diff / K, (var_u + var_v) / K, var_diff


def derivative_scatter(s1: BootstrapSummary, s2: BootstrapSummary):
    """Mean and variance of ``m_eff(model 2) - m_eff(model 1)``.

    The variance includes the covariance between the two models over the
    shared noise streams; the ``*_independent`` fields give what it would be
    without that covariance. The same is done for the bootstrap chi^2.

    Raises
    ------
    ValueError
        If the summaries were not produced from the same plan.
    """
    if s1.plan != s2.plan:
        raise ValueError("summaries come from different bootstrap plans")
    both = s1.converged & s2.converged
    u, v = s1.m_eff_per_iter[both], s2.m_eff_per_iter[both]
    var_dm, var_ind, var_kappa = _diff_var(u, v)
    cu, cv = s1.chi2_boot_per_iter[both], s2.chi2_boot_per_iter[both]
    var_dchi2, var_dchi2_ind, _ = _diff_var(cu, cv)
    corr = None
    if u.size >= 2 and np.std(u) > 0 and np.std(v) > 0:
        corr = float(np.corrcoef(u, v)[0, 1])
    return DerivativeScatter(
        dm_eff=float(np.mean(v - u)) if u.size else float("nan"),
        var_dm_kappa=None if var_kappa is None else float(var_kappa),
        var_dm=None if var_dm is None else float(var_dm),
        var_dm_independent=None if var_ind is None else float(var_ind),
        dchi2=float(np.mean(cv - cu)) if u.size else float("nan"),
        var_dchi2=None if var_dchi2 is None else float(var_dchi2),
        var_dchi2_independent=None if var_dchi2_ind is None else float(var_dchi2_ind),
        correlation=corr,
    )


def write_iterations(summary: BootstrapSummary, path, comments=()):
    """Per-iteration audit dump: ``kappa,m_eff_kappa,chi2_boot``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kappa", "m_eff_kappa", "chi2_boot"])
        for k, (m, c2) in enumerate(
            zip(summary.m_eff_per_iter, summary.chi2_boot_per_iter), start=1
        ):
            w.writerow([k, repr(float(m)), repr(float(c2))])
