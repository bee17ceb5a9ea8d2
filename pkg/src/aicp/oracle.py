"""Closed-form cross-checks of the bootstrap for linear models.

For a linear model ``f = A theta`` fitted by minimizing
``(y - A theta)^T Sigma^-1 (y - A theta) + alpha ||L theta||^2`` the fitted
values are ``H y`` with

    H = A (A^T Sigma^-1 A + alpha L^T L)^-1 A^T Sigma^-1.

Bootstrap refits then obey ``f(theta_z) - f(theta_y) = H (z - f(theta_y))``,
so the expected ``m_eff^kappa`` is ``E[n^T Sigma^-1/2 H Sigma^1/2 n] =
trace(H)`` for unit noise ``n``. That trace is computed here without any
sampling and compared with the bootstrap estimate.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .bootstrap import BootstrapPlan, run_bootstrap
from .data import DataSet
from .models import ModelSpec, second_difference_matrix
from .solver import fit

__all__ = [
    "OracleReport",
    "analytic_meff",
    "hat_matrix",
    "hat_trace_columnwise",
    "validate_bootstrap",
    "write_reports",
]


def _sigma_inv(Sigma, n):
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.ndim == 1:
        if Sigma.size != n:
            raise ValueError("variance vector length must match the design rows")
        return np.diag(1.0 / Sigma)
    if Sigma.shape != (n, n):
        raise ValueError("covariance matrix shape must match the design rows")
    return linalg.inv(Sigma)


def _normal_matrix(A, Sinv, L, alpha):
    M = A.T @ Sinv @ A
    if alpha:
        if L is None:
            L = second_difference_matrix(A.shape[1])
        M = M + alpha * (L.T @ L)
    return M


def hat_matrix(A, Sigma, L=None, alpha=0.0):
    """Hat matrix via an explicit inverse of the normal matrix.

    ``Sigma`` is either the vector of variances eps_i^2 or a full covariance
    matrix; ``L`` defaults to the second-difference operator on the
    parameters.
    """
    A = np.asarray(A, dtype=float)
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    Sinv = _sigma_inv(Sigma, A.shape[0])
    M = _normal_matrix(A, Sinv, L, alpha)
    try:
        Minv = linalg.inv(M)
    except linalg.LinAlgError:
        raise ValueError("normal matrix is singular") from None
    if not np.all(np.isfinite(Minv)) or np.linalg.cond(M) > 1.0 / np.finfo(float).eps:
        raise ValueError("normal matrix is singular")
    return A @ Minv @ A.T @ Sinv


def _whiten(A, Sigma):
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.ndim == 1:
        if Sigma.size != A.shape[0]:
            raise ValueError("variance vector length must match the design rows")
        return A / np.sqrt(Sigma)[:, None]
    if Sigma.shape != (A.shape[0], A.shape[0]):
        raise ValueError("covariance matrix shape must match the design rows")
    chol = linalg.cholesky(Sigma, lower=True)
    return linalg.solve_triangular(chol, A, lower=True)


def analytic_meff(A, Sigma, L=None, alpha=0.0):
    """Exact expected m_eff of a linear penalized model: trace of its hat matrix.

    Parameters
    ----------
    A : numpy.ndarray or None
        ``(N, m)`` design matrix; ``None`` means the identity (one parameter
        per data point).
    Sigma : numpy.ndarray
        Variances ``eps_i**2`` as a vector, or a full covariance matrix.
    L : numpy.ndarray, optional
        Penalty operator; the second-difference matrix when omitted.
    alpha : float

    Notes
    -----
    With ``W = Sigma^-1/2 A = Q R`` and ``C = L R^-1`` the trace equals
    ``sum_i 1 / (1 + alpha s_i**2)`` over the singular values ``s_i`` of
    ``C`` (padded with zeros up to m). Singular values below the numerical
    rank threshold are treated as exact null directions of the penalty, which
    keeps the result accurate for very large ``alpha`` where the explicit
    inverse in :func:`hat_matrix` loses digits.
    """
    Sigma_arr = np.asarray(Sigma, dtype=float)
    if A is None:
        A = np.eye(Sigma_arr.shape[0])
    A = np.asarray(A, dtype=float)
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    m = A.shape[1]
    W = _whiten(A, Sigma_arr)
    R = linalg.qr(W, mode="r")[0][:m]
    rdiag = np.abs(np.diag(R))
    if rdiag.size < m or rdiag.min() <= rdiag.max() * max(W.shape) * np.finfo(float).eps:
        # rank-deficient design; only the penalized normal matrix can be regular
        return float(np.trace(hat_matrix(A, Sigma_arr, L, alpha)))
    if alpha == 0:
        return float(m)
    if L is None:
        L = second_difference_matrix(m)
    C = linalg.solve_triangular(R, np.asarray(L, dtype=float).T, trans="T").T
    s = linalg.svdvals(C)
    tol = (s.max() if s.size else 0.0) * max(C.shape) * np.finfo(float).eps
    s = s[s > tol]
    n_null = m - s.size
    return float(n_null + np.sum(1.0 / (1.0 + alpha * s * s)))


def hat_trace_columnwise(A, Sigma, L=None, alpha=0.0):
    """trace(H) from one linear solve per data column; no explicit inverse."""
    A = np.asarray(A, dtype=float)
    Sinv = _sigma_inv(Sigma, A.shape[0])
    M = _normal_matrix(A, Sinv, L, alpha)
    B = A.T @ Sinv
    total = 0.0
    for i in range(A.shape[0]):
        col = linalg.solve(M, B[:, i], assume_a="sym")
        total += A[i] @ col
    return float(total)


@dataclass
class OracleReport:
    alpha: float
    m_eff_analytic: float
    m_eff_bootstrap: float
    var_meff: float | None
    z_score: float | None
    chi2_prior_mean: float
    chi2_posterior_mean: float
    n_boot: int
    n_params: int
    identity_checks: dict | None = None

    CSV_COLUMNS = (
        "alpha", "meff_analytic", "meff_bootstrap", "z_score", "chi2_prior",
        "chi2_posterior",
    )

    def row(self):
        return {
            "alpha": self.alpha,
            "meff_analytic": self.m_eff_analytic,
            "meff_bootstrap": self.m_eff_bootstrap,
            "z_score": self.z_score,
            "chi2_prior": self.chi2_prior_mean,
            "chi2_posterior": self.chi2_posterior_mean,
        }


def _unpenalized_checks(report, n_data):
    """Expected values at alpha = 0: E(prior) = N, E(posterior) = N - m and
    their difference equal to m_eff."""
    K = report.n_boot
    m = report.n_params
    sd_prior = math.sqrt(2.0 * n_data / K)
    dof_post = n_data - m
    sd_post = math.sqrt(2.0 * dof_post / K) if dof_post > 0 else 0.0
    diff = report.chi2_prior_mean - report.chi2_posterior_mean
    sd_meff = math.sqrt(report.var_meff) if report.var_meff else 0.0
    return {
        "chi2_prior_expected": float(n_data),
        "chi2_prior_ok": abs(report.chi2_prior_mean - n_data) <= 3.0 * sd_prior,
        "chi2_posterior_expected": float(dof_post),
        "chi2_posterior_ok": abs(report.chi2_posterior_mean - dof_post)
        <= max(3.0 * sd_post, 1e-9),
        "difference": diff,
        "difference_ok": abs(diff - report.m_eff_bootstrap) <= 3.0 * sd_meff + 1e-9,
    }


def validate_bootstrap(data: DataSet, plan: BootstrapPlan, alpha_grid, design=None):
    """Bootstrap versus hat-matrix m_eff over a grid of penalty strengths.

    Parameters
    ----------
    data : DataSet
    plan : BootstrapPlan
    alpha_grid : sequence of float
        Penalty strengths; 0 is allowed and triggers the unpenalized
        identity checks.
    design : numpy.ndarray, optional
        Design matrix of a general linear model; the non-parametric family
        (identity design) when omitted.

    Returns
    -------
    list of OracleReport
    """
    A = np.eye(data.n_data) if design is None else np.asarray(design, dtype=float)
    noise = plan.unit_noise(data.n_data)
    reports = []
    for alpha in alpha_grid:
        alpha = float(alpha)
        if design is None:
            spec = ModelSpec.nonparametric(alpha)
        else:
            spec = ModelSpec.linear(A, alpha)
        fit_y = fit(spec, data)
        boot = run_bootstrap(spec, data, fit_y, plan, noise=noise)
        analytic = analytic_meff(A, data.eps**2, None, alpha)
        z = None
        if boot.var_direct:
            z = (boot.m_eff - analytic) / math.sqrt(boot.var_direct)
        rep = OracleReport(
            alpha=alpha,
            m_eff_analytic=analytic,
            m_eff_bootstrap=boot.m_eff,
            var_meff=boot.var_direct,
            z_score=z,
            chi2_prior_mean=float(boot.chi2_prior_per_iter[boot.converged].mean()),
            chi2_posterior_mean=float(boot.chi2_boot_per_iter[boot.converged].mean()),
            n_boot=boot.n_used,
            n_params=A.shape[1],
        )
        if alpha == 0.0:
            rep.identity_checks = _unpenalized_checks(rep, data.n_data)
        reports.append(rep)
    return reports


def write_reports(reports, path, comments=()):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OracleReport.CSV_COLUMNS)
        for r in reports:
            row = r.row()
            w.writerow("" if row[c] is None else repr(float(row[c])) for c in OracleReport.CSV_COLUMNS)
