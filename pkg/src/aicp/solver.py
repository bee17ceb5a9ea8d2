"""Minimization of chi^2 + alpha * P.

Two routes:

* :func:`levenberg_marquardt` -- damped Gauss-Newton on the augmented
  residual vector ``[(y - f) / eps, sqrt(alpha) L theta]``. It runs on a batch
  of independent problems at once, which is how bootstrap refits are done.
* :func:`solve_linear_penalized` -- the exact normal-equation solve for
  linear models, banded when the design is the identity.

:func:`fit` dispatches between them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .data import DataSet
from .models import (
    GAUSS_HERMITE,
    LINEAR,
    NONPARAMETRIC,
    ModelSpec,
    model_jacobian,
    model_values,
    penalty,
    penalty_gradient,
    penalty_hessian,
    penalty_hessian_banded,
    second_difference_matrix,
)

log = logging.getLogger(__name__)

__all__ = [
    "FitError",
    "FitResult",
    "LMOptions",
    "auto_init",
    "chi_square",
    "fit",
    "fit_batch",
    "levenberg_marquardt",
    "objective_gradient",
    "solve_linear_penalized",
]


# objective changes below this many ulps of (1 + objective) are rounding noise
_NOISE_FACTOR = 1e3


class FitError(RuntimeError):
    """Fit could not be carried out (non-finite objective, singular system)."""


@dataclass
class FitResult:
    spec: ModelSpec
    theta_hat: np.ndarray
    fitted: np.ndarray
    chi2: float
    penalty_value: float
    objective: float
    converged: bool
    n_iterations: int
    gradient_norm: float
    message: str = ""
    history: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "model": self.spec.label(),
            "kind": self.spec.kind,
            "n_gh": self.spec.n_gh,
            "alpha": self.spec.alpha,
            "theta_hat": [float(v) for v in self.theta_hat],
            "chi2": self.chi2,
            "penalty_value": self.penalty_value,
            "objective": self.objective,
            "converged": self.converged,
            "n_iterations": self.n_iterations,
            "gradient_norm": self.gradient_norm,
            "message": self.message,
        }


@dataclass(frozen=True)
class LMOptions:
    """Damping and stopping rules for :func:`levenberg_marquardt`.

    Attributes
    ----------
    gtol : float
        Converged when max |d objective / d theta| <= gtol * (1 + objective).
    ftol, ftol_patience, ftol_gradient_ratio : float, int, float
        Stop after ``ftol_patience`` consecutive accepted steps whose
        relative decrease is below ``ftol`` and which shrink the gradient by
        less than ``ftol_gradient_ratio``.
    dtol : float
        A run stopped by ``ftol`` or ``max_iter`` still counts as converged
        when the Gauss-Newton decrement is at most ``dtol`` (objective
        units).
    max_damping : float
        Give up ("stalled") when rejections push the damping above this.
    """

    damping_init: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 10.0
    gtol: float = 1e-6
    ftol: float = 1e-12
    ftol_patience: int = 3
    ftol_gradient_ratio: float = 0.9
    dtol: float = 1e-6
    max_iter: int = 500
    max_damping: float = 1e30


def chi_square(y, fitted, eps):
    r = (np.asarray(y) - fitted) / eps
    out = np.sum(r * r, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def _penalty_of(spec, theta):
    if not spec.penalized:
        return np.zeros(np.shape(theta)[:-1]) if np.ndim(theta) > 1 else 0.0
    return penalty(theta)


def objective_gradient(spec: ModelSpec, theta, data: DataSet):
    """Gradient of chi^2 + alpha * P with respect to ``theta``."""
    theta = np.asarray(theta, dtype=float)
    f = model_values(spec, theta, data.x)
    J = model_jacobian(spec, theta, data.x)
    w = (data.y - f) / data.eps**2
    grad = -2.0 * np.einsum("...n,...nk->...k", w, J)
    if spec.penalized:
        grad = grad + spec.alpha * penalty_gradient(theta)
    return grad


# --------------------------------------------------------------------------
# residual functions on the internal parameterization
# --------------------------------------------------------------------------

class _Problem:
    """Augmented least-squares problem for a batch of datasets.

    Internal parameters equal theta except that the Gauss-Hermite width is
    carried as log(sigma).
    """

    def __init__(self, spec, x, Y, eps):
        self.spec = spec
        self.x = np.asarray(x, dtype=float)
        self.Y = np.atleast_2d(np.asarray(Y, dtype=float))
        self.eps = np.asarray(eps, dtype=float)
        self.log_sigma = spec.kind == GAUSS_HERMITE
        if spec.penalized:
            self.sqrt_alpha_L = np.sqrt(spec.alpha) * second_difference_matrix(
                spec.n_params(self.x.size)
            )
        else:
            self.sqrt_alpha_L = None

    def to_internal(self, theta):
        p = np.array(theta, dtype=float)
        if self.log_sigma:
            if np.any(p[..., 2] <= 0):
                raise FitError("sigma must be positive")
            p[..., 2] = np.log(p[..., 2])
        return p

    def to_theta(self, p):
        theta = np.array(p, dtype=float)
        if self.log_sigma:
            theta[..., 2] = np.exp(theta[..., 2])
        return theta

    def residuals(self, p, rows, jac=False):
        """R (b, M) and optionally dR/dp (b, M, P) for the batch ``rows``."""
        theta = self.to_theta(p)
        f = model_values(self.spec, theta, self.x)
        R = (self.Y[rows] - f) / self.eps
        J = None
        if jac:
            J = -model_jacobian(self.spec, theta, self.x) / self.eps[:, None]
            if self.log_sigma:
                J[:, :, 2] *= theta[:, 2:3]
        if self.sqrt_alpha_L is not None:
            R = np.concatenate([R, theta @ self.sqrt_alpha_L.T], axis=1)
            if jac:
                LJ = np.broadcast_to(self.sqrt_alpha_L, (theta.shape[0],) + self.sqrt_alpha_L.shape)
                J = np.concatenate([J, LJ], axis=1)
        return R, J

    def theta_gradient(self, p, R, J):
        """Gradient of the objective in theta (not internal) coordinates."""
        g = 2.0 * np.einsum("bm,bmk->bk", R, J)
        if self.log_sigma:
            g[:, 2] /= np.exp(p[:, 2])
        return g


def _gn_decrement(JtJ, J, R):
    """Decrease of the objective promised by a full Gauss-Newton step,
    ``|P_J R|^2``; it does not depend on how the parameters are scaled."""
    g = np.einsum("bmi,bm->bi", J, R)
    scale = np.sqrt(np.maximum(np.diagonal(JtJ, axis1=1, axis2=2), np.finfo(float).tiny))
    M = JtJ / (scale[:, :, None] * scale[:, None, :])
    gs = g / scale
    # unit diagonal after scaling; the ridge only matters for singular J
    M = M + 1e-12 * np.eye(M.shape[-1])
    sol = np.linalg.solve(M, gs[:, :, None])[:, :, 0]
    return np.einsum("bi,bi->b", gs, sol)


def levenberg_marquardt(problem, p0, options=LMOptions()):
    """Batched Levenberg-Marquardt on internal parameters.

    Parameters
    ----------
    problem : _Problem
        Residual provider.
    p0 : numpy.ndarray, shape (B, P)
        Starting points (internal parameterization).
    options : LMOptions

    Returns
    -------
    dict
        ``p`` (B, P), ``objective`` (B,), ``gradient_norm`` (B,),
        ``converged`` (B,), ``n_iter`` (B,), ``history`` (list of accepted
        objective values per problem), ``message`` (B,).
    """
    p = np.array(p0, dtype=float, copy=True)
    B = p.shape[0]
    rows = np.arange(B)
    R, J = problem.residuals(p, rows, jac=True)
    obj = np.sum(R * R, axis=1)
    if not np.all(np.isfinite(obj)) or not np.all(np.isfinite(J)):
        raise FitError("non-finite objective at the starting point")
    JtJ = np.einsum("bmi,bmj->bij", J, J)
    lam = options.damping_init * np.max(np.diagonal(JtJ, axis1=1, axis2=2), axis=1)
    lam = np.where(lam > 0, lam, options.damping_init)
    gnorm = np.max(np.abs(problem.theta_gradient(p, R, J)), axis=1)
    n_iter = np.zeros(B, dtype=int)
    history = [[float(o)] for o in obj]
    message = np.array(["max_iter"] * B, dtype=object)
    active = np.ones(B, dtype=bool)
    tiny_steps = np.zeros(B, dtype=int)
    eye = np.eye(p.shape[1])

    for _ in range(options.max_iter):
        done = gnorm <= options.gtol * (1.0 + np.abs(obj))
        message[active & done] = "gradient"
        active &= ~done

        if not active.any():
            break
        idx = np.flatnonzero(active)
        g = np.einsum("bmi,bm->bi", J[idx], R[idx])
        A = JtJ[idx] + lam[idx, None, None] * eye
        try:
            step = np.linalg.solve(A, -g[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            step = np.stack([np.linalg.lstsq(a, -gi, rcond=None)[0] for a, gi in zip(A, g)])
        p_try = p[idx] + step
        R_try, J_try = problem.residuals(p_try, idx, jac=True)
        # decrease as sum (R' - R)(R' + R): resolves changes far below the
        # rounding level of the objective itself
        reduction = -np.sum((R_try - R[idx]) * (R_try + R[idx]), axis=1)
        gnorm_try = np.max(np.abs(problem.theta_gradient(p_try, R_try, J_try)), axis=1)
        noise = _NOISE_FACTOR * np.finfo(float).eps * (1.0 + obj[idx])
        # at the rounding floor a step is judged by the gradient it leaves
        flat = (np.abs(reduction) <= noise) & (gnorm_try < gnorm[idx])
        accept = np.isfinite(reduction) & np.isfinite(gnorm_try) & ((reduction > noise) | flat)
        n_iter[idx] += 1

        acc = idx[accept]
        rej = idx[~accept]
        gnorm_prev = gnorm[idx]
        lam[rej] *= options.damping_up
        if acc.size:
            rel = np.abs(reduction[accept]) / np.maximum(obj[acc], np.finfo(float).tiny)
            p[acc] = p_try[accept]
            R[acc] = R_try[accept]
            J[acc] = J_try[accept]
            JtJ[acc] = np.einsum("bmi,bmj->bij", J_try[accept], J_try[accept])
            obj[acc] = np.sum(R_try[accept] ** 2, axis=1)
            gnorm[acc] = gnorm_try[accept]
            lam[acc] /= options.damping_down
            for k, o in zip(acc, obj[acc]):
                history[k].append(float(o))
            # a tiny decrease that still shrinks the gradient is slow linear
            # convergence (large-residual fits), not stagnation
            shrinking = gnorm_try[accept] < options.ftol_gradient_ratio * gnorm_prev[accept]
            tiny = (rel < options.ftol) & ~flat[accept] & ~shrinking
            tiny_steps[acc] = np.where(tiny, tiny_steps[acc] + 1, 0)
            small = acc[tiny_steps[acc] >= options.ftol_patience]
            message[small] = "ftol"
            active[small] = False
        stalled = rej[lam[rej] > options.max_damping]
        message[stalled] = "stalled"
        active[stalled] = False

    # runs ending on another rule still count as converged when a full
    # Gauss-Newton step would gain less than dtol in the objective
    converged = (gnorm <= options.gtol * (1.0 + np.abs(obj))) | (
        _gn_decrement(JtJ, J, R) <= options.dtol
    )
    return {
        "p": p,
        "objective": obj,
        "gradient_norm": gnorm,
        "converged": converged,
        "n_iter": n_iter,
        "history": history,
        "message": message,
    }


# --------------------------------------------------------------------------
# initialization
# --------------------------------------------------------------------------

def auto_init(spec: ModelSpec, data: DataSet):
    """Starting point for :func:`fit` when none is given.

    Gauss-Hermite: moment matching on the positive part of the signal,
    with h_i = 0. Linear families: the data themselves (non-parametric) or
    zeros.
    """
    if spec.kind == NONPARAMETRIC:
        return data.y.copy()
    if spec.kind == LINEAR:
        return np.zeros(spec.design.shape[1])
    w = np.clip(data.y, 0.0, None)
    if not w.sum() > 0:
        w = np.abs(data.y)
    mu = np.sum(w * data.x) / w.sum()
    sigma = np.sqrt(np.sum(w * (data.x - mu) ** 2) / w.sum())
    if not sigma > 0:
        sigma = float(np.ptp(data.x)) / 4.0
    dx = np.gradient(data.x)
    # area under the profile equals gamma * sqrt(sigma) for the h=0 profile
    gamma = np.sum(data.y * dx) / np.sqrt(sigma)
    theta = np.zeros(spec.n_gh + 1)
    theta[:3] = gamma, mu, sigma
    return theta


# --------------------------------------------------------------------------
# linear path
# --------------------------------------------------------------------------

def _banded_system(eps, alpha):
    ab = alpha * penalty_hessian_banded(eps.size)
    ab[0] += 1.0 / eps**2
    return ab


def _solve_identity(eps, alpha, rhs):
    """Solve (Sigma^-1 + alpha L^T L) X = rhs; rhs (N,) or (N, k)."""
    if alpha == 0.0:
        return rhs * (eps**2 if rhs.ndim == 1 else eps[:, None] ** 2)
    return linalg.solveh_banded(_banded_system(eps, alpha), rhs, lower=True)


def solve_linear_penalized(design, data: DataSet, alpha, return_hat=True):
    """Exact minimizer of chi^2 + alpha * ||L theta||^2 for ``f = A theta``.

    Parameters
    ----------
    design : numpy.ndarray or None
        ``N x m`` design matrix A. ``None`` means the identity
        (non-parametric family) and selects a banded Cholesky solve; an
        explicit matrix is solved densely.
    data : DataSet
    alpha : float
        Penalty strength, >= 0.
    return_hat : bool
        Also build the hat matrix ``H = A M^-1 A^T Sigma^-1``.

    Returns
    -------
    theta_hat : numpy.ndarray
    hat : numpy.ndarray or None
        ``N x N`` matrix with ``fitted = hat @ y``.
    """
    alpha = float(alpha)
    if not alpha >= 0.0:
        raise ValueError("alpha must be >= 0")
    w = 1.0 / data.eps**2
    if design is None and alpha == 0.0:
        # interpolation: the solution is the data itself, kept bit-exact
        return np.array(data.y, dtype=float), (np.eye(data.n_data) if return_hat else None)
    if design is None:
        theta = _solve_identity(data.eps, alpha, w * data.y)
        hat = _solve_identity(data.eps, alpha, np.diag(w)) if return_hat else None
        return theta, hat

    A = np.asarray(design, dtype=float)
    n, m = A.shape
    if n != data.n_data:
        raise ValueError("design rows must match the number of data points")
    M = A.T @ (w[:, None] * A)
    if alpha > 0:
        if m < 3:
            raise ValueError("penalty needs at least 3 parameters")
        M = M + alpha * penalty_hessian(m)
    elif np.linalg.matrix_rank(A) < m:
        raise ValueError("design matrix is rank deficient and alpha = 0")
    try:
        factor = linalg.cho_factor(M)
    except linalg.LinAlgError:
        raise ValueError("penalized normal equations are singular") from None
    theta = linalg.cho_solve(factor, A.T @ (w * data.y))
    hat = None
    if return_hat:
        hat = A @ linalg.cho_solve(factor, A.T * w[None, :])
    return theta, hat


def _linear_refit(spec, data, Y):
    """Exact fits of a linear family to each row of Y (B, N)."""
    w = 1.0 / data.eps**2
    if spec.kind == NONPARAMETRIC and spec.alpha == 0.0:
        theta = np.array(Y, dtype=float)
        return theta, theta.copy()
    if spec.kind == NONPARAMETRIC:
        theta = _solve_identity(data.eps, spec.alpha, (Y * w).T).T
        return theta, theta.copy()
    A = spec.design
    M = A.T @ (w[:, None] * A)
    if spec.alpha > 0:
        M = M + spec.alpha * penalty_hessian(A.shape[1])
    theta = linalg.cho_solve(linalg.cho_factor(M), A.T @ (Y * w).T).T
    return theta, theta @ A.T


# --------------------------------------------------------------------------
# public fitting API
# --------------------------------------------------------------------------

def _result(spec, data, theta, gnorm, converged, n_iter, message):
    fitted = model_values(spec, theta, data.x)
    chi2 = chi_square(data.y, fitted, data.eps)
    pen = float(_penalty_of(spec, theta))
    return FitResult(
        spec=spec,
        theta_hat=theta,
        fitted=fitted,
        chi2=float(chi2),
        penalty_value=pen,
        objective=float(chi2 + spec.alpha * pen),
        converged=bool(converged),
        n_iterations=int(n_iter),
        gradient_norm=float(gnorm),
        message=str(message),
    )


def _check_nonparametric_grid(spec, data):
    if spec.kind == NONPARAMETRIC and spec.penalized and not data.is_uniform():
        raise ValueError("the non-parametric family requires a uniform x grid")


def fit(spec: ModelSpec, data: DataSet, init=None, method="auto", options=LMOptions()):
    """Minimize chi^2 + alpha * P for one model and one dataset.

    Parameters
    ----------
    spec : ModelSpec
    data : DataSet
    init : array_like, optional
        Starting parameters; :func:`auto_init` when omitted. Ignored by the
        linear path.
    method : {"auto", "lm", "linear"}
        ``"auto"`` uses the exact linear solve for linear families and
        Levenberg-Marquardt otherwise.

    Returns
    -------
    FitResult
        Non-converged fits are returned with ``converged=False``.
    """
    if method not in ("auto", "lm", "linear"):
        raise ValueError(f"unknown method {method!r}")
    _check_nonparametric_grid(spec, data)
    if method == "auto":
        method = "linear" if spec.is_linear else "lm"
    if method == "linear":
        if not spec.is_linear:
            raise ValueError("linear path needs a linear model family")
        design = None if spec.kind == NONPARAMETRIC else spec.design
        theta, _ = solve_linear_penalized(design, data, spec.alpha, return_hat=False)
        if not np.all(np.isfinite(theta)):
            raise FitError("non-finite solution of the linear system")
        grad = objective_gradient(spec, theta, data)
        gnorm = float(np.max(np.abs(grad)))
        return _result(spec, data, theta, gnorm, True, 1, "exact linear solve")

    theta0 = auto_init(spec, data) if init is None else np.asarray(init, dtype=float)
    if theta0.shape != (spec.n_params(data.n_data),):
        raise ValueError(
            f"init has shape {theta0.shape}, expected ({spec.n_params(data.n_data)},)"
        )
    problem = _Problem(spec, data.x, data.y[None, :], data.eps)
    out = levenberg_marquardt(problem, problem.to_internal(theta0[None, :]), options)
    theta = problem.to_theta(out["p"])[0]
    res = _result(
        spec, data, theta, out["gradient_norm"][0], out["converged"][0],
        out["n_iter"][0], out["message"][0],
    )
    res.history = out["history"][0]
    if not res.converged:
        log.debug("%s did not converge (%s)", spec.label(), res.message)
    return res


@dataclass
class BatchFit:
    theta: np.ndarray
    fitted: np.ndarray
    chi2: np.ndarray
    converged: np.ndarray
    gradient_norm: np.ndarray = field(default=None)


def fit_batch(spec: ModelSpec, data: DataSet, Y, init, options=LMOptions()):
    """Refit ``spec`` to each row of ``Y`` (B, N) sharing x and eps.

    Linear families are solved exactly; the Gauss-Hermite family runs one
    batched Levenberg-Marquardt started from ``init`` (shape (P,) or (B, P)).
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if spec.is_linear:
        theta, fitted = _linear_refit(spec, data, Y)
        chi2 = chi_square(Y, fitted, data.eps)
        return BatchFit(theta, fitted, np.atleast_1d(chi2), np.ones(Y.shape[0], dtype=bool))
    init = np.broadcast_to(np.asarray(init, dtype=float), (Y.shape[0], spec.n_params(data.n_data)))
    problem = _Problem(spec, data.x, Y, data.eps)
    out = levenberg_marquardt(problem, problem.to_internal(init), options)
    theta = problem.to_theta(out["p"])
    fitted = model_values(spec, theta, data.x)
    chi2 = chi_square(Y, fitted, data.eps)
    return BatchFit(theta, fitted, np.atleast_1d(chi2), out["converged"], out["gradient_norm"])
