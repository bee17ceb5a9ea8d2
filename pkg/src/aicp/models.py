"""Model families: parametric Gauss-Hermite series and per-point values.

Both families are exposed through :class:`ModelSpec` plus the functions
:func:`model_values` and :func:`model_jacobian`. The roughness penalty is the
sum of squared unit-spaced second differences over interior points,
``P(f) = ||L f||**2`` with ``L`` the ``(N-2) x N`` operator with rows
``(..., 1, -2, 1, ...)``. A generic linear family (``f = A theta``) is also
provided; it is what the closed-form checks in :mod:`aicp.oracle` run on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import gauss_hermite_profile, hermite_basis, hermite_basis_derivative

__all__ = [
    "GAUSS_HERMITE",
    "LINEAR",
    "NONPARAMETRIC",
    "ModelSpec",
    "model_jacobian",
    "model_values",
    "penalty",
    "penalty_gradient",
    "penalty_hessian",
    "penalty_hessian_banded",
    "second_difference_matrix",
]

GAUSS_HERMITE = "gauss_hermite"
NONPARAMETRIC = "nonparametric"
LINEAR = "linear"


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """A candidate model.

    Use the constructors :meth:`gauss_hermite`, :meth:`nonparametric` and
    :meth:`linear` rather than building instances directly.
    """

    kind: str
    n_gh: int | None = None
    alpha: float = 0.0
    design: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == GAUSS_HERMITE:
            if self.n_gh is None or int(self.n_gh) < 2:
                raise ValueError("Gauss-Hermite order must be >= 2")
            if self.alpha != 0.0:
                raise ValueError("the parametric family carries no penalty")
        elif self.kind in (NONPARAMETRIC, LINEAR):
            if not self.alpha >= 0.0 or not np.isfinite(self.alpha):
                raise ValueError("penalty strength alpha must be finite and >= 0")
            if self.kind == LINEAR:
                if self.design is None or np.ndim(self.design) != 2:
                    raise ValueError("linear family needs a 2-D design matrix")
                if self.alpha > 0 and np.shape(self.design)[1] < 3:
                    raise ValueError("penalty needs at least 3 parameters")
        else:
            raise ValueError(f"unknown model kind {self.kind!r}")

    @classmethod
    def gauss_hermite(cls, n_gh):
        return cls(GAUSS_HERMITE, n_gh=int(n_gh))

    @classmethod
    def nonparametric(cls, alpha=0.0):
        return cls(NONPARAMETRIC, alpha=float(alpha))

    @classmethod
    def linear(cls, design, alpha=0.0):
        design = np.array(design, dtype=float)
        design.setflags(write=False)
        return cls(LINEAR, alpha=float(alpha), design=design)

    @property
    def is_linear(self) -> bool:
        return self.kind != GAUSS_HERMITE

    @property
    def penalized(self) -> bool:
        return self.kind != GAUSS_HERMITE and self.alpha > 0

    def n_params(self, n_data: int) -> int:
        if self.kind == GAUSS_HERMITE:
            return self.n_gh + 1
        if self.kind == NONPARAMETRIC:
            return n_data
        return self.design.shape[1]

    def with_alpha(self, alpha) -> "ModelSpec":
        if self.kind == GAUSS_HERMITE:
            raise ValueError("the parametric family carries no penalty")
        return ModelSpec(self.kind, alpha=float(alpha), design=self.design)

    def label(self) -> str:
        if self.kind == GAUSS_HERMITE:
            return f"GH({self.n_gh})"
        return f"{self.kind}(alpha={self.alpha:g})"


def _check_dims(spec, theta, x):
    theta = np.asarray(theta, dtype=float)
    n = np.shape(x)[0]
    if spec.kind == LINEAR and spec.design.shape[0] != n:
        raise ValueError(
            f"design has {spec.design.shape[0]} rows but there are {n} abscissae"
        )
    expected = spec.n_params(n)
    if theta.shape[-1] != expected:
        raise ValueError(
            f"{spec.label()} expects {expected} parameters, got {theta.shape[-1]}"
        )
    return theta


def model_values(spec: ModelSpec, theta, x):
    """Model values f_i(theta) at the abscissae ``x``.

    ``theta`` may carry leading batch dimensions; the output then has shape
    ``theta.shape[:-1] + (len(x),)``.
    """
    theta = _check_dims(spec, theta, x)
    if spec.kind == NONPARAMETRIC:
        return theta.copy()
    if spec.kind == LINEAR:
        return theta @ spec.design.T
    if theta.ndim == 1:
        return gauss_hermite_profile(x, theta[0], theta[1], theta[2], theta[3:])
    return _gh_batch(theta, np.asarray(x, dtype=float))[0]


def _gh_batch(theta, x, jac=False):
    """Values and optionally the Jacobian of the GH family for a batch.

    theta: (B, n+1). Returns f (B, N) and J (B, N, n+1) or None.
    """
    gamma = theta[:, 0:1]
    mu = theta[:, 1:2]
    sigma = theta[:, 2:3]
    h = theta[:, 3:]
    n_max = 2 + h.shape[1]
    u = (x[None, :] - mu) / sigma
    envelope = np.exp(-0.5 * u * u) / np.sqrt(2.0 * np.pi * sigma)
    basis = hermite_basis(u, n_max)  # (n+1, B, N)
    series = 1.0 + np.einsum("bk,kbn->bn", h, basis[3:])
    f = gamma * envelope * series
    if not jac:
        return f, None
    dbasis = hermite_basis_derivative(basis)
    dseries = np.einsum("bk,kbn->bn", h, dbasis[3:])
    df_du = gamma * envelope * (dseries - u * series)
    J = np.empty(f.shape + (theta.shape[1],))
    J[:, :, 0] = envelope * series
    J[:, :, 1] = -df_du / sigma
    # prefactor ~ sigma**-1/2 contributes -f / (2 sigma)
    J[:, :, 2] = -f / (2.0 * sigma) - df_du * u / sigma
    J[:, :, 3:] = (gamma * envelope)[:, :, None] * np.moveaxis(basis[3:], 0, -1)
    return f, J


def model_jacobian(spec: ModelSpec, theta, x):
    """Jacobian df_i/dtheta_k, shape ``(N, dim(theta))`` (batch dims allowed)."""
    theta = _check_dims(spec, theta, x)
    n = np.shape(x)[0]
    if spec.kind == NONPARAMETRIC:
        eye = np.eye(n)
        return np.broadcast_to(eye, theta.shape[:-1] + eye.shape).copy()
    if spec.kind == LINEAR:
        return np.broadcast_to(spec.design, theta.shape[:-1] + spec.design.shape).copy()
    batch = theta.reshape(-1, theta.shape[-1])
    _, J = _gh_batch(batch, np.asarray(x, dtype=float), jac=True)
    return J.reshape(theta.shape[:-1] + J.shape[1:])


# --------------------------------------------------------------------------
# second-difference penalty
# --------------------------------------------------------------------------

def _check_len(n):
    if n < 3:
        raise ValueError("penalty needs at least 3 values")


def second_difference_matrix(n):
    """Dense ``(n-2) x n`` second-difference operator L."""
    _check_len(n)
    L = np.zeros((n - 2, n))
    idx = np.arange(n - 2)
    L[idx, idx] = 1.0
    L[idx, idx + 1] = -2.0
    L[idx, idx + 2] = 1.0
    return L


def penalty(values):
    """Sum of squared interior second differences (last axis)."""
    values = np.asarray(values, dtype=float)
    _check_len(values.shape[-1])
    d2 = values[..., 2:] - 2.0 * values[..., 1:-1] + values[..., :-2]
    out = np.sum(d2 * d2, axis=-1)
    return float(out) if out.ndim == 0 else out


def penalty_gradient(values):
    """Gradient of :func:`penalty`, ``2 L^T L f`` (last axis)."""
    values = np.asarray(values, dtype=float)
    _check_len(values.shape[-1])
    d2 = values[..., 2:] - 2.0 * values[..., 1:-1] + values[..., :-2]
    grad = np.zeros_like(values)
    grad[..., :-2] += d2
    grad[..., 1:-1] -= 2.0 * d2
    grad[..., 2:] += d2
    return 2.0 * grad


def penalty_hessian(n):
    """``L^T L`` as a dense ``n x n`` matrix (constant, PSD, pentadiagonal)."""
    L = second_difference_matrix(n)
    return L.T @ L


def penalty_hessian_banded(n):
    """Lower banded storage of ``L^T L`` for :func:`scipy.linalg.solveh_banded`.

    Row 0 holds the main diagonal, rows 1 and 2 the first and second
    sub-diagonals (``lower=True`` layout).
    """
    _check_len(n)
    ab = np.zeros((3, n))
    diag = np.full(n, 6.0)
    diag[[0, -1]] = 1.0
    diag[[1, -2]] = 5.0
    if n == 3:
        diag[1] = 4.0
    sub1 = np.full(n - 1, -4.0)
    sub1[[0, -1]] = -2.0
    ab[0] = diag
    ab[1, : n - 1] = sub1
    ab[2, : n - 2] = 1.0
    return ab
