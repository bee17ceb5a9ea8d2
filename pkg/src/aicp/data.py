"""Mock data from a Gauss-Hermite line profile, and dataset file I/O.

The generating profile is

    y0(x) = gamma / sqrt(2 pi sigma) * exp(-u**2 / 2) * (1 + sum_i h_i H_i(u)),
    u = (x - mu) / sigma,

with ``H_i`` the normalized Hermite polynomials ``H~_i(u) / sqrt(2**i i!)``
built from the physicists' polynomials ``H~_i``. The prefactor is kept exactly
in the ``sqrt(2 pi sigma)`` form; noise is tied to the realized peak of the
profile, so nothing downstream depends on the normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "DataFormatError",
    "DataSet",
    "GeneratingModel",
    "MockConfig",
    "TABLE1_MODEL",
    "eval_generating",
    "generate_mock",
    "hermite_basis",
    "hermite_basis_derivative",
    "load_dataset",
    "load_truth",
    "save_dataset",
    "save_truth",
]

# Domain tag mixed into the mock-data seed so mock noise never coincides with
# a bootstrap stream drawn from the same integer seed.
_MOCK_STREAM_TAG = 0


class DataFormatError(ValueError):
    """Raised for malformed or invariant-violating dataset files.

    Attributes
    ----------
    row : int or None
        1-based data row (header excluded) where the problem was found.
    """

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


@dataclass(frozen=True, eq=False)
class DataSet:
    """Observed sample: abscissae, ordinates and per-point noise levels."""

    x: np.ndarray
    y: np.ndarray
    eps: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=float)
        y = np.ascontiguousarray(self.y, dtype=float)
        eps = np.ascontiguousarray(self.eps, dtype=float)
        if x.ndim != 1 or x.shape != y.shape or x.shape != eps.shape:
            raise ValueError("x, y and eps must be 1-D arrays of equal length")
        if x.size < 3:
            raise ValueError("need at least 3 points")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise ValueError("x and y must be finite")
        if np.any(np.diff(x) <= 0):
            raise ValueError("x must be strictly increasing")
        if not np.all(eps > 0) or not np.all(np.isfinite(eps)):
            raise ValueError("noise levels eps must be positive and finite")
        for name, arr in (("x", x), ("y", y), ("eps", eps)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_data(self) -> int:
        return self.x.size

    def with_y(self, y) -> "DataSet":
        """Copy with new ordinates; x and eps are shared."""
        return DataSet(self.x, y, self.eps)

    def is_uniform(self, rtol=1e-9) -> bool:
        dx = np.diff(self.x)
        return bool(np.allclose(dx, dx[0], rtol=rtol, atol=0.0))


@dataclass(frozen=True)
class GeneratingModel:
    """Parameters of the Gauss-Hermite profile.

    ``h`` maps Hermite order (3 <= order <= n_gh_max) to its coefficient.
    Orders absent from ``h`` are zero.
    """

    gamma: float = 1.0
    mu: float = 0.0
    sigma: float = 350.0
    h: dict = field(default_factory=dict)
    n_gh_max: int = 10

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        for order in self.h:
            if not 3 <= order <= self.n_gh_max:
                raise ValueError(
                    f"Hermite order {order} outside [3, {self.n_gh_max}]"
                )

    def coefficients(self, n_gh=None) -> np.ndarray:
        """Dense coefficient vector (h_3, ..., h_n) for ``n = n_gh``."""
        n = self.n_gh_max if n_gh is None else n_gh
        return np.array([float(self.h.get(i, 0.0)) for i in range(3, n + 1)])

    def theta(self, n_gh=None) -> np.ndarray:
        """Parameter vector (gamma, mu, sigma, h_3, ..., h_n)."""
        return np.concatenate(
            [[self.gamma, self.mu, self.sigma], self.coefficients(n_gh)]
        )


#: Generating model of the toy problem: mu=0, sigma=350, gamma=1, order 10.
TABLE1_MODEL = GeneratingModel(
    gamma=1.0,
    mu=0.0,
    sigma=350.0,
    h={3: 0.0, 4: 0.1, 5: 0.05, 6: 0.1, 7: -0.05, 8: 0.0, 9: 0.0, 10: 0.2},
    n_gh_max=10,
)


@dataclass(frozen=True)
class MockConfig:
    generating: GeneratingModel = TABLE1_MODEL
    n_data: int = 71
    x_range_sigmas: float = 8.0
    snr_peak: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.n_data < 3:
            raise ValueError("need at least 3 points")
        if not self.snr_peak > 0:
            raise ValueError("snr_peak must be positive")
        if not self.x_range_sigmas > 0:
            raise ValueError("x_range_sigmas must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def hermite_basis(u, n_max):
    """Normalized Hermite polynomials H_0 .. H_n_max evaluated at ``u``.

    Returns an array of shape ``(n_max + 1,) + u.shape``. Uses the stable
    recurrence ``H_{l+1} = (sqrt(2) u H_l - sqrt(l) H_{l-1}) / sqrt(l + 1)``.
    """
    u = np.asarray(u, dtype=float)
    out = np.empty((n_max + 1,) + u.shape)
    out[0] = 1.0
    if n_max >= 1:
        out[1] = math.sqrt(2.0) * u
    for l in range(1, n_max):
        out[l + 1] = (math.sqrt(2.0) * u * out[l] - math.sqrt(l) * out[l - 1]) / math.sqrt(
            l + 1
        )
    return out


def hermite_basis_derivative(basis):
    """d/du of the normalized basis: ``H_l' = sqrt(2 l) H_{l-1}``."""
    deriv = np.zeros_like(basis)
    for l in range(1, basis.shape[0]):
        deriv[l] = math.sqrt(2.0 * l) * basis[l - 1]
    return deriv


def gauss_hermite_profile(x, gamma, mu, sigma, coeffs):
    """Evaluate the profile for explicit parameters; ``coeffs`` = (h_3, ...)."""
    coeffs = np.asarray(coeffs, dtype=float)
    u = (np.asarray(x, dtype=float) - mu) / sigma
    n_max = 2 + coeffs.size
    series = np.ones_like(u)
    if coeffs.size:
        basis = hermite_basis(u, n_max)
        series = series + np.tensordot(coeffs, basis[3:], axes=1)
    return gamma / np.sqrt(2.0 * np.pi * sigma) * np.exp(-0.5 * u * u) * series


def eval_generating(model: GeneratingModel, x):
    """Noise-free profile y0(x) of ``model``; scalar or array ``x``."""
    out = gauss_hermite_profile(
        x, model.gamma, model.mu, model.sigma, model.coefficients()
    )
    return out if np.ndim(x) else float(out)


def generate_mock(cfg: MockConfig):
    """Draw a noisy sample from ``cfg``.

    Returns
    -------
    data : DataSet
        Evenly spaced grid over mu +- x_range_sigmas * sigma, constant noise
        ``eps = max(truth) / snr_peak``.
    truth : numpy.ndarray
        Noise-free profile on the same grid.
    """
    gen = cfg.generating
    half = cfg.x_range_sigmas * gen.sigma
    x = np.linspace(gen.mu - half, gen.mu + half, cfg.n_data)
    truth = eval_generating(gen, x)
    eps = np.full(cfg.n_data, truth.max() / cfg.snr_peak)
    rng = np.random.default_rng(
        np.random.SeedSequence(int(cfg.seed), spawn_key=(_MOCK_STREAM_TAG,))
    )
    y = truth + eps * rng.standard_normal(cfg.n_data)
    return DataSet(x, y, eps), truth


# --------------------------------------------------------------------------
# file I/O
# --------------------------------------------------------------------------

def _fmt(v):
    # repr of a Python float is the shortest string that round-trips exactly
    return repr(float(v))


def _write_csv(path, header, columns, comments=()):
    path = Path(path)
    lines = [f"# {c}" for c in comments]
    lines.append(",".join(header))
    for row in zip(*columns):
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_csv(path, header):
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise DataFormatError("empty file")
    got = [h.strip() for h in lines[0].split(",")]
    if got != list(header):
        raise DataFormatError(
            f"expected header {','.join(header)!r}, got {lines[0]!r}"
        )
    rows = []
    for k, ln in enumerate(lines[1:], start=1):
        parts = ln.split(",")
        if len(parts) != len(header):
            raise DataFormatError(
                f"row {k}: expected {len(header)} fields, got {len(parts)}", row=k
            )
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise DataFormatError(f"row {k}: non-numeric field in {ln!r}", row=k) from None
    return np.array(rows, dtype=float).reshape(-1, len(header))


def save_dataset(ds: DataSet, path, comments=()):
    """Write ``x,y,eps`` CSV. ``comments`` become leading ``#`` lines."""
    _write_csv(path, ("x", "y", "eps"), (ds.x, ds.y, ds.eps), comments)


def load_dataset(path) -> DataSet:
    """Read and validate an ``x,y,eps`` CSV file.

    Raises
    ------
    DataFormatError
        On malformed rows, too few rows, non-increasing x or non-positive
        noise; the message names the offending row.
    """
    arr = _read_csv(path, ("x", "y", "eps"))
    if arr.shape[0] < 3:
        raise DataFormatError("need at least 3 points")
    x, y, eps = arr.T
    for k in range(arr.shape[0]):
        if not (np.isfinite(x[k]) and np.isfinite(y[k]) and np.isfinite(eps[k])):
            raise DataFormatError(f"non-finite value at row {k + 1}", row=k + 1)
        if not eps[k] > 0:
            raise DataFormatError(f"non-positive noise at row {k + 1}", row=k + 1)
        if k and not x[k] > x[k - 1]:
            raise DataFormatError(f"non-increasing x at row {k + 1}", row=k + 1)
    return DataSet(x, y, eps)


def save_truth(x, y0, path, comments=()):
    _write_csv(path, ("x", "y0"), (x, y0), comments)


def load_truth(path):
    """Read an ``x,y0`` truth file; returns ``(x, y0)``."""
    arr = _read_csv(path, ("x", "y0"))
    return arr[:, 0].copy(), arr[:, 1].copy()
