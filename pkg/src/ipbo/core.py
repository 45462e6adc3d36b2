"""Data model, standardization and small numeric primitives."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch, ZeroVarianceColumn, ParseError

STD_TOL = 1e-10


@dataclass(frozen=True)
class Dataset:
    """Paired predictor / response samples.

    When ``standardized`` is true, ``x`` has centered columns with unit
    sample standard deviation (divisor ``n - 1``) and ``y`` is centered only.
    ``x_means``, ``x_scales`` and ``y_means`` map fits back to raw scale.
    """

    x: np.ndarray
    y: np.ndarray
    x_means: np.ndarray
    x_scales: np.ndarray
    y_means: np.ndarray
    standardized: bool = False

    def __post_init__(self):
        if self.x.ndim != 2 or self.y.ndim != 2:
            raise ShapeMismatch("x and y must be 2-D")
        if self.x.shape[0] != self.y.shape[0]:
            raise ShapeMismatch(
                f"row counts differ: x has {self.x.shape[0]}, y has {self.y.shape[0]}")
        if self.n < 2 or self.p < 1 or self.q < 1:
            raise ShapeMismatch("need n >= 2, p >= 1, q >= 1")
        if self.x_means.shape != (self.p,) or self.x_scales.shape != (self.p,):
            raise ShapeMismatch("x_means / x_scales must have length p")
        if self.y_means.shape != (self.q,):
            raise ShapeMismatch("y_means must have length q")
        if np.any(self.x_scales <= 0):
            raise ValueError("x_scales must be strictly positive")

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    @property
    def q(self):
        return self.y.shape[1]

    @classmethod
    def raw(cls, x, y):
        """Wrap arrays without transforming them."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim == 1:
            y = y[:, None]
        return cls(x, y, np.zeros(x.shape[1]), np.ones(x.shape[1]),
                   np.zeros(y.shape[1]), standardized=False)


@dataclass(frozen=True)
class PenaltyConfig:
    lambda1: float = 0.0
    lambda2: float = 0.0
    lambda3: float = 0.0
    gamma1: float = 0.0
    gamma2: float = 0.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "gamma1", "gamma2"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be a finite nonnegative number, got {v}")

    def to_dict(self):
        return {k: float(getattr(self, k))
                for k in ("lambda1", "lambda2", "lambda3", "gamma1", "gamma2")}


@dataclass
class CoefficientFit:
    """Estimated coefficient matrix plus solver diagnostics.

    ``support`` and ``per_response_support`` are derived from the exact
    nonzero pattern of ``b_hat``.
    """

    b_hat: np.ndarray
    objective_value: float = float("nan")
    n_sweeps: int = 0
    converged: bool = True
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    objective_path: list = field(default_factory=list)
    kkt_residual: float = float("nan")
    max_change: float = 0.0
    support: frozenset = field(init=False)
    per_response_support: list = field(init=False)

    def __post_init__(self):
        self.b_hat = np.asarray(self.b_hat, dtype=float)
        rows, cols = np.nonzero(self.b_hat)
        self.support = frozenset(zip(rows.tolist(), cols.tolist()))
        self.per_response_support = [
            frozenset(np.flatnonzero(self.b_hat[:, k]).tolist())
            for k in range(self.b_hat.shape[1])
        ]

    @property
    def m(self):
        return len(self.support)

    @property
    def selected_rows(self):
        return frozenset(np.flatnonzero(np.any(self.b_hat != 0, axis=1)).tolist())

    def diagnostics(self):
        return {
            "objective": float(self.objective_value),
            "n_sweeps": int(self.n_sweeps),
            "converged": bool(self.converged),
            "kkt_residual": float(self.kkt_residual),
            "support_size": self.m,
            "n_selected_rows": len(self.selected_rows),
            "penalty": self.penalty.to_dict(),
        }


def standardize(x_raw, y_raw):
    """Center and scale predictors, center responses.

    Raises :class:`ZeroVarianceColumn` for a constant predictor column and
    :class:`ShapeMismatch` when the row counts differ.
    """
    x = np.asarray(x_raw, dtype=float)
    y = np.asarray(y_raw, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    if x.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"row counts differ: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise ShapeMismatch("need at least two observations")
    x_means = x.mean(axis=0)
    x_scales = x.std(axis=0, ddof=1)
    for j, s in enumerate(x_scales):
        if not s > 0 or s <= 1e-14 * max(1.0, abs(x_means[j])):
            raise ZeroVarianceColumn(j)
    y_means = y.mean(axis=0)
    xs = (x - x_means) / x_scales
    ys = y - y_means
    return Dataset(xs, ys, x_means, x_scales, y_means, standardized=True)


def soft_threshold(z, lam):
    """``sign(z) * max(|z| - lam, 0)``; works elementwise on arrays."""
    if np.ndim(z) == 0:
        z = float(z)
        if z > lam:
            return z - lam
        if z < -lam:
            return z + lam
        return 0.0
    z = np.asarray(z, dtype=float)
    return np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)


def unstandardize_coefficients(fit, ds):
    """Map a standardized-scale fit to raw-scale coefficients and intercepts.

    Returns ``(b_raw, intercept)`` with ``x_raw @ b_raw + intercept`` equal to
    the standardized-model prediction ``x_std @ b_hat + y_means``.
    """
    b = fit.b_hat if isinstance(fit, CoefficientFit) else np.asarray(fit, dtype=float)
    b_raw = b / ds.x_scales[:, None]
    intercept = ds.y_means - ds.x_means @ b_raw
    return b_raw, intercept


def predict(b_raw, intercept, x_raw):
    return np.asarray(x_raw, dtype=float) @ b_raw + intercept


def read_matrix_csv(path):
    """Read a numeric CSV matrix with an optional single header row.

    Returns ``(matrix, header)`` where ``header`` is None when absent.
    Ragged rows raise :class:`ParseError`.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError(1, "empty file")
    header = None
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
    width = len(header) if header is not None else len(rows[0]) if rows else 0
    out = []
    offset = 2 if header is not None else 1
    for i, r in enumerate(rows):
        if len(r) != width:
            raise ParseError(i + offset, f"expected {width} fields, got {len(r)}")
        try:
            out.append([float(c) for c in r])
        except ValueError as exc:
            raise ParseError(i + offset, str(exc)) from None
    if not out:
        raise ParseError(offset, "no data rows")
    return np.array(out, dtype=float), header


def write_matrix_csv(path, m, header=None):
    m = np.atleast_2d(np.asarray(m, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        for row in m:
            w.writerow([repr(float(v)) for v in row])
