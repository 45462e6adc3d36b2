"""Signed graph Laplacians built from precision matrices.

For an adjacency ``A`` (here an estimated precision matrix) the Laplacian is
``D - A`` with ``D = diag(sum_k' |a_kk'|)``. The quadratic form then reads

    v' L v = sum_{k<k'} |a_kk'| (v_k - sign(a_kk') v_k')^2,

so a positive entry pulls ``v_k`` toward ``v_k'`` and a negative entry pulls it
toward ``-v_k'``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonPositiveDiagonal


@dataclass(frozen=True)
class LaplacianMatrix:
    gamma: np.ndarray
    source_degree: np.ndarray

    @property
    def dim(self):
        return self.gamma.shape[0]

    @classmethod
    def zeros(cls, d):
        return cls(np.zeros((d, d)), np.zeros(d))


def build_laplacian(theta):
    """``D - A`` for ``A = theta``; accepts a PrecisionEstimate or an array."""
    a = getattr(theta, "theta", theta)
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch("adjacency must be square")
    a = 0.5 * (a + a.T)
    diag = np.diag(a)
    bad = np.flatnonzero(diag <= 0)
    if bad.size:
        raise NonPositiveDiagonal(int(bad[0]))
    degree = np.abs(a).sum(axis=1)
    gamma = np.diag(degree) - a
    return LaplacianMatrix(gamma, degree)


def _gamma(lap):
    return lap.gamma if isinstance(lap, LaplacianMatrix) else np.asarray(lap, dtype=float)


def quadratic_form(lap, v):
    g = _gamma(lap)
    v = np.asarray(v, dtype=float)
    if v.shape != (g.shape[0],):
        raise DimensionMismatch(f"vector of length {v.shape} for {g.shape[0]}x{g.shape[0]} Laplacian")
    return float(v @ g @ v)


def signed_difference_sum(adjacency, v):
    """Direct evaluation of ``sum_{k<k'} |a_kk'| (v_k - sign(a_kk') v_k')^2``."""
    a = np.asarray(adjacency, dtype=float)
    v = np.asarray(v, dtype=float)
    iu, ju = np.triu_indices(a.shape[0], k=1)
    w = a[iu, ju]
    return float(np.sum(np.abs(w) * (v[iu] - np.sign(w) * v[ju]) ** 2))


def laplacian_gradient(lap, v):
    """Gradient ``2 L v`` of :func:`quadratic_form`."""
    g = _gamma(lap)
    v = np.asarray(v, dtype=float)
    if v.shape != (g.shape[0],):
        raise DimensionMismatch("dimension mismatch")
    return 2.0 * (g @ v)


def row_penalty(lap, b):
    """``sum_j B_j.' L B_j.`` for a p x q coefficient matrix and q x q ``L``."""
    g = _gamma(lap)
    return float(np.sum((b @ g) * b))


def column_penalty(lap, b):
    """``sum_k B_.k' L B_.k`` for a p x q coefficient matrix and p x p ``L``."""
    g = _gamma(lap)
    return float(np.sum((g @ b) * b))
