"""Sparse precision-matrix estimation by the graphical lasso.

The estimator minimizes ``tr(S Theta) - log det Theta + sum_ij pen_ij(theta_ij)``
where ``pen_ij`` is an l1 penalty. The penalty may be weighted per entry and
may even differ for positive and negative entries (``pen_neg``); the latter is
what the coupled refinement step in :mod:`ipbo.solver` needs.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import _kernels
from .errors import NonPSDInput, NotConverged, IPBOError

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 200


@dataclass(frozen=True)
class SampleCovariance:
    s: np.ndarray
    n_obs: int


@dataclass
class PrecisionEstimate:
    theta: np.ndarray
    lam: float
    kkt_residual: float
    n_iter: int
    loglik_path: list = field(default_factory=list)
    converged: bool = True

    @property
    def covariance(self):
        return np.linalg.inv(self.theta)

    def n_edges(self):
        """Number of nonzero off-diagonal pairs (each pair counted once)."""
        off = self.theta.copy()
        np.fill_diagonal(off, 0.0)
        return int(np.count_nonzero(off)) // 2


def sample_covariance(m):
    """``M'M/n`` of an already-centered sample matrix."""
    m = np.asarray(m, dtype=float)
    if m.ndim == 1:
        m = m[:, None]
    n = m.shape[0]
    if n < 2:
        raise IPBOError("need at least two observations")
    s = m.T @ m / n
    return SampleCovariance(0.5 * (s + s.T), n)


def lambda_max(s):
    s = _as_matrix(s)
    if s.shape[0] < 2:
        return 0.0
    off = np.abs(s - np.diag(np.diag(s)))
    return float(off.max())


def default_grid(s, n_points=20, ratio=0.01):
    """Log-spaced penalties from ``ratio * lambda_max`` up to ``lambda_max``."""
    lmax = lambda_max(s)
    if lmax <= 0:
        lmax = float(np.max(np.diag(_as_matrix(s)))) or 1.0
    return list(np.geomspace(ratio * lmax, lmax, n_points))


def _as_matrix(s):
    if isinstance(s, SampleCovariance):
        return s.s
    return np.asarray(s, dtype=float)


def _penalty_matrix(lam, d, penalize_diagonal):
    if np.ndim(lam) == 0:
        p = np.full((d, d), float(lam))
    else:
        p = np.array(lam, dtype=float)
        if p.shape != (d, d):
            raise ValueError(f"penalty matrix must be {d}x{d}")
        p = 0.5 * (p + p.T)
    if np.any(p < 0):
        raise ValueError("penalties must be nonnegative")
    if not penalize_diagonal:
        np.fill_diagonal(p, 0.0)
    return p


def penalty_value(theta, pen_pos, pen_neg=None):
    if pen_neg is None:
        pen_neg = pen_pos
    return float(np.sum(pen_pos * np.maximum(theta, 0.0))
                 + np.sum(pen_neg * np.maximum(-theta, 0.0)))


def objective(s, theta, pen_pos, pen_neg=None):
    """Penalized negative log-likelihood; +inf outside the PD cone."""
    s = _as_matrix(s)
    try:
        c = np.linalg.cholesky(theta)
    except np.linalg.LinAlgError:
        return float("inf")
    logdet = 2.0 * np.sum(np.log(np.diag(c)))
    return float(np.sum(s * theta) - logdet + penalty_value(theta, pen_pos, pen_neg))


def kkt_residual(s, theta, pen_pos, pen_neg=None, cov=None):
    """Largest violation of the subgradient optimality conditions.

    With ``G = S - inv(Theta)``: a positive entry needs ``G + pen_pos = 0``,
    a negative entry ``G - pen_neg = 0`` and a zero entry
    ``-pen_neg <= -G <= pen_pos``.
    """
    s = _as_matrix(s)
    if pen_neg is None:
        pen_neg = pen_pos
    if cov is None:
        cov = np.linalg.inv(theta)
    g = s - cov
    viol = np.where(theta > 0, np.abs(g + pen_pos),
                    np.where(theta < 0, np.abs(g - pen_neg),
                             np.maximum(np.maximum(-g - pen_pos, g - pen_neg), 0.0)))
    return float(viol.max())


def _theta_from_w(w, beta):
    d = w.shape[0]
    theta = np.empty((d, d))
    for j in range(d):
        b = beta[j].copy()
        b[j] = 0.0
        tjj = 1.0 / (w[j, j] - w[:, j] @ b)
        theta[:, j] = -b * tjj
        theta[j, j] = tjj
    return 0.5 * (theta + theta.T)


def fit_glasso(s, lam, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
               penalize_diagonal=True, pen_neg=None, init=None):
    """Graphical lasso by block coordinate descent over columns.

    Parameters
    ----------
    s : SampleCovariance or array, shape (d, d)
    lam : float or array, shape (d, d)
        l1 penalty; a matrix gives entrywise weights. When ``pen_neg`` is
        given, ``lam`` is the slope for positive entries only.
    tol : float
        Declared tolerance on the KKT residual.
    max_iter : int
        Cap on outer sweeps over all columns.
    penalize_diagonal : bool
        Whether the diagonal carries the penalty (default yes).
    pen_neg : array, optional
        Penalty slope for negative entries.
    init : PrecisionEstimate or array, optional
        Warm start.

    Returns
    -------
    PrecisionEstimate

    Raises
    ------
    NonPSDInput
        ``s`` has an eigenvalue below -1e-8.
    NotConverged
        The KKT residual did not reach ``tol``; ``best`` holds the last iterate.
    """
    smat = _as_matrix(s)
    smat = 0.5 * (smat + smat.T)
    d = smat.shape[0]
    if smat.shape != (d, d):
        raise ValueError("covariance must be square")
    if np.linalg.eigvalsh(smat).min() < -1e-8:
        raise NonPSDInput("sample covariance has a negative eigenvalue")
    pen_pos = _penalty_matrix(lam, d, penalize_diagonal)
    pen_neg_m = pen_pos if pen_neg is None else _penalty_matrix(pen_neg, d, penalize_diagonal)
    lam_report = float(lam) if np.ndim(lam) == 0 else float(np.max(pen_pos))

    w = smat.copy()
    w[np.diag_indices(d)] += np.diag(pen_pos)
    if np.any(np.diag(w) <= 0):
        raise NonPSDInput("zero diagonal with zero diagonal penalty")
    beta = np.zeros((d, d))
    if init is not None:
        t0 = init.theta if isinstance(init, PrecisionEstimate) else np.asarray(init, float)
        if t0.shape == (d, d) and np.all(np.diag(t0) > 0):
            beta = -t0 / np.diag(t0)[None, :]
            beta = np.ascontiguousarray(beta.T)
            np.fill_diagonal(beta, 0.0)
            try:
                w0 = np.linalg.inv(t0)
                diag = np.diag(w).copy()
                w = 0.5 * (w0 + w0.T)
                w[np.diag_indices(d)] = diag
            except np.linalg.LinAlgError:
                beta = np.zeros((d, d))

    if d == 1:
        theta = np.array([[1.0 / w[0, 0]]])
        res = kkt_residual(smat, theta, pen_pos, pen_neg_m)
        return PrecisionEstimate(theta, lam_report, res, 1,
                                 [objective(smat, theta, pen_pos, pen_neg_m)])

    inner_tol = min(1e-10, tol * 1e-4)
    path = []
    theta = np.diag(1.0 / np.diag(w))
    res = float("inf")
    warm = init is not None
    for it in range(1, max_iter + 1):
        for j in range(d):
            _kernels.glasso_column(w, smat, beta[j], j, pen_pos[:, j].copy(),
                                   pen_neg_m[:, j].copy(), inner_tol, 10000)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            theta = _theta_from_w(w, beta)
        try:
            if not np.all(np.isfinite(theta)):
                raise np.linalg.LinAlgError("non-finite iterate")
            cf = scipy.linalg.cho_factor(theta)
            cov = scipy.linalg.cho_solve(cf, np.eye(d))
        except np.linalg.LinAlgError:
            path.append(float("inf"))
            if warm:
                # a poor warm start can leave W indefinite; start over cold
                warm = False
                w = smat.copy()
                w[np.diag_indices(d)] += np.diag(pen_pos)
                beta = np.zeros((d, d))
            continue
        path.append(objective(smat, theta, pen_pos, pen_neg_m))
        res = kkt_residual(smat, theta, pen_pos, pen_neg_m, cov=cov)
        if res <= tol:
            return PrecisionEstimate(theta, lam_report, res, it, path)
    best = PrecisionEstimate(theta, lam_report, res, max_iter, path, converged=False)
    raise NotConverged(max_iter, best=best, residual=res, what="graphical lasso")


def heldout_score(s_val, theta):
    """Held-out negative log-likelihood ``tr(S_val Theta) - log det Theta``."""
    sign, logdet = np.linalg.slogdet(theta)
    if sign <= 0:
        return float("inf")
    return float(np.sum(_as_matrix(s_val) * theta) - logdet)


def fold_indices(n, k_folds, seed):
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, k_folds)


def cv_select_lambda(m, grid=None, k_folds=5, seed=0, tol=DEFAULT_TOL,
                     max_iter=DEFAULT_MAX_ITER, penalize_diagonal=True):
    """K-fold cross-validated choice of the glasso penalty.

    Each fold's training block gives a fit per grid value (warm-started from
    the next larger value); the score is the mean held-out negative
    log-likelihood. A failed fit disqualifies its grid value. Ties go to the
    earliest grid entry.

    Returns ``(lambda_star, scores)``.
    """
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    if k_folds < 2 or k_folds > n:
        raise ValueError("k_folds must be in [2, n]")
    if grid is None:
        grid = default_grid(sample_covariance(m))
    grid = [float(g) for g in grid]
    if not grid or min(grid) <= 0:
        raise ValueError("grid must be nonempty and strictly positive")
    if len(grid) == 1:
        return grid[0], [float("nan")]
    order = np.argsort(grid)[::-1]
    totals = np.zeros(len(grid))
    for val_idx in fold_indices(n, k_folds, seed):
        train = np.setdiff1d(np.arange(n), val_idx)
        s_tr = sample_covariance(m[train])
        s_val = sample_covariance(m[val_idx]) if len(val_idx) >= 2 else \
            SampleCovariance(m[val_idx].T @ m[val_idx] / max(len(val_idx), 1), len(val_idx))
        warm = None
        for gi in order:
            try:
                est = fit_glasso(s_tr, grid[gi], tol=tol, max_iter=max_iter,
                                 penalize_diagonal=penalize_diagonal, init=warm)
                warm = est
                totals[gi] += heldout_score(s_val, est.theta)
            except IPBOError:
                totals[gi] = float("inf")
    scores = list(totals / k_folds)
    best = int(np.argmin(scores))
    return grid[best], scores
