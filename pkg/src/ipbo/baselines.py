"""Comparison estimators: per-response lasso, row-group (l1/l2) lasso, MRCE."""

import enum
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import CoefficientFit, PenaltyConfig
from .errors import NotConverged
from .glasso import fit_glasso, sample_covariance, PrecisionEstimate
from . import glasso as _glasso
from .solver import SolveOptions, bic_value, lambda1_grid, _argmin


class BaselineKind(str, enum.Enum):
    LASSO = "Lasso"
    L21 = "L21"
    MRCE_APPROX = "MrceApprox"


def lasso_objective(ds, b, lam):
    r = ds.y - ds.x @ b
    return float(np.sum(r * r) / ds.n + lam * np.sum(np.abs(b)))


def lasso(ds, lambda1, opts=SolveOptions(), b_init=None):
    """Per-response lasso of ``(1/n)||Y - XB||_F^2 + lambda1 |B|_1``.

    Uses covariance-update coordinate descent on ``X'X/n``, a different route
    from :func:`ipbo.solver.fit_b`.
    """
    n, p, q = ds.n, ds.p, ds.q
    gram = np.ascontiguousarray(ds.x.T @ ds.x / n)
    xty = ds.x.T @ ds.y / n
    b = np.zeros((p, q)) if b_init is None else np.array(b_init, dtype=float)
    total = 0
    worst = 0.0
    ok = True
    for k in range(q):
        beta = np.ascontiguousarray(b[:, k])
        sweeps, ch = _kernels.lasso_gram_cd(gram, np.ascontiguousarray(xty[:, k]), beta,
                                            float(lambda1), opts.tol, opts.max_sweeps)
        b[:, k] = beta
        total = max(total, sweeps)
        worst = max(worst, ch)
        if ch > opts.tol:
            ok = False
    grad = -2.0 * (ds.x.T @ (ds.y - ds.x @ b)) / n
    kkt = float(np.max(np.where(b != 0, np.abs(grad + lambda1 * np.sign(b)),
                                np.maximum(np.abs(grad) - lambda1, 0.0))))
    fit = CoefficientFit(b, objective_value=lasso_objective(ds, b, lambda1), n_sweeps=total,
                         converged=ok, penalty=PenaltyConfig(lambda1=lambda1),
                         kkt_residual=kkt, max_change=worst)
    if not ok:
        raise NotConverged(opts.max_sweeps, best=fit, residual=worst, what="lasso")
    return fit


def l21_objective(ds, b, lam):
    r = ds.y - ds.x @ b
    return float(np.sum(r * r) / ds.n + lam * np.sum(np.linalg.norm(b, axis=1)))


def l21_row_slack(ds, b, lam):
    """For each zero row, ``||(2/n) X_j'(Y - X_{-j}B_{-j})||_2 - lam`` (<= 0 when certified)."""
    r = ds.y - ds.x @ b
    c = (2.0 / ds.n) * (ds.x.T @ r)
    zero = ~np.any(b != 0, axis=1)
    return np.linalg.norm(c[zero], axis=1) - lam


def l21(ds, lam, opts=SolveOptions(), b_init=None):
    """Row-group lasso by block coordinate descent over rows of ``B``."""
    n, p, q = ds.n, ds.p, ds.q
    X = np.asfortranarray(ds.x)
    Y = np.asfortranarray(ds.y)
    B = np.zeros((p, q)) if b_init is None else np.array(b_init, dtype=float)
    R = np.asfortranarray(Y - X @ B)
    colsq = (2.0 / n) * np.sum(X * X, axis=0)
    path = [l21_objective(ds, B, lam)]
    sweeps = 0
    change = np.inf
    while sweeps < opts.max_sweeps:
        change = _kernels.l21_sweep(X, R, B, colsq, float(lam), False)
        sweeps += 1
        R[:] = Y - X @ B
        path.append(l21_objective(ds, B, lam))
        if change <= opts.tol:
            break
        if opts.active_set:
            for _ in range(10):
                if sweeps >= opts.max_sweeps:
                    break
                ch = _kernels.l21_sweep(X, R, B, colsq, float(lam), True)
                sweeps += 1
                path.append(l21_objective(ds, B, lam))
                if ch <= opts.tol:
                    break
            R[:] = Y - X @ B
    slack = l21_row_slack(ds, B, lam)
    fit = CoefficientFit(B, objective_value=path[-1], n_sweeps=sweeps,
                         converged=change <= opts.tol, penalty=PenaltyConfig(lambda1=lam),
                         objective_path=path,
                         kkt_residual=float(max(slack.max(initial=0.0), 0.0)),
                         max_change=float(change))
    if not fit.converged:
        raise NotConverged(opts.max_sweeps, best=fit, residual=float(change), what="l21")
    return fit


def l21_lambda_max(ds):
    c = (2.0 / ds.n) * (ds.x.T @ ds.y)
    return float(np.max(np.linalg.norm(c, axis=1)))


def mrce_objective(ds, b, theta0, lam_b, lam_theta, penalize_diagonal=True):
    r = ds.y - ds.x @ b
    s_res = r.T @ r / ds.n
    pen_t = _glasso._penalty_matrix(lam_theta, ds.q, penalize_diagonal)
    return float(_glasso.objective(s_res, theta0, pen_t) + lam_b * np.sum(np.abs(b)))


def mrce_b_step(ds, theta0, lam_b, opts=SolveOptions(), b_init=None):
    """Coordinate descent on ``tr[(Y-XB)'(Y-XB) Theta0]/n + lam_b |B|_1``."""
    n, p, q = ds.n, ds.p, ds.q
    X = np.asfortranarray(ds.x)
    Y = np.asfortranarray(ds.y)
    th = np.ascontiguousarray(theta0)
    B = np.zeros((p, q)) if b_init is None else np.array(b_init, dtype=float)
    R = np.asfortranarray(Y - X @ B)
    colsq = (2.0 / n) * np.sum(X * X, axis=0)
    sweeps = 0
    change = np.inf
    while sweeps < opts.max_sweeps:
        change = _kernels.mrce_sweep(X, R, B, colsq, th, float(lam_b), False)
        sweeps += 1
        R[:] = Y - X @ B
        if change <= opts.tol:
            break
        if opts.active_set:
            for _ in range(10):
                if sweeps >= opts.max_sweeps:
                    break
                ch = _kernels.mrce_sweep(X, R, B, colsq, th, float(lam_b), True)
                sweeps += 1
                if ch <= opts.tol:
                    break
            R[:] = Y - X @ B
    return B, sweeps, change


def mrce_lam_b_max(ds, theta0):
    return float(np.max(np.abs((2.0 / ds.n) * ds.x.T @ ds.y @ theta0)))


@dataclass
class MrceResult:
    fit: CoefficientFit
    theta0: PrecisionEstimate
    n_outer: int
    half_step_objectives: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.fit, self.theta0))


def mrce_approx(ds, lam_b, lam_theta, max_outer=20, opts=SolveOptions(),
                glasso_tol=_glasso.DEFAULT_TOL, theta_init=None):
    """Alternating minimization of the MRCE objective from ``B = 0``.

    Each outer step fits the noise precision by glasso on the residual
    covariance and then re-solves ``B`` with that precision fixed. Stops when
    ``||B_new - B||_F <= tol (1 + ||B||_F)``.
    """
    if max_outer < 1:
        raise ValueError("max_outer must be >= 1")
    b = np.zeros((ds.p, ds.q))
    halves = []
    theta = theta_init
    sweeps_total = 0
    converged = False
    glasso_ok = True
    for m in range(1, max_outer + 1):
        r = ds.y - ds.x @ b
        try:
            theta = fit_glasso(sample_covariance(r), lam_theta, tol=glasso_tol, init=theta)
            glasso_ok = True
        except NotConverged as exc:
            theta, glasso_ok = exc.best, False
        halves.append(mrce_objective(ds, b, theta.theta, lam_b, lam_theta))
        b_new, sweeps, change = mrce_b_step(ds, theta.theta, lam_b, opts, b_init=b)
        sweeps_total += sweeps
        halves.append(mrce_objective(ds, b_new, theta.theta, lam_b, lam_theta))
        step = np.linalg.norm(b_new - b)
        scale = 1.0 + np.linalg.norm(b)
        b = b_new
        if step <= opts.tol * scale:
            converged = True
            break
    fit = CoefficientFit(b, objective_value=halves[-1], n_sweeps=sweeps_total,
                         converged=converged and glasso_ok,
                         penalty=PenaltyConfig(lambda1=lam_b, lambda2=lam_theta),
                         objective_path=halves)
    res = MrceResult(fit, theta, m, halves)
    if not glasso_ok:
        raise NotConverged(max_outer, best=res, what="MRCE noise-precision step")
    if not converged and max_outer > 1:
        raise NotConverged(max_outer, best=res, what="MRCE alternation")
    return res


@dataclass
class BaselineTuning:
    fit: CoefficientFit
    params: dict
    scores: list
    grid: list
    extra: object = None


def _fit_or_best(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs), False
    except NotConverged as exc:
        return exc.best, True


def tune_lasso(ds, lambdas=None, opts=SolveOptions()):
    """BIC-tuned lasso over a decreasing grid (warm-started)."""
    lambdas = lambda1_grid(ds) if lambdas is None else sorted(lambdas, reverse=True)
    scores, fits, prev = [], [], None
    for lam in lambdas:
        fit, _ = _fit_or_best(lasso, ds, lam, opts, b_init=prev)
        prev = fit.b_hat
        scores.append(bic_value(ds, fit.b_hat)[0])
        fits.append(fit)
    i = _argmin(scores)
    return BaselineTuning(fits[i], {"lambda1": lambdas[i]}, scores, list(lambdas))


def tune_l21(ds, lambdas=None, opts=SolveOptions(), n_points=20, ratio=0.01):
    """BIC-tuned l21; each nonzero row counts toward every response's support."""
    if lambdas is None:
        lmax = l21_lambda_max(ds)
        lambdas = list(np.geomspace(lmax, ratio * lmax, n_points))
    lambdas = sorted(lambdas, reverse=True)
    scores, fits, prev = [], [], None
    for lam in lambdas:
        fit, _ = _fit_or_best(l21, ds, lam, opts, b_init=prev)
        prev = fit.b_hat
        rows = len(fit.selected_rows)
        scores.append(bic_value(ds, fit.b_hat, np.full(ds.q, rows))[0])
        fits.append(fit)
    i = _argmin(scores)
    return BaselineTuning(fits[i], {"lambda": lambdas[i]}, scores, list(lambdas))


def tune_mrce(ds, lam_b_values=None, lam_theta_values=None, max_outer=10,
              opts=SolveOptions(), n_lam_b=10, ratio=0.01, patience=2):
    """BIC on residual sums of squares over a ``(lam_b, lam_theta)`` grid.

    Without explicit values, the ``lam_b`` path for each ``lam_theta`` starts
    at the smallest penalty that keeps ``B = 0`` after the first glasso step.
    Each path is walked downward and abandoned once BIC has risen ``patience``
    times in a row; the dense end is both slow and never selected.
    """
    s_y = sample_covariance(ds.y)
    if lam_theta_values is None:
        lt_max = _glasso.lambda_max(s_y)
        lam_theta_values = [0.3 * lt_max, 0.1 * lt_max, 0.03 * lt_max]
    grid, scores, results = [], [], []
    for lt in lam_theta_values:
        if lam_b_values is None:
            theta0 = fit_glasso(s_y, lt).theta
            lmax = mrce_lam_b_max(ds, theta0)
            values = np.geomspace(lmax, ratio * lmax, n_lam_b)
        else:
            values = sorted(lam_b_values, reverse=True)
        rises, prev = 0, np.inf
        for lb in values:
            res, _ = _fit_or_best(mrce_approx, ds, float(lb), float(lt), max_outer, opts)
            score = bic_value(ds, res.fit.b_hat)[0]
            grid.append((float(lb), float(lt)))
            scores.append(score)
            results.append(res)
            rises = rises + 1 if score > prev else 0
            prev = score
            if patience and rises >= patience:
                break
    i = _argmin(scores)
    lb, lt = grid[i]
    return BaselineTuning(results[i].fit, {"lam_b": lb, "lam_theta": lt}, scores, grid,
                          extra=results[i].theta0)
