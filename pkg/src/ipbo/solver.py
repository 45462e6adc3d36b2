"""Coefficient estimation with Laplacian smoothing penalties.

The coefficient objective is

    (1/n)||Y - XB||_F^2 + lambda1 |B|_1
        + gamma1 sum_j B_j.' L1 B_j. + gamma2 sum_k B_.k' L2 B_.k

with ``L1`` (q x q) built from the response precision estimate and ``L2``
(p x p) from the predictor precision estimate. The gradient of each
quadratic term is taken exactly (``2 gamma L b``).
"""

import enum
import itertools
import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import _kernels
from .core import CoefficientFit, Dataset, PenaltyConfig
from .errors import NotConverged, TargetUnreachable, DimensionMismatch
from .glasso import (PrecisionEstimate, cv_select_lambda, fit_glasso,
                     sample_covariance)
from . import glasso as _glasso
from .laplacian import (LaplacianMatrix, build_laplacian, column_penalty,
                        row_penalty)

log = logging.getLogger(__name__)

RSS_FLOOR = 1e-12


class Mode(str, enum.Enum):
    SIPBO = "SIPBO"
    IPBO = "IPBO"


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-7
    max_sweeps: int = 1000
    active_set: bool = True
    mode: Mode = Mode.SIPBO

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        object.__setattr__(self, "mode", Mode(self.mode))


def _lap_array(lap, d):
    if lap is None:
        return np.zeros((d, d))
    g = lap.gamma if isinstance(lap, LaplacianMatrix) else np.asarray(lap, dtype=float)
    if g.shape != (d, d):
        raise DimensionMismatch(f"Laplacian is {g.shape}, expected {(d, d)}")
    return np.ascontiguousarray(g)


def _effective(pen, lap1, lap2, opts):
    g1 = pen.gamma1 if lap1 is not None else 0.0
    g2 = pen.gamma2 if (lap2 is not None and opts.mode == Mode.IPBO) else 0.0
    return g1, g2


def coefficient_objective(ds, b, lap1=None, lap2=None, pen=PenaltyConfig(),
                          mode=Mode.IPBO):
    """Value of the penalized coefficient objective at ``b``."""
    r = ds.y - ds.x @ b
    val = np.sum(r * r) / ds.n + pen.lambda1 * np.sum(np.abs(b))
    if lap1 is not None and pen.gamma1 > 0:
        val += pen.gamma1 * row_penalty(lap1, b)
    if lap2 is not None and pen.gamma2 > 0 and Mode(mode) == Mode.IPBO:
        val += pen.gamma2 * column_penalty(lap2, b)
    return float(val)


def kkt_violation(ds, b, lap1=None, lap2=None, pen=PenaltyConfig(), mode=Mode.IPBO):
    """Largest subgradient-condition violation over all coordinates.

    For a nonzero coordinate the smooth gradient plus ``lambda1 * sign`` must
    vanish; for a zero coordinate the smooth gradient must lie in
    ``[-lambda1, lambda1]``.
    """
    grad = smooth_gradient(ds, b, lap1, lap2, pen, mode)
    lam = pen.lambda1
    viol = np.where(b != 0, np.abs(grad + lam * np.sign(b)),
                    np.maximum(np.abs(grad) - lam, 0.0))
    return float(viol.max()) if viol.size else 0.0


def smooth_gradient(ds, b, lap1=None, lap2=None, pen=PenaltyConfig(), mode=Mode.IPBO):
    r = ds.y - ds.x @ b
    grad = -(2.0 / ds.n) * (ds.x.T @ r)
    if lap1 is not None and pen.gamma1 > 0:
        grad += 2.0 * pen.gamma1 * (b @ _lap_array(lap1, ds.q))
    if lap2 is not None and pen.gamma2 > 0 and Mode(mode) == Mode.IPBO:
        grad += 2.0 * pen.gamma2 * (_lap_array(lap2, ds.p) @ b)
    return grad


def lambda1_max(ds):
    """Smallest ``lambda1`` for which ``B = 0`` is optimal (any gamma)."""
    return float(np.max(np.abs(2.0 / ds.n * ds.x.T @ ds.y)))


def lambda1_grid(ds, n_points=20, ratio=0.01):
    lmax = lambda1_max(ds)
    return list(np.geomspace(lmax, ratio * lmax, n_points))


def fit_b(ds, lap1=None, lap2=None, pen=PenaltyConfig(), opts=SolveOptions(),
          b_init=None):
    """Minimize the Laplacian-penalized objective by cyclic coordinate descent.

    Sweeps visit responses in the outer loop and predictors in the inner loop.
    With ``opts.active_set`` a full sweep is followed by up to ten sweeps over
    the current nonzeros only. A fit is declared converged when a full sweep
    moves no coordinate by more than ``opts.tol`` and the KKT violation is at
    most ``10 * opts.tol``. ``lap2`` is ignored in SIPBO mode.
    """
    n, p, q = ds.n, ds.p, ds.q
    g1, g2 = _effective(pen, lap1, lap2, opts)
    G1 = _lap_array(lap1 if g1 > 0 else None, q)
    G2 = _lap_array(lap2 if g2 > 0 else None, p)
    X = np.asfortranarray(ds.x)
    Y = np.asfortranarray(ds.y)
    B = np.zeros((p, q)) if b_init is None else np.array(b_init, dtype=float)
    if B.shape != (p, q):
        raise DimensionMismatch("b_init has the wrong shape")
    B = np.ascontiguousarray(B)
    R = np.asfortranarray(Y - X @ B)
    colsq = (2.0 / n) * np.sum(X * X, axis=0)
    eff = PenaltyConfig(pen.lambda1, pen.lambda2, pen.lambda3, g1, g2)
    lap1_used = lap1 if g1 > 0 else None
    lap2_used = lap2 if g2 > 0 else None

    def obj():
        return coefficient_objective(ds, B, lap1_used, lap2_used, eff, Mode.IPBO)

    path = [obj()]
    sweeps = 0
    change = np.inf
    kkt = np.inf
    while sweeps < opts.max_sweeps:
        change = _kernels.ipbo_sweep(X, R, B, colsq, G1, G2, pen.lambda1, g1, g2, False)
        sweeps += 1
        R[:] = Y - X @ B
        path.append(obj())
        if change <= opts.tol:
            kkt = kkt_violation(ds, B, lap1_used, lap2_used, eff, Mode.IPBO)
            if kkt <= 10 * opts.tol:
                break
            continue
        if opts.active_set:
            for _ in range(10):
                if sweeps >= opts.max_sweeps:
                    break
                ch = _kernels.ipbo_sweep(X, R, B, colsq, G1, G2, pen.lambda1, g1, g2, True)
                sweeps += 1
                path.append(obj())
                if ch <= opts.tol:
                    break
            R[:] = Y - X @ B
    else:
        kkt = kkt_violation(ds, B, lap1_used, lap2_used, eff, Mode.IPBO)
    converged = change <= opts.tol and kkt <= 10 * opts.tol
    fit = CoefficientFit(B.copy(), objective_value=path[-1], n_sweeps=sweeps,
                         converged=converged, penalty=pen, objective_path=path,
                         kkt_residual=kkt, max_change=float(change))
    if not converged:
        raise NotConverged(opts.max_sweeps, best=fit, residual=float(change),
                           what="coefficient solver")
    return fit


class TwoStageResult(NamedTuple):
    fit: CoefficientFit
    theta: PrecisionEstimate
    omega: Optional[PrecisionEstimate]


def estimate_graphs(ds, pen, mode, glasso_tol=_glasso.DEFAULT_TOL,
                    glasso_max_iter=_glasso.DEFAULT_MAX_ITER):
    theta = fit_glasso(sample_covariance(ds.y), pen.lambda2, tol=glasso_tol,
                       max_iter=glasso_max_iter)
    omega = None
    if Mode(mode) == Mode.IPBO:
        omega = fit_glasso(sample_covariance(ds.x), pen.lambda3, tol=glasso_tol,
                           max_iter=glasso_max_iter)
    return theta, omega


def two_stage(ds, pen, opts=SolveOptions(), glasso_tol=_glasso.DEFAULT_TOL,
              glasso_max_iter=_glasso.DEFAULT_MAX_ITER):
    """Estimate the graph(s), build the Laplacian(s), then solve for ``B`` once."""
    theta, omega = estimate_graphs(ds, pen, opts.mode, glasso_tol, glasso_max_iter)
    lap1 = build_laplacian(theta)
    lap2 = build_laplacian(omega) if omega is not None else None
    fit = fit_b(ds, lap1, lap2, pen, opts)
    return TwoStageResult(fit, theta, omega)


def joint_objective(ds, b, theta, omega, pen, mode=Mode.IPBO, penalize_diagonal=True):
    """Full objective over ``(B, Theta[, Omega])`` used by the refinement loop."""
    mode = Mode(mode)
    th = getattr(theta, "theta", theta)
    val = coefficient_objective(ds, b, build_laplacian(th), None,
                                PenaltyConfig(pen.lambda1, gamma1=pen.gamma1), Mode.SIPBO)
    pen_t = _glasso._penalty_matrix(pen.lambda2, ds.q, penalize_diagonal)
    val += _glasso.objective(sample_covariance(ds.y), th, pen_t)
    if mode == Mode.IPBO and omega is not None:
        om = getattr(omega, "theta", omega)
        pen_o = _glasso._penalty_matrix(pen.lambda3, ds.p, penalize_diagonal)
        val += _glasso.objective(sample_covariance(ds.x), om, pen_o)
        if pen.gamma2 > 0:
            val += pen.gamma2 * column_penalty(build_laplacian(om), b)
    return float(val)


def coupled_penalties(b_vectors, lam, gamma):
    """Entrywise glasso penalties equivalent to the Laplacian coupling.

    ``b_vectors`` has one column per graph node. For a pair (k, k') the term
    ``gamma * |theta_kk'| * sum (b_k - sign(theta_kk') b_k')^2`` is split over
    the two symmetric entries, giving separate slopes for positive and
    negative entries. Diagonal entries carry ``lam`` only.
    """
    gram = b_vectors.T @ b_vectors
    sq = np.diag(gram)
    diff = sq[:, None] + sq[None, :] - 2.0 * gram
    summ = sq[:, None] + sq[None, :] + 2.0 * gram
    pos = lam + 0.5 * gamma * np.maximum(diff, 0.0)
    neg = lam + 0.5 * gamma * np.maximum(summ, 0.0)
    np.fill_diagonal(pos, lam)
    np.fill_diagonal(neg, lam)
    return pos, neg


@dataclass
class RefineResult:
    fit: CoefficientFit
    theta: PrecisionEstimate
    omega: Optional[PrecisionEstimate]
    n_outer: int
    converged: bool
    objective_path: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.fit, self.theta, self.omega))


def iterative_refine(ds, init, pen, opts=SolveOptions(), max_outer=50,
                     glasso_tol=_glasso.DEFAULT_TOL, outer_tol=None):
    """Alternate graph re-estimation and coefficient re-solving.

    Each graph update minimizes the joint objective over the precision matrix
    with ``B`` held fixed. Because ``|theta| (b - sign(theta) b')^2`` is
    convex and piecewise linear in ``theta``, the update is an exact glasso
    with different slopes for positive and negative entries. The coefficient
    update re-solves :func:`fit_b` with refreshed Laplacians. Stops when
    ``||B_new - B||_F <= tol (1 + ||B||_F)``.
    """
    fit, theta, omega = init[0], init[1], init[2]
    mode = opts.mode
    tol = opts.tol if outer_tol is None else outer_tol
    s_y = sample_covariance(ds.y)
    s_x = sample_covariance(ds.x) if mode == Mode.IPBO else None
    b = fit.b_hat
    path = [joint_objective(ds, b, theta, omega, pen, mode)]
    for m in range(1, max_outer + 1):
        pos, neg = coupled_penalties(b, pen.lambda2, pen.gamma1)
        theta = fit_glasso(s_y, pos, pen_neg=neg, tol=glasso_tol, init=theta)
        theta.lam = pen.lambda2
        lap2 = None
        if mode == Mode.IPBO and omega is not None:
            pos, neg = coupled_penalties(b.T, pen.lambda3, pen.gamma2)
            omega = fit_glasso(s_x, pos, pen_neg=neg, tol=glasso_tol, init=omega)
            omega.lam = pen.lambda3
            lap2 = build_laplacian(omega)
        fit = fit_b(ds, build_laplacian(theta), lap2, pen, opts, b_init=b)
        step = np.linalg.norm(fit.b_hat - b)
        scale = 1.0 + np.linalg.norm(b)
        b = fit.b_hat
        path.append(joint_objective(ds, b, theta, omega, pen, mode))
        if step <= tol * scale:
            return RefineResult(fit, theta, omega, m, True, path)
    res = RefineResult(fit, theta, omega, max_outer, False, path)
    raise NotConverged(max_outer, best=res, what="iterative refinement")


def bic_value(ds, b, support_sizes=None):
    """``sum_k n log(RSS_k) + log(n) |S_k|`` (natural log).

    Returns ``(score, rss)``; the score is +inf when some ``RSS_k`` is below
    the degeneracy floor.
    """
    r = ds.y - ds.x @ b
    rss = np.sum(r * r, axis=0)
    if support_sizes is None:
        support_sizes = np.count_nonzero(b, axis=0)
    if np.any(rss < RSS_FLOOR):
        return float("inf"), rss
    n = ds.n
    return float(np.sum(n * np.log(rss) + np.log(n) * np.asarray(support_sizes))), rss


def small_gamma_guard(b, lambda1, gamma1, gamma2):
    """Small-gamma regime check: ``max(gamma) * max|b| <= lambda1``."""
    return bool(max(gamma1, gamma2) * float(np.max(np.abs(b), initial=0.0)) <= lambda1 * (1 + 1e-12))


@dataclass
class BicReport:
    """Scores of a BIC grid search.

    ``best`` is the plain argmin (ties to the smallest index);
    ``selected`` is the best grid point satisfying the small-gamma guard,
    falling back to ``best`` (with ``guard_warning`` set) when none does.
    """

    grid: list
    scores: list
    best: int
    per_response_rss: np.ndarray
    guard_ok: list
    degenerate: list
    selected: int
    guard_warning: bool = False
    fits: dict = field(default_factory=dict, repr=False)
    not_converged: list = field(default_factory=list)

    @property
    def selected_fit(self):
        return self.fits[self.selected]

    @property
    def selected_triple(self):
        return self.grid[self.selected]

    def to_dict(self):
        return {
            "grid": [list(map(float, t)) for t in self.grid],
            "scores": [float(s) for s in self.scores],
            "best": int(self.best),
            "selected": int(self.selected),
            "guard_ok": [bool(g) for g in self.guard_ok],
            "degenerate": [bool(g) for g in self.degenerate],
            "guard_warning": bool(self.guard_warning),
            "not_converged": [int(i) for i in self.not_converged],
        }


def _argmin(values, mask=None):
    best = None
    for i, v in enumerate(values):
        if mask is not None and not mask[i]:
            continue
        if best is None or v < values[best]:
            best = i
    return best


def bic_tune(ds, lap1, lap2, grid, opts=SolveOptions(), base_penalty=PenaltyConfig(),
             warm_start=True, keep_fits="selected"):
    """Fit every ``(lambda1, gamma1, gamma2)`` triple and score it by BIC.

    Within each ``(gamma1, gamma2)`` pair the fits run from the largest to the
    smallest ``lambda1``, warm-starting from the previous solution.
    """
    grid = [tuple(float(v) for v in t) for t in grid]
    if not grid:
        raise ValueError("grid must be nonempty")
    for t in grid:
        if len(t) != 3 or min(t) < 0:
            raise ValueError(f"bad grid triple {t}")
    scores = [float("inf")] * len(grid)
    rss_rows = [None] * len(grid)
    guard_ok = [False] * len(grid)
    degenerate = [False] * len(grid)
    not_conv = []
    fits = {}
    groups = {}
    for i, (l1, g1, g2) in enumerate(grid):
        groups.setdefault((g1, g2), []).append(i)
    for (g1, g2), idx in groups.items():
        idx = sorted(idx, key=lambda i: -grid[i][0])
        b_prev = None
        for i in idx:
            l1 = grid[i][0]
            pen = PenaltyConfig(l1, base_penalty.lambda2, base_penalty.lambda3, g1, g2)
            try:
                fit = fit_b(ds, lap1, lap2, pen, opts, b_init=b_prev if warm_start else None)
            except NotConverged as exc:
                fit = exc.best
                not_conv.append(i)
            b_prev = fit.b_hat
            score, rss = bic_value(ds, fit.b_hat)
            scores[i] = score
            rss_rows[i] = rss
            degenerate[i] = not np.isfinite(score)
            eff_g2 = g2 if (lap2 is not None and opts.mode == Mode.IPBO) else 0.0
            guard_ok[i] = small_gamma_guard(fit.b_hat, l1, g1, eff_g2)
            fits[i] = fit
    best = _argmin(scores)
    feasible = [g and np.isfinite(s) for g, s in zip(guard_ok, scores)]
    sel = _argmin(scores, feasible)
    warn = sel is None
    if warn:
        sel = best
        log.warning("no BIC grid point satisfies the small-gamma guard; using the plain argmin")
    if keep_fits != "all":
        fits = {i: f for i, f in fits.items() if i in (best, sel)}
    return BicReport(grid, scores, best, np.vstack(rss_rows), guard_ok, degenerate,
                     sel, warn, fits, sorted(not_conv))


class CountMode(str, enum.Enum):
    CELLS = "cells"
    PREDICTORS = "predictors"


def selected_count(b, count_mode):
    if CountMode(count_mode) == CountMode.CELLS:
        return int(np.count_nonzero(b))
    return int(np.count_nonzero(np.any(b != 0, axis=1)))


def target_bisect(fit_at, lmax, target_nnz, count_mode, capacity, max_iter=40,
                  rel_precision=1e-4):
    """Log-bisection for the penalty whose fit selects ``target_nnz`` items.

    ``fit_at(lam, init)`` returns a :class:`CoefficientFit` (``init`` is a
    warm start it may ignore). The search runs over
    ``(1e-6 lmax, lmax]``; ``lmax`` must give the empty model. Among all
    probes with a count not above the target, the highest count wins, ties
    going to the largest penalty. A target the floor penalty cannot reach
    raises :class:`TargetUnreachable` unless it is at or above ``capacity``,
    in which case the floor fit is returned.

    Returns ``(lam_star, fit)``.
    """
    if target_nnz <= 0:
        raise ValueError("target_nnz must be positive")
    count_mode = CountMode(count_mode)
    if lmax <= 0:
        raise TargetUnreachable("responses are orthogonal to every predictor")
    probes = {}

    def probe(lam, init=None):
        try:
            fit = fit_at(lam, init)
        except NotConverged as exc:
            fit = exc.best
        probes[lam] = fit
        return selected_count(fit.b_hat, count_mode)

    hi = float(lmax)
    c_hi = probe(hi)
    if c_hi > target_nnz:
        raise TargetUnreachable(f"the largest penalty already selects {c_hi} > {target_nnz}")
    lo = 1e-6 * hi
    c_lo = probe(lo)
    if c_lo < target_nnz:
        if target_nnz < capacity:
            raise TargetUnreachable(
                f"even lambda={lo:.3g} selects only {c_lo} < {target_nnz}")
        return lo, probes[lo]
    for _ in range(max_iter):
        if hi / lo < 1.0 + rel_precision:
            break
        mid = float(np.sqrt(hi * lo))
        c = probe(mid, init=probes[hi].b_hat)
        if c >= target_nnz:
            lo = mid
            if c == target_nnz and hi / lo < 1.0 + 1e-2:
                break
        else:
            hi = mid
    counts = {lam: selected_count(f.b_hat, count_mode) for lam, f in probes.items()}
    cnt, lam_star = max((c, lam) for lam, c in counts.items() if c <= target_nnz)
    return lam_star, probes[lam_star]


def sparsity_target_tune(ds, lap1, lap2, gamma1, gamma2, target_nnz,
                         count_mode=CountMode.CELLS, opts=SolveOptions(),
                         max_iter=40, rel_precision=1e-4):
    """Pick ``lambda1`` so that the fit selects as close to ``target_nnz`` as possible.

    Bisection in log-``lambda1`` over ``(1e-6 lambda1_max, lambda1_max]``;
    see :func:`target_bisect` for the selection rule.

    Returns ``(lambda1_star, fit)``.
    """
    count_mode = CountMode(count_mode)
    capacity = ds.p * ds.q if count_mode == CountMode.CELLS else ds.p

    def fit_at(lam, init):
        return fit_b(ds, lap1, lap2, PenaltyConfig(lam, gamma1=gamma1, gamma2=gamma2),
                     opts, b_init=init)

    return target_bisect(fit_at, lambda1_max(ds), target_nnz, count_mode, capacity,
                         max_iter, rel_precision)


@dataclass
class TunedFit:
    fit: CoefficientFit
    theta: PrecisionEstimate
    omega: Optional[PrecisionEstimate]
    report: BicReport
    penalty: PenaltyConfig
    lam2_scores: list = field(default_factory=list)
    lam3_scores: list = field(default_factory=list)


DEFAULT_GAMMA_GRID = (0.0, 0.01, 0.03, 0.1)


def select_graph_penalties(ds, mode, k_folds=5, seed=0, cv_grid_points=20):
    """Cross-validated glasso penalties for the response (and predictor) graphs."""
    grid_y = _glasso.default_grid(sample_covariance(ds.y), cv_grid_points)
    lam2, scores2 = cv_select_lambda(ds.y, grid_y, k_folds, seed)
    lam3, scores3 = 0.0, []
    if Mode(mode) == Mode.IPBO:
        grid_x = _glasso.default_grid(sample_covariance(ds.x), cv_grid_points)
        lam3, scores3 = cv_select_lambda(ds.x, grid_x, k_folds, seed + 1)
    return lam2, lam3, scores2, scores3


def fit_tuned(ds, mode=Mode.SIPBO, lambda1_values=None, gamma1_values=DEFAULT_GAMMA_GRID,
              gamma2_values=DEFAULT_GAMMA_GRID, k_folds=5, seed=0, opts=None,
              n_lambda1=20, lambda1_ratio=0.01):
    """Two-stage fit with cross-validated graph penalties and BIC-chosen rest."""
    mode = Mode(mode)
    opts = SolveOptions(mode=mode) if opts is None else SolveOptions(
        opts.tol, opts.max_sweeps, opts.active_set, mode)
    lam2, lam3, sc2, sc3 = select_graph_penalties(ds, mode, k_folds, seed)
    base = PenaltyConfig(0.0, lam2, lam3)
    theta, omega = estimate_graphs(ds, base, mode)
    lap1 = build_laplacian(theta)
    lap2 = build_laplacian(omega) if omega is not None else None
    if lambda1_values is None:
        lambda1_values = lambda1_grid(ds, n_lambda1, lambda1_ratio)
    g2_vals = gamma2_values if mode == Mode.IPBO else (0.0,)
    grid = list(itertools.product(lambda1_values, gamma1_values, g2_vals))
    report = bic_tune(ds, lap1, lap2, grid, opts, base)
    l1, g1, g2 = report.selected_triple
    pen = PenaltyConfig(l1, lam2, lam3, g1, g2)
    fit = report.selected_fit
    fit.penalty = pen
    return TunedFit(fit, theta, omega, report, pen, sc2, sc3)
