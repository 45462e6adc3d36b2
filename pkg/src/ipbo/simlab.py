"""Simulation designs, replication studies and numerical condition checks."""

import csv
import io
import json
import logging
from dataclasses import dataclass, asdict

import numpy as np

from .core import CoefficientFit, Dataset, standardize, unstandardize_coefficients
from .errors import DimensionTooSmall, DimensionGuard, IPBOError
from . import baselines, solver
from .glasso import fit_glasso, sample_covariance, lambda_max

log = logging.getLogger(__name__)

SIGNAL = 3.0
METHODS = ("sipbo", "ipbo", "lasso", "l21", "mrce")
KRONECKER_GUARD = 30


@dataclass
class ScenarioSpec:
    example_id: int
    n: int
    p: int
    q: int
    sigma: np.ndarray
    lambda_mat: np.ndarray
    b_true: np.ndarray
    seed: int

    def __post_init__(self):
        for name in ("sigma", "lambda_mat"):
            m = getattr(self, name)
            np.linalg.cholesky(m)
            if not np.allclose(m, m.T, atol=0, rtol=0):
                raise ValueError(f"{name} must be symmetric")

    def to_dict(self):
        return {
            "example_id": self.example_id, "n": self.n, "p": self.p, "q": self.q,
            "seed": self.seed, "sigma": self.sigma.tolist(),
            "lambda_mat": self.lambda_mat.tolist(), "b_true": self.b_true.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["example_id"]), int(d["n"]), int(d["p"]), int(d["q"]),
                   np.array(d["sigma"], float), np.array(d["lambda_mat"], float),
                   np.array(d["b_true"], float), int(d["seed"]))


def ar_block(size, rho):
    idx = np.arange(size)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def block_diagonal_ar(d, block, rho):
    m = np.zeros((d, d))
    for start in range(0, d, block):
        stop = min(start + block, d)
        m[start:stop, start:stop] = ar_block(stop - start, rho)
    return m


def leading_first_offdiag(d, lead, value):
    """Identity plus ``value`` on the first off-diagonals of the leading block."""
    m = np.eye(d)
    for i in range(min(lead, d) - 1):
        m[i, i + 1] = m[i + 1, i] = value
    return m


def leading_toeplitz(d, lead, rho):
    """Identity plus ``rho^|i-j|`` off the diagonal inside the leading block."""
    m = np.eye(d)
    m[:lead, :lead] = ar_block(lead, rho)
    return m


def example1_coefficients(p, q):
    """3 on ``k = 3j-2 .. 3j+7`` for ``j = 1..5`` (1-based); truncated to ``q``."""
    b = np.zeros((p, q))
    for j in range(1, 6):
        for k in range(3 * j - 2, 3 * j + 8):
            if k <= q:
                b[j - 1, k - 1] = SIGNAL
    return b


_REQUIREMENTS = {
    1: (5, 1, "p >= 5"),
    2: (5, 1, "p >= 5"),
    3: (5, 22, "p >= 5 and q >= 22"),
    4: (5, 1, "p >= 5"),
    5: (10, 10, "p >= 10 and q >= 10"),
    6: (20, 30, "p >= 20 and q >= 30"),
}


def make_scenario(example_id, p, q, n=100, seed=0):
    """Covariances and true coefficients of simulation examples 1-6.

    Examples 1-4 share the example-1 coefficient matrix, which needs
    ``q >= 22`` to be complete; for smaller ``q`` it is truncated to the
    available columns. Example 6 draws its support from ``seed``.
    """
    if example_id not in _REQUIREMENTS:
        raise DimensionTooSmall(example_id, "example_id in 1..6")
    pmin, qmin, text = _REQUIREMENTS[example_id]
    if p < pmin or q < qmin or n < 2:
        raise DimensionTooSmall(example_id, text + " and n >= 2")
    if example_id == 1:
        sigma, lam, b = block_diagonal_ar(p, 5, 0.8), np.eye(q), example1_coefficients(p, q)
    elif example_id == 2:
        sigma, lam, b = np.eye(p), block_diagonal_ar(q, 5, 0.3), example1_coefficients(p, q)
    elif example_id == 3:
        sigma, lam, b = np.eye(p), leading_toeplitz(q, 22, 0.6), example1_coefficients(p, q)
    elif example_id == 4:
        sigma, lam, b = ar_block(p, 0.5), ar_block(q, 0.3), example1_coefficients(p, q)
    elif example_id == 5:
        sigma, lam = leading_first_offdiag(p, 10, 0.5), leading_first_offdiag(q, 10, 0.5)
        b = np.zeros((p, q))
        b[:10, :10] = SIGNAL
    else:
        sigma, lam = leading_first_offdiag(p, 20, 0.5), leading_first_offdiag(q, 30, 0.5)
        b = np.zeros((p, q))
        rng = np.random.default_rng([6, seed])
        b[:20, :30] = SIGNAL * (rng.random((20, 30)) < 0.6)
    return ScenarioSpec(example_id, n, p, q, sigma, lam, b, seed)


def recovery_scenario(seed=0, p=50, q=5, n=200, per_response=2):
    """Well-conditioned support-recovery instance (``Sigma = Lambda = I``).

    Response ``k`` loads with :data:`SIGNAL` on predictors
    ``k, ..., k + per_response - 1``, so neighbouring responses share
    predictors.
    """
    if p < q + per_response - 1:
        raise DimensionTooSmall(0, "p >= q + per_response - 1")
    b = np.zeros((p, q))
    for k in range(q):
        b[k:k + per_response, k] = SIGNAL
    return ScenarioSpec(0, n, p, q, np.eye(p), np.eye(q), b, seed)


def _draw(chol, n, rng):
    return rng.standard_normal((n, chol.shape[0])) @ chol.T


def sample_data(spec, n=None, seed=0):
    """Raw draw ``X ~ N(0, Sigma)``, ``E ~ N(0, Lambda)``, ``Y = XB + E``.

    Uses numpy's PCG64 generator seeded by ``seed``; X is drawn before E.
    """
    n = spec.n if n is None else n
    rng = np.random.default_rng(seed)
    x = _draw(np.linalg.cholesky(spec.sigma), n, rng)
    e = _draw(np.linalg.cholesky(spec.lambda_mat), n, rng)
    return Dataset.raw(x, x @ spec.b_true + e)


@dataclass
class MetricReport:
    l2_error: float
    mse: float
    support_precision: float
    support_recall: float
    exact_recovery: bool
    model_error: float = float("nan")


def _b_raw(fit, ds):
    b = fit.b_hat if isinstance(fit, CoefficientFit) else np.asarray(fit, float)
    if ds is not None and ds.standardized:
        b_raw, icpt = unstandardize_coefficients(b, ds)
        return b_raw, icpt
    return b, np.zeros(b.shape[1])


def evaluate(fit, spec, test_seed, ds=None, n_test=None):
    """Estimation and prediction metrics against the scenario's truth.

    ``ds`` is the dataset the fit came from; when it is standardized the
    coefficients are mapped back to raw scale before any comparison.
    ``mse`` is the mean squared prediction error per test row on a fresh
    draw; ``model_error`` is ``tr((B_hat - B)' Sigma (B_hat - B))``.
    """
    b_raw, icpt = _b_raw(fit, ds)
    diff = b_raw - spec.b_true
    l2 = float(np.linalg.norm(diff))
    test = sample_data(spec, n_test or spec.n, test_seed)
    resid = test.y - (test.x @ b_raw + icpt)
    mse = float(np.sum(resid * resid) / test.n)
    est = b_raw != 0
    true = spec.b_true != 0
    tp = int(np.sum(est & true))
    prec = tp / int(est.sum()) if est.any() else (1.0 if not true.any() else 0.0)
    rec = tp / int(true.sum()) if true.any() else 1.0
    exact = bool(np.array_equal(est, true))
    me = float(np.trace(diff.T @ spec.sigma @ diff))
    return MetricReport(l2, mse, float(prec), float(rec), exact, me)


def fit_method(ds, method, seed=0, opts=None):
    """Run one estimator under the benchmark tuning protocol.

    SIPBO/IPBO: 5-fold CV for the glasso penalties, BIC over
    ``(lambda1, gamma1, gamma2)``. Baselines: BIC over their own grids.
    """
    method = method.lower()
    opts = solver.SolveOptions() if opts is None else opts
    if method in ("sipbo", "ipbo"):
        return solver.fit_tuned(ds, solver.Mode(method.upper()), seed=seed, opts=opts).fit
    if method == "lasso":
        return baselines.tune_lasso(ds, opts=opts).fit
    if method == "l21":
        return baselines.tune_l21(ds, opts=opts).fit
    if method == "mrce":
        return baselines.tune_mrce(ds, opts=opts).fit
    raise ValueError(f"unknown method {method!r}")


@dataclass
class StudyCell:
    example: int
    p: int
    q: int
    method: str
    metric: str
    mean: float
    std: float
    reps: int
    n_failed: int = 0
    std_degenerate: bool = False


@dataclass
class StudyTable:
    cells: list
    failures: list

    CSV_COLUMNS = ("example", "p", "q", "method", "metric", "mean", "std", "reps")

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        for c in self.cells:
            w.writerow([c.example, c.p, c.q, c.method, c.metric,
                        f"{c.mean:.10g}", f"{c.std:.10g}", c.reps])
        return buf.getvalue()

    def to_json(self):
        return json.dumps({"cells": [asdict(c) for c in self.cells],
                           "failures": self.failures}, indent=2, sort_keys=True)

    def lookup(self, method, metric, p=None, q=None):
        for c in self.cells:
            if c.method == method and c.metric == metric and \
                    (p is None or c.p == p) and (q is None or c.q == q):
                return c
        raise KeyError((method, metric, p, q))


def replication(example_id, p, q, n, methods, seed):
    """One replication: a scenario, a training draw and a test draw."""
    spec = make_scenario(example_id, p, q, n, seed)
    raw = sample_data(spec, n, seed=int(np.random.SeedSequence([seed, 1]).generate_state(1)[0]))
    ds = standardize(raw.x, raw.y)
    test_seed = int(np.random.SeedSequence([seed, 2]).generate_state(1)[0])
    out = {}
    for m in methods:
        try:
            fit = fit_method(ds, m, seed=seed)
            out[m] = evaluate(fit, spec, test_seed, ds=ds)
        except (IPBOError, np.linalg.LinAlgError) as exc:
            out[m] = exc
    return out


def run_study(example_id, dims_grid, n, methods, reps, base_seed=0,
              metrics=("l2_error", "mse")):
    """Mean and standard deviation of each metric over ``reps`` replications.

    Replication ``r`` uses scenario seed ``base_seed + r``; every method sees
    the same data within a replication. Failed fits are logged and excluded.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    methods = [m.lower() for m in methods]
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    cells, failures = [], []
    for p, q in dims_grid:
        values = {m: {k: [] for k in metrics} for m in methods}
        for r in range(reps):
            res = replication(example_id, p, q, n, methods, base_seed + r)
            for m, rep in res.items():
                if isinstance(rep, Exception):
                    failures.append({"p": p, "q": q, "method": m, "rep": r,
                                     "error": f"{type(rep).__name__}: {rep}"})
                    log.warning("replication %d of %s failed: %s", r, m, rep)
                    continue
                for k in metrics:
                    values[m][k].append(getattr(rep, k))
        for m in methods:
            for k in metrics:
                v = np.array(values[m][k], float)
                n_ok = v.size
                mean = float(v.mean()) if n_ok else float("nan")
                std = float(v.std(ddof=1)) if n_ok > 1 else 0.0
                cells.append(StudyCell(example_id, p, q, m, k, mean, std, reps,
                                       reps - n_ok, n_ok <= 1))
    return StudyTable(cells, failures)


@dataclass
class ConditionReport:
    irrep_regression: float
    irrep_omega: float
    irrep_theta: float
    re_lower_bound_estimate: float
    max_degree: int
    max_degree_theta: int = 0
    re_is_heuristic: bool = True


def irrepresentable(c, supports):
    """``max_k ||C_{S_k^c, S_k} C_{S_k}^{-1}||_inf`` (max absolute row sum)."""
    d = c.shape[0]
    worst = 0.0
    for s in supports:
        s = sorted(s)
        if not s or len(s) == d:
            continue
        sc = [j for j in range(d) if j not in set(s)]
        m = c[np.ix_(sc, s)] @ np.linalg.inv(c[np.ix_(s, s)])
        worst = max(worst, float(np.max(np.sum(np.abs(m), axis=1))))
    return worst


def kronecker_irrepresentable(cov, precision, zero_tol=1e-10):
    """``max_{e in S^c} ||T_{e,S} T_{SS}^{-1}||_1`` with ``T = cov (x) cov``.

    ``S`` is the nonzero pattern (diagonal included) of ``precision``,
    indexed over vectorized entries.
    """
    d = cov.shape[0]
    if d > KRONECKER_GUARD:
        raise DimensionGuard(f"Kronecker check limited to dimension {KRONECKER_GUARD}")
    t = np.kron(cov, cov)
    mask = (np.abs(precision) > zero_tol).ravel()
    s = np.flatnonzero(mask)
    sc = np.flatnonzero(~mask)
    if sc.size == 0:
        return 0.0
    m = t[np.ix_(sc, s)] @ np.linalg.inv(t[np.ix_(s, s)])
    return float(np.max(np.sum(np.abs(m), axis=1)))


def _max_degree(precision, zero_tol=1e-10):
    return int(np.max(np.sum(np.abs(precision) > zero_tol, axis=1)))


def re_proxy(c, sparsity, n_draws=10000, seed=0, cone=7.0):
    """Smallest ``D'CD / |D|^2`` over random vectors in the restricted cone.

    Only an upper bound on the restricted-eigenvalue constant: a heuristic.
    """
    d = c.shape[0]
    s = max(1, min(sparsity, d))
    rng = np.random.default_rng(seed)
    best = np.inf
    for _ in range(n_draws):
        a = rng.choice(d, size=s, replace=False)
        delta = np.zeros(d)
        delta[a] = rng.standard_normal(s)
        if s < d:
            rest = np.setdiff1d(np.arange(d), a)
            comp = rng.standard_normal(rest.size)
            budget = cone * np.linalg.norm(delta[a]) * rng.random()
            delta[rest] = comp / np.sum(np.abs(comp)) * budget
        val = float(delta @ c @ delta / (delta @ delta))
        best = min(best, val)
    return best


def check_conditions(source, support=None, small_dims_only=True, n_draws=10000, seed=0):
    """Numerical versions of the restricted-eigenvalue and irrepresentable conditions.

    ``source`` is a :class:`ScenarioSpec` (population covariances) or a
    :class:`~ipbo.core.Dataset` (sample covariances; precision patterns then
    come from a glasso fit at one tenth of the largest off-diagonal entry).
    ``support`` is a list of per-response index sets; by default it is read
    off the scenario's true coefficients.
    """
    if isinstance(source, ScenarioSpec):
        c = source.sigma
        cov_y = source.lambda_mat + source.b_true.T @ source.sigma @ source.b_true
        omega = np.linalg.inv(source.sigma)
        theta = np.linalg.inv(cov_y)
        if support is None:
            support = [set(np.flatnonzero(source.b_true[:, k])) for k in range(source.q)]
    else:
        c = source.x.T @ source.x / source.n
        cov_y = source.y.T @ source.y / source.n
        s_x, s_y = sample_covariance(source.x), sample_covariance(source.y)
        omega = fit_glasso(s_x, 0.1 * max(lambda_max(s_x), 1e-3)).theta
        theta = fit_glasso(s_y, 0.1 * max(lambda_max(s_y), 1e-3)).theta
        if support is None:
            raise ValueError("support is required for a Dataset")
    p, q = c.shape[0], cov_y.shape[0]
    if small_dims_only and (p > KRONECKER_GUARD or q > KRONECKER_GUARD):
        raise DimensionGuard(f"p, q must be <= {KRONECKER_GUARD} for the Kronecker checks")
    irr = irrepresentable(c, support)
    irr_o = kronecker_irrepresentable(c, omega)
    irr_t = kronecker_irrepresentable(cov_y, theta)
    s_max = max((len(s) for s in support), default=1)
    re = re_proxy(c, s_max, n_draws=n_draws, seed=seed)
    return ConditionReport(irr, irr_o, irr_t, re, _max_degree(omega), _max_degree(theta))
