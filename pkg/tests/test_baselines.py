import numpy as np
import pytest

from ipbo import Dataset, NotConverged, SolveOptions, fit_glasso, standardize
from ipbo import baselines, solver
from ipbo.glasso import sample_covariance
from conftest import random_problem
from oracles import lstsq_coefficients

TIGHT = SolveOptions(tol=1e-12, max_sweeps=100_000)


def _orthonormal(rng, n=40, p=5, q=3):
    x = np.sqrt(n) * np.linalg.qr(rng.standard_normal((n, p)))[0]
    y = x @ rng.standard_normal((p, q)) + 0.3 * rng.standard_normal((n, q))
    return Dataset.raw(x, y)


def test_lasso_zero_penalty_is_least_squares(rng):
    ds = random_problem(rng, n=60, p=6, q=3)
    fit = baselines.lasso(ds, 0.0, TIGHT)
    assert np.max(np.abs(fit.b_hat - lstsq_coefficients(ds))) < 1e-6


def test_lasso_zero_above_max(small_ds):
    lmax = solver.lambda1_max(small_ds)
    assert not baselines.lasso(small_ds, lmax).b_hat.any()


def test_lasso_orthonormal_closed_form(rng):
    ds = _orthonormal(rng)
    lam = 0.4
    fit = baselines.lasso(ds, lam, TIGHT)
    z = ds.x.T @ ds.y / ds.n
    expected = np.sign(z) * np.maximum(np.abs(z) - lam / 2, 0.0)
    assert np.allclose(fit.b_hat, expected, atol=1e-10)


def test_lasso_kkt(small_ds):
    fit = baselines.lasso(small_ds, 0.05)
    assert fit.kkt_residual < 1e-5


def test_l21_zero_penalty_is_least_squares(rng):
    ds = random_problem(rng, n=60, p=6, q=3)
    fit = baselines.l21(ds, 0.0, TIGHT)
    assert np.max(np.abs(fit.b_hat - lstsq_coefficients(ds))) < 1e-6


def test_l21_huge_penalty(small_ds):
    fit = baselines.l21(small_ds, 10 * baselines.l21_lambda_max(small_ds))
    assert not fit.b_hat.any()
    assert np.all(baselines.l21_row_slack(small_ds, fit.b_hat, 10 * baselines.l21_lambda_max(small_ds)) <= 0)


def test_l21_single_response_is_lasso(rng):
    ds = random_problem(rng, n=50, p=12, q=1, density=0.4)
    a = baselines.l21(ds, 0.1, TIGHT)
    b = baselines.lasso(ds, 0.1, TIGHT)
    assert np.max(np.abs(a.b_hat - b.b_hat)) < 1e-6


def test_l21_row_sparsity(rng):
    ds = random_problem(rng, n=50, p=15, q=4, density=0.3)
    lam = 0.3 * baselines.l21_lambda_max(ds)
    fit = baselines.l21(ds, lam)
    rows = np.any(fit.b_hat != 0, axis=1)
    assert np.all(np.all(fit.b_hat[rows] != 0, axis=1))
    assert fit.kkt_residual == 0.0
    path = fit.objective_path
    assert all(b <= a + 1e-12 for a, b in zip(path, path[1:]))


def test_mrce_identity_step_is_lasso(small_ds):
    b, _, _ = baselines.mrce_b_step(small_ds, np.eye(small_ds.q), 0.07, TIGHT)
    ref = baselines.lasso(small_ds, 0.07, TIGHT)
    assert np.max(np.abs(b - ref.b_hat)) < 1e-8


def test_mrce_step_kkt_general_theta(small_ds):
    theta = fit_glasso(sample_covariance(small_ds.y), 0.05).theta
    lam = 0.05
    b, _, _ = baselines.mrce_b_step(small_ds, theta, lam, TIGHT)
    grad = -(2.0 / small_ds.n) * small_ds.x.T @ (small_ds.y - small_ds.x @ b) @ theta
    viol = np.where(b != 0, np.abs(grad + lam * np.sign(b)), np.maximum(np.abs(grad) - lam, 0))
    assert viol.max() < 1e-8


def test_mrce_zero_above_max(small_ds):
    s_y = sample_covariance(small_ds.y)
    lam_t = 0.1
    theta0 = fit_glasso(s_y, lam_t).theta
    lmax = baselines.mrce_lam_b_max(small_ds, theta0)
    res = baselines.mrce_approx(small_ds, lmax, lam_t, max_outer=5)
    assert not res.fit.b_hat.any()
    assert np.allclose(res.theta0.theta, theta0)


def test_mrce_objective_monotone():
    ds = random_problem(np.random.default_rng(11), n=30, p=3, q=3, density=0.7)
    res = baselines.mrce_approx(ds, 0.05, 0.05, max_outer=50, opts=TIGHT, glasso_tol=1e-10)
    h = res.half_step_objectives
    assert all(b <= a + 1e-8 for a, b in zip(h, h[1:]))


def test_mrce_not_converged(small_ds):
    with pytest.raises(NotConverged) as info:
        baselines.mrce_approx(small_ds, 0.01, 0.01, max_outer=2, opts=SolveOptions(tol=1e-14))
    assert info.value.best.fit.b_hat.shape == (small_ds.p, small_ds.q)


def test_tuners_return_grid_members(small_ds):
    for tuned, key in ((baselines.tune_lasso(small_ds), "lambda1"),
                       (baselines.tune_l21(small_ds), "lambda")):
        assert tuned.params[key] in tuned.grid
        assert np.argmin(tuned.scores) == tuned.grid.index(tuned.params[key])
    tuned = baselines.tune_mrce(small_ds)
    assert (tuned.params["lam_b"], tuned.params["lam_theta"]) in tuned.grid


def test_mrce_glasso_cap_keeps_result_type(small_ds):
    with pytest.raises(NotConverged) as info:
        baselines.mrce_approx(small_ds, 0.05, 0.05, max_outer=3, glasso_tol=1e-300)
    assert isinstance(info.value.best, baselines.MrceResult)
    assert not info.value.best.fit.converged
