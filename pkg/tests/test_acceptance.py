"""Acceptance criteria; each test prints one PASS/FAIL line."""

import time

import numpy as np
import pytest

from ipbo import (PenaltyConfig, baselines, build_laplacian, cli, fit_b, fit_glasso,
                  laplacian_gradient, quadratic_form, simlab, solver, standardize, tracking)
from ipbo import glasso
from ipbo.laplacian import signed_difference_sum
from conftest import TRUE_TRACKING_SUPPORT, random_problem, record_acceptance, tracking_panels
from oracles import glasso_dual_value


def test_01_lasso_reduction():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_obj, support_ok = 0.0, True
    for _ in range(50):
        ds = random_problem(rng, n=50, p=20, q=5)
        lam = rng.uniform(0.05, 0.5) * solver.lambda1_max(ds)
        ours = fit_b(ds, pen=PenaltyConfig(lambda1=lam))
        ref = baselines.lasso(ds, lam)
        worst_obj = max(worst_obj, abs(ours.objective_value - ref.objective_value))
        support_ok &= ours.support == ref.support
    elapsed = time.perf_counter() - start
    ok = worst_obj <= 1e-8 and support_ok and elapsed < 10
    record_acceptance(1, ok, f"max objective gap {worst_obj:.2e}, supports equal={support_ok}, "
                             f"{elapsed:.1f}s")
    assert ok


def test_02_laplacian_identity():
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_id, worst_fd = 0.0, 0.0
    for _ in range(200):
        d = int(rng.integers(2, 12))
        a = rng.standard_normal((d, d)) * (rng.random((d, d)) < 0.6)
        a = 0.5 * (a + a.T)
        np.fill_diagonal(a, 0.5 + rng.random(d))
        v = 2 * rng.standard_normal(d)
        lap = build_laplacian(a)
        gap = abs(quadratic_form(lap, v) - signed_difference_sum(a, v)) / (1 + v @ v)
        worst_id = max(worst_id, gap)
        h = 1e-5
        fd = np.array([(quadratic_form(lap, v + h * e) - quadratic_form(lap, v - h * e)) / (2 * h)
                       for e in np.eye(d)])
        g = laplacian_gradient(lap, v)
        worst_fd = max(worst_fd, np.max(np.abs(fd - g)) / max(1.0, np.max(np.abs(g))))
    elapsed = time.perf_counter() - start
    ok = worst_id <= 1e-10 and worst_fd <= 1e-6 and elapsed < 5
    record_acceptance(2, ok, f"identity {worst_id:.1e}, gradient {worst_fd:.1e}, {elapsed:.1f}s")
    assert ok


def test_03_glasso_kkt_and_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(11)
    worst_kkt, n_fits, struct_ok = 0.0, 0, True
    for d in (5, 10, 20, 40):
        for _ in range(3):
            m = rng.standard_normal((30, d))
            s = m.T @ m / 30
            for lam in glasso.default_grid(s, 5, ratio=0.05):
                est = fit_glasso(s, lam)
                n_fits += 1
                struct_ok &= np.array_equal(est.theta, est.theta.T)
                struct_ok &= np.linalg.eigvalsh(est.theta).min() > 0
                worst_kkt = max(worst_kkt, glasso.kkt_residual(
                    s, est.theta, glasso._penalty_matrix(lam, d, True)))
    worst_gap = 0.0
    for i in range(20):
        d = 2 + i % 2
        m = rng.standard_normal((10, d))
        s = m.T @ m / 10
        lam = rng.uniform(0.05, 0.6) * max(glasso.lambda_max(s), 0.1)
        est = fit_glasso(s, lam)
        ours = glasso.objective(s, est.theta, glasso._penalty_matrix(lam, d, True))
        worst_gap = max(worst_gap, abs(ours - glasso_dual_value(s, lam)[0]))
    elapsed = time.perf_counter() - start
    ok = worst_kkt <= 1e-6 and struct_ok and worst_gap <= 1e-5 and elapsed < 30
    record_acceptance(3, ok, f"{n_fits} fits KKT<={worst_kkt:.1e}, symmetric/PD={struct_ok}, "
                             f"oracle gap {worst_gap:.1e}, {elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_04_example1_table(example1_study):
    m = {k: example1_study.lookup(k, "l2_error").mean for k in ("sipbo", "mrce", "l21")}
    band = 2.0 <= m["sipbo"] <= 4.5
    order = m["sipbo"] < m["mrce"] and m["sipbo"] < m["l21"]
    elapsed = example1_study.elapsed
    ok = band and order and elapsed < 20 * 60 and not example1_study.failures
    record_acceptance(4, ok, "mean l2 " + ", ".join(f"{k} {v:.3f}" for k, v in m.items())
                      + f"; band [2.0, 4.5] {'ok' if band else 'missed'}, ordering "
                      f"{'ok' if order else 'violated'}, {len(example1_study.failures)} failed fits, "
                      f"{elapsed / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_05_example6_ordering():
    start = time.perf_counter()
    table = simlab.run_study(6, [(100, 50)], 100, ["ipbo", "l21", "mrce"], reps=10)
    elapsed = time.perf_counter() - start
    m = {k: table.lookup(k, "l2_error").mean for k in ("ipbo", "l21", "mrce")}
    ok = m["ipbo"] < m["l21"] < m["mrce"] and elapsed < 20 * 60 and not table.failures
    record_acceptance(5, ok, "mean l2 " + ", ".join(f"{k} {v:.3f}" for k, v in m.items())
                      + f" (need ipbo < l21 < mrce), {len(table.failures)} failed fits, "
                        f"{elapsed / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_06_support_recovery():
    start = time.perf_counter()
    hits, precision = 0, []
    for seed in range(50):
        spec = simlab.recovery_scenario(seed=seed)
        raw = simlab.sample_data(spec, seed=seed)
        ds = standardize(raw.x, raw.y)
        fit = solver.fit_tuned(ds, solver.Mode.SIPBO, seed=seed).fit
        rep = simlab.evaluate(fit, spec, test_seed=seed + 1000, ds=ds)
        hits += rep.exact_recovery
        precision.append(rep.support_precision)
    elapsed = time.perf_counter() - start
    freq = hits / 50
    ok = freq >= 0.9 and elapsed < 5 * 60
    record_acceptance(6, ok, f"exact recovery {freq:.2f} (need >= 0.9), mean precision "
                             f"{np.mean(precision):.2f}, {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_07_error_scaling_in_p():
    start = time.perf_counter()
    dims = [(p, 20) for p in (50, 100, 200, 400)]
    table = simlab.run_study(2, dims, 100, ["sipbo"], reps=20)
    elapsed = time.perf_counter() - start
    means = [table.lookup("sipbo", "l2_error", p=p).mean for p, _ in dims]
    slope = np.polyfit(np.log([p for p, _ in dims]), means, 1)[0]
    ok = slope > 0 and elapsed < 15 * 60 and not table.failures
    record_acceptance(7, ok, "mean l2 " + ", ".join(f"p={p}: {v:.3f}" for (p, _), v in
                                                   zip(dims, means))
                      + f"; slope {slope:.3f}, {elapsed / 60:.1f} min")
    assert ok


def test_08_tracking_self_consistency():
    start = time.perf_counter()
    stocks, indices, _ = tracking_panels()
    rep = tracking.rolling_track(stocks, indices, tracking.RollingPlan(100, 20), target_nnz=8)
    worst = max(max(p.ate) for p in rep.periods)
    covered = all(set(t) <= set(p.selected[k]) for p in rep.periods
                  for k, t in enumerate(TRUE_TRACKING_SUPPORT))
    alt = [0.01, -0.01, 0.01, -0.01]
    a, m = tracking.ate(alt), tracking.mdte(alt)
    fixtures = float(f"{a:.6g}") == 0.183303 and float(f"{m:.6g}") == 1.33333e-4
    elapsed = time.perf_counter() - start
    ok = (len(rep.periods) == 6 and not rep.failures and worst <= 1e-6 and covered
          and fixtures and elapsed < 60)
    record_acceptance(8, ok, f"{len(rep.periods)} periods, max ATE {worst:.1e}, covered="
                             f"{covered}, ATE {a:.6g}, MDTE {m:.6g}, {elapsed:.1f}s")
    assert ok


def test_09_proportional_correlation():
    rng = np.random.default_rng(9)
    base = np.cumprod(1 + 0.01 * rng.standard_normal(500)) * 100
    panel = np.column_stack([base, 0.37 * base, 12.5 * base])
    r = tracking.correlation_summary(panel)
    ok = bool(np.all(r == 1.0))
    record_acceptance(9, ok, f"min correlation {float(r.min())!r}")
    assert ok


def test_10_cli_determinism(tmp_path):
    stocks, indices, _ = tracking_panels()
    tracking.write_prices(tmp_path / "stocks.csv", stocks)
    tracking.write_prices(tmp_path / "indices.csv", indices)
    same = True
    for run in ("a", "b"):
        assert cli.main(["simulate", "--example", "4", "--p", "30", "--q", "10", "--n", "60",
                         "--reps", "2", "--methods", "sipbo,ipbo,lasso,l21,mrce", "--seed", "3",
                         "--out", str(tmp_path / f"sim_{run}")]) == 0
        assert cli.main(["track", "--stocks", str(tmp_path / "stocks.csv"),
                         "--indices", str(tmp_path / "indices.csv"), "--target-nnz", "8",
                         "--seed", "1", "--out", str(tmp_path / f"track_{run}")]) == 0
    compared = []
    for kind in ("sim", "track"):
        a, b = tmp_path / f"{kind}_a", tmp_path / f"{kind}_b"
        names = sorted(p.name for p in a.iterdir())
        same &= names == sorted(p.name for p in b.iterdir())
        for name in names:
            same &= (a / name).read_bytes() == (b / name).read_bytes()
            compared.append(f"{kind}/{name}")
    record_acceptance(10, same, f"byte-identical: {', '.join(compared)}")
    assert same
