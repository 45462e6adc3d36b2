import json

import numpy as np
import pytest

from ipbo import CoefficientFit, DimensionGuard, DimensionTooSmall, standardize
from ipbo import simlab


def test_example1_coefficients():
    spec = simlab.make_scenario(1, 100, 50)
    nz = np.argwhere(spec.b_true != 0)
    assert len(nz) == 50
    assert np.all(spec.b_true[spec.b_true != 0] == 3.0)
    assert nz[:, 0].max() < 5 and nz[:, 1].max() < 22


def test_example1_sigma_blocks():
    s = simlab.make_scenario(1, 100, 50).sigma
    assert s[0, 1] == pytest.approx(0.8)
    assert s[0, 5] == 0.0
    assert s[4, 5] == 0.0 and s[5, 6] == pytest.approx(0.8)
    assert np.allclose(s, s.T)


def test_example5_lambda():
    lam = simlab.make_scenario(5, 20, 20).lambda_mat
    assert lam[0, 1] == 0.5 and lam[0, 2] == 0.0
    assert np.all(np.diag(lam) == 1.0)
    assert lam[9, 10] == 0.0


def test_example6_support_in_block():
    b = simlab.make_scenario(6, 100, 50, seed=4).b_true
    assert not b[20:].any() and not b[:, 30:].any()
    assert 0.4 < np.mean(b[:20, :30] != 0) < 0.8


@pytest.mark.parametrize("example, p, q", [(3, 100, 10), (5, 9, 20), (6, 100, 20), (7, 10, 10)])
def test_dimension_requirements(example, p, q):
    with pytest.raises(DimensionTooSmall):
        simlab.make_scenario(example, p, q)


def test_scenario_roundtrip():
    spec = simlab.make_scenario(4, 12, 6, seed=2)
    back = simlab.ScenarioSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
    assert np.array_equal(back.sigma, spec.sigma) and np.array_equal(back.b_true, spec.b_true)


def test_noise_covariance_lln():
    spec = simlab.make_scenario(5, 10, 10)
    spec.b_true[:] = 0.0
    ds = simlab.sample_data(spec, n=5000, seed=1)
    s = ds.y.T @ ds.y / ds.n
    assert np.max(np.abs(s[:4, :4] - spec.lambda_mat[:4, :4])) < 0.1


def test_identity_sigma_uncorrelated():
    ds = simlab.sample_data(simlab.make_scenario(2, 10, 5), n=5000, seed=2)
    c = np.corrcoef(ds.x, rowvar=False)
    assert np.max(np.abs(c - np.eye(10))) < 0.05


def test_sampling_deterministic():
    spec = simlab.make_scenario(1, 20, 10)
    a = simlab.sample_data(spec, seed=5)
    b = simlab.sample_data(spec, seed=5)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)


def test_evaluate_perfect_and_null():
    spec = simlab.make_scenario(1, 100, 50)
    perfect = simlab.evaluate(CoefficientFit(spec.b_true.copy()), spec, test_seed=1)
    assert perfect.l2_error == 0.0 and perfect.exact_recovery
    null = simlab.evaluate(CoefficientFit(np.zeros((100, 50))), spec, test_seed=1)
    assert null.l2_error == pytest.approx(21.2132, abs=1e-4)
    assert null.support_recall == 0.0


def test_evaluate_noise_mse():
    spec = simlab.make_scenario(2, 10, 50)
    spec.b_true[:] = 0.0
    spec.lambda_mat = np.eye(50)
    rep = simlab.evaluate(CoefficientFit(np.zeros((10, 50))), spec, test_seed=3, n_test=100)
    assert abs(rep.mse - 50) < 0.15 * 50


def test_evaluate_unstandardizes():
    spec = simlab.make_scenario(2, 10, 6)
    raw = simlab.sample_data(spec, n=200, seed=0)
    ds = standardize(raw.x, raw.y)
    b_std = spec.b_true * ds.x_scales[:, None]
    rep = simlab.evaluate(CoefficientFit(b_std), spec, test_seed=1, ds=ds)
    assert rep.l2_error < 1e-12 and rep.exact_recovery


def test_recovery_scenario_shape():
    spec = simlab.recovery_scenario(seed=3)
    assert spec.b_true.shape == (50, 5)
    assert np.count_nonzero(spec.b_true) == 10
    assert np.array_equal(spec.sigma, np.eye(50))


def test_study_single_rep_flag():
    table = simlab.run_study(2, [(10, 4)], 40, ["lasso"], reps=1)
    cell = table.lookup("lasso", "l2_error")
    assert cell.std == 0.0 and cell.std_degenerate and cell.reps == 1


def test_study_deterministic_and_csv():
    a = simlab.run_study(1, [(20, 10)], 50, ["lasso", "l21"], reps=2, base_seed=3)
    b = simlab.run_study(1, [(20, 10)], 50, ["lasso", "l21"], reps=2, base_seed=3)
    assert a.to_csv() == b.to_csv() and a.to_json() == b.to_json()
    lines = a.to_csv().splitlines()
    assert lines[0] == ",".join(simlab.StudyTable.CSV_COLUMNS)
    assert len(lines) == 1 + 2 * 2


def test_study_rejects_unknown_method():
    with pytest.raises(ValueError):
        simlab.run_study(1, [(20, 10)], 50, ["gflasso"], reps=1)


def test_conditions_orthonormal():
    spec = simlab.make_scenario(2, 10, 5)
    rep = simlab.check_conditions(spec, n_draws=200)
    assert rep.irrep_regression == 0.0
    assert rep.irrep_omega == 0.0
    assert rep.re_is_heuristic


def test_conditions_example1_fixture():
    rep = simlab.check_conditions(simlab.make_scenario(1, 25, 25), n_draws=500)
    assert 0.0 < rep.irrep_regression < 1.0
    assert rep.irrep_regression == pytest.approx(0.8, abs=1e-9)


def test_conditions_guard():
    with pytest.raises(DimensionGuard):
        simlab.check_conditions(simlab.make_scenario(1, 40, 10), n_draws=10)


@pytest.mark.slow
def test_sipbo_beats_lasso_example1(example1_study):
    # the two must differ by more than solver tolerance for the ordering to mean anything
    sipbo = example1_study.lookup("sipbo", "l2_error").mean
    lasso = example1_study.lookup("lasso", "l2_error").mean
    assert sipbo < lasso - 1e-6 * lasso
