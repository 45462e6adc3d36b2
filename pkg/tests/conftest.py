import numpy as np
import pytest

from ipbo import Dataset, standardize

_ACCEPTANCE = []


def record_acceptance(number, ok, detail):
    line = f"acceptance {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    _ACCEPTANCE.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)


def random_problem(rng, n=50, p=20, q=5, density=0.2, noise=0.5, standardized=True):
    x = rng.standard_normal((n, p))
    b = rng.standard_normal((p, q)) * (rng.random((p, q)) < density)
    y = x @ b + noise * rng.standard_normal((n, q))
    return standardize(x, y) if standardized else Dataset.raw(x, y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_ds(rng):
    return random_problem(rng, n=60, p=8, q=4)


@pytest.fixture(scope="session")
def example1_study():
    """Example 1 at n=100, p=100, q=50 over 20 replications (shared by two modules)."""
    import time
    from ipbo import simlab
    start = time.perf_counter()
    table = simlab.run_study(1, [(100, 50)], 100, ["sipbo", "mrce", "l21", "lasso"], reps=20)
    table.elapsed = time.perf_counter() - start
    return table


TRUE_TRACKING_SUPPORT = [[0, 1], [2, 3], [4, 5], [6, 7]]


def tracking_panels(seed=3, n=220, p=30):
    """Stationary stock prices and exact sparse index combinations (zero noise)."""
    import datetime
    from ipbo import tracking
    rng = np.random.default_rng(seed)
    x = rng.uniform(20, 100, p) * (1 + 0.05 * rng.standard_normal((n, p)))
    w = np.zeros((p, len(TRUE_TRACKING_SUPPORT)))
    for k, s in enumerate(TRUE_TRACKING_SUPPORT):
        w[s, k] = rng.uniform(0.5, 1.5, len(s))
    d0 = datetime.date(2020, 1, 1)
    dates = [d0 + datetime.timedelta(days=i) for i in range(n)]
    stocks = tracking.PricePanel(dates, [f"S{j}" for j in range(p)], x)
    indices = tracking.PricePanel(dates, ["A", "B", "C", "D"], x @ w)
    return stocks, indices, w
