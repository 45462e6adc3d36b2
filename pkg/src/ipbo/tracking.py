"""Sparse index tracking on rolling windows of price panels.

Each period fits a sparse regression of index price levels on stock price
levels over a training window, predicts the following test window and scores
the predicted daily returns against the realized ones.
"""

import csv
import datetime
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import baselines, solver
from .core import CoefficientFit, PenaltyConfig, standardize, unstandardize_coefficients
from .errors import (ConstantSeries, EmptyPanel, InsufficientData, IPBOError, MissingLabels,
                     NotConverged, ParseError, WindowMisalignment)
from .glasso import fit_glasso, lambda_max, sample_covariance
from .laplacian import build_laplacian
from .solver import CountMode, Mode

log = logging.getLogger(__name__)

TRADING_DAYS = 252
KIND_ROW = "kind"
TRACK_METHODS = ("ipbo", "sipbo", "lasso", "l21", "mrce")


@dataclass
class PricePanel:
    dates: list
    tickers: list
    prices: np.ndarray
    kind_labels: Optional[list] = None
    n_dropped: int = 0

    def __post_init__(self):
        self.prices = np.asarray(self.prices, dtype=float)
        if self.prices.ndim != 2 or self.prices.shape != (len(self.dates), len(self.tickers)):
            raise ValueError("prices must be dates x tickers")
        if len(self.dates) == 0:
            raise EmptyPanel("panel has no rows")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ValueError("dates must be strictly increasing")
        if not np.all(np.isfinite(self.prices)) or np.any(self.prices <= 0):
            raise ValueError("prices must be finite and positive")
        if self.kind_labels is not None and len(self.kind_labels) != len(self.tickers):
            raise ValueError("one kind label per ticker")
        if len(set(self.tickers)) != len(self.tickers):
            raise ValueError("duplicate tickers")

    @property
    def shape(self):
        return self.prices.shape

    def rows(self, dates):
        pos = {d: i for i, d in enumerate(self.dates)}
        idx = [pos[d] for d in dates]
        return PricePanel(list(dates), list(self.tickers), self.prices[idx],
                          self.kind_labels)


def _parse_date(text, line):
    try:
        return datetime.date.fromisoformat(text.strip())
    except ValueError:
        raise ParseError(line, f"unparseable date {text!r}") from None


def ingest_prices(csv_path):
    """Read a dates x tickers price CSV.

    The header row holds a label for the date column followed by the
    tickers. An optional second row starting with ``kind`` tags each column
    (e.g. close/high/low/open). Rows with the wrong number of cells, an
    unparseable price or a nonpositive price are dropped and counted in
    ``n_dropped``; an unparseable or repeated date is a :class:`ParseError`.
    """
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [(i + 1, r) for i, r in enumerate(rows) if any(c.strip() for c in r)]
    if not rows:
        raise EmptyPanel(f"{csv_path} is empty")
    header_line, header = rows[0]
    tickers = [t.strip() for t in header[1:]]
    if not tickers or any(not t for t in tickers):
        raise ParseError(header_line, "header needs a non-empty ticker per column")
    if len(set(tickers)) != len(tickers):
        raise ParseError(header_line, "duplicate tickers in header")
    body = rows[1:]
    kinds = None
    if body and body[0][1][0].strip().lower() == KIND_ROW:
        line, r = body[0]
        if len(r) != len(header):
            raise ParseError(line, "kind row length differs from header")
        kinds = [c.strip() for c in r[1:]]
        body = body[1:]
    seen = {}
    dropped = 0
    for line, r in body:
        d = _parse_date(r[0], line)
        if d in seen:
            raise ParseError(line, f"repeated date {d.isoformat()}")
        if len(r) != len(header):
            dropped += 1
            continue
        try:
            vals = [float(c) for c in r[1:]]
        except ValueError:
            dropped += 1
            continue
        if not all(math.isfinite(v) and v > 0 for v in vals):
            dropped += 1
            continue
        seen[d] = vals
    if dropped:
        log.warning("%s: dropped %d malformed row(s)", csv_path, dropped)
    if not seen:
        raise EmptyPanel(f"{csv_path} has no valid price rows")
    dates = sorted(seen)
    prices = np.array([seen[d] for d in dates])
    return PricePanel(dates, tickers, prices, kinds, dropped)


def write_prices(path, panel):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date"] + list(panel.tickers))
        if panel.kind_labels is not None:
            w.writerow([KIND_ROW] + list(panel.kind_labels))
        for d, row in zip(panel.dates, panel.prices):
            w.writerow([d.isoformat()] + [repr(float(v)) for v in row])


def returns(series):
    """Simple returns ``(y_t - y_{t-1}) / y_{t-1}`` along the first axis."""
    y = np.asarray(series, dtype=float)
    if np.any(y <= 0):
        raise ValueError("series must be positive")
    return (y[1:] - y[:-1]) / y[:-1]


def _errors(errors):
    e = np.asarray(errors, dtype=float)
    if e.ndim != 1:
        raise ValueError("error series must be one-dimensional")
    if e.size < 2:
        raise InsufficientData(f"need at least 2 tracking errors, got {e.size}")
    return e


def ate(errors):
    """Annualized tracking error ``sqrt(252) * sd(errors)`` (divisor ``T - 1``)."""
    e = _errors(errors)
    return float(math.sqrt(TRADING_DAYS) * np.std(e, ddof=1))


def mdte(errors, root=False):
    """``sum(errors^2) / (T - 1)``; ``root=True`` takes the square root."""
    e = _errors(errors)
    v = float(np.sum(e * e) / (e.size - 1))
    return math.sqrt(v) if root else v


@dataclass(frozen=True)
class RollingPlan:
    train_len: int = 100
    test_len: int = 20
    n_periods: Optional[int] = None

    def __post_init__(self):
        if self.train_len < 1 or self.test_len < 1:
            raise ValueError("train_len and test_len must be >= 1")
        if self.n_periods is not None and self.n_periods < 1:
            raise ValueError("n_periods must be >= 1")

    def periods_for(self, n_rows):
        avail = (n_rows - self.train_len) // self.test_len if n_rows >= self.train_len else 0
        if self.n_periods is None:
            if avail < 1:
                raise WindowMisalignment(
                    f"{n_rows} rows cannot hold {self.train_len} + {self.test_len}")
            return avail
        if self.n_periods > avail:
            raise WindowMisalignment(
                f"{self.n_periods} periods need {self.train_len + self.n_periods * self.test_len}"
                f" rows, panel has {n_rows}")
        return self.n_periods

    def windows(self, n_rows):
        """``(train, test)`` index ranges; test segments tile without overlap."""
        out = []
        for i in range(self.periods_for(n_rows)):
            start = i * self.test_len
            out.append((range(start, start + self.train_len),
                        range(start + self.train_len, start + self.train_len + self.test_len)))
        return out


@dataclass
class TrackConfig:
    method: str = "ipbo"
    target_nnz: int = 10
    count_mode: str = "predictors"
    gamma1: float = 0.01
    gamma2: float = 0.01
    k_folds: int = 5
    seed: int = 0
    refit: bool = True
    mdte_root: bool = False
    mrce_lam_theta_ratio: float = 0.1

    def __post_init__(self):
        if self.method not in TRACK_METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if int(self.target_nnz) < 1:
            raise ValueError("target_nnz must be >= 1")
        CountMode(self.count_mode)
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("gammas must be nonnegative")


@dataclass
class PeriodResult:
    period: int
    train_dates: tuple
    test_dates: list
    index_names: list
    selected: list
    ate: list
    mdte: list
    predictions: np.ndarray
    realized: np.ndarray
    lambda1: float = float("nan")
    weights: Optional[np.ndarray] = None

    @property
    def n_selected(self):
        return [len(s) for s in self.selected]


@dataclass
class TrackingReport:
    periods: list
    failures: list = field(default_factory=list)
    stock_tickers: list = field(default_factory=list)
    index_names: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    PERIOD_COLUMNS = ("period", "index", "ate", "mdte", "mdte_x1e4", "n_selected")

    def mean_ate(self):
        return {name: float(np.mean([p.ate[k] for p in self.periods]))
                for k, name in enumerate(self.index_names)} if self.periods else {}

    def mean_mdte(self):
        return {name: float(np.mean([p.mdte[k] for p in self.periods]))
                for k, name in enumerate(self.index_names)} if self.periods else {}

    def period_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.PERIOD_COLUMNS)
        for p in self.periods:
            for k, name in enumerate(p.index_names):
                w.writerow([p.period, name, f"{p.ate[k]:.10g}", f"{p.mdte[k]:.10g}",
                            f"{p.mdte[k] * 1e4:.10g}", len(p.selected[k])])
        return buf.getvalue()

    def to_dict(self):
        periods = []
        for p in self.periods:
            periods.append({
                "period": p.period,
                "train_start": p.train_dates[0].isoformat(),
                "train_end": p.train_dates[1].isoformat(),
                "test_dates": [d.isoformat() for d in p.test_dates],
                "lambda1": p.lambda1,
                "indices": [{
                    "index": name,
                    "ate": p.ate[k],
                    "mdte": p.mdte[k],
                    "selected": [self.stock_tickers[j] for j in p.selected[k]]
                    if self.stock_tickers else list(p.selected[k]),
                    "predictions": p.predictions[:, k].tolist(),
                } for k, name in enumerate(p.index_names)],
            })
        return {"config": self.config, "index_names": list(self.index_names),
                "mean_ate": self.mean_ate(), "mean_mdte": self.mean_mdte(),
                "periods": periods, "failures": self.failures}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def align_panels(stocks, indices):
    """Inner join of two panels on their dates."""
    common = sorted(set(stocks.dates) & set(indices.dates))
    if not common:
        raise WindowMisalignment("panels share no dates")
    lost = len(stocks.dates) + len(indices.dates) - 2 * len(common)
    if lost:
        log.warning("date alignment dropped %d row(s)", lost)
    return stocks.rows(common), indices.rows(common)


def _fit_penalized(ds, cfg):
    """Sparsity-targeted fit on a standardized training window."""
    count_mode = CountMode(cfg.count_mode)
    capacity = ds.p * ds.q if count_mode == CountMode.CELLS else ds.p
    if cfg.method in ("ipbo", "sipbo"):
        mode = Mode(cfg.method.upper())
        lam2, lam3, _, _ = solver.select_graph_penalties(ds, mode, cfg.k_folds, cfg.seed)
        theta, omega = solver.estimate_graphs(ds, PenaltyConfig(0.0, lam2, lam3), mode)
        lap1 = build_laplacian(theta)
        lap2 = build_laplacian(omega) if omega is not None else None
        g2 = cfg.gamma2 if mode == Mode.IPBO else 0.0
        opts = solver.SolveOptions(mode=mode)
        return solver.sparsity_target_tune(ds, lap1, lap2, cfg.gamma1, g2, cfg.target_nnz,
                                           count_mode, opts)
    if cfg.method == "lasso":
        return solver.sparsity_target_tune(ds, None, None, 0.0, 0.0, cfg.target_nnz,
                                           count_mode)
    if cfg.method == "l21":
        return solver.target_bisect(lambda lam, init: baselines.l21(ds, lam, b_init=init),
                                    baselines.l21_lambda_max(ds), cfg.target_nnz,
                                    count_mode, capacity)
    s_y = sample_covariance(ds.y)
    lam_theta = cfg.mrce_lam_theta_ratio * lambda_max(s_y)
    theta0 = fit_glasso(s_y, lam_theta).theta

    def fit_at(lam, init):
        try:
            return baselines.mrce_approx(ds, lam, lam_theta, max_outer=10).fit
        except NotConverged as exc:
            return exc.best.fit

    return solver.target_bisect(fit_at, baselines.mrce_lam_b_max(ds, theta0), cfg.target_nnz,
                                count_mode, capacity)


def _refit(x, y, b_raw):
    """Least squares with intercept on each response's selected predictors."""
    q = y.shape[1]
    b = np.zeros_like(b_raw)
    icpt = y.mean(axis=0).copy()
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    for k in range(q):
        s = np.flatnonzero(b_raw[:, k])
        if s.size == 0:
            continue
        coef, *_ = np.linalg.lstsq(xc[:, s], yc[:, k], rcond=None)
        b[s, k] = coef
        icpt[k] = y[:, k].mean() - x[:, s].mean(axis=0) @ coef
    return b, icpt


def _track_period(i, x_tr, y_tr, x_te, y_te, cfg):
    ds = standardize(x_tr, y_tr)
    lam, fit = _fit_penalized(ds, cfg)
    b_raw, icpt = unstandardize_coefficients(fit, ds)
    if cfg.refit:
        b_raw, icpt = _refit(x_tr, y_tr, b_raw)
    pred = x_te @ b_raw + icpt
    if np.any(pred <= 0):
        raise IPBOError(f"period {i}: nonpositive predicted price")
    err = returns(y_te) - returns(pred)
    ates = [ate(err[:, k]) for k in range(err.shape[1])]
    mdtes = [mdte(err[:, k], root=cfg.mdte_root) for k in range(err.shape[1])]
    selected = [np.flatnonzero(b_raw[:, k]).tolist() for k in range(b_raw.shape[1])]
    return lam, selected, ates, mdtes, pred, b_raw


def rolling_track(stocks, indices, plan=RollingPlan(), config=None, **overrides):
    """Rolling-window index tracking.

    For each period: standardize the training slice, fit the configured
    method with its penalty bisected to ``target_nnz`` selected items,
    predict test-window prices (optionally after a least-squares refit on
    the selected support), convert realized and predicted prices to returns
    and score them with :func:`ate` and :func:`mdte`. A test window of
    ``L`` prices yields ``L - 1`` returns. Failed periods are recorded in
    ``failures`` and skipped.
    """
    cfg = config if config is not None else TrackConfig(**overrides)
    if config is not None and overrides:
        raise TypeError("pass either config or keyword overrides")
    if plan.test_len < 3:
        raise InsufficientData("test_len must be >= 3 to score two returns")
    stocks, indices = align_panels(stocks, indices)
    x_all, y_all = stocks.prices, indices.prices
    periods, failures = [], []
    for i, (tr, te) in enumerate(plan.windows(len(stocks.dates))):
        x_tr, y_tr = x_all[tr.start:tr.stop], y_all[tr.start:tr.stop]
        x_te, y_te = x_all[te.start:te.stop], y_all[te.start:te.stop]
        try:
            lam, sel, ates, mdtes, pred, b_raw = _track_period(i, x_tr, y_tr, x_te, y_te, cfg)
        except (IPBOError, np.linalg.LinAlgError) as exc:
            failures.append({"period": i, "error": f"{type(exc).__name__}: {exc}"})
            log.warning("period %d failed: %s", i, exc)
            continue
        periods.append(PeriodResult(
            i, (stocks.dates[tr.start], stocks.dates[tr.stop - 1]),
            list(stocks.dates[te.start:te.stop]), list(indices.tickers), sel, ates, mdtes,
            pred, y_te.copy(), float(lam), b_raw))
    cfg_dict = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    cfg_dict.update(train_len=plan.train_len, test_len=plan.test_len)
    return TrackingReport(periods, failures, list(stocks.tickers), list(indices.tickers),
                          cfg_dict)


def _kind_order(labels):
    canonical = ("close", "high", "low", "open")
    uniq = set(labels)
    if uniq <= set(canonical):
        return [k for k in canonical if k in uniq]
    return sorted(uniq)


def attribution(report, predictor_kinds, response_kinds, kinds=None):
    """Average share of each predictor kind among a response kind's selections.

    Entry ``[a, b]`` is the fraction of predictors of kind ``kinds[a]``
    among those selected for responses of kind ``kinds[b]``, averaged over
    every (period, response) pair of that kind with a nonempty selection.
    Columns therefore sum to one wherever anything was selected; a response
    kind with no selections at all gives a column of NaN.

    Returns ``(kinds, matrix)``.
    """
    if predictor_kinds is None or response_kinds is None:
        raise MissingLabels("attribution needs kind labels for predictors and responses")
    predictor_kinds = list(predictor_kinds)
    response_kinds = list(response_kinds)
    if kinds is None:
        kinds = _kind_order(predictor_kinds + response_kinds)
    col = {k: i for i, k in enumerate(kinds)}
    if any(k not in col for k in predictor_kinds + response_kinds):
        raise MissingLabels("a label is missing from the kind list")
    total = np.zeros((len(kinds), len(kinds)))
    count = np.zeros(len(kinds))
    pk = np.array([col[k] for k in predictor_kinds])
    for p in report.periods:
        if len(p.selected) != len(response_kinds):
            raise MissingLabels("one kind label per response is required")
        for k, sel in enumerate(p.selected):
            if not len(sel):
                continue
            share = np.bincount(pk[np.asarray(sel, dtype=int)], minlength=len(kinds))
            b = col[response_kinds[k]]
            total[:, b] += share / len(sel)
            count[b] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        mat = total / count[None, :]
    return list(kinds), mat


def attribution_csv(kinds, matrix):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["predictor_kind"] + list(kinds))
    for a, row in zip(kinds, matrix):
        w.writerow([a] + [f"{v:.10g}" for v in row])
    return buf.getvalue()


def correlation_summary(indices):
    """Pearson correlation matrix of the panel's price columns.

    Values within a few rounding units of +-1 are reported as exactly +-1.
    """
    y = indices.prices if isinstance(indices, PricePanel) else np.asarray(indices, float)
    if y.shape[0] < 2:
        raise InsufficientData("need at least 2 dates")
    yc = y - y.mean(axis=0)
    norms = np.sqrt(np.sum(yc * yc, axis=0))
    scale = np.max(np.abs(y), axis=0)
    flat = norms <= 1e-12 * np.maximum(scale, 1.0) * math.sqrt(y.shape[0])
    if np.any(flat):
        raise ConstantSeries(f"constant series in column(s) {np.flatnonzero(flat).tolist()}")
    z = yc / norms
    r = z.T @ z
    r = np.clip(0.5 * (r + r.T), -1.0, 1.0)
    snap = np.abs(np.abs(r) - 1.0) <= 8 * np.finfo(float).eps * y.shape[0]
    r[snap] = np.sign(r[snap])
    np.fill_diagonal(r, 1.0)
    return r
