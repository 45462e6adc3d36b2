"""Command-line entry point: ``ipbo simulate | fit | track``.

Exit codes: 0 success, 1 configuration or input error (nothing is written),
2 partial failure (some cells or periods failed, a failure manifest is
written), 3 solver non-convergence (the best iterate is still written).
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
from importlib import resources

import numpy as np

from . import baselines, simlab, solver, tracking
from .glasso import fit_glasso, sample_covariance
from .laplacian import build_laplacian
from .core import PenaltyConfig, read_matrix_csv, standardize, unstandardize_coefficients
from .errors import IPBOError, NotConverged

log = logging.getLogger("ipbo")

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_NOT_CONVERGED = 0, 1, 2, 3
SCHEMA_VERSION = 1

FIT_METHODS = ("sipbo", "ipbo", "lasso", "l21", "mrce")
PENALTY_KEYS = {"lambda1", "lambda2", "lambda3", "gamma1", "gamma2"}
TUNING_KEYS = {"lambda1", "gamma1", "gamma2", "k_folds", "seed", "n_lambda1", "lambda1_ratio"}
MRCE_KEYS = {"lam_b", "lam_theta", "max_outer"}
FIT_KEYS = {"schema_version", "penalty", "tuning", "mrce", "tol", "max_sweeps"}
SIMULATE_KEYS = {"schema_version", "example", "p", "q", "n", "reps", "methods", "seed"}
TRACK_KEYS = {"schema_version", "method", "target_nnz", "count_mode", "gamma1", "gamma2",
              "k_folds", "seed", "refit", "mdte_root", "train_len", "test_len", "n_periods"}


class ConfigError(Exception):
    pass


def demo_path(name):
    """Path of a bundled demo file (``demo_x.csv``, ``demo_y.csv``, ...)."""
    return str(resources.files("ipbo").joinpath("data", name))


def _load_config(path, allowed):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"config needs schema_version {SCHEMA_VERSION}")
    _check_keys(cfg, allowed, "config")
    return cfg


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown field(s) in {where}: {', '.join(unknown)}")


def _check_input(path, flag):
    if path is None:
        raise ConfigError(f"{flag} is required")
    if not os.path.isfile(path):
        raise ConfigError(f"{flag}: no such file {path}")


def _check_out(path):
    if os.path.exists(path) and not os.path.isdir(path):
        raise ConfigError(f"--out {path} exists and is not a directory")


def _write(out, files):
    """Write ``{name: text}`` into ``out`` (created on demand)."""
    os.makedirs(out, exist_ok=True)
    for name, text in files.items():
        with open(os.path.join(out, name), "w", newline="") as fh:
            fh.write(text)


def _dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _merged(args, cfg, name, default=None):
    v = getattr(args, name, None)
    if v is not None:
        return v
    return cfg.get(name, default)


# simulate ------------------------------------------------------------------

def cmd_simulate(args):
    cfg = _load_config(args.config, SIMULATE_KEYS)
    example = int(_merged(args, cfg, "example", 1))
    p = int(_merged(args, cfg, "p", 100))
    q = int(_merged(args, cfg, "q", 50))
    n = int(_merged(args, cfg, "n", 100))
    reps = int(_merged(args, cfg, "reps", 1))
    seed = int(_merged(args, cfg, "seed", 0))
    methods = _merged(args, cfg, "methods", "sipbo")
    if isinstance(methods, str):
        methods = [m.strip().lower() for m in methods.split(",") if m.strip()]
    if example not in range(1, 7):
        raise ConfigError(f"--example must be in 1..6, got {example}")
    if reps < 1 or n < 2:
        raise ConfigError("--reps must be >= 1 and --n >= 2")
    bad = [m for m in methods if m not in simlab.METHODS]
    if bad or not methods:
        raise ConfigError(f"unknown method(s): {', '.join(bad) or '(none)'}")
    try:
        simlab.make_scenario(example, p, q, n, seed)
    except IPBOError as exc:
        raise ConfigError(str(exc)) from None
    _check_out(args.out)
    table = simlab.run_study(example, [(p, q)], n, methods, reps, base_seed=seed)
    files = {"study.csv": table.to_csv(), "study.json": table.to_json() + "\n"}
    if table.failures:
        files["failures.json"] = _dumps(table.failures)
    _write(args.out, files)
    return EXIT_PARTIAL if table.failures else EXIT_OK


# fit -----------------------------------------------------------------------

def _read_xy(args):
    if args.demo:
        x_path, y_path = demo_path("demo_x.csv"), demo_path("demo_y.csv")
    else:
        _check_input(args.x, "--x")
        _check_input(args.y, "--y")
        x_path, y_path = args.x, args.y
    try:
        x, hx = read_matrix_csv(x_path)
        y, hy = read_matrix_csv(y_path)
    except IPBOError as exc:
        raise ConfigError(f"input parse error: {exc}") from None
    if x.shape[0] != y.shape[0]:
        raise ConfigError(f"x has {x.shape[0]} rows but y has {y.shape[0]}")
    hx = hx or [f"x{j + 1}" for j in range(x.shape[1])]
    hy = hy or [f"y{k + 1}" for k in range(y.shape[1])]
    return x, y, hx, hy


def _number_list(v, key):
    vals = v if isinstance(v, list) else [v]
    try:
        vals = [float(a) for a in vals]
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be a number or list of numbers") from None
    if not vals or min(vals) < 0:
        raise ConfigError(f"{key} must be nonempty and nonnegative")
    return vals


def _fit_plan(cfg, method):
    """Validate the fit config; returns ``(kind, params, opts)``."""
    if "penalty" in cfg and "tuning" in cfg:
        raise ConfigError("give either penalty or tuning, not both")
    mode = solver.Mode(method.upper()) if method in ("sipbo", "ipbo") else solver.Mode.IPBO
    try:
        opts_kw = {}
        if "tol" in cfg:
            opts_kw["tol"] = float(cfg["tol"])
        if "max_sweeps" in cfg:
            opts_kw["max_sweeps"] = int(cfg["max_sweeps"])
        opts = solver.SolveOptions(mode=mode, **opts_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if method == "mrce":
        m = cfg.get("mrce", {})
        _check_keys(m, MRCE_KEYS, "mrce")
        if "penalty" in cfg:
            raise ConfigError("mrce takes its penalties from the mrce block")
        return ("mrce", m, opts)
    if "mrce" in cfg:
        raise ConfigError("the mrce block only applies to --method mrce")
    if "penalty" in cfg:
        _check_keys(cfg["penalty"], PENALTY_KEYS, "penalty")
        try:
            pen = PenaltyConfig(**{k: float(v) for k, v in cfg["penalty"].items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"penalty: {exc}") from None
        return ("fixed", pen, opts)
    tuning = cfg.get("tuning", {})
    _check_keys(tuning, TUNING_KEYS, "tuning")
    for key in ("lambda1", "gamma1", "gamma2"):
        if key in tuning:
            tuning[key] = _number_list(tuning[key], f"tuning.{key}")
    return ("tuned", tuning, opts)


def _graphs(ds, pen, mode):
    """Laplacians from the glasso fits, falling back to their last iterates."""
    ok = True
    mats = [ds.y, ds.x] if mode == solver.Mode.IPBO else [ds.y]
    laps = []
    for m, lam in zip(mats, (pen.lambda2, pen.lambda3)):
        try:
            est = fit_glasso(sample_covariance(m), lam)
        except NotConverged as exc:
            log.warning("%s", exc)
            est, ok = exc.best, False
        laps.append(build_laplacian(est))
    return laps[0], (laps[1] if len(laps) > 1 else None), ok


def _run_fit(ds, method, plan):
    """Returns ``(fit, diagnostics, converged)``."""
    kind, params, opts = plan
    diag = {"method": method}
    if kind == "mrce":
        if "lam_b" in params and "lam_theta" in params:
            try:
                res = baselines.mrce_approx(ds, float(params["lam_b"]), float(params["lam_theta"]),
                                            int(params.get("max_outer", 20)), opts)
                ok = True
            except NotConverged as exc:
                res, ok = exc.best, False
            diag["penalty"] = {"lam_b": float(params["lam_b"]),
                               "lam_theta": float(params["lam_theta"])}
            diag["n_outer"] = res.n_outer
            return res.fit, diag, ok
        tuned = baselines.tune_mrce(ds, max_outer=int(params.get("max_outer", 10)), opts=opts)
        diag["penalty"] = tuned.params
        return tuned.fit, diag, tuned.fit.converged
    if kind == "fixed":
        pen = params
        diag["penalty"] = pen.to_dict()
        graphs_ok = True
        if method in ("sipbo", "ipbo"):
            lap1, lap2, graphs_ok = _graphs(ds, pen, opts.mode)
        try:
            if method in ("sipbo", "ipbo"):
                return solver.fit_b(ds, lap1, lap2, pen, opts), diag, graphs_ok
            if method == "lasso":
                return baselines.lasso(ds, pen.lambda1, opts), diag, True
            return baselines.l21(ds, pen.lambda1, opts), diag, True
        except NotConverged as exc:
            return exc.best, diag, False
    tuning = params
    if method in ("sipbo", "ipbo"):
        kw = {k: tuning[k] for k in ("k_folds", "seed", "n_lambda1", "lambda1_ratio") if k in tuning}
        tf = solver.fit_tuned(ds, solver.Mode(method.upper()),
                              lambda1_values=tuning.get("lambda1"),
                              gamma1_values=tuning.get("gamma1", solver.DEFAULT_GAMMA_GRID),
                              gamma2_values=tuning.get("gamma2", solver.DEFAULT_GAMMA_GRID),
                              opts=opts, **kw)
        rep = tf.report
        diag["penalty"] = tf.penalty.to_dict()
        diag["bic"] = {"best_index": rep.best, "selected_index": rep.selected,
                       "guard_warning": rep.guard_warning,
                       "guard_ok_selected": bool(rep.guard_ok[rep.selected]),
                       "n_grid": len(rep.grid), "not_converged": list(rep.not_converged)}
        return tf.fit, diag, tf.fit.converged
    if method == "lasso":
        tuned = baselines.tune_lasso(ds, tuning.get("lambda1"), opts)
    else:
        tuned = baselines.tune_l21(ds, tuning.get("lambda1"), opts)
    diag["penalty"] = {k: float(v) for k, v in tuned.params.items()}
    return tuned.fit, diag, tuned.fit.converged


def _coef_csv(b_raw, icpt, hx, hy):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["predictor"] + list(hy))
    w.writerow(["(intercept)"] + [repr(float(v)) for v in icpt])
    for name, row in zip(hx, b_raw):
        w.writerow([name] + [repr(float(v)) for v in row])
    return buf.getvalue()


def cmd_fit(args):
    cfg = _load_config(args.config, FIT_KEYS)
    method = args.method.lower()
    if method not in FIT_METHODS:
        raise ConfigError(f"unknown method {method!r}")
    plan = _fit_plan(cfg, method)
    x, y, hx, hy = _read_xy(args)
    _check_out(args.out)
    try:
        ds = standardize(x, y)
    except IPBOError as exc:
        raise ConfigError(str(exc)) from None
    fit, diag, ok = _run_fit(ds, method, plan)
    b_raw, icpt = unstandardize_coefficients(fit, ds)
    diag.update(objective=fit.objective_value, n_sweeps=fit.n_sweeps,
                kkt_residual=fit.kkt_residual, converged=bool(ok and fit.converged),
                n=ds.n, p=ds.p, q=ds.q, n_nonzero=fit.m)
    support = {name: [hx[j] for j in np.flatnonzero(b_raw[:, k])] for k, name in enumerate(hy)}
    _write(args.out, {"coefficients.csv": _coef_csv(b_raw, icpt, hx, hy),
                      "support.json": _dumps(support),
                      "diagnostics.json": _dumps(diag)})
    return EXIT_OK if diag["converged"] else EXIT_NOT_CONVERGED


# track ---------------------------------------------------------------------

def cmd_track(args):
    cfg = _load_config(args.config, TRACK_KEYS)
    _check_input(args.stocks, "--stocks")
    _check_input(args.indices, "--indices")
    try:
        tcfg = tracking.TrackConfig(
            method=str(_merged(args, cfg, "method", "ipbo")).lower(),
            target_nnz=int(_merged(args, cfg, "target_nnz", 10)),
            count_mode=str(_merged(args, cfg, "count_mode", "predictors")),
            gamma1=float(cfg.get("gamma1", 0.01)), gamma2=float(cfg.get("gamma2", 0.01)),
            k_folds=int(cfg.get("k_folds", 5)), seed=int(_merged(args, cfg, "seed", 0)),
            refit=bool(cfg.get("refit", True)), mdte_root=bool(cfg.get("mdte_root", False)))
        n_periods = _merged(args, cfg, "n_periods")
        plan = tracking.RollingPlan(int(_merged(args, cfg, "train_len", 100)),
                                    int(_merged(args, cfg, "test_len", 20)),
                                    None if n_periods is None else int(n_periods))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if plan.test_len < 3:
        raise ConfigError("--test-len must be >= 3")
    try:
        stocks = tracking.ingest_prices(args.stocks)
        indices = tracking.ingest_prices(args.indices)
        s_al, i_al = tracking.align_panels(stocks, indices)
        plan.periods_for(len(s_al.dates))
    except IPBOError as exc:
        raise ConfigError(str(exc)) from None
    _check_out(args.out)
    report = tracking.rolling_track(stocks, indices, plan, tcfg)
    files = {"report.json": report.to_json() + "\n", "periods.csv": report.period_csv()}
    if stocks.kind_labels is not None and indices.kind_labels is not None and report.periods:
        kinds, mat = tracking.attribution(report, stocks.kind_labels, indices.kind_labels)
        files["attribution.csv"] = tracking.attribution_csv(kinds, mat)
    if report.failures:
        files["failures.json"] = _dumps(report.failures)
    _write(args.out, files)
    if not report.periods:
        return EXIT_PARTIAL
    return EXIT_PARTIAL if report.failures else EXIT_OK


# entry point ---------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="ipbo", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a replication study")
    s.add_argument("--example", type=int)
    s.add_argument("--p", type=int)
    s.add_argument("--q", type=int)
    s.add_argument("--n", type=int)
    s.add_argument("--reps", type=int)
    s.add_argument("--methods")
    s.add_argument("--seed", type=int)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit one dataset")
    f.add_argument("--x")
    f.add_argument("--y")
    f.add_argument("--demo", action="store_true", help="use the bundled demo dataset")
    f.add_argument("--method", default="sipbo")
    f.add_argument("--config")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    t = sub.add_parser("track", help="rolling-window index tracking")
    t.add_argument("--stocks")
    t.add_argument("--indices")
    t.add_argument("--train-len", dest="train_len", type=int)
    t.add_argument("--test-len", dest="test_len", type=int)
    t.add_argument("--n-periods", dest="n_periods", type=int)
    t.add_argument("--target-nnz", dest="target_nnz", type=int)
    t.add_argument("--count-mode", dest="count_mode", choices=("cells", "predictors"))
    t.add_argument("--method")
    t.add_argument("--seed", type=int)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_track)
    return ap


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"ipbo: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NotConverged as exc:
        print(f"ipbo: not converged: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
