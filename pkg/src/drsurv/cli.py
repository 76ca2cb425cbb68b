"""Command-line entry point: `drsurv estimate` and `drsurv simulate`.

Configuration precedence: command-line flags override config-file values,
which override built-in defaults. The config file is plain text, one
`key = value` per line; list values are comma-separated.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .data import ColumnSpec, event_grid, load_csv, make_folds
from .errors import DrsurvError
from .estimator import NuisanceConfig, estimate_curve, fit_nuisances
from .inference import (contrast, default_band_interval, equality_test,
                        pointwise_ci_curve, rmst, rmst_difference, uniform_band)
from .learners import PropensitySpec, SurvivalLearnerSpec
from .plots import contrast_plot, study_metric_plot, survival_plot
from .simulation import (MarginalizedCoxStudyEstimator, OneStepStudyEstimator,
                         run_study)

DEFAULT_S_LEARNERS = "km_marginal,aft_exponential,aft_weibull,cox"
DEFAULT_G_LEARNERS = "km_marginal,aft_exponential,aft_weibull,cox"
DEFAULT_PI_LEARNERS = "marginal_mean,logistic"


def parse_survival_learner(token: str) -> SurvivalLearnerSpec:
    """Tokens: km_marginal | aft_<family>[_int] | cox[_int] | piecewise_<bins>."""
    token = token.strip()
    interactions = token.endswith("_int")
    base = token[:-4] if interactions else token
    if base == "km_marginal":
        return SurvivalLearnerSpec("km_marginal")
    if base.startswith("aft_"):
        return SurvivalLearnerSpec("parametric_aft", family=base[4:],
                                   include_treatment_interactions=interactions)
    if base == "cox":
        return SurvivalLearnerSpec("cox_breslow", include_treatment_interactions=interactions)
    if base.startswith("piecewise_"):
        return SurvivalLearnerSpec("piecewise_hazard", bins=int(base.split("_")[1]),
                                   include_treatment_interactions=interactions)
    raise ValueError(f"unknown survival learner {token!r}")


def parse_propensity_learner(token: str) -> PropensitySpec:
    token = token.strip()
    if token in ("marginal_mean", "logistic"):
        return PropensitySpec(token)
    raise ValueError(f"unknown propensity learner {token!r}")


def read_config_file(path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        values[key.strip().replace("-", "_")] = raw.strip()
    return values


def _resolved(args, config: dict, key: str, default, cast=str):
    cli_value = getattr(args, key, None)
    if cli_value is not None:
        return cli_value
    if key in config:
        return cast(config[key])
    return default


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drsurv",
                                     description="Doubly-robust counterfactual "
                                                 "survival curves from right-censored data")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate curves, contrasts and tests from a CSV")
    est.add_argument("--data", required=True, help="input CSV with a header row")
    est.add_argument("--covariates", help="comma-separated covariate column names")
    est.add_argument("--treatment", help="treatment column (default 'a')")
    est.add_argument("--time", help="follow-up time column (default 'y')")
    est.add_argument("--event", help="event indicator column (default 'delta')")
    est.add_argument("--tau", type=float, help="analysis horizon")
    est.add_argument("--folds", type=int, help="cross-fitting folds (default 5)")
    est.add_argument("--alpha", type=float, help="level for intervals (default 0.05)")
    est.add_argument("--eta", type=float, help="truncation constant (default 20)")
    est.add_argument("--band", choices=("fixed", "variable"), help="band style")
    est.add_argument("--t0", type=float, help="variable band: interval start")
    est.add_argument("--t1", type=float, help="variable band: interval end")
    est.add_argument("--paths", type=int, help="Gaussian paths (default 10000)")
    est.add_argument("--seed", type=int, help="RNG seed (default 0)")
    est.add_argument("--out", help="output directory (default ./drsurv_out)")
    est.add_argument("--threads", type=int, help="worker threads (default 1)")
    est.add_argument("--config", help="plain-text key=value configuration file")

    sim = sub.add_parser("simulate", help="run the Monte Carlo study harness")
    sim.add_argument("--n-list", dest="n_list", help="comma-separated sample sizes")
    sim.add_argument("--reps", type=int, help="replicates per sample size (default 200)")
    sim.add_argument("--full", action="store_true",
                     help="full-scale mode: 1000 reps, n = 500..1500")
    sim.add_argument("--boot", type=int, help="bootstrap resamples for the Cox comparator")
    sim.add_argument("--folds", type=int, help="cross-fitting folds (default 2)")
    sim.add_argument("--paths", type=int, help="Gaussian paths per band (default 2000)")
    sim.add_argument("--seed", type=int, help="RNG seed (default 0)")
    sim.add_argument("--out", help="output directory (default ./drsurv_out)")
    sim.add_argument("--threads", type=int, help="parallel workers (default 1)")
    sim.add_argument("--config", help="plain-text key=value configuration file")
    return parser


def cmd_estimate(args) -> int:
    config = read_config_file(args.config) if args.config else {}
    tau = _resolved(args, config, "tau", None, float)
    if tau is None:
        print("error: --tau is required (flag or config file)", file=sys.stderr)
        return 2
    covariates = _resolved(args, config, "covariates", "")
    columns = ColumnSpec(
        covariates=tuple(c.strip() for c in covariates.split(",") if c.strip()),
        treatment=_resolved(args, config, "treatment", "a"),
        time=_resolved(args, config, "time", "y"),
        event=_resolved(args, config, "event", "delta"),
    )
    n_folds = int(_resolved(args, config, "folds", 5, int))
    alpha = float(_resolved(args, config, "alpha", 0.05, float))
    eta = float(_resolved(args, config, "eta", 20.0, float))
    band_style = {"fixed": "fixed_width", "variable": "variable_width"}[
        _resolved(args, config, "band", "fixed")]
    num_paths = int(_resolved(args, config, "paths", 10_000, int))
    seed = int(_resolved(args, config, "seed", 0, int))
    out_dir = Path(_resolved(args, config, "out", "drsurv_out"))

    s_specs = [parse_survival_learner(t)
               for t in _resolved(args, config, "s_learners", DEFAULT_S_LEARNERS).split(",")]
    g_specs = [parse_survival_learner(t)
               for t in _resolved(args, config, "g_learners", DEFAULT_G_LEARNERS).split(",")]
    pi_specs = [parse_propensity_learner(t)
                for t in _resolved(args, config, "pi_learners", DEFAULT_PI_LEARNERS).split(",")]

    data = load_csv(args.data, columns, tau=tau)
    out_dir.mkdir(parents=True, exist_ok=True)

    folds = make_folds(data.n, n_folds, seed=seed)
    folds.to_csv(out_dir / "folds.csv")
    nuis_config = NuisanceConfig(s_specs=s_specs, g_specs=g_specs, pi_specs=pi_specs,
                                 eta_trunc=eta, seed=seed)
    threads = int(_resolved(args, config, "threads", 1, int))
    bundle = fit_nuisances(data, folds, nuis_config, threads=threads)
    grid = event_grid(data)
    curves = {arm: estimate_curve(data, bundle, grid, arm) for arm in (0, 1)}
    for arm in (0, 1):
        curves[arm].covariance_to_csv(out_dir / f"covariance_arm{arm}.csv")

    t0 = _resolved(args, config, "t0", None, float)
    t1 = _resolved(args, config, "t1", None, float)
    if band_style == "variable_width" and (t0 is None or t1 is None):
        d0, d1 = default_band_interval(data.y[data.delta == 1])
        t0 = d0 if t0 is None else t0
        t1 = min(d1, float(grid.times[-1])) if t1 is None else t1
    bands, cis = {}, {}
    for arm in (0, 1):
        cis[arm] = pointwise_ci_curve(curves[arm], alpha)
        bands[arm] = uniform_band(curves[arm], alpha=alpha, style=band_style,
                                  t0=t0, t1=t1, num_paths=num_paths, seed=seed + 11 + arm)

    with open(out_dir / "curves.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "a", "theta_raw", "theta_proj", "sigma2",
                         "ci_lower", "ci_upper", "band_lower", "band_upper"])
        for arm in (0, 1):
            est = curves[arm]
            band = bands[arm]
            band_lo = {t: lo for t, lo in zip(band.times, band.lower)}
            band_hi = {t: hi for t, hi in zip(band.times, band.upper)}
            for j, t in enumerate(grid.times):
                writer.writerow([repr(float(t)), arm, repr(float(est.theta_raw[j])),
                                 repr(float(est.theta_proj[j])), repr(float(est.sigma2[j])),
                                 repr(float(cis[arm][0][j])), repr(float(cis[arm][1][j])),
                                 repr(float(band_lo.get(t, np.nan))),
                                 repr(float(band_hi.get(t, np.nan)))])

    results = {
        "difference": contrast(curves[0], curves[1], "difference", alpha,
                               num_paths=num_paths, seed=seed + 23),
        "survival_ratio": contrast(curves[0], curves[1], "survival_ratio", alpha),
        "risk_ratio": contrast(curves[0], curves[1], "risk_ratio", alpha,
                               num_paths=num_paths, seed=seed + 29),
    }
    scalars = {
        "rmst_control": rmst(curves[0], alpha),
        "rmst_treated": rmst(curves[1], alpha),
        "rmst_difference": rmst_difference(curves[0], curves[1], alpha),
    }
    with open(out_dir / "contrasts.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "contrast", "estimate", "ci_lower", "ci_upper",
                         "band_lower", "band_upper", "masked"])
        for name, res in results.items():
            band_lo = dict(zip(res.band.times, res.band.lower)) if res.band else {}
            band_hi = dict(zip(res.band.times, res.band.upper)) if res.band else {}
            for j, t in enumerate(res.times):
                writer.writerow([repr(float(t)), name, repr(float(res.estimate[j])),
                                 repr(float(res.ci_lower[j])), repr(float(res.ci_upper[j])),
                                 repr(float(band_lo.get(t, np.nan))),
                                 repr(float(band_hi.get(t, np.nan))),
                                 int(res.masked[j])])
        for name, res in scalars.items():
            writer.writerow([repr(float(data.tau)), name, repr(float(res.estimate)),
                             repr(float(res.ci_lower)), repr(float(res.ci_upper)),
                             repr(float("nan")), repr(float("nan")), 0])

    test = equality_test(curves[0], curves[1], weight_kind="uniform",
                         num_null_paths=num_paths, seed=seed + 31)
    (out_dir / "equality_test.json").write_text(json.dumps({
        "statistic": test.statistic, "p_value": test.p_value,
        "weight_kind": test.weight_kind, "num_null_paths": test.num_null_paths,
        "alpha": alpha, "seed": seed}, indent=2) + "\n")

    (out_dir / "superlearner_weights.json").write_text(json.dumps({
        "folds": {str(k): rep for k, rep in bundle.reports.items()},
        "fitted_models": {str(k): {"event": m.surv.describe(),
                                   "censoring": m.cens.describe(),
                                   "propensity": m.prop.describe()}
                          for k, m in bundle.models.items()},
        "truncation": {str(k): v for k, v in bundle.truncation_report.items()},
        "eta": eta}, indent=2, default=float) + "\n")

    survival_plot(out_dir / "survival_curves.svg",
                  {arm: (grid.times, curves[arm].theta_proj) for arm in (0, 1)},
                  bands=bands, ci_curves=cis)
    contrast_plot(out_dir / "survival_difference.svg", results["difference"],
                  "Survival difference (treated - control)", reference=0.0)
    contrast_plot(out_dir / "risk_ratio.svg", results["risk_ratio"],
                  "Risk ratio", reference=1.0)
    print(f"wrote outputs to {out_dir}")
    return 0


def cmd_simulate(args) -> int:
    config = read_config_file(args.config) if args.config else {}
    if args.full:
        ns = [500, 750, 1000, 1250, 1500]
        reps = 1000
    else:
        raw = _resolved(args, config, "n_list", "500,1000")
        ns = [int(v) for v in str(raw).split(",") if str(v).strip()]
        reps = int(_resolved(args, config, "reps", 200, int))
    if not ns or any(n <= 0 for n in ns):
        print("error: --n-list must be positive integers", file=sys.stderr)
        return 2
    seed = int(_resolved(args, config, "seed", 0, int))
    threads = int(_resolved(args, config, "threads", 1, int))
    num_boot = int(_resolved(args, config, "boot", 200, int))
    n_folds = int(_resolved(args, config, "folds", 2, int))
    band_paths = int(_resolved(args, config, "paths", 2000, int))
    out_dir = Path(_resolved(args, config, "out", "drsurv_out"))
    out_dir.mkdir(parents=True, exist_ok=True)

    estimators = {
        "one_step": OneStepStudyEstimator(n_folds=n_folds, band_paths=band_paths),
        "marginalized_cox": MarginalizedCoxStudyEstimator(num_boot=num_boot),
    }
    summary = run_study(ns, reps, estimators, seed=seed, threads=threads)
    summary.to_csv(out_dir / "study.csv")
    study_metric_plot(out_dir / "bias.svg", summary, "bias", "Bias at t = 12", reference=0.0)
    study_metric_plot(out_dir / "variance.svg", summary, "variance", "Variance at t = 12")
    study_metric_plot(out_dir / "mse.svg", summary, "mse", "Mean squared error at t = 12")
    coverage = study_metric_plot  # same machinery, nominal line
    coverage(out_dir / "coverage.svg", summary, "ci_coverage",
             "95% pointwise CI coverage at t = 12", reference=0.95)
    study_metric_plot(out_dir / "band_coverage.svg", summary, "band_coverage",
                      "95% uniform band coverage over [0, 12]", reference=0.95)
    print(f"wrote outputs to {out_dir}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "estimate":
            return cmd_estimate(args)
        return cmd_simulate(args)
    except (DrsurvError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
