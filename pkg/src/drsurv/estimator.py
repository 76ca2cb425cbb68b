"""Cross-fitted one-step estimator of the counterfactual survival curve.

The influence-value computation discretizes every conditional survival
prediction onto the evaluation grid as a step function, so the correction
integral reduces to a cumulative sum. Ratios of survival values use the
0/0 := 1 convention so that absorbing jumps (a step curve hitting exactly
zero) keep the algebra exact; this is what makes the estimator collapse to
the stratified Kaplan-Meier curve when its nuisances are plugged in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, FoldAssignment, TimeGrid, event_grid, make_folds
from .ensemble import (DEFAULT_DENOM_FLOOR, DEFAULT_LOSS_GRID_SIZE, DEFAULT_MAX_ITER,
                       DEFAULT_TOL, iterate_superlearner, propensity_superlearner)
from .errors import FitError
from .learners import PropensitySpec, SurvivalLearnerSpec

DEFAULT_ETA_TRUNC = 20.0  # predictions of pi and G are floored at 1/eta


@dataclass
class NuisanceConfig:
    s_specs: list = field(default_factory=lambda: [
        SurvivalLearnerSpec("km_marginal"),
        SurvivalLearnerSpec("parametric_aft", family="exponential"),
        SurvivalLearnerSpec("parametric_aft", family="weibull"),
        SurvivalLearnerSpec("cox_breslow"),
    ])
    g_specs: list = field(default_factory=lambda: [
        SurvivalLearnerSpec("km_marginal"),
        SurvivalLearnerSpec("parametric_aft", family="exponential"),
        SurvivalLearnerSpec("parametric_aft", family="weibull"),
        SurvivalLearnerSpec("cox_breslow"),
    ])
    pi_specs: list = field(default_factory=lambda: [
        PropensitySpec("marginal_mean"),
        PropensitySpec("logistic"),
    ])
    k_cv: int | None = None  # ensemble CV folds; defaults to the cross-fit K
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    loss_grid_size: int = DEFAULT_LOSS_GRID_SIZE
    loss_floor: float = DEFAULT_DENOM_FLOOR
    eta_trunc: float = DEFAULT_ETA_TRUNC
    seed: int = 0


@dataclass
class FoldNuisance:
    surv: object
    cens: object
    prop: object


@dataclass
class NuisanceBundle:
    """Per-fold nuisance triples; each fold's models saw only its training set."""

    folds: FoldAssignment
    models: dict[int, FoldNuisance]
    eta_trunc: float = DEFAULT_ETA_TRUNC
    reports: dict = field(default_factory=dict)
    truncation_report: dict = field(default_factory=dict)

    @classmethod
    def plug_in(cls, n: int, surv, cens, prop, eta_trunc: float = DEFAULT_ETA_TRUNC):
        """A single shared nuisance triple evaluated on every observation
        (no cross-fitting; used for oracle checks and diagnostics)."""
        folds = FoldAssignment(np.ones(n, dtype=int), seed=0)
        return cls(folds, {1: FoldNuisance(surv, cens, prop)}, eta_trunc=eta_trunc)


def _fit_one_fold(args):
    data, folds, config, k_cv, k = args
    train = data.subset(folds.train_indices(k))
    try:
        ens_s, ens_g, sl_report = iterate_superlearner(
            train, config.s_specs, config.g_specs, k_cv=k_cv, tol=config.tol,
            max_iter=config.max_iter, grid_size=config.loss_grid_size,
            floor=config.loss_floor, seed=config.seed + 49 * k)
        prop, prop_report = propensity_superlearner(
            train, config.pi_specs, k_cv=k_cv, seed=config.seed + 49 * k + 1)
    except FitError as exc:
        raise FitError(f"nuisance fit failed on fold {k}: {exc}") from exc
    report = {"survival_superlearner": sl_report.to_dict(),
              "propensity_superlearner": prop_report}
    return k, FoldNuisance(ens_s, ens_g, prop), report


def fit_nuisances(data: Dataset, folds: FoldAssignment, config: NuisanceConfig,
                  threads: int = 1) -> NuisanceBundle:
    """K independent ensemble fits, one per training set; folds may be fitted
    in parallel worker processes."""
    k_cv = config.k_cv or folds.n_folds
    tasks = [(data, folds, config, k_cv, k) for k in folds.labels]
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_fit_one_fold, tasks))
    else:
        results = [_fit_one_fold(t) for t in tasks]
    models = {k: fold for k, fold, _ in results}
    reports = {k: rep for k, _, rep in results}
    return NuisanceBundle(folds, models, eta_trunc=config.eta_trunc, reports=reports)


# ---------------------------------------------------------------------------
# influence values


def eif_matrix(data: Dataset, bundle: NuisanceBundle, grid: TimeGrid, arm: int) -> np.ndarray:
    """Uncentered influence values, one row per observation, one column per
    grid time; row i is evaluated with the nuisances of i's fold."""
    times = grid.times
    n, T = data.n, times.size
    phi = np.empty((n, T))
    floor = 1.0 / bundle.eta_trunc
    trunc_hits = total_preds = 0
    for k in bundle.folds.labels:
        idx = bundle.folds.val_indices(k)
        mod = bundle.models[k]
        w_k = data.w[idx]
        s_vals = mod.surv.survival(times, arm, w_k)
        g_raw = mod.cens.survival(times, arm, w_k, side="left")
        g_vals = np.maximum(g_raw, floor)
        p1 = mod.prop.predict(w_k)
        pi_raw = p1 if arm == 1 else 1.0 - p1
        pi_vals = np.maximum(pi_raw, floor)
        trunc_hits += int(np.sum(g_raw < floor)) + int(np.sum(pi_raw < floor))
        total_preds += g_raw.size + pi_raw.size
        phi[idx] = _phi_block(data.y[idx], data.delta[idx], data.a[idx], arm, times,
                              s_vals, g_vals, pi_vals)
    bundle.truncation_report[arm] = {
        "floored_fraction": trunc_hits / max(total_preds, 1), "floor": floor}
    return phi


def _phi_block(y, delta, a, arm, times, s_vals, g_vals, pi_vals) -> np.ndarray:
    m, T = s_vals.shape
    s_pad = np.concatenate([np.ones((m, 1)), s_vals], axis=1)
    before = s_pad[:, :-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        d_haz = np.where(before > 0, (before - s_vals) / np.where(before > 0, before, 1.0), 0.0)

    at_risk = times[None, :] <= y[:, None]
    positive = s_vals > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        finite_part = np.where(positive, d_haz / np.where(positive, s_vals, 1.0), 0.0) / g_vals
    prefix = np.cumsum(finite_part * at_risk, axis=1)
    integral = s_vals * prefix
    # absorbing jump: the drop to exactly zero contributes dL/G with the
    # ratio S(t)/S(u) read as one for every t at or past the jump
    absorbing = (~positive) & (d_haz > 0)
    if np.any(absorbing):
        integral = integral + np.cumsum(np.where(absorbing & at_risk, d_haz / g_vals, 0.0), axis=1)

    # event term I(y <= t, delta = 1) S(t) / (S(y) G(y))
    pos_y = np.searchsorted(times, y, side="right") - 1
    inside = pos_y >= 0
    pos_safe = np.maximum(pos_y, 0)
    rows_idx = np.arange(m)
    s_at_y = np.where(inside, s_vals[rows_idx, pos_safe], 1.0)
    g_at_y = np.where(inside, g_vals[rows_idx, pos_safe], 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        # else-branch: 0/0 := 1 where the curve is absorbed; anything with
        # S(t) > 0 = S(y) sits at t < y, where the event indicator is zero
        ratio = np.where(s_at_y[:, None] > 0, s_vals / np.where(s_at_y > 0, s_at_y, 1.0)[:, None],
                         np.where(s_vals == 0.0, 1.0, 0.0))
    event_term = (delta[:, None] == 1) * (y[:, None] <= times[None, :]) * ratio \
        / g_at_y[:, None]

    bracket = event_term - integral
    indicator = (a == arm).astype(float) / pi_vals
    return s_vals - indicator[:, None] * bracket


# ---------------------------------------------------------------------------
# curve assembly


@dataclass
class CurveEstimate:
    """One arm's curve: raw and projected estimates, influence values, and
    second-moment estimates on the evaluation grid."""

    arm: int
    grid: TimeGrid
    theta_raw: np.ndarray
    theta_proj: np.ndarray
    sigma2: np.ndarray
    covariance: np.ndarray
    eif: np.ndarray
    n: int
    n_folds: int

    def evaluate(self, t, projected: bool = True) -> np.ndarray:
        """Right-continuous step interpolation; times before the first grid
        point evaluate to one."""
        vals = self.theta_proj if projected else self.theta_raw
        idx = np.searchsorted(self.grid.times, np.asarray(t, dtype=float), side="right")
        return np.concatenate(([1.0], vals))[idx]

    def to_rows(self):
        for j, t in enumerate(self.grid.times):
            yield (t, self.arm, self.theta_raw[j], self.theta_proj[j], self.sigma2[j])

    def covariance_to_csv(self, path) -> None:
        """Square covariance matrix, one row per grid time, grid in the header."""
        header = ",".join(repr(float(t)) for t in self.grid.times)
        np.savetxt(path, self.covariance, delimiter=",", header=header, comments="")


def one_step_curve(data: Dataset, bundle: NuisanceBundle, grid: TimeGrid, arm: int) -> CurveEstimate:
    """Raw cross-fitted one-step values (mean influence value per grid time);
    projection and variances are filled by estimate_curve."""
    phi = eif_matrix(data, bundle, grid, arm)
    theta_raw = phi.mean(axis=0)
    if not np.all(np.isfinite(theta_raw)):
        raise FitError("non-finite influence values in one-step estimator")
    empty = np.empty(0)
    return CurveEstimate(arm, grid, theta_raw, empty, empty, np.empty((0, 0)),
                         phi, data.n, bundle.folds.n_folds)


def monotone_project(values: np.ndarray) -> np.ndarray:
    """Clip to [0, 1], then least-squares projection onto non-increasing
    sequences (pool-adjacent-violators, equal weights)."""
    clipped = np.clip(np.asarray(values, dtype=float), 0.0, 1.0)
    pooled_vals: list[float] = []
    pooled_cnts: list[int] = []
    for v in clipped:
        pooled_vals.append(float(v))
        pooled_cnts.append(1)
        while len(pooled_vals) > 1 and pooled_vals[-2] < pooled_vals[-1]:
            v2, c2 = pooled_vals.pop(), pooled_cnts.pop()
            v1, c1 = pooled_vals.pop(), pooled_cnts.pop()
            pooled_vals.append((v1 * c1 + v2 * c2) / (c1 + c2))
            pooled_cnts.append(c1 + c2)
    return np.repeat(pooled_vals, pooled_cnts)


def variance_covariance(eif: np.ndarray, theta_proj: np.ndarray):
    """Empirical second moments of the influence values centered at the
    projected curve; the covariance is symmetrized and minimally jittered."""
    n = eif.shape[0]
    centered = eif - theta_proj[None, :]
    sigma2 = np.mean(centered ** 2, axis=0)
    cov = centered.T @ centered / n
    cov = 0.5 * (cov + cov.T)
    return sigma2, _jitter_psd(cov)


def _jitter_psd(cov: np.ndarray, max_jitter: float = 1e-8) -> np.ndarray:
    jitter = 0.0
    eye = np.eye(cov.shape[0])
    while True:
        try:
            np.linalg.cholesky(cov + jitter * eye + 1e-300 * eye)
            break
        except np.linalg.LinAlgError:
            if jitter >= max_jitter:
                break
            jitter = max(jitter * 10.0, 1e-12)
    return cov + jitter * eye if jitter else cov


def estimate_curve(data: Dataset, bundle: NuisanceBundle, grid: TimeGrid, arm: int,
                   with_covariance: bool = True) -> CurveEstimate:
    """Full pipeline for one arm: raw one-step, monotone projection, variances."""
    est = one_step_curve(data, bundle, grid, arm)
    theta_proj = monotone_project(est.theta_raw)
    if with_covariance:
        sigma2, cov = variance_covariance(est.eif, theta_proj)
    else:
        centered = est.eif - theta_proj[None, :]
        sigma2, cov = np.mean(centered ** 2, axis=0), np.empty((0, 0))
    return CurveEstimate(est.arm, est.grid, est.theta_raw, theta_proj, sigma2, cov,
                         est.eif, est.n, est.n_folds)


def estimate_both_arms(data: Dataset, grid: TimeGrid | None = None,
                       n_folds: int = 5, config: NuisanceConfig | None = None,
                       seed: int = 0, with_covariance: bool = True):
    """Convenience wrapper: folds, nuisances, then one CurveEstimate per arm."""
    config = config or NuisanceConfig(seed=seed)
    folds = make_folds(data.n, n_folds, seed=seed)
    bundle = fit_nuisances(data, folds, config)
    grid = grid or event_grid(data)
    return {arm: estimate_curve(data, bundle, grid, arm, with_covariance=with_covariance)
            for arm in (0, 1)}, bundle
