"""Pointwise and uniform inference, contrasts, the equality test, and RMST.

Uniform critical values come from simulating mean-zero Gaussian process paths
on the evaluation grid with the cross-fitted covariance; pointwise intervals
are Wald intervals on the logit scale with explicit rules at estimates of
exactly zero or one. Step-curve integrals use the right-endpoint rule
sum_j v_j (t_j - t_{j-1}) with t_0 = 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .errors import NumericalError
from .estimator import CurveEstimate, monotone_project
from .learners import expit, logit

DEFAULT_NUM_PATHS = 10_000
RATIO_DENOM_FLOOR = 0.01


def z_quantile(p: float) -> float:
    return NormalDist().inv_cdf(p)


@dataclass(frozen=True)
class PointwiseCI:
    t: float
    arm: int
    lower: float
    upper: float
    alpha: float


@dataclass(frozen=True)
class UniformBand:
    times: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    style: str
    alpha: float
    critical_value: float
    num_paths: int
    t0: float
    t1: float


@dataclass(frozen=True)
class ContrastEstimate:
    kind: str
    times: np.ndarray | None
    estimate: np.ndarray | float
    ci_lower: np.ndarray | float
    ci_upper: np.ndarray | float
    alpha: float
    masked: np.ndarray | None = None
    band: UniformBand | None = None


@dataclass(frozen=True)
class EqualityTestResult:
    statistic: float
    p_value: float
    weight_kind: str
    num_null_paths: int


# ---------------------------------------------------------------------------
# pointwise intervals


def pointwise_ci_curve(est: CurveEstimate, alpha: float = 0.05):
    """Logit-scale Wald intervals on the whole grid, with the boundary rules:
    at an estimate of 0 the interval is [0, smallest positive upper endpoint],
    at 1 it is [largest lower endpoint below one, 1]."""
    theta = est.theta_proj
    z = z_quantile(1.0 - alpha / 2.0)
    sd = np.sqrt(est.sigma2)
    lower = np.empty_like(theta)
    upper = np.empty_like(theta)
    interior = (theta > 0.0) & (theta < 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma_t = np.where(interior, sd / np.where(interior, theta * (1.0 - theta), 1.0), 0.0)
        half = z * sigma_t / np.sqrt(est.n)
        lower[interior] = expit(logit(theta[interior]) - half[interior])
        upper[interior] = expit(logit(theta[interior]) + half[interior])
    at_zero = theta <= 0.0
    at_one = theta >= 1.0
    lower[at_one] = 1.0
    upper[at_one] = 1.0
    positive_uppers = upper[interior | at_one]
    positive_uppers = positive_uppers[positive_uppers > 0.0]
    upper[at_zero] = positive_uppers.min() if positive_uppers.size else 0.0
    lower[at_zero] = 0.0
    sub_one_lowers = lower[interior | at_zero]
    sub_one_lowers = sub_one_lowers[sub_one_lowers < 1.0]
    lower[at_one] = sub_one_lowers.max() if sub_one_lowers.size else 1.0
    return lower, upper


def pointwise_ci(est: CurveEstimate, t: float, alpha: float = 0.05) -> PointwiseCI:
    lower, upper = pointwise_ci_curve(est, alpha)
    idx = np.searchsorted(est.grid.times, t, side="right") - 1
    if idx < 0:
        raise ValueError(f"t={t} precedes the first grid time {est.grid.times[0]}")
    return PointwiseCI(float(t), est.arm, float(lower[idx]), float(upper[idx]), alpha)


# ---------------------------------------------------------------------------
# Gaussian-process supremum simulation


def simulate_gp_sup(cov: np.ndarray, alpha: float, num_paths: int = DEFAULT_NUM_PATHS,
                    seed: int = 0) -> float:
    """Empirical (1-alpha)-quantile of the sup-abs of mean-zero Gaussian paths
    with the given covariance; deterministic given (seed, num_paths, grid)."""
    cov = np.asarray(cov, dtype=float)
    m = cov.shape[0]
    chol = _psd_factor(cov)
    rng = np.random.default_rng(seed)
    sups = np.empty(num_paths)
    chunk = max(1, int(4e6 // max(m, 1)))
    done = 0
    while done < num_paths:
        take = min(chunk, num_paths - done)
        z = rng.standard_normal((take, m))
        sups[done:done + take] = np.max(np.abs(z @ chol.T), axis=1)
        done += take
    return float(np.quantile(sups, 1.0 - alpha))


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """Square root of a PSD matrix: Cholesky when possible, otherwise an exact
    eigenvalue factor (handles singular covariances without jitter noise)."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    eigvals, eigvecs = np.linalg.eigh(cov)
    floor = -1e-8 * max(float(eigvals[-1]), 1.0)
    if eigvals[0] < floor:
        raise NumericalError("covariance is not positive semidefinite")
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))[None, :]


def default_band_interval(event_times: np.ndarray) -> tuple[float, float]:
    """The 5th and 95th percentiles of the observed event times."""
    event_times = np.asarray(event_times, dtype=float)
    if event_times.size == 0:
        raise ValueError("no observed events to pick a band interval from")
    return float(np.percentile(event_times, 5)), float(np.percentile(event_times, 95))


def uniform_band(est: CurveEstimate, alpha: float = 0.05, style: str = "fixed_width",
                 t0: float | None = None, t1: float | None = None,
                 num_paths: int = DEFAULT_NUM_PATHS, seed: int = 0) -> UniformBand:
    """Simultaneous band for one arm's curve.

    fixed_width uses the raw covariance over the whole grid; variable_width
    works on the logit scale with the standardized covariance, restricted to
    [t0, t1] where the estimate is inside (0, 1) and its variance is positive.
    Both bands are isotonic-repaired, which can only improve coverage.
    """
    times = est.grid.times
    theta = est.theta_proj
    if style == "fixed_width":
        crit = simulate_gp_sup(est.covariance, alpha, num_paths, seed)
        half = crit / np.sqrt(est.n)
        lower = monotone_project(np.clip(theta - half, 0.0, 1.0))
        upper = monotone_project(np.clip(theta + half, 0.0, 1.0))
        return UniformBand(times, lower, upper, style, alpha, crit, num_paths,
                           float(times[0]), float(times[-1]))
    if style != "variable_width":
        raise ValueError(f"unknown band style {style!r}")
    if t0 is None or t1 is None:
        raise ValueError("variable_width bands need an explicit [t0, t1] interval")
    keep = (times >= t0) & (times <= t1)
    if not np.any(keep):
        raise ValueError(f"no grid times inside [{t0}, {t1}]")
    theta_r = theta[keep]
    sd_r = np.sqrt(est.sigma2[keep])
    if np.any(theta_r <= 0.0) or np.any(theta_r >= 1.0) or np.any(sd_r <= 0.0):
        raise ValueError("variable_width band needs estimates inside (0, 1) with "
                         f"positive variance on [{t0}, {t1}]; shrink the interval")
    sigma_t = sd_r / (theta_r * (1.0 - theta_r))
    cov_r = est.covariance[np.ix_(keep, keep)]
    # scaling the logit-scale process by its own sd leaves the correlation matrix
    standardized = cov_r / np.outer(sd_r, sd_r)
    crit = simulate_gp_sup(standardized, alpha, num_paths, seed)
    half = crit * sigma_t / np.sqrt(est.n)
    lower = monotone_project(expit(logit(theta_r) - half))
    upper = monotone_project(expit(logit(theta_r) + half))
    return UniformBand(times[keep], lower, upper, style, alpha, crit, num_paths,
                       float(t0), float(t1))


# ---------------------------------------------------------------------------
# contrasts


def _check_shared_grid(est0: CurveEstimate, est1: CurveEstimate):
    if not np.array_equal(est0.grid.times, est1.grid.times):
        raise ValueError("contrasts need both arms on the same grid")


def contrast(est0: CurveEstimate, est1: CurveEstimate, kind: str, alpha: float = 0.05,
             num_paths: int = 0, seed: int = 0) -> ContrastEstimate:
    """Delta-method contrast of the two arms on their shared grid.

    Ratio contrasts are computed on the log scale and masked (never silently
    reported) wherever the denominator drops below the reporting floor.
    """
    if kind == "rmst":
        raise ValueError("use rmst(est, alpha) for a single-arm RMST")
    if kind == "rmst_difference":
        return rmst_difference(est0, est1, alpha)
    _check_shared_grid(est0, est1)
    times = est0.grid.times
    n = est0.n
    z = z_quantile(1.0 - alpha / 2.0)
    c0 = est0.eif - est0.theta_proj[None, :]
    c1 = est1.eif - est1.theta_proj[None, :]
    th0, th1 = est0.theta_proj, est1.theta_proj

    if kind == "difference":
        point = th1 - th0
        infl = c1 - c0
        sd = np.sqrt(np.mean(infl ** 2, axis=0))
        half = z * sd / np.sqrt(n)
        lower = np.clip(point - half, -1.0, 1.0)
        upper = np.clip(point + half, -1.0, 1.0)
        masked = np.zeros(times.size, dtype=bool)
        band = None
        if num_paths:
            cov = infl.T @ infl / n
            crit = simulate_gp_sup(cov, alpha, num_paths, seed)
            bh = crit / np.sqrt(n)
            band = UniformBand(times, np.clip(point - bh, -1, 1), np.clip(point + bh, -1, 1),
                               "fixed_width", alpha, crit, num_paths,
                               float(times[0]), float(times[-1]))
        return ContrastEstimate(kind, times, point, lower, upper, alpha, masked, band)

    if kind == "survival_ratio":
        num, den = th1, th0
        inf_num, inf_den = c1, c0
    elif kind == "risk_ratio":
        num, den = 1.0 - th1, 1.0 - th0
        inf_num, inf_den = -c1, -c0
    else:
        raise ValueError(f"unknown contrast kind {kind!r}")

    masked = (den < RATIO_DENOM_FLOOR) | (num <= 0.0)
    safe_num = np.where(masked, 1.0, num)
    safe_den = np.where(masked, 1.0, den)
    point = np.where(masked, np.nan, num / safe_den)
    log_infl = inf_num / safe_num[None, :] - inf_den / safe_den[None, :]
    sd_log = np.sqrt(np.mean(log_infl ** 2, axis=0))
    half = z * sd_log / np.sqrt(n)
    with np.errstate(invalid="ignore", over="ignore"):
        lower = np.where(masked, np.nan, point * np.exp(-half))
        upper = np.where(masked, np.nan, point * np.exp(half))
    band = None
    if num_paths and not np.all(masked):
        live = ~masked
        cov = (log_infl[:, live].T @ log_infl[:, live]) / n
        crit = simulate_gp_sup(cov, alpha, num_paths, seed)
        bh = crit * sd_log[live] / np.sqrt(n)
        band = UniformBand(times[live], point[live] * np.exp(-bh), point[live] * np.exp(bh),
                           "variable_width", alpha, crit, num_paths,
                           float(times[live][0]), float(times[live][-1]))
    return ContrastEstimate(kind, times, point, lower, upper, alpha, masked, band)


# ---------------------------------------------------------------------------
# equality test and RMST


def _segment_lengths(times: np.ndarray) -> np.ndarray:
    return np.diff(np.concatenate(([0.0], times)))


def equality_test(est0: CurveEstimate, est1: CurveEstimate, weight_kind: str = "uniform",
                  num_null_paths: int = DEFAULT_NUM_PATHS, seed: int = 0,
                  event_times: np.ndarray | None = None) -> EqualityTestResult:
    """Weighted integrated absolute difference of the projected curves, with
    the null law simulated from the estimated covariance of the difference."""
    _check_shared_grid(est0, est1)
    times = est0.grid.times
    if weight_kind == "uniform":
        weights = _segment_lengths(times)
    elif weight_kind == "integrated_events":
        if event_times is None:
            raise ValueError("integrated_events weights need the observed event times")
        event_times = np.asarray(event_times, dtype=float)
        counts = np.zeros(times.size)
        pos = np.searchsorted(times, event_times)
        pos = np.clip(pos, 0, times.size - 1)
        hit = times[pos] == event_times
        np.add.at(counts, pos[hit], 1.0)
        total = counts.sum()
        if total == 0:
            raise ValueError("no event times fall on the grid")
        weights = counts / total
    else:
        raise ValueError(f"unknown weight kind {weight_kind!r}")

    diff = est1.theta_proj - est0.theta_proj
    statistic = float(np.sqrt(est0.n) * np.sum(np.abs(diff) * weights))
    centered = (est1.eif - est1.theta_proj[None, :]) - (est0.eif - est0.theta_proj[None, :])
    cov = centered.T @ centered / est0.n
    chol = _psd_factor(cov)
    rng = np.random.default_rng(seed)
    null_stats = np.empty(num_null_paths)
    chunk = max(1, int(4e6 // max(times.size, 1)))
    done = 0
    while done < num_null_paths:
        take = min(chunk, num_null_paths - done)
        paths = rng.standard_normal((take, times.size)) @ chol.T
        null_stats[done:done + take] = np.abs(paths) @ weights
        done += take
    p_value = float(np.mean(null_stats >= statistic))
    return EqualityTestResult(statistic, p_value, weight_kind, num_null_paths)


def rmst(est: CurveEstimate, alpha: float = 0.05) -> ContrastEstimate:
    """Integral of the projected step curve up to tau, with an influence-based
    Wald interval."""
    seg = _segment_lengths(est.grid.times)
    point = float(np.sum(est.theta_proj * seg))
    infl = (est.eif - est.theta_proj[None, :]) @ seg
    se = float(np.sqrt(np.mean(infl ** 2) / est.n))
    z = z_quantile(1.0 - alpha / 2.0)
    return ContrastEstimate("rmst", None, point, point - z * se, point + z * se, alpha)


def rmst_difference(est0: CurveEstimate, est1: CurveEstimate, alpha: float = 0.05) -> ContrastEstimate:
    _check_shared_grid(est0, est1)
    seg = _segment_lengths(est0.grid.times)
    p0 = float(np.sum(est0.theta_proj * seg))
    p1 = float(np.sum(est1.theta_proj * seg))
    infl = ((est1.eif - est1.theta_proj[None, :]) - (est0.eif - est0.theta_proj[None, :])) @ seg
    se = float(np.sqrt(np.mean(infl ** 2) / est0.n))
    z = z_quantile(1.0 - alpha / 2.0)
    point = p1 - p0
    return ContrastEstimate("rmst_difference", None, point, point - z * se, point + z * se, alpha)
