from __future__ import annotations

import numpy as np
import pytest

from drsurv.data import TimeGrid
from drsurv.estimator import CurveEstimate, variance_covariance
from drsurv.inference import (contrast, default_band_interval, equality_test,
                              pointwise_ci, pointwise_ci_curve, rmst,
                              rmst_difference, simulate_gp_sup, uniform_band)


def curve_from_parts(theta, sigma2=None, eif=None, n=100, arm=0, times=None, cov=None):
    theta = np.asarray(theta, dtype=float)
    T = theta.size
    times = np.asarray(times if times is not None else np.arange(1, T + 1), dtype=float)
    if eif is None:
        eif = np.tile(theta, (n, 1))
    sigma2 = np.asarray(sigma2 if sigma2 is not None else np.zeros(T), dtype=float)
    if cov is None:
        centered = eif - theta[None, :]
        cov = centered.T @ centered / eif.shape[0]
    return CurveEstimate(arm, TimeGrid(times), theta, theta, sigma2, cov, eif,
                         n=n, n_folds=2)


def realistic_curve(rng, n=200, T=8, arm=0, level_drop=0.5):
    times = np.sort(rng.uniform(0.2, 5.0, size=T))
    theta = 1.0 - level_drop * (times / times[-1])
    eif = theta[None, :] + rng.normal(scale=0.6, size=(n, T)).cumsum(axis=1) / np.sqrt(T)
    sigma2, cov = variance_covariance(eif, theta)
    return CurveEstimate(arm, TimeGrid(times), theta, theta, sigma2, cov, eif, n, 2)


def test_ci_degenerate_variance_collapses():
    est = curve_from_parts([0.5], sigma2=[0.0])
    lower, upper = pointwise_ci_curve(est, alpha=0.05)
    assert lower[0] == 0.5 and upper[0] == 0.5


def test_ci_symmetric_at_half():
    est = curve_from_parts([0.5], sigma2=[0.09])
    lower, upper = pointwise_ci_curve(est, alpha=0.05)
    assert np.isclose(upper[0] - 0.5, 0.5 - lower[0], atol=1e-12)
    assert 0 < lower[0] < 0.5 < upper[0] < 1


def test_ci_edge_rule_at_zero():
    est = curve_from_parts([0.6, 0.3, 0.0], sigma2=[0.04, 0.04, 0.0])
    lower, upper = pointwise_ci_curve(est, alpha=0.05)
    assert lower[2] == 0.0
    positive_uppers = upper[:2]
    assert np.isclose(upper[2], positive_uppers.min())


def test_ci_edge_rule_at_one():
    est = curve_from_parts([1.0, 0.7, 0.4], sigma2=[0.0, 0.04, 0.04])
    lower, upper = pointwise_ci_curve(est, alpha=0.05)
    assert upper[0] == 1.0
    assert np.isclose(lower[0], max(l for l in lower[1:] if l < 1))


def test_pointwise_ci_lookup_step_interpolation():
    est = curve_from_parts([0.8, 0.5], sigma2=[0.01, 0.01], times=[1.0, 2.0])
    ci_mid = pointwise_ci(est, 1.5)
    ci_at = pointwise_ci(est, 1.0)
    assert (ci_mid.lower, ci_mid.upper) == (ci_at.lower, ci_at.upper)
    with pytest.raises(ValueError):
        pointwise_ci(est, 0.5)


def test_gp_sup_single_point_standard_normal():
    crit = simulate_gp_sup(np.array([[1.0]]), alpha=0.05, num_paths=400_000, seed=10)
    assert abs(crit - 1.959964) < 0.02


def test_gp_sup_zero_covariance():
    crit = simulate_gp_sup(np.zeros((3, 3)), alpha=0.05, num_paths=2_000, seed=1)
    assert crit == 0.0


def test_gp_sup_perfect_correlation_matches_single_point():
    cov = np.ones((2, 2))
    c2 = simulate_gp_sup(cov, alpha=0.05, num_paths=400_000, seed=3)
    c1 = simulate_gp_sup(np.array([[1.0]]), alpha=0.05, num_paths=400_000, seed=4)
    assert abs(c1 - c2) < 0.02


def test_gp_sup_deterministic_given_seed():
    cov = np.diag([1.0, 2.0, 0.5])
    a = simulate_gp_sup(cov, 0.1, num_paths=5_000, seed=42)
    b = simulate_gp_sup(cov, 0.1, num_paths=5_000, seed=42)
    assert a == b


def test_fixed_band_zero_covariance_collapses(rng):
    est = curve_from_parts([0.9, 0.6, 0.3], sigma2=[0.0, 0.0, 0.0])
    band = uniform_band(est, style="fixed_width", num_paths=2_000, seed=2)
    assert np.allclose(band.lower, est.theta_proj)
    assert np.allclose(band.upper, est.theta_proj)


def test_band_contains_point_estimate_and_ci(rng):
    est = realistic_curve(rng)
    band = uniform_band(est, style="fixed_width", num_paths=30_000, seed=5)
    assert np.all(band.lower <= est.theta_proj + 1e-12)
    assert np.all(band.upper >= est.theta_proj - 1e-12)
    t0, t1 = est.grid.times[0], est.grid.times[-1]
    vband = uniform_band(est, style="variable_width", t0=t0, t1=t1,
                         num_paths=30_000, seed=5)
    lower, upper = pointwise_ci_curve(est, alpha=0.05)
    assert np.all(vband.lower <= lower + 1e-9)
    assert np.all(vband.upper >= upper - 1e-9)
    # variable band stays strictly inside (0, 1) and is monotone after repair
    assert np.all((vband.lower > 0) & (vband.upper < 1))
    assert np.all(np.diff(vband.lower) <= 1e-12)
    assert np.all(np.diff(vband.upper) <= 1e-12)


def test_variable_band_needs_interior_estimates(rng):
    est = curve_from_parts([1.0, 0.5, 0.0], sigma2=[0.0, 0.01, 0.0])
    with pytest.raises(ValueError, match="shrink"):
        uniform_band(est, style="variable_width", t0=est.grid.times[0],
                     t1=est.grid.times[-1], num_paths=1000)


def test_default_band_interval_percentiles():
    events = np.linspace(0.0, 10.0, 101)
    t0, t1 = default_band_interval(events)
    assert np.isclose(t0, 0.5) and np.isclose(t1, 9.5)


def test_contrast_identical_arms_degenerate():
    est = curve_from_parts([0.8, 0.5], sigma2=[0.01, 0.01], times=[1.0, 2.0])
    res = contrast(est, est, "difference")
    assert np.allclose(res.estimate, 0.0)
    assert np.allclose(res.ci_lower, 0.0)
    assert np.allclose(res.ci_upper, 0.0)


def test_contrast_ratio_arithmetic():
    est0 = curve_from_parts([0.5], sigma2=[0.0])
    est1 = curve_from_parts([0.8], sigma2=[0.0], arm=1)
    sr = contrast(est0, est1, "survival_ratio")
    rr = contrast(est0, est1, "risk_ratio")
    assert np.isclose(sr.estimate[0], 1.6)
    assert np.isclose(rr.estimate[0], 0.4)


def test_contrast_difference_se_matches_hand_toy():
    # two observations, influence difference values -0.2 and +0.2 around a zero
    # difference: sd = 0.2, se = 0.2/sqrt(2)
    eif0 = np.array([[0.5], [0.5]])
    eif1 = np.array([[0.3], [0.7]])
    est0 = curve_from_parts([0.5], sigma2=[0.0], eif=eif0, n=2)
    est1 = curve_from_parts([0.5], sigma2=[0.04], eif=eif1, n=2, arm=1)
    res = contrast(est0, est1, "difference", alpha=0.05)
    z = 1.959963984540054
    assert np.isclose(res.ci_upper[0], 0.0 + z * 0.2 / np.sqrt(2), atol=1e-9)
    assert np.isclose(res.ci_lower[0], 0.0 - z * 0.2 / np.sqrt(2), atol=1e-9)


def test_contrast_masks_small_denominators():
    est0 = curve_from_parts([0.999, 0.5], sigma2=[0.001, 0.001], times=[1.0, 2.0])
    est1 = curve_from_parts([0.9, 0.4], sigma2=[0.001, 0.001], times=[1.0, 2.0], arm=1)
    rr = contrast(est0, est1, "risk_ratio")
    assert rr.masked[0] and not rr.masked[1]
    assert np.isnan(rr.estimate[0]) and np.isfinite(rr.estimate[1])


def test_equality_test_identical_curves():
    est = curve_from_parts([0.8, 0.5], sigma2=[0.01, 0.01], times=[1.0, 2.0])
    res = equality_test(est, est, num_null_paths=500, seed=7)
    assert res.statistic == 0.0
    assert res.p_value == 1.0


def test_equality_test_constant_difference_closed_form():
    # constant difference d over (0, tau] with degenerate null covariance:
    # statistic = sqrt(n) * |d| * tau and p = 0
    times = np.array([1.0, 2.0])
    n = 64
    est0 = curve_from_parts([0.7, 0.7], sigma2=[0.0, 0.0], times=times, n=n)
    est1 = curve_from_parts([0.5, 0.5], sigma2=[0.0, 0.0], times=times, n=n, arm=1)
    res = equality_test(est0, est1, num_null_paths=1000, seed=3)
    assert np.isclose(res.statistic, np.sqrt(n) * 0.2 * 2.0)
    assert res.p_value == 0.0


def test_equality_test_event_weights():
    times = np.array([1.0, 2.0])
    est0 = curve_from_parts([0.7, 0.7], sigma2=[0.0, 0.0], times=times, n=25)
    est1 = curve_from_parts([0.5, 0.6], sigma2=[0.0, 0.0], times=times, n=25, arm=1)
    res = equality_test(est0, est1, weight_kind="integrated_events",
                        event_times=np.array([1.0, 1.0, 2.0]), num_null_paths=200, seed=5)
    assert np.isclose(res.statistic, 5.0 * (0.2 * 2 / 3 + 0.1 * 1 / 3))


def test_p_value_monotone_in_statistic(rng):
    est0 = realistic_curve(rng, arm=0)
    shifted = CurveEstimate(1, est0.grid, est0.theta_raw - 0.05,
                            np.clip(est0.theta_proj - 0.05, 0, 1), est0.sigma2,
                            est0.covariance, est0.eif - 0.05, est0.n, est0.n_folds)
    more_shifted = CurveEstimate(1, est0.grid, est0.theta_raw - 0.15,
                                 np.clip(est0.theta_proj - 0.15, 0, 1), est0.sigma2,
                                 est0.covariance, est0.eif - 0.15, est0.n, est0.n_folds)
    p_small = equality_test(est0, shifted, num_null_paths=4000, seed=9).p_value
    p_large = equality_test(est0, more_shifted, num_null_paths=4000, seed=9).p_value
    assert p_large <= p_small


def test_rmst_full_survival_equals_tau():
    est = curve_from_parts([1.0, 1.0], sigma2=[0.0, 0.0], times=[1.0, 2.0])
    assert np.isclose(rmst(est).estimate, 2.0)


def test_rmst_hand_step_integral():
    # 1 on (0,1], 0.5 on (1,2]: integral 1.5
    est = curve_from_parts([1.0, 0.5], sigma2=[0.0, 0.0], times=[1.0, 2.0])
    res = rmst(est)
    assert np.isclose(res.estimate, 1.5)
    assert res.ci_lower <= res.estimate <= res.ci_upper


def test_rmst_difference_identical_is_degenerate():
    est = curve_from_parts([0.9, 0.4], sigma2=[0.01, 0.01], times=[1.0, 2.0])
    res = rmst_difference(est, est)
    assert res.estimate == 0.0
    assert res.ci_lower == 0.0 and res.ci_upper == 0.0


def test_rmst_bounds(rng):
    for _ in range(10):
        T = 6
        times = np.sort(rng.uniform(0.1, 4.0, size=T))
        theta = np.sort(rng.uniform(size=T))[::-1]
        est = curve_from_parts(theta, sigma2=np.zeros(T), times=times)
        val = rmst(est).estimate
        assert 0.0 <= val <= times[-1] + 1e-12
