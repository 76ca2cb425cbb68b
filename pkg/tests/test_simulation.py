from __future__ import annotations

import numpy as np

from drsurv.learners import expit
from drsurv.simulation import (DgpConfig, MarginalizedCoxStudyEstimator,
                               OneStepStudyEstimator, calibrate_gamma_const,
                               censoring_rate, effect_durability, effect_floor,
                               event_rate_control, gen_covariates, gen_dataset,
                               gen_event, invert_time_warp, marginalized_cox,
                               run_study, time_warp, transform_covariates,
                               treatment_probability, true_params)

R = 1.5


def test_covariate_moments_and_supports(rng):
    w = gen_covariates(rng, 100_000)
    assert abs(w[:, 0].mean() - 50.0) < 0.2
    assert np.all((w[:, 0] >= 20) & (w[:, 0] <= 80))
    assert np.all((w[:, 1] >= 18) & (w[:, 1] <= 50))
    assert np.all((w[:, 2] >= 0) & (w[:, 2] <= 10))


def test_treatment_probability_formula_point():
    p = treatment_probability(np.array([[50.0, 25.0, 0.0]]))[0]
    expected = expit(-1.0 + np.log(1 + np.exp(-15.0) + np.exp(-3.0)))
    assert np.isclose(p, expected, atol=1e-12)
    assert np.isclose(expected, expit(-0.9515), atol=1e-3)


def test_treatment_probability_monotone_in_age(rng):
    w_lo = np.array([[30.0, 25.0, 2.0]])
    w_hi = np.array([[75.0, 25.0, 2.0]])
    assert treatment_probability(w_hi)[0] > treatment_probability(w_lo)[0]
    w = gen_covariates(rng, 1000)
    p = treatment_probability(w)
    assert np.all((p > 0) & (p < 1))


def test_censoring_rate_positive_and_treatment_shifted(rng):
    w = gen_covariates(rng, 500)
    cfg = DgpConfig()
    r0 = censoring_rate(w, 0, cfg)
    r1 = censoring_rate(w, 1, cfg)
    assert np.all(r0 > 0)
    assert np.allclose(r1 / r0, np.exp(0.3))


def test_censoring_marginal_rate_matches_target(rng):
    w = gen_covariates(rng, 100_000)
    rate = censoring_rate(w, 0, DgpConfig())
    p12 = float(np.mean(1.0 - np.exp(-rate * 12.0)))
    assert abs(p12 - 0.20) < 0.02


def test_observed_event_rate_matches_target(rng):
    # share of control subjects whose event is observed inside the horizon
    w = gen_covariates(rng, 100_000)
    cfg = DgpConfig()
    lam = event_rate_control(w, cfg)
    crate = censoring_rate(w, 0, cfg)
    total = lam + crate
    rate = float(np.mean(lam / total * (1.0 - np.exp(-12.0 * total))))
    assert abs(rate - 0.15) < 0.02


def test_time_warp_continuity_and_anchor(rng):
    w = gen_covariates(rng, 50)
    cfg = DgpConfig()
    gamma = effect_floor(w, cfg)
    iota = effect_durability(w)
    assert np.allclose(time_warp(np.zeros(50), gamma, iota, R), 0.0)
    for knot in (R, None):
        pts = np.full(50, R) if knot == R else R + iota
        below = time_warp(pts - 1e-8, gamma, iota, R)
        above = time_warp(pts + 1e-8, gamma, iota, R)
        assert np.max(np.abs(above - below)) < 1e-6


def test_time_warp_strictly_increasing(rng):
    w = gen_covariates(rng, 20)
    cfg = DgpConfig()
    gamma, iota = effect_floor(w, cfg), effect_durability(w)
    grid = np.linspace(0.0, 40.0, 400)
    for i in range(20):
        vals = time_warp(grid, gamma[i], iota[i], R)
        assert np.all(np.diff(vals) > 0)


def test_no_effect_degenerates_to_identity():
    # gamma == 1 collapses every piece of the warp to the identity
    t = np.linspace(0.0, 30.0, 100)
    assert np.allclose(time_warp(t, 1.0, 2.5, R), t, atol=1e-12)


def test_invert_time_warp_matches_quadratic_oracle(rng):
    # piece 3 solves t + c1 + c2/t = x, a quadratic with closed-form root
    w = gen_covariates(rng, 30)
    cfg = DgpConfig()
    gamma, iota = effect_floor(w, cfg), effect_durability(w)
    knee = R + iota
    x = time_warp(knee + rng.uniform(0.5, 50.0, size=30), gamma, iota, R)
    t_bis = invert_time_warp(x, gamma, iota, R)
    c1 = 0.5 * R * (1 + gamma) + iota * gamma - knee * (2 - gamma)
    c2 = (1 - gamma) * knee ** 2
    t_quad = 0.5 * ((x - c1) + np.sqrt((x - c1) ** 2 - 4 * c2))
    assert np.max(np.abs(t_bis - t_quad)) < 1e-8


def test_invert_time_warp_round_trip(rng):
    w = gen_covariates(rng, 40)
    cfg = DgpConfig()
    gamma, iota = effect_floor(w, cfg), effect_durability(w)
    x = rng.uniform(0.01, 80.0, size=40)
    t = invert_time_warp(x, gamma, iota, R)
    assert np.max(np.abs(time_warp(t, gamma, iota, R) - x)) < 1e-8


def test_treated_survival_dominates_control(rng):
    # gamma < 1 everywhere implies the treated closed-form survival is higher
    w = gen_covariates(rng, 200)
    cfg = DgpConfig()
    lam = event_rate_control(w, cfg)
    gamma, iota = effect_floor(w, cfg), effect_durability(w)
    assert np.all(gamma < 1.0)
    for t in (1.0, 6.0, 12.0):
        s0 = np.exp(-lam * t)
        s1 = np.exp(-lam * time_warp(np.full(200, t), gamma, iota, R))
        assert np.all(s1 >= s0 - 1e-15)


def test_gen_dataset_deterministic():
    d1 = gen_dataset(DgpConfig(n=200, seed=42))
    d2 = gen_dataset(DgpConfig(n=200, seed=42))
    assert np.array_equal(d1.w, d2.w)
    assert np.array_equal(d1.y, d2.y)
    assert np.array_equal(d1.a, d2.a)
    assert np.array_equal(d1.delta, d2.delta)


def test_null_effect_config_removes_treatment_effect(rng):
    cfg = DgpConfig(n=4000, seed=9, null_effect=True)
    truth = true_params(cfg, num_mc=50_000)
    assert np.allclose(truth.theta0[0], truth.theta0[1], atol=1e-12)


def test_true_params_anchors_and_monotone():
    truth = true_params(DgpConfig(), num_mc=20_000)
    assert np.isclose(truth.theta0[0][0], 1.0)
    assert np.isclose(truth.theta0[1][0], 1.0)
    assert np.all(np.diff(truth.theta0[0]) <= 1e-12)
    assert np.all(np.diff(truth.theta0[1]) <= 1e-12)


def test_true_risk_ratio_near_calibrated_target():
    truth = true_params(DgpConfig(), num_mc=200_000)
    assert abs(truth.risk_ratio(12.0) - 0.70) < 0.01


def test_calibration_routine_recovers_shipped_constant():
    value = calibrate_gamma_const(num_mc=150_000, seed=20_240_801)
    assert abs(value - DgpConfig().gamma_const) < 0.05


def test_marginalized_cox_null_effect_gives_equal_curves(rng):
    # with the treatment coefficient forced to zero by construction (identical
    # arms), the two marginalized curves coincide up to the fitted coefficient
    cfg = DgpConfig(n=800, seed=3, null_effect=True)
    data = gen_dataset(cfg)
    res = marginalized_cox(data, num_boot=10, seed=1)
    gap = np.max(np.abs(res.curves[0] - res.curves[1]))
    assert gap < 0.05


def test_marginalized_cox_duplicate_rows_identical_point_estimates():
    from drsurv.data import Dataset
    data = gen_dataset(DgpConfig(n=300, seed=5))
    doubled = Dataset(np.vstack([data.w, data.w]), np.concatenate([data.a, data.a]),
                      np.concatenate([data.y, data.y]), np.concatenate([data.delta, data.delta]),
                      tau=data.tau)
    r1 = marginalized_cox(data, num_boot=0, seed=1)
    r2 = marginalized_cox(doubled, num_boot=0, seed=1)
    for k in r1.estimates:
        assert np.isclose(r1.estimates[k], r2.estimates[k], atol=1e-6), k


def test_transform_covariates_appends_expected_columns():
    data = gen_dataset(DgpConfig(n=50, seed=2))
    out = transform_covariates(data)
    assert out.n_covariates == 7
    assert np.allclose(out.w[:, 3], np.abs(data.w[:, 0] - 60.0))
    assert np.allclose(out.w[:, 4], np.log(data.w[:, 1]))


def test_run_study_smoke_metrics_and_identity():
    summary = run_study([120], reps=3,
                        estimators={"marginalized_cox": MarginalizedCoxStudyEstimator(num_boot=20)},
                        seed=7, truth_mc=20_000)
    for p in ("surv_prob_control", "surv_prob_treated", "risk_ratio"):
        bias = summary.value("marginalized_cox", p, 120, "bias")
        var = summary.value("marginalized_cox", p, 120, "variance")
        mse = summary.value("marginalized_cox", p, 120, "mse")
        assert abs(mse - (bias ** 2 + var)) < 1e-10


def test_run_study_records_failures():
    class Exploding:
        name = "exploding"

        def run(self, data, seed):
            raise RuntimeError("boom")

    summary = run_study([100], reps=2, estimators={"exploding": Exploding()},
                        seed=3, truth_mc=10_000)
    assert summary.failures[("exploding", 100)] == 2


def test_run_study_replicate_order_independent():
    est = {"marginalized_cox": MarginalizedCoxStudyEstimator(num_boot=5)}
    s1 = run_study([100], reps=3, estimators=est, seed=11, truth_mc=10_000)
    s2 = run_study([100], reps=3, estimators=est, seed=11, truth_mc=10_000)
    assert s1.rows == s2.rows


def test_study_csv_round_trip(tmp_path):
    est = {"marginalized_cox": MarginalizedCoxStudyEstimator(num_boot=5)}
    summary = run_study([100], reps=2, estimators=est, seed=13, truth_mc=10_000)
    path = tmp_path / "study.csv"
    summary.to_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "estimator,parameter,n,metric,value,mc_se"
