from __future__ import annotations

import numpy as np

from drsurv.data import Dataset, TimeGrid, event_grid, make_folds
from drsurv.estimator import (NuisanceBundle, NuisanceConfig,
                              estimate_curve, fit_nuisances, monotone_project,
                              one_step_curve, variance_covariance, _phi_block)
from drsurv.hazard import km_fit
from drsurv.learners import (MarginalMeanPropensity, SurvivalLearnerSpec,
                             PropensitySpec, fit_km_marginal)

from conftest import make_dataset, random_survival_data


class ConstantSurvival:
    def __init__(self, level):
        self.level = float(level)

    def survival(self, times, a, W, side="right"):
        return np.full((np.shape(W)[0], np.size(times)), self.level)


class FixedPropensity:
    def __init__(self, p):
        self.p = float(p)

    def predict(self, W):
        return np.full(np.shape(W)[0], self.p)


def plug_in_bundle(data, surv, cens, prop, eta=20.0):
    return NuisanceBundle.plug_in(data.n, surv, cens, prop, eta_trunc=eta)


def test_phi_trivial_cases():
    # oracle nuisances S = G = pi = 1, single times grid at t
    times = np.array([1.0])
    ones = np.ones((1, 1))

    def phi(y, delta, a, arm):
        return _phi_block(np.array([y]), np.array([delta]), np.array([a]), arm,
                          times, ones, ones, np.array([1.0]))[0, 0]

    assert phi(2.0, 1, 1, 1) == 1.0   # y > t: correction terms vanish
    assert phi(0.5, 1, 1, 1) == 0.0   # event before t: 1 - (1 - 0)
    assert phi(0.5, 1, 0, 1) == 1.0   # a != arm: indicator kills the bracket


def test_phi_oracle_nuisances_give_empirical_survival(rng):
    # all treated, all uncensored, S = G = pi = 1: the one-step average is the
    # empirical survival curve
    n = 50
    y = rng.exponential(size=n)
    times = np.sort(rng.uniform(0.0, 2.0, size=9))
    phi = _phi_block(y, np.ones(n, dtype=int), np.ones(n, dtype=int), 1, times,
                     np.ones((n, times.size)), np.ones((n, times.size)), np.ones(n))
    theta = phi.mean(axis=0)
    emp = np.array([(y > t).mean() for t in times])
    assert np.allclose(theta, emp, atol=1e-12)


def km_plug_in(data):
    return plug_in_bundle(
        data,
        surv=fit_km_marginal(data, "event"),
        cens=fit_km_marginal(data, "censoring"),
        prop=MarginalMeanPropensity(float(np.mean(data.a))),
    )


def test_km_reduction_tie_free(rng):
    # plug-in stratified KM nuisances and empirical propensity collapse the
    # one-step estimator onto the stratified Kaplan-Meier curve exactly
    for _ in range(5):
        n = 100
        w = rng.normal(size=(n, 1))
        a = rng.integers(0, 2, size=n)
        while a.sum() in (0, n):
            a = rng.integers(0, 2, size=n)
        y = rng.exponential(size=n)
        delta = rng.integers(0, 2, size=n)
        data = Dataset(w, a, y, delta, tau=float(np.quantile(y, 0.9)))
        grid = event_grid(data)
        bundle = km_plug_in(data)
        for arm in (0, 1):
            est = one_step_curve(data, bundle, grid, arm)
            km = km_fit(data.y, data.delta, "event", mask=data.a == arm)
            target = km.evaluate(grid.times)
            assert np.max(np.abs(est.theta_raw - target)) < 1e-6


def test_km_reduction_with_ties(rng):
    n = 80
    y = rng.integers(1, 7, size=n).astype(float)
    delta = rng.integers(0, 2, size=n)
    a = np.tile([0, 1], 40)
    data = make_dataset(y, delta, a=a, tau=6.0)
    grid = event_grid(data)
    bundle = km_plug_in(data)
    for arm in (0, 1):
        est = one_step_curve(data, bundle, grid, arm)
        km = km_fit(data.y, data.delta, "event", mask=data.a == arm)
        assert np.max(np.abs(est.theta_raw - km.evaluate(grid.times))) < 1e-6


def test_theta_is_one_before_first_event(rng):
    data = make_dataset([1.0, 2.0, 3.0, 4.0], [1, 1, 1, 0], a=[0, 1, 0, 1], tau=4.0)
    grid = TimeGrid([0.5, 1.0, 4.0])
    bundle = km_plug_in(data)
    est = one_step_curve(data, bundle, grid, 0)
    assert np.isclose(est.theta_raw[0], 1.0, atol=1e-12)


def test_monotone_project_pava_example():
    assert np.allclose(monotone_project([0.9, 0.95, 0.8]), [0.925, 0.925, 0.8])


def test_monotone_project_fixed_point():
    x = [1.0, 0.7, 0.7, 0.2]
    assert np.allclose(monotone_project(x), x)


def test_monotone_project_clips_then_projects():
    assert np.allclose(monotone_project([1.02, 0.5]), [1.0, 0.5])


def test_monotone_project_matches_dp_oracle(rng):
    # dynamic-programming least-squares monotone fit on a fine value grid
    levels = np.linspace(0.0, 1.0, 401)
    for _ in range(10):
        x = np.clip(rng.uniform(-0.1, 1.1, size=6), 0.0, 1.0)
        cost = (x[0] - levels) ** 2
        for j in range(1, x.size):
            # best predecessor must sit at a level >= current level
            best_from_above = np.minimum.accumulate(cost[::-1])[::-1]
            cost = (x[j] - levels) ** 2 + best_from_above
        dp_cost = cost.min()
        fit = monotone_project(x)
        pava_cost = float(np.sum((x - fit) ** 2))
        assert pava_cost <= dp_cost + 1e-9


def test_variance_covariance_hand_values():
    eif = np.array([[0.0], [2.0]])
    sigma2, cov = variance_covariance(eif, np.array([1.0]))
    assert np.isclose(sigma2[0], 1.0)
    assert np.isclose(cov[0, 0], 1.0)


def test_variance_zero_when_phi_constant():
    eif = np.full((7, 3), 0.4)
    sigma2, cov = variance_covariance(eif, np.full(3, 0.4))
    assert np.allclose(sigma2, 0.0)
    assert np.allclose(np.diag(cov), sigma2)


def test_covariance_diagonal_equals_sigma2(rng):
    eif = rng.normal(size=(40, 6))
    theta = rng.uniform(size=6)
    sigma2, cov = variance_covariance(eif, theta)
    assert np.allclose(np.diag(cov), sigma2, atol=1e-8)
    assert np.allclose(cov, cov.T)


SMALL_CONFIG = NuisanceConfig(
    s_specs=[SurvivalLearnerSpec("km_marginal"),
             SurvivalLearnerSpec("parametric_aft", family="exponential")],
    g_specs=[SurvivalLearnerSpec("km_marginal"),
             SurvivalLearnerSpec("parametric_aft", family="exponential")],
    pi_specs=[PropensitySpec("marginal_mean"), PropensitySpec("logistic")],
    seed=3,
)


def test_cross_fit_models_ignore_held_out_fold(rng):
    data = random_survival_data(rng, n=80)
    folds = make_folds(data.n, 2, seed=7)
    bundle1 = fit_nuisances(data, folds, SMALL_CONFIG)

    val1 = folds.val_indices(1)
    y2 = data.y.copy()
    y2[val1] = y2[val1] * 2.0 + 0.37
    perturbed = Dataset(data.w, data.a, y2, data.delta, tau=data.tau)
    bundle2 = fit_nuisances(perturbed, folds, SMALL_CONFIG)

    w1 = bundle1.models[1].surv.weights.alpha
    w2 = bundle2.models[1].surv.weights.alpha
    assert np.allclose(w1, w2, atol=1e-12)
    grid = np.linspace(0.2, 2.0, 5)
    p1 = bundle1.models[1].surv.survival(grid, 1, data.w[:3])
    p2 = bundle2.models[1].surv.survival(grid, 1, data.w[:3])
    assert np.allclose(p1, p2, atol=1e-12)


def test_fold_model_equals_manual_refit(rng):
    from drsurv.ensemble import iterate_superlearner
    data = random_survival_data(rng, n=80)
    folds = make_folds(data.n, 2, seed=11)
    config = SMALL_CONFIG
    bundle = fit_nuisances(data, folds, config)
    train = data.subset(folds.train_indices(1))
    ens_s, _, _ = iterate_superlearner(
        train, config.s_specs, config.g_specs, k_cv=2, tol=config.tol,
        max_iter=config.max_iter, grid_size=config.loss_grid_size,
        floor=config.loss_floor, seed=config.seed + 49)
    assert np.allclose(bundle.models[1].surv.weights.alpha, ens_s.weights.alpha, atol=1e-12)


def test_eta_truncation_floors_applied(rng):
    # G that dips to 0.001 must enter the influence values floored at 1/eta
    n = 30
    y = np.linspace(0.1, 3.0, n)
    data = make_dataset(y, np.ones(n, dtype=int), a=np.tile([0, 1], 15), tau=3.0)
    grid = event_grid(data)
    bundle = plug_in_bundle(data, ConstantSurvival(1.0), ConstantSurvival(0.001),
                            FixedPropensity(0.5), eta=20.0)
    est = one_step_curve(data, bundle, grid, 1)
    assert np.all(np.isfinite(est.theta_raw))
    assert bundle.truncation_report[1]["floored_fraction"] > 0.9
    # worst-case magnitude is bounded by the floor, not by 1/0.001
    assert np.max(np.abs(est.eif)) <= 1.0 / 0.5 * (1.0 / 0.05) + 1.0


def test_estimate_curve_projection_and_shapes(rng):
    data = random_survival_data(rng, n=90)
    grid = event_grid(data)
    bundle = km_plug_in(data)
    est = estimate_curve(data, bundle, grid, 1)
    assert est.theta_proj.shape == grid.times.shape
    assert np.all(np.diff(est.theta_proj) <= 1e-12)
    assert np.all((est.theta_proj >= 0) & (est.theta_proj <= 1))
    assert est.covariance.shape == (grid.size, grid.size)
    assert np.allclose(np.diag(est.covariance), est.sigma2, atol=1e-8)
    # step evaluation: before the grid the curve is one
    assert est.evaluate(grid.times[0] / 2) == 1.0


def test_projection_contraction_against_truth(rng):
    # the projected curve is never farther from any non-increasing truth
    for _ in range(40):
        T = 12
        truth = np.sort(rng.uniform(size=T))[::-1]
        raw = truth + rng.normal(scale=0.15, size=T)
        proj = monotone_project(raw)
        sup_raw = np.max(np.abs(raw - truth))
        sup_proj = np.max(np.abs(proj - truth))
        assert sup_proj <= sup_raw + 1e-12


def test_cross_fitted_pipeline_end_to_end(rng):
    data = random_survival_data(rng, n=120)
    folds = make_folds(data.n, 2, seed=5)
    bundle = fit_nuisances(data, folds, SMALL_CONFIG)
    grid = event_grid(data)
    for arm in (0, 1):
        est = estimate_curve(data, bundle, grid, arm)
        assert np.all(np.isfinite(est.theta_raw))
        assert np.all(np.diff(est.theta_proj) <= 1e-12)
        assert np.all(est.sigma2 >= 0)


def test_estimate_both_arms_wrapper(rng):
    from drsurv.estimator import estimate_both_arms
    data = random_survival_data(rng, n=90)
    curves, bundle = estimate_both_arms(data, n_folds=2, config=SMALL_CONFIG, seed=4)
    assert set(curves) == {0, 1}
    assert curves[0].n == data.n
    assert bundle.folds.n_folds == 2


def test_fit_nuisances_threads_parity(rng):
    data = random_survival_data(rng, n=80)
    folds = make_folds(data.n, 2, seed=3)
    b1 = fit_nuisances(data, folds, SMALL_CONFIG, threads=1)
    b2 = fit_nuisances(data, folds, SMALL_CONFIG, threads=2)
    for k in (1, 2):
        assert np.allclose(b1.models[k].surv.weights.alpha,
                           b2.models[k].surv.weights.alpha, atol=1e-15)


def test_covariance_csv_export(rng, tmp_path):
    data = random_survival_data(rng, n=70)
    bundle = km_plug_in(data)
    est = estimate_curve(data, bundle, event_grid(data), 1)
    path = tmp_path / "cov.csv"
    est.covariance_to_csv(path)
    loaded = np.loadtxt(path, delimiter=",", skiprows=1)
    assert loaded.shape == est.covariance.shape
    assert np.allclose(loaded, est.covariance, atol=1e-12)
