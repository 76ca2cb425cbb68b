"""Iterative ensemble for conditional survival and censoring functions.

Candidate learners are cross-validated once; the two integrated squared-error
losses (one per role, each inverse-weighted by the opposite role's predictions
at the observed time) are quadratic in the convex-combination weights, so each
weight update is a small simplex-constrained QP solved by projected gradient.
The S and G updates alternate until the held-out predictions stop moving.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, FoldAssignment, make_folds
from .errors import FitError
from .learners import EPS_PROPENSITY, fit_km_marginal

DEFAULT_LOSS_GRID_SIZE = 100
DEFAULT_DENOM_FLOOR = 0.05
DEFAULT_TOL = 1e-3
DEFAULT_MAX_ITER = 20


@dataclass(frozen=True)
class SimplexWeights:
    alpha: np.ndarray
    achieved_risk: float

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        if np.any(alpha < -1e-12) or abs(alpha.sum() - 1.0) > 1e-10:
            raise ValueError("weights must be non-negative and sum to one")
        object.__setattr__(self, "alpha", np.clip(alpha, 0.0, None))


@dataclass
class CvPredictionCube:
    """Held-out candidate predictions: `values[i, j, t]` on the loss grid and
    `at_y[i, j]` at observation i's own follow-up time, both from the fit that
    excluded i's fold."""

    values: np.ndarray
    at_y: np.ndarray
    grid: np.ndarray
    step: float
    candidate_names: list[str]
    role: str


class EnsembleSurvival:
    """Convex combination of refit candidates; same predict surface as any learner."""

    def __init__(self, weights: SimplexWeights, candidates, candidate_names, role):
        self.weights = weights
        self.candidates = candidates
        self.candidate_names = candidate_names
        self.role = role

    def describe(self) -> dict:
        return {"kind": "ensemble", "role": self.role,
                "weights": dict(zip(self.candidate_names, self.weights.alpha.tolist())),
                "cv_risk": self.weights.achieved_risk,
                "candidates": [m.describe() for m in self.candidates]}

    def survival(self, times, a, W, side: str = "right") -> np.ndarray:
        out = None
        for alpha_j, model in zip(self.weights.alpha, self.candidates):
            if alpha_j == 0.0:
                continue
            term = alpha_j * model.survival(times, a, W, side=side)
            out = term if out is None else out + term
        return out


class EnsemblePropensity:
    def __init__(self, weights: SimplexWeights, candidates, candidate_names,
                 eps: float = EPS_PROPENSITY):
        self.weights = weights
        self.candidates = candidates
        self.candidate_names = candidate_names
        self.eps = eps

    def describe(self) -> dict:
        return {"kind": "ensemble_propensity",
                "weights": dict(zip(self.candidate_names, self.weights.alpha.tolist())),
                "cv_mse": self.weights.achieved_risk,
                "candidates": [m.describe() for m in self.candidates]}

    def predict(self, W) -> np.ndarray:
        out = 0.0
        for alpha_j, model in zip(self.weights.alpha, self.candidates):
            if alpha_j == 0.0:
                continue
            out = out + alpha_j * model.predict(W)
        return np.clip(out, self.eps, 1.0 - self.eps)


# ---------------------------------------------------------------------------
# losses (single-observation form; the cube path below uses the same algebra)


def event_loss(y, delta, a, w, surv, cens, tau, grid_size: int = DEFAULT_LOSS_GRID_SIZE,
               floor: float = DEFAULT_DENOM_FLOOR) -> float:
    """Integrated squared-error loss for the event-survival role, with the
    censoring predictor supplying the inverse weight at the observed time."""
    grid, step = _loss_grid(tau, grid_size)
    w_row = np.atleast_2d(np.asarray(w, dtype=float))
    s_vals = surv.survival(grid, int(a), w_row)[0]
    g_at_y = max(float(cens.survival(np.array([y]), int(a), w_row, side="left")[0, 0]), floor)
    c = 1.0 - delta * (y <= grid) / g_at_y
    val = float(np.sum(s_vals * (s_vals - 2.0 * c)) * step)
    if not np.isfinite(val):
        raise FitError("non-finite event loss")
    return val


def censoring_loss(y, delta, a, w, cens, surv, tau, grid_size: int = DEFAULT_LOSS_GRID_SIZE,
                   floor: float = DEFAULT_DENOM_FLOOR) -> float:
    """Mirror loss for the censoring role; note the strict inequality y < t."""
    grid, step = _loss_grid(tau, grid_size)
    w_row = np.atleast_2d(np.asarray(w, dtype=float))
    g_vals = cens.survival(grid, int(a), w_row, side="left")[0]
    s_at_y = max(float(surv.survival(np.array([y]), int(a), w_row)[0, 0]), floor)
    c = 1.0 - (1 - delta) * (y < grid) / s_at_y
    val = float(np.sum(g_vals * (g_vals - 2.0 * c)) * step)
    if not np.isfinite(val):
        raise FitError("non-finite censoring loss")
    return val


def _loss_grid(tau: float, grid_size: int):
    # left endpoints of grid_size equal cells partitioning (0, tau]
    return np.linspace(0.0, tau, grid_size, endpoint=False), tau / grid_size


# ---------------------------------------------------------------------------
# cross-validated prediction cubes


def build_cv_cube(data: Dataset, specs, folds: FoldAssignment, role: str,
                  grid_size: int = DEFAULT_LOSS_GRID_SIZE) -> CvPredictionCube:
    """Fit every candidate on each training fold and collect held-out predictions.

    A candidate that fails on any fold is dropped entirely (the cube must stay
    complete); at least one candidate has to survive.
    """
    names_all = [s.name for s in specs]
    if len(set(names_all)) != len(names_all):
        raise ValueError("candidate names must be unique")
    grid, step = _loss_grid(data.tau, grid_size)
    n, p = data.n, len(specs)
    values = np.full((n, p, grid.size), np.nan)
    at_y = np.full((n, p), np.nan)
    side = "right" if role == "event" else "left"
    target = role
    alive = list(range(p))
    for k in folds.labels:
        train = data.subset(folds.train_indices(k))
        val_idx = folds.val_indices(k)
        y_val, a_val, w_val = data.y[val_idx], data.a[val_idx], data.w[val_idx]
        uniq_y, y_pos = np.unique(y_val, return_inverse=True)
        for j in list(alive):
            try:
                model = specs[j].fit(train, target)
            except FitError:
                alive.remove(j)
                continue
            for arm in (0, 1):
                rows = a_val == arm
                if not np.any(rows):
                    continue
                idx = val_idx[rows]
                values[idx, j, :] = model.survival(grid, arm, w_val[rows])
                aty = model.survival(uniq_y, arm, w_val[rows], side=side)
                at_y[idx, j] = aty[np.arange(rows.sum()), y_pos[rows]]
    if not alive:
        raise FitError(f"all {role} candidates failed during cross-validation")
    names = [specs[j].name for j in alive]
    values = values[:, alive, :]
    at_y = at_y[:, alive]
    for j, name in enumerate(names):
        if not (np.all(np.isfinite(values[:, j, :])) and np.all(np.isfinite(at_y[:, j]))):
            raise FitError(f"non-finite cross-validated predictions from candidate {name}")
    return CvPredictionCube(values, at_y, grid, step, names, role)


def _refit_or_drop(data: Dataset, specs, cube: CvPredictionCube, target: str):
    """Full-data refits for every candidate that survived cross-validation;
    candidates whose refit fails are dropped from the cube as well."""
    models, keep = [], []
    for j, name in enumerate(cube.candidate_names):
        spec = next(s for s in specs if s.name == name)
        try:
            models.append(spec.fit(data, target) if target else spec.fit(data))
            keep.append(j)
        except FitError:
            continue
    if not models:
        raise FitError(f"no {cube.role} candidate could be refit on the full data")
    cube = CvPredictionCube(cube.values[:, keep, :], cube.at_y[:, keep], cube.grid,
                            cube.step, [cube.candidate_names[j] for j in keep], cube.role)
    return cube, models


def _quadratic_parts(cube: CvPredictionCube, c_matrix: np.ndarray):
    n = cube.values.shape[0]
    scale = cube.step / n
    q = scale * np.einsum("ijt,ikt->jk", cube.values, cube.values)
    b = scale * np.einsum("ijt,it->j", cube.values, c_matrix)
    return q, b


def solve_simplex_weights(q: np.ndarray, b: np.ndarray, gap_tol: float = 1e-8,
                          max_iter: int = 200_000) -> SimplexWeights:
    """Minimize a'Qa - 2b'a over the probability simplex.

    Accelerated projected gradient from the uniform start with monotone
    restart; terminates when the simplex duality gap a'g - min_j g_j (an upper
    bound on the optimality gap) falls below gap_tol. Deterministic throughout,
    so ties resolve the same way on every run.
    """
    p = b.size
    if p == 1:
        return SimplexWeights(np.ones(1), float(q[0, 0] - 2.0 * b[0]))
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(b))):
        raise FitError("non-finite loss entries in simplex problem")
    lip = 2.0 * max(float(np.linalg.eigvalsh(q)[-1]), 1e-12)

    def objective(x):
        return float(x @ q @ x - 2.0 * b @ x)

    alpha = np.full(p, 1.0 / p)
    momentum = alpha.copy()
    t_acc = 1.0
    f_prev = objective(alpha)
    for _ in range(max_iter):
        grad = 2.0 * (q @ alpha - b)
        gap = float(alpha @ grad - grad.min())
        if gap < gap_tol:
            break
        grad_m = 2.0 * (q @ momentum - b)
        nxt = _project_simplex(momentum - grad_m / lip)
        f_nxt = objective(nxt)
        if f_nxt > f_prev:  # restart the momentum sequence
            momentum = alpha.copy()
            t_acc = 1.0
            nxt = _project_simplex(alpha - grad / lip)
            f_nxt = objective(nxt)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_acc * t_acc))
        momentum = nxt + ((t_acc - 1.0) / t_new) * (nxt - alpha)
        alpha, t_acc, f_prev = nxt, t_new, f_nxt
    risk = float(alpha @ q @ alpha - 2.0 * b @ alpha)
    return SimplexWeights(alpha, risk)


def _project_simplex(v: np.ndarray) -> np.ndarray:
    # Euclidean projection onto the probability simplex (sort-based)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u - css / np.arange(1, v.size + 1) > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def vertex_risks(q: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.diag(q) - 2.0 * b


# ---------------------------------------------------------------------------
# the alternating procedure


@dataclass
class SuperLearnerReport:
    iterations: int = 0
    converged: bool = False
    s_weights: dict = field(default_factory=dict)
    g_weights: dict = field(default_factory=dict)
    s_risk: float = np.nan
    g_risk: float = np.nan
    s_vertex_risks: dict = field(default_factory=dict)
    g_vertex_risks: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "event_role": {"weights": self.s_weights, "risk": self.s_risk,
                           "candidate_risks": self.s_vertex_risks},
            "censoring_role": {"weights": self.g_weights, "risk": self.g_risk,
                               "candidate_risks": self.g_vertex_risks},
        }


def iterate_superlearner(data: Dataset, s_specs, g_specs, k_cv: int = 5,
                         tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                         grid_size: int = DEFAULT_LOSS_GRID_SIZE,
                         floor: float = DEFAULT_DENOM_FLOOR, seed: int = 0,
                         folds: FoldAssignment | None = None):
    """Alternating weight optimization for the event and censoring roles.

    Candidate fits happen once, up front, when the cubes are built. The
    censoring role starts from the treatment-stratified censoring Kaplan-Meier.
    Returns (event ensemble, censoring ensemble, report).
    """
    if folds is None:
        folds = make_folds(data.n, k_cv, seed)
    cube_s = build_cv_cube(data, s_specs, folds, "event", grid_size)
    cube_g = build_cv_cube(data, g_specs, folds, "censoring", grid_size)
    cube_s, s_models = _refit_or_drop(data, s_specs, cube_s, "event")
    cube_g, g_models = _refit_or_drop(data, g_specs, cube_g, "censoring")

    km0 = fit_km_marginal(data, "censoring")
    g_at_y = np.empty(data.n)
    for arm in (0, 1):
        rows = data.a == arm
        uniq_y, pos = np.unique(data.y[rows], return_inverse=True)
        g_at_y[rows] = km0.survival(uniq_y, arm, data.w[rows], side="left")[
            np.arange(rows.sum()), pos]

    t_le = data.y[:, None] <= cube_s.grid[None, :]
    t_lt = data.y[:, None] < cube_g.grid[None, :]
    delta = data.delta.astype(float)

    prev_s_pred = None
    prev_g_pred = _cube_prediction_of_model(km0, data, cube_g.grid, side="left")
    alpha_s = alpha_g = None
    risk_s = risk_g = np.nan
    iterations, converged = 0, False
    for it in range(1, max_iter + 1):
        iterations = it
        c_s = 1.0 - delta[:, None] * t_le / np.maximum(g_at_y, floor)[:, None]
        q_s, b_s = _quadratic_parts(cube_s, c_s)
        sol_s = solve_simplex_weights(q_s, b_s)
        alpha_s, risk_s = sol_s.alpha, sol_s.achieved_risk
        s_pred = np.tensordot(cube_s.values, alpha_s, axes=([1], [0]))
        s_at_y = cube_s.at_y @ alpha_s

        c_g = 1.0 - (1.0 - delta)[:, None] * t_lt / np.maximum(s_at_y, floor)[:, None]
        q_g, b_g = _quadratic_parts(cube_g, c_g)
        sol_g = solve_simplex_weights(q_g, b_g)
        alpha_g, risk_g = sol_g.alpha, sol_g.achieved_risk
        g_pred = np.tensordot(cube_g.values, alpha_g, axes=([1], [0]))
        g_at_y = cube_g.at_y @ alpha_g

        change_s = np.inf if prev_s_pred is None else float(np.max(np.abs(s_pred - prev_s_pred)))
        change_g = float(np.max(np.abs(g_pred - prev_g_pred)))
        prev_s_pred, prev_g_pred = s_pred, g_pred
        if max(change_s, change_g) <= tol:
            converged = True
            break

    report = SuperLearnerReport(
        iterations=iterations, converged=converged,
        s_weights=dict(zip(cube_s.candidate_names, alpha_s.tolist())),
        g_weights=dict(zip(cube_g.candidate_names, alpha_g.tolist())),
        s_risk=risk_s, g_risk=risk_g,
        s_vertex_risks=dict(zip(cube_s.candidate_names, vertex_risks(q_s, b_s).tolist())),
        g_vertex_risks=dict(zip(cube_g.candidate_names, vertex_risks(q_g, b_g).tolist())),
    )
    ens_s = EnsembleSurvival(SimplexWeights(alpha_s, risk_s), s_models,
                             cube_s.candidate_names, "event")
    ens_g = EnsembleSurvival(SimplexWeights(alpha_g, risk_g), g_models,
                             cube_g.candidate_names, "censoring")
    return ens_s, ens_g, report


def _cube_prediction_of_model(model, data: Dataset, grid, side: str) -> np.ndarray:
    out = np.empty((data.n, grid.size))
    for arm in (0, 1):
        rows = data.a == arm
        if np.any(rows):
            out[rows] = model.survival(grid, arm, data.w[rows], side=side)
    return out


def propensity_superlearner(data: Dataset, specs, k_cv: int = 5, seed: int = 0,
                            folds: FoldAssignment | None = None):
    """Standard convex-weight stacking for the propensity, under CV squared error."""
    if folds is None:
        folds = make_folds(data.n, k_cv, seed)
    n, p = data.n, len(specs)
    preds = np.full((n, p), np.nan)
    alive = list(range(p))
    for k in folds.labels:
        train = data.subset(folds.train_indices(k))
        val_idx = folds.val_indices(k)
        for j in list(alive):
            try:
                model = specs[j].fit(train)
            except FitError:
                alive.remove(j)
                continue
            preds[val_idx, j] = model.predict(data.w[val_idx])
    if not alive:
        raise FitError("all propensity candidates failed during cross-validation")
    names = [specs[j].name for j in alive]
    preds = preds[:, alive]
    models, keep = [], []
    for j, name in enumerate(names):
        spec = next(s for s in specs if s.name == name)
        try:
            models.append(spec.fit(data))
            keep.append(j)
        except FitError:
            continue
    if not models:
        raise FitError("no propensity candidate could be refit on the full data")
    names = [names[j] for j in keep]
    preds = preds[:, keep]
    a = data.a.astype(float)
    q = preds.T @ preds / n
    b = preds.T @ a / n
    sol = solve_simplex_weights(q, b)
    mse = sol.achieved_risk + float(np.mean(a ** 2))
    weights = SimplexWeights(sol.alpha, mse)
    report = {"weights": dict(zip(names, sol.alpha.tolist())), "cv_mse": mse,
              "candidate_mse": (vertex_risks(q, b) + np.mean(a ** 2)).tolist()}
    return EnsemblePropensity(weights, models, names), report
