"""Candidate nuisance learners with a uniform predict-on-grid interface.

Every fitted conditional survival model exposes
    survival(times, arm, W, side) -> (n, T)
returning right-continuous values (side="right") or left limits (side="left",
the evaluation rule for censoring curves). Every fitted propensity exposes
    predict(W) -> (n,) in [EPS_PROPENSITY, 1 - EPS_PROPENSITY].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import FitError
from .hazard import StepSurvival, km_fit

EPS_PROPENSITY = 0.01
_LOGY_FLOOR = 1e-12  # events recorded at time zero would otherwise break log-time terms
_COEF_NORM_CAP = 30.0


def expit(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


# ---------------------------------------------------------------------------
# generic Newton machinery


def _drop_collinear(X: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Indices of a maximal linearly independent column subset (greedy, in order)."""
    keep: list[int] = []
    basis = np.empty((X.shape[0], 0))
    for j in range(X.shape[1]):
        col = X[:, j].astype(float)
        norm = np.linalg.norm(col)
        if norm == 0:
            continue
        if basis.shape[1]:
            col = col - basis @ (basis.T @ col)
        if np.linalg.norm(col) > tol * max(norm, 1.0):
            keep.append(j)
            basis = np.column_stack([basis, col / np.linalg.norm(col)])
    return np.asarray(keep, dtype=int)


def _standardize(X: np.ndarray):
    """Center and scale non-constant columns (conditioning for Newton); constant
    columns, e.g. the intercept, pass through untouched."""
    sd = X.std(axis=0)
    scale = np.where(sd > 0, sd, 1.0)
    center = np.where(sd > 0, X.mean(axis=0), 0.0)
    return (X - center) / scale, center, scale


def _raw_scale_beta(beta_std: np.ndarray, center: np.ndarray, scale: np.ndarray,
                    intercept_index: int | None = 0) -> np.ndarray:
    """Map coefficients fitted on standardized columns back to the raw scale."""
    beta = beta_std / scale
    if intercept_index is not None:
        shift = float(np.sum(beta_std * center / scale))
        beta[intercept_index] = beta[intercept_index] - shift
    return beta


def newton_minimize(value_and_grad, x0, max_iter: int = 100, grad_tol: float = 1e-8,
                    coef_cap: float | None = None):
    """Newton descent with finite-difference Hessian and step-halving.

    Returns (x, info) where info records convergence, iterations, the final
    gradient sup-norm, and the per-iteration objective path (non-increasing).
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = value_and_grad(x)
    path = [f]
    capped = False
    for _ in range(max_iter):
        gnorm = np.max(np.abs(g)) if g.size else 0.0
        if gnorm < grad_tol:
            return x, {"converged": True, "iterations": len(path) - 1,
                       "grad_norm": gnorm, "nll_path": path, "capped": capped}
        hess = _fd_hessian(value_and_grad, x, g)
        step = _descent_direction(hess, g)
        # halve until the objective does not increase
        scale, accepted = 1.0, False
        for _ in range(50):
            cand = x - scale * step
            fc, gc = value_and_grad(cand)
            if np.isfinite(fc) and fc <= f + 1e-14:
                x, f, g = cand, fc, gc
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            break
        path.append(f)
        if coef_cap is not None and np.linalg.norm(x) > coef_cap:
            x *= coef_cap / np.linalg.norm(x)
            f, g = value_and_grad(x)
            path.append(f)
            capped = True
            break
    gnorm = np.max(np.abs(g)) if g.size else 0.0
    converged = gnorm < grad_tol or capped
    return x, {"converged": converged, "iterations": len(path) - 1,
               "grad_norm": gnorm, "nll_path": path, "capped": capped}


def _fd_hessian(value_and_grad, x, g0, rel: float = 1e-6):
    p = x.size
    h = np.empty((p, p))
    for j in range(p):
        eps = rel * (abs(x[j]) + 1.0)
        xp = x.copy()
        xp[j] += eps
        h[:, j] = (value_and_grad(xp)[1] - g0) / eps
    return 0.5 * (h + h.T)


def _descent_direction(hess, grad):
    p = grad.size
    ridge = 0.0
    for _ in range(12):
        try:
            step = np.linalg.solve(hess + ridge * np.eye(p), grad)
        except np.linalg.LinAlgError:
            step = None
        if step is not None and step @ grad > 0:
            return step
        ridge = max(2.0 * ridge, 1e-8 * (1.0 + np.trace(np.abs(hess)) / max(p, 1)))
    return grad.copy()


# ---------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class SurvivalLearnerSpec:
    """Declarative description of one candidate conditional-survival learner."""

    kind: str  # km_marginal | parametric_aft | cox_breslow | piecewise_hazard
    family: str | None = None  # exponential | weibull | loglogistic (parametric_aft)
    bins: int = 1
    covariate_subset: tuple[int, ...] | None = None
    include_treatment: bool = True
    include_treatment_interactions: bool = False

    def __post_init__(self):
        if self.kind not in ("km_marginal", "parametric_aft", "cox_breslow", "piecewise_hazard"):
            raise ValueError(f"unknown learner kind {self.kind!r}")
        if self.kind == "parametric_aft" and self.family not in ("exponential", "weibull", "loglogistic"):
            raise ValueError(f"unknown AFT family {self.family!r}")
        if self.kind == "piecewise_hazard" and self.bins < 1:
            raise ValueError("piecewise_hazard requires bins >= 1")

    @property
    def name(self) -> str:
        parts = [self.kind]
        if self.family:
            parts.append(self.family)
        if self.kind == "piecewise_hazard":
            parts.append(f"bins{self.bins}")
        if self.include_treatment_interactions:
            parts.append("int")
        return "_".join(parts)

    def fit(self, data: Dataset, target: str):
        if self.kind == "km_marginal":
            return fit_km_marginal(data, target)
        if self.kind == "parametric_aft":
            return fit_parametric_aft(data, self.family, target, self)
        if self.kind == "cox_breslow":
            return fit_cox_breslow(data, target, self)
        return fit_piecewise_hazard(data, target, self)


@dataclass(frozen=True)
class PropensitySpec:
    kind: str  # logistic | marginal_mean
    covariate_subset: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("logistic", "marginal_mean"):
            raise ValueError(f"unknown propensity kind {self.kind!r}")

    @property
    def name(self) -> str:
        return self.kind

    def fit(self, data: Dataset):
        if self.kind == "logistic":
            return fit_logistic(data, self)
        return fit_marginal_mean(data)


def _subset(spec, n_cov: int) -> np.ndarray:
    if spec.covariate_subset is None:
        return np.arange(n_cov)
    idx = np.asarray(spec.covariate_subset, dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= n_cov):
        raise ValueError(f"covariate_subset out of range for {n_cov} covariates")
    return idx


def _design(a, W, subset, interactions: bool, intercept: bool = True,
            include_treatment: bool = True) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    cols = [np.ones_like(a)] if intercept else []
    if include_treatment:
        cols.append(a)
    Wsub = np.asarray(W, dtype=float)[:, subset]
    cols.extend(Wsub.T)
    if interactions and include_treatment:
        cols.extend((a[:, None] * Wsub).T)
    if not cols:
        return np.empty((a.size, 0))
    return np.column_stack(cols)


def _target_delta(data: Dataset, target: str) -> np.ndarray:
    if target == "event":
        return data.delta.astype(float)
    if target == "censoring":
        return 1.0 - data.delta
    raise ValueError(f"unknown target {target!r}")


# ---------------------------------------------------------------------------
# parametric AFT survival regression


class ParametricSurvival:
    """Right-censored exponential / Weibull / log-logistic regression (log link)."""

    def __init__(self, family, beta, log_shape, subset, interactions, with_treatment,
                 kept_columns, fit_info):
        self.family = family
        self.beta = beta
        self.log_shape = log_shape
        self.subset = subset
        self.interactions = interactions
        self.with_treatment = with_treatment
        self.kept_columns = kept_columns
        self.fit_info = fit_info

    def _linpred(self, a, W):
        X = _design(np.full(np.shape(W)[0], a, dtype=float), W, self.subset, self.interactions,
                    include_treatment=self.with_treatment)
        return X[:, self.kept_columns] @ self.beta

    def describe(self) -> dict:
        return {"kind": "parametric_aft", "family": self.family,
                "coefficients": self.beta.tolist(), "log_shape": self.log_shape,
                "iterations": self.fit_info["iterations"],
                "grad_norm": float(self.fit_info["grad_norm"])}

    def survival(self, times, a, W, side: str = "right") -> np.ndarray:
        times = np.asarray(times, dtype=float)
        z = self._linpred(a, W)[:, None]
        with np.errstate(divide="ignore", over="ignore"):
            if self.family == "exponential":
                out = np.exp(-np.exp(np.clip(z, -700, 700)) * times[None, :])
            else:
                kappa = np.exp(self.log_shape)
                logt = np.where(times > 0, np.log(np.maximum(times, _LOGY_FLOOR)), -np.inf)
                expnt = np.clip(kappa * (logt[None, :] - z), -700, 700)
                if self.family == "weibull":
                    out = np.exp(-np.exp(expnt))
                else:
                    out = expit(-expnt)
        return np.clip(out, 0.0, 1.0)


def _aft_value_and_grad(family, X, y, delta):
    n = y.size
    logy = np.log(np.maximum(y, _LOGY_FLOOR))

    def value_and_grad(params):
        if family == "exponential":
            beta, g = params, None
        else:
            beta, g = params[:-1], params[-1]
        z = X @ beta
        if family == "exponential":
            lam = np.exp(np.clip(z, -700, 700))
            nll = float(np.mean(-delta * z + y * lam))
            grad = X.T @ (-delta + y * lam) / n
            return nll, grad
        kappa = np.exp(np.clip(g, -30, 30))
        m = logy - z
        # exponent capped so kappa * u * m stays finite; such points are deep in
        # the rejection region of the step-halving search anyway
        u = np.exp(np.clip(kappa * m, -200.0, 200.0))
        if family == "weibull":
            nll = float(np.mean(-delta * (g + (kappa - 1.0) * logy - kappa * z) + u))
            gbeta = X.T @ (kappa * (delta - u)) / n
            gg = float(np.mean(-delta * (1.0 + kappa * m) + kappa * u * m))
        else:  # loglogistic
            p = u / (1.0 + u)
            nll = float(np.mean(-delta * (g + (kappa - 1.0) * logy - kappa * z)
                                + (1.0 + delta) * np.log1p(u)))
            gbeta = X.T @ (kappa * (delta - (1.0 + delta) * p)) / n
            gg = float(np.mean(-delta * (1.0 + kappa * m) + (1.0 + delta) * p * kappa * m))
        return nll, np.concatenate([gbeta, [gg]])

    return value_and_grad


def fit_parametric_aft(data: Dataset, family: str, target: str,
                       spec: SurvivalLearnerSpec | None = None) -> ParametricSurvival:
    spec = spec or SurvivalLearnerSpec("parametric_aft", family=family)
    delta = _target_delta(data, target)
    if not np.any(delta == 1):
        raise FitError(f"no uncensored observations for target {target!r}")
    subset = _subset(spec, data.n_covariates)
    X_full = _design(data.a, data.w, subset, spec.include_treatment_interactions,
                     include_treatment=spec.include_treatment)
    X_std_full, center, scale = _standardize(X_full)
    kept = _drop_collinear(X_std_full)
    X = X_std_full[:, kept]

    x0 = np.zeros(X.shape[1] + (0 if family == "exponential" else 1))
    rate0 = np.sum(delta) / max(np.sum(data.y), _LOGY_FLOOR)
    x0[0] = np.log(max(rate0, 1e-8)) if family == "exponential" else np.log(max(np.mean(data.y), 1e-8))
    fn = _aft_value_and_grad(family, X, data.y, delta)
    params, info = newton_minimize(fn, x0)
    if not info["converged"]:
        raise FitError(f"AFT fit ({family}, {target}) did not converge; "
                       f"gradient sup-norm {info['grad_norm']:.3e}")
    if family == "exponential":
        beta_std, log_shape = params, 0.0
    else:
        beta_std, log_shape = params[:-1], float(params[-1])
    beta = _raw_scale_beta(beta_std, center[kept], scale[kept])
    return ParametricSurvival(family, beta, log_shape, subset,
                              spec.include_treatment_interactions, spec.include_treatment,
                              kept, info)


# ---------------------------------------------------------------------------
# Cox proportional hazards, Breslow ties and baseline


class CoxSurvival:
    """S(t | a, w) = exp(-Lambda_0(t) exp(x'beta)) with a Breslow step baseline."""

    def __init__(self, beta, base_times, base_cumhaz, subset, interactions, with_treatment,
                 kept_columns, fit_info):
        self.beta = beta
        self.base_times = base_times
        self.base_cumhaz = base_cumhaz
        self.subset = subset
        self.interactions = interactions
        self.with_treatment = with_treatment
        self.kept_columns = kept_columns
        self.fit_info = fit_info

    def describe(self) -> dict:
        return {"kind": "cox_breslow", "coefficients": self.beta.tolist(),
                "baseline_jumps": int(self.base_times.size),
                "iterations": self.fit_info["iterations"]}

    def survival(self, times, a, W, side: str = "right") -> np.ndarray:
        times = np.asarray(times, dtype=float)
        X = _design(np.full(np.shape(W)[0], a, dtype=float), W, self.subset,
                    self.interactions, intercept=False, include_treatment=self.with_treatment)
        eta = X[:, self.kept_columns] @ self.beta if self.beta.size else np.zeros(X.shape[0])
        searchside = "right" if side == "right" else "left"
        idx = np.searchsorted(self.base_times, times, side=searchside)
        cum = np.concatenate(([0.0], self.base_cumhaz))[idx]
        with np.errstate(over="ignore"):
            out = np.exp(-cum[None, :] * np.exp(np.clip(eta, -700, 700))[:, None])
        return np.clip(out, 0.0, 1.0)


def _cox_risk_sums(y, order_desc, values):
    """Cumulative sums of `values` over the descending-time risk sets, with all
    tied rows included (Breslow)."""
    ys = y[order_desc]
    cs = np.cumsum(values[order_desc], axis=0)
    change = np.concatenate([ys[1:] != ys[:-1], [True]])
    ends = np.nonzero(change)[0]
    block_end = ends[np.searchsorted(ends, np.arange(ys.size), side="left")]
    return ys, cs[block_end]


def fit_cox_breslow(data: Dataset, target: str,
                    spec: SurvivalLearnerSpec | None = None) -> CoxSurvival:
    spec = spec or SurvivalLearnerSpec("cox_breslow")
    delta = _target_delta(data, target)
    if not np.any(delta == 1):
        raise FitError(f"no uncensored observations for target {target!r}")
    subset = _subset(spec, data.n_covariates)
    X_full = _design(data.a, data.w, subset, spec.include_treatment_interactions,
                     intercept=False, include_treatment=spec.include_treatment)
    X_std_full, center, scale = _standardize(X_full)
    kept = _drop_collinear(X_std_full)
    X = X_std_full[:, kept]
    y = data.y
    n = y.size
    order_desc = np.argsort(-y, kind="stable")

    def value_and_grad(beta):
        eta = X @ beta
        w = np.exp(np.clip(eta, -700, 700))
        ys, risk0 = _cox_risk_sums(y, order_desc, w)
        _, risk1 = _cox_risk_sums(y, order_desc, w[:, None] * X)
        ev = delta[order_desc] == 1
        eta_s = eta[order_desc]
        X_s = X[order_desc]
        nll = -float(np.sum(eta_s[ev] - np.log(risk0[ev]))) / n
        grad = -(X_s[ev] - risk1[ev] / risk0[ev][:, None]).sum(axis=0) / n
        return nll, grad

    if X.shape[1]:
        beta_std, info = newton_minimize(value_and_grad, np.zeros(X.shape[1]),
                                         coef_cap=_COEF_NORM_CAP)
        if info["capped"]:
            raise FitError("monotone partial likelihood: no finite maximizer "
                           f"(coefficient norm reached {_COEF_NORM_CAP})")
        if not info["converged"]:
            raise FitError(f"Cox fit did not converge; gradient sup-norm {info['grad_norm']:.3e}")
        beta = _raw_scale_beta(beta_std, center[kept], scale[kept], intercept_index=None)
    else:
        beta, info = np.empty(0), {"converged": True, "iterations": 0, "grad_norm": 0.0,
                                   "nll_path": [], "capped": False}

    # Breslow baseline on the raw (sum) scale, consistent with the raw-scale beta
    X = X_full[:, kept]
    eta = X @ beta if beta.size else np.zeros(n)
    w = np.exp(np.clip(eta, -700, 700))
    ys, risk0 = _cox_risk_sums(y, order_desc, w)
    ev = delta[order_desc] == 1
    ev_times, inv = np.unique(ys[ev], return_inverse=True)
    d_sum = np.bincount(inv, minlength=ev_times.size)
    risk_at = np.zeros(ev_times.size)
    risk_at[inv] = risk0[ev]
    base_jumps = d_sum / risk_at
    return CoxSurvival(beta, ev_times, np.cumsum(base_jumps), subset,
                       spec.include_treatment_interactions, spec.include_treatment, kept, info)


# ---------------------------------------------------------------------------
# piecewise-constant (discrete) hazard via per-bin logistic regressions


class PiecewiseHazardSurvival:
    """Discrete hazard per bin, logistic in (a, w); survival steps at bin edges."""

    def __init__(self, edges, bin_models, subset, interactions, with_treatment):
        self.edges = edges  # right edges, increasing
        self.bin_models = bin_models  # list of (kept_columns, beta)
        self.subset = subset
        self.interactions = interactions
        self.with_treatment = with_treatment

    def describe(self) -> dict:
        return {"kind": "piecewise_hazard", "edges": self.edges.tolist(),
                "bin_coefficients": [beta.tolist() for _, beta in self.bin_models]}

    def hazards(self, a, W) -> np.ndarray:
        X = _design(np.full(np.shape(W)[0], a, dtype=float), W, self.subset, self.interactions,
                    include_treatment=self.with_treatment)
        out = np.empty((X.shape[0], len(self.bin_models)))
        for b, (kept, beta) in enumerate(self.bin_models):
            out[:, b] = expit(X[:, kept] @ beta)
        return out

    def survival(self, times, a, W, side: str = "right") -> np.ndarray:
        times = np.asarray(times, dtype=float)
        h = self.hazards(a, W)
        surv_after = np.cumprod(1.0 - h, axis=1)
        padded = np.concatenate([np.ones((h.shape[0], 1)), surv_after], axis=1)
        searchside = "right" if side == "right" else "left"
        idx = np.searchsorted(self.edges, times, side=searchside)
        return padded[:, idx]


def fit_piecewise_hazard(data: Dataset, target: str, spec: SurvivalLearnerSpec) -> PiecewiseHazardSurvival:
    delta = _target_delta(data, target)
    subset = _subset(spec, data.n_covariates)
    m = spec.bins
    interior = np.quantile(data.y, np.arange(1, m) / m) if m > 1 else np.empty(0)
    edges = np.unique(np.concatenate([interior[(interior > 0) & (interior < data.tau)],
                                      [data.tau]]))
    X = _design(data.a, data.w, subset, spec.include_treatment_interactions,
                include_treatment=spec.include_treatment)

    models, kept_edges = [], []
    lower = 0.0
    for b, upper in enumerate(edges):
        at_risk = data.y > lower
        if not np.any(at_risk):
            # empty risk set: merge this bin into its left neighbour
            if kept_edges:
                kept_edges[-1] = upper
            lower = upper
            continue
        event_in_bin = (at_risk & (data.y <= upper) & (delta == 1)).astype(float)
        Xb_std, center, scale = _standardize(X[at_risk])
        kept = _drop_collinear(Xb_std)
        beta_std, info = _irls_logistic(Xb_std[:, kept], event_in_bin[at_risk])
        models.append((kept, _raw_scale_beta(beta_std, center[kept], scale[kept])))
        kept_edges.append(upper)
        lower = upper
    if not models:
        raise FitError("piecewise hazard fit: no usable bins")
    return PiecewiseHazardSurvival(np.asarray(kept_edges), models, subset,
                                   spec.include_treatment_interactions, spec.include_treatment)


# ---------------------------------------------------------------------------
# marginal Kaplan-Meier (per treatment stratum, ignores covariates)


class KmMarginalSurvival:
    def __init__(self, curves: dict[int, StepSurvival]):
        self.curves = curves

    def describe(self) -> dict:
        return {"kind": "km_marginal",
                "jumps": {arm: int(c.jump_times.size) for arm, c in self.curves.items()}}

    def survival(self, times, a, W, side: str = "right") -> np.ndarray:
        vals = self.curves[int(a)].evaluate(times, side=side)
        return np.tile(vals, (np.shape(W)[0], 1))


def fit_km_marginal(data: Dataset, target: str) -> KmMarginalSurvival:
    curves = {}
    for arm in (0, 1):
        mask = data.a == arm
        if not np.any(mask):
            raise FitError(f"empty stratum a={arm} for marginal Kaplan-Meier")
        curves[arm] = km_fit(data.y, data.delta, target=target, mask=mask)
    return KmMarginalSurvival(curves)


# ---------------------------------------------------------------------------
# propensity learners


class LogisticPropensity:
    def __init__(self, beta, subset, kept_columns, capped, eps=EPS_PROPENSITY):
        self.beta = beta
        self.subset = subset
        self.kept_columns = kept_columns
        self.capped = capped
        self.eps = eps

    def describe(self) -> dict:
        return {"kind": "logistic", "coefficients": self.beta.tolist(),
                "capped": bool(self.capped)}

    def predict(self, W) -> np.ndarray:
        W = np.asarray(W, dtype=float)
        X = np.column_stack([np.ones(W.shape[0]), W[:, self.subset]])
        p = expit(X[:, self.kept_columns] @ self.beta)
        return np.clip(p, self.eps, 1.0 - self.eps)


class MarginalMeanPropensity:
    def __init__(self, p, eps=EPS_PROPENSITY):
        self.p = float(np.clip(p, eps, 1.0 - eps))
        self.capped = False
        self.eps = eps

    def describe(self) -> dict:
        return {"kind": "marginal_mean", "probability": self.p}

    def predict(self, W) -> np.ndarray:
        return np.full(np.shape(W)[0], self.p)


def _irls_logistic(X, y, max_iter: int = 100, grad_tol: float = 1e-8):
    n = y.size
    beta = np.zeros(X.shape[1])
    capped = False
    for it in range(max_iter):
        p = expit(X @ beta)
        grad = X.T @ (p - y) / n
        if np.max(np.abs(grad)) < grad_tol:
            return beta, {"converged": True, "iterations": it, "capped": capped}
        wgt = np.maximum(p * (1.0 - p), 1e-12)
        hess = (X * wgt[:, None]).T @ X / n + 1e-12 * np.eye(X.shape[1])
        beta = beta - np.linalg.solve(hess, grad)
        if np.linalg.norm(beta) > _COEF_NORM_CAP:
            beta *= _COEF_NORM_CAP / np.linalg.norm(beta)
            capped = True
            return beta, {"converged": True, "iterations": it + 1, "capped": capped}
    return beta, {"converged": False, "iterations": max_iter, "capped": capped}


def fit_logistic(data: Dataset, spec: PropensitySpec | None = None) -> LogisticPropensity:
    spec = spec or PropensitySpec("logistic")
    a = data.a.astype(float)
    if np.all(a == a[0]):
        raise FitError("propensity fit needs both treatment classes")
    subset = _subset(spec, data.n_covariates)
    X_full = np.column_stack([np.ones(data.n), data.w[:, subset]])
    X_std, center, scale = _standardize(X_full)
    kept = _drop_collinear(X_std)
    beta_std, info = _irls_logistic(X_std[:, kept], a)
    if not info["converged"]:
        raise FitError(f"logistic propensity fit did not converge after {info['iterations']} iterations")
    beta = _raw_scale_beta(beta_std, center[kept], scale[kept])
    return LogisticPropensity(beta, subset, kept, info["capped"])


def fit_marginal_mean(data: Dataset) -> MarginalMeanPropensity:
    return MarginalMeanPropensity(np.mean(data.a))
