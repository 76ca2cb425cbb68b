"""Survival primitives: step hazards, product integrals, Kaplan-Meier fits.

Conventions (used consistently everywhere):
  - event survival curves S are right-continuous: S(t) = P(T > t);
  - censoring survival curves are evaluated left-continuously: G(t) = P(C >= t);
  - at a tied time, events are processed before censorings, which makes
    S(t-) * G(t) equal the empirical at-risk proportion exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FitError, ValidationError


@dataclass(frozen=True)
class StepCumHazard:
    """Cumulative hazard with finitely many jumps; increments are discrete hazards."""

    jump_times: np.ndarray
    jump_sizes: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.jump_times, dtype=float)
        sizes = np.asarray(self.jump_sizes, dtype=float)
        if times.shape != sizes.shape or times.ndim != 1:
            raise ValidationError("jump_times and jump_sizes must be 1-d and aligned")
        if times.size and np.any(np.diff(times) <= 0):
            raise ValidationError("jump_times must be strictly increasing")
        if np.any(sizes < 0) or np.any(sizes > 1):
            raise ValidationError("hazard increments must lie in [0, 1]")
        object.__setattr__(self, "jump_times", times)
        object.__setattr__(self, "jump_sizes", sizes)


@dataclass(frozen=True)
class StepSurvival:
    """Piecewise-constant survival curve; `values[j]` is the level just after jump j."""

    jump_times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.jump_times, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if times.shape != vals.shape or times.ndim != 1:
            raise ValidationError("jump_times and values must be 1-d and aligned")
        if times.size and np.any(np.diff(times) <= 0):
            raise ValidationError("jump_times must be strictly increasing")
        if np.any(vals < -1e-12) or np.any(vals > 1 + 1e-12):
            raise ValidationError("survival values must lie in [0, 1]")
        if vals.size and np.any(np.diff(vals) > 1e-12):
            raise ValidationError("survival values must be non-increasing")
        object.__setattr__(self, "jump_times", times)
        object.__setattr__(self, "values", np.clip(vals, 0.0, 1.0))

    def evaluate(self, t, side: str = "right") -> np.ndarray:
        """Evaluate the curve at `t`.

        side="right" gives S(t) = P(T > t); side="left" gives the left limit
        S(t-) = P(T >= t), the evaluation rule for censoring curves.
        """
        t = np.asarray(t, dtype=float)
        searchside = "right" if side == "right" else "left"
        idx = np.searchsorted(self.jump_times, t, side=searchside) - 1
        padded = np.concatenate(([1.0], self.values))
        return padded[idx + 1]

    def to_csv(self, path) -> None:
        arr = np.column_stack([self.jump_times, self.values])
        np.savetxt(path, arr, delimiter=",", header="time,survival", comments="")


def product_integral(haz: StepCumHazard, t) -> np.ndarray:
    """Survival at `t` from a step cumulative hazard: prod over jumps <= t of (1 - dL)."""
    factors = np.cumprod(1.0 - haz.jump_sizes)
    padded = np.concatenate(([1.0], factors))
    idx = np.searchsorted(haz.jump_times, np.asarray(t, dtype=float), side="right")
    return padded[idx]


def survival_from_hazard(haz: StepCumHazard) -> StepSurvival:
    return StepSurvival(haz.jump_times, np.cumprod(1.0 - haz.jump_sizes))


def hazard_from_survival(surv: StepSurvival) -> StepCumHazard:
    """Discrete hazard increments dL(t_j) = [S(t_j-) - S(t_j)] / S(t_j-).

    Round-trips exactly through product_integral on the jump set. Jumps where
    the curve has already been absorbed at zero are undefined.
    """
    before = np.concatenate(([1.0], surv.values[:-1]))
    if np.any((before <= 0) & (surv.values < before)):
        raise ValidationError("hazard undefined past absorption at zero")
    keep = surv.values < before
    with np.errstate(invalid="ignore", divide="ignore"):
        sizes = np.where(before > 0, (before - surv.values) / np.where(before > 0, before, 1.0), 0.0)
    return StepCumHazard(surv.jump_times[keep], sizes[keep])


def km_fit(y, delta, target: str = "event", mask=None) -> StepSurvival:
    """Product-limit estimator over the rows selected by `mask`.

    target="event" returns the survival curve of T; target="censoring" swaps
    the roles of events and censorings and accounts for the events-first tie
    rule, so the returned curve estimates P(C >= t) when evaluated with
    side="left".
    """
    y = np.asarray(y, dtype=float)
    delta = np.asarray(delta)
    if mask is not None:
        y = y[np.asarray(mask)]
        delta = delta[np.asarray(mask)]
    if y.size == 0:
        raise FitError("empty stratum in Kaplan-Meier fit")
    if target not in ("event", "censoring"):
        raise ValueError(f"unknown target {target!r}")

    times = np.unique(y)
    # counts per distinct time: events, censorings, at-risk
    order = np.searchsorted(times, y)
    d = np.bincount(order, weights=(delta == 1).astype(float), minlength=times.size)
    c = np.bincount(order, weights=(delta == 0).astype(float), minlength=times.size)
    n_total = float(y.size)
    at_risk = n_total - np.concatenate(([0.0], np.cumsum(d + c)[:-1]))

    if target == "event":
        jumps = times[d > 0]
        with np.errstate(invalid="ignore"):
            sizes = (d / at_risk)[d > 0]
    else:
        # events at a tied time leave the risk set before censorings happen
        risk_after_events = at_risk - d
        keep = c > 0
        jumps = times[keep]
        sizes = np.where(risk_after_events > 0, c / np.where(risk_after_events > 0, risk_after_events, 1.0), 1.0)[keep]
    return survival_from_hazard(StepCumHazard(jumps, np.clip(sizes, 0.0, 1.0)))
