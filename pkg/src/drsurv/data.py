"""Data model, CSV ingestion, evaluation grids, and balanced fold assignment."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaError, ValidationError


@dataclass(frozen=True)
class Observation:
    """One subject: covariates, binary treatment, follow-up time, event flag."""

    w: np.ndarray
    a: int
    y: float
    delta: int


@dataclass(frozen=True)
class Dataset:
    """Validated right-censored sample with an analysis horizon tau.

    Columns are stored as immutable numpy arrays; `w` is (n, d).
    """

    w: np.ndarray
    a: np.ndarray
    y: np.ndarray
    delta: np.ndarray
    tau: float
    covariate_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.w, dtype=float))
        a = np.asarray(self.a, dtype=int)
        y = np.asarray(self.y, dtype=float)
        delta = np.asarray(self.delta, dtype=int)
        n = y.size
        if w.shape[0] != n or a.size != n or delta.size != n:
            raise ValidationError("column lengths disagree")
        if not np.all(np.isfinite(w)):
            row = int(np.argwhere(~np.isfinite(w).all(axis=1))[0])
            raise ValidationError("covariates contain missing values", row=row)
        if not np.all(np.isfinite(y)):
            raise ValidationError("non-finite follow-up time", row=int(np.argmin(np.isfinite(y))))
        bad = np.nonzero(y < 0)[0]
        if bad.size:
            raise ValidationError(f"negative follow-up time {y[bad[0]]}", row=int(bad[0]))
        bad = np.nonzero(~np.isin(a, (0, 1)))[0]
        if bad.size:
            raise ValidationError(f"treatment must be 0 or 1, got {a[bad[0]]}", row=int(bad[0]))
        bad = np.nonzero(~np.isin(delta, (0, 1)))[0]
        if bad.size:
            raise ValidationError(f"event flag must be 0 or 1, got {delta[bad[0]]}", row=int(bad[0]))
        if not (np.any(a == 0) and np.any(a == 1)):
            raise ValidationError("both treatment arms must be present")
        if not (self.tau > 0 and np.isfinite(self.tau)):
            raise ValidationError(f"tau must be positive and finite, got {self.tau}")
        names = tuple(self.covariate_names) or tuple(f"w{j + 1}" for j in range(w.shape[1]))
        if len(names) != w.shape[1]:
            raise ValidationError("covariate_names length does not match covariate count")
        for name, arr in (("w", w), ("a", a), ("y", y), ("delta", delta)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def n_covariates(self) -> int:
        return self.w.shape[1]

    def observation(self, i: int) -> Observation:
        return Observation(self.w[i], int(self.a[i]), float(self.y[i]), int(self.delta[i]))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.w[idx], self.a[idx], self.y[idx], self.delta[idx],
                       self.tau, self.covariate_names)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([*self.covariate_names, "a", "y", "delta"])
            for i in range(self.n):
                writer.writerow([*(repr(float(v)) for v in self.w[i]), int(self.a[i]),
                                 repr(float(self.y[i])), int(self.delta[i])])


@dataclass(frozen=True)
class ColumnSpec:
    covariates: tuple[str, ...]
    treatment: str = "a"
    time: str = "y"
    event: str = "delta"


@dataclass(frozen=True)
class FoldAssignment:
    """Balanced random partition into folds labelled 1..K."""

    fold_of: np.ndarray
    seed: int

    def __post_init__(self):
        fold_of = np.asarray(self.fold_of, dtype=int)
        fold_of.setflags(write=False)
        object.__setattr__(self, "fold_of", fold_of)

    @property
    def n_folds(self) -> int:
        return int(self.fold_of.max())

    @property
    def labels(self) -> np.ndarray:
        return np.arange(1, self.n_folds + 1)

    def val_indices(self, k: int) -> np.ndarray:
        return np.nonzero(self.fold_of == k)[0]

    def train_indices(self, k: int) -> np.ndarray:
        return np.nonzero(self.fold_of != k)[0]

    def to_csv(self, path) -> None:
        arr = np.column_stack([np.arange(self.fold_of.size), self.fold_of])
        np.savetxt(path, arr, fmt="%d", delimiter=",", header="index,fold", comments="")


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing evaluation times in (0, tau]."""

    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size == 0:
            raise ValidationError("time grid must be a non-empty 1-d array")
        if times[0] <= 0 or np.any(np.diff(times) <= 0):
            raise ValidationError("grid times must be strictly increasing and positive")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @property
    def size(self) -> int:
        return self.times.size


def _parse_value(raw: str, column: str, row: int) -> float:
    raw = raw.strip()
    if raw == "" or raw.upper() in ("NA", "NAN", "NULL"):
        raise ValidationError(f"missing value in column {column!r}", row=row)
    try:
        return float(raw)
    except ValueError:
        raise ValidationError(f"cannot parse {raw!r} in column {column!r}", row=row) from None


def load_csv(path, columns: ColumnSpec, tau: float) -> Dataset:
    """Read and validate a headered CSV. Rows with missing or unparseable
    declared fields abort the load with the offending row named; nothing is
    ever imputed.
    """
    declared = [*columns.covariates, columns.treatment, columns.time, columns.event]
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in declared if c not in header]
        if missing:
            raise SchemaError(f"missing columns {missing} in {path}")
        rows = {name: [] for name in declared}
        for i, record in enumerate(reader):
            for name in declared:
                value = record.get(name)
                if value is None:
                    raise ValidationError(f"missing value in column {name!r}", row=i)
                rows[name].append(_parse_value(value, name, i))

    w = np.column_stack([rows[c] for c in columns.covariates]) if columns.covariates \
        else np.empty((len(rows[columns.time]), 0))
    a_raw = np.asarray(rows[columns.treatment])
    d_raw = np.asarray(rows[columns.event])
    for name, arr in ((columns.treatment, a_raw), (columns.event, d_raw)):
        off = np.nonzero(arr != arr.astype(int))[0]
        if off.size:
            raise ValidationError(f"non-integer value {arr[off[0]]} in column {name!r}",
                                  row=int(off[0]))
    return Dataset(w, a_raw.astype(int), np.asarray(rows[columns.time]), d_raw.astype(int),
                   tau=tau, covariate_names=tuple(columns.covariates))


def make_folds(n: int, n_folds: int, seed: int) -> FoldAssignment:
    """Uniformly random balanced partition: fold sizes differ by at most one."""
    if not 2 <= n_folds <= n // 2:
        raise ValueError(f"fold count must satisfy 2 <= K <= n/2, got K={n_folds}, n={n}")
    sizes = np.full(n_folds, n // n_folds)
    sizes[: n % n_folds] += 1
    labels = np.repeat(np.arange(1, n_folds + 1), sizes)
    rng = np.random.default_rng(seed)
    fold_of = labels[rng.permutation(n)]
    return FoldAssignment(fold_of, seed)


def event_grid(data: Dataset) -> TimeGrid:
    """Unique observed times in (0, tau], with tau appended if absent."""
    times = np.unique(data.y)
    times = times[(times > 0) & (times <= data.tau)]
    if times.size == 0 or times[-1] != data.tau:
        times = np.append(times, data.tau)
    return TimeGrid(times)
