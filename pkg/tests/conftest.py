from __future__ import annotations

import numpy as np
import pytest

from drsurv.data import Dataset


def make_dataset(y, delta, a=None, w=None, tau=None, names=()):
    y = np.asarray(y, dtype=float)
    n = y.size
    if a is None:
        a = np.tile([0, 1], n)[:n] if n > 1 else np.zeros(n, dtype=int)
    if w is None:
        w = np.zeros((n, 1))
    if tau is None:
        tau = float(max(y.max(), 1.0))
    return Dataset(np.atleast_2d(w).reshape(n, -1), np.asarray(a, dtype=int),
                   y, np.asarray(delta, dtype=int), tau=tau, covariate_names=tuple(names))


@pytest.fixture
def rng():
    return np.random.default_rng(61094)


def random_survival_data(rng, n=120, n_cov=2, tau=3.0, cens_rate=0.4):
    """Mixed continuous data with both arms and a reasonable censoring share."""
    w = rng.normal(size=(n, n_cov))
    a = rng.integers(0, 2, size=n)
    while a.sum() in (0, n):
        a = rng.integers(0, 2, size=n)
    t = rng.exponential(scale=np.exp(0.3 * w[:, 0] - 0.2 * a + 0.1), size=n)
    c = rng.exponential(scale=1.0 / cens_rate, size=n)
    y = np.minimum(t, c)
    delta = (t <= c).astype(int)
    return Dataset(w, a, y, delta, tau=tau)
