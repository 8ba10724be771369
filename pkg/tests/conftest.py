"""Shared builders for hand-sized datasets and random instances."""

import numpy as np
import pytest

from treatalloc.data import RctDataset
from treatalloc.solver import PredictionMatrix


def make_dataset(treatment, revenue, cost, num_treatments, propensities=None,
                 features=None):
    """Direct dataset construction for hand-built test instances."""
    t = np.asarray(treatment, dtype=np.int64)
    n = t.shape[0]
    if features is None:
        features = np.zeros((n, 1))
    return RctDataset(
        ids=np.arange(n, dtype=np.int64),
        features=np.asarray(features, dtype=np.float64),
        treatment=t,
        revenue=np.asarray(revenue, dtype=np.float64),
        cost=np.asarray(cost, dtype=np.float64),
        num_treatments=num_treatments,
        propensities=None if propensities is None else np.asarray(propensities),
    )


def random_instance(rng, n=None, m=None, min_gap=0.0):
    """Random dataset + prediction pair with every treatment present.

    ``min_gap`` regenerates predictions until every row's top two dual
    scores are separated at the grid multipliers used by gradient tests.
    """
    m = m if m is not None else int(rng.integers(2, 6))
    n = n if n is not None else int(rng.integers(m, 30))
    n = max(n, m)
    t = rng.integers(0, m, n)
    t[:m] = np.arange(m)
    data = make_dataset(
        treatment=t,
        revenue=rng.uniform(0.0, 5.0, n),
        cost=rng.uniform(0.0, 2.0, n),
        num_treatments=m,
    )
    while True:
        pred = PredictionMatrix(rng.uniform(0.0, 5.0, (n, m)),
                                rng.uniform(0.1, 2.0, (n, m)))
        if min_gap == 0.0:
            return data, pred
        ok = True
        for lam in (0.3, 1.1, 2.0):
            a = np.sort(pred.revenue - lam * pred.cost, axis=1)
            if np.min(a[:, -1] - a[:, -2]) < min_gap:
                ok = False
                break
        if ok:
            return data, pred


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
