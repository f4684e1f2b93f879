import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dppsnn.snn import SNNParams, init_params

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def small_params(seed=0, D=4, L=2, amplitude=5.0, centers=(0.0, 1.5), observable=(0, 1)) -> SNNParams:
    return init_params(np.random.default_rng(seed), D, L, amplitude, centers, observable)


def toy_pair():
    """Two-neuron network (neuron 0 observed, neuron 1 hidden) and a distinct phi."""
    theta = SNNParams(np.array([0.3, -0.2]), np.array([[[-1.0], [1.2]], [[1.5], [-0.8]]]),
                      np.array([0.0]), 2.0, (0,))
    phi = theta.from_flat(theta.flat() + 0.3).project_diagonal()
    return theta, phi


def fd_gradient(fn, x, h=1e-5):
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fn(x + e) - fn(x - e)) / (2.0 * h)
    return g


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def merge_sparse_columns(table, minimum=5):
    """Merge adjacent histogram bins until every cell holds ``minimum`` counts (chi-square validity)."""
    table = np.asarray(table, dtype=np.float64)
    cols, acc = [], np.zeros(table.shape[0])
    for j in range(table.shape[1]):
        acc = acc + table[:, j]
        if acc.min() >= minimum:
            cols.append(acc)
            acc = np.zeros(table.shape[0])
    if cols:
        cols[-1] = cols[-1] + acc
    else:
        cols.append(acc)
    return np.array(cols).T


@pytest.fixture
def params4():
    return small_params()
