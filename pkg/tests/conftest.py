"""Shared test fixtures and numerics helpers."""

import os

# Cap BLAS pools before numpy spins them up: the test matrices are tiny and
# oversubscribed thread fan-out dominates runtime on small machines.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

try:
    import threadpoolctl
    threadpoolctl.threadpool_limits(limits=1)
except Exception:
    pass


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def fd_gradient(fun, x, h=1e-5):
    """Central finite differences of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2.0 * h)
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-300)
    return float(np.abs(a - b).max(initial=0.0) / scale)
