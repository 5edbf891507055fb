"""Shared numeric helpers for the test suite."""

import numpy as np
import pytest


def rel_err(a, b):
    """Norm-based relative error between two gradient arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def numeric_grad(f, x, eps=1e-6):
    """Central-difference gradient of the scalar closure f w.r.t. array x.

    f takes no arguments and reads x, which is perturbed in place.
    """
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2.0 * eps)
    return g


def numeric_grad_subset(f, x, idxs, eps=1e-6):
    """Central differences at selected flat indices only (for large params)."""
    flat = x.reshape(-1)
    out = np.zeros(len(idxs), dtype=np.float64)
    for k, i in enumerate(idxs):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        out[k] = (fp - fm) / (2.0 * eps)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(0)
