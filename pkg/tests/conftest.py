"""Shared oracles: central finite differences and relative-error helpers."""

import numpy as np
import pytest


def finite_difference_grad(f, x, h=1e-4):
    """Central finite differences of scalar f() w.r.t. array x (mutated in place)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def nudge_from_kinks(x, kinks=(0.0,), width=1e-3):
    """Shift values lying within `width` of a kink so central differences
    stay one-sided-free (relu/leaky/max are not differentiable there)."""
    x = np.array(x, dtype=np.float64)
    for k in kinks:
        close = np.abs(x - k) < width
        x[close] = k + width * np.where(x[close] >= k, 1.0, -1.0) * 2.0
    return x


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
