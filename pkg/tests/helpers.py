"""Shared test oracles.

The finite-difference helpers below are deliberately independent of the
package's autodiff machinery: they treat the function under test as a black
box from numpy arrays to a float and probe it with central differences.
"""

import numpy as np


def central_diff(f, x, h=1e-5, indices=None):
    """Central-difference gradient of scalar-valued ``f`` at array ``x``.

    ``f`` must not mutate its argument. When ``indices`` (flat indices) is
    given, only those components are probed and the rest are returned as NaN,
    which keeps probing large parameter blocks affordable.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.full(x.size, np.nan)
    flat_indices = range(x.size) if indices is None else indices
    for i in flat_indices:
        xp = x.copy().reshape(-1)
        xm = x.copy().reshape(-1)
        xp[i] += h
        xm[i] -= h
        fp = f(xp.reshape(x.shape))
        fm = f(xm.reshape(x.shape))
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)


def rel_err(analytic, numeric):
    """Elementwise |a - n| / max(1, |n|); NaN entries in ``numeric`` are skipped."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    mask = ~np.isnan(numeric)
    if not mask.any():
        raise ValueError("no probed entries to compare")
    err = np.abs(analytic[mask] - numeric[mask]) / np.maximum(1.0, np.abs(numeric[mask]))
    return float(err.max())


def assert_grad_close(analytic, numeric, tol):
    e = rel_err(analytic, numeric)
    assert e <= tol, f"gradient mismatch: worst relative error {e:.3e} > {tol:g}"


def naive_matmul(a, b):
    """Triple-loop matrix product oracle."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for l in range(k):
                out[i, j] += a[i, l] * b[l, j]
    return out
