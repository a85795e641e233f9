"""Fused elementwise passes for tanh layers.

Each kernel replaces a chain of numpy temporaries with one sweep over the
batch; the arithmetic is the same as the obvious numpy expressions. The tanh
itself stays with numpy, whose vectorised implementation is much faster
than a scalar loop.
"""
import numba
import numpy as np


@numba.njit(cache=True)
def tanh_tangent(a, dz):
    """``da = (1 - a^2) dz`` for ``a = tanh(z)``."""
    n, m = a.shape
    da = np.empty_like(dz)
    for i in range(n):
        for j in range(m):
            da[i, j] = (1.0 - a[i, j] * a[i, j]) * dz[i, j]
    return da


@numba.njit(cache=True)
def tanh_backward(g, a):
    """``gz = g (1 - a^2)`` and its column sums."""
    n, m = g.shape
    gz = np.empty_like(g)
    gb = np.zeros(m)
    for i in range(n):
        for j in range(m):
            v = g[i, j] * (1.0 - a[i, j] * a[i, j])
            gz[i, j] = v
            gb[j] += v
    return gz, gb


@numba.njit(cache=True)
def tanh_backward_dual(g, gd, a, dz):
    """Reverse sweep through ``a = tanh(z)``, ``da = (1 - a^2) dz``.

    Returns ``(gz, gdz, column sums of gz)``.
    """
    n, m = g.shape
    gz = np.empty_like(g)
    gdz = np.empty_like(g)
    gb = np.zeros(m)
    for i in range(n):
        for j in range(m):
            s = 1.0 - a[i, j] * a[i, j]
            v = (g[i, j] - 2.0 * a[i, j] * gd[i, j] * dz[i, j]) * s
            gz[i, j] = v
            gdz[i, j] = gd[i, j] * s
            gb[j] += v
    return gz, gdz, gb
