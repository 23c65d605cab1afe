"""Compiled Lax-Friedrichs operator of the discounted problem on a torus.

``F(u) = delta u + H(p + D_c u, y) - sum_a sigma_a (u_+a + u_-a - 2u) / (2 h_a)``
with node-local viscosity rows ``sigma``; layout conventions as in ``_sweep``.

The quadratic kinds are evaluated through their inf-convolution with the
weighted l1 norm ``sum_a sigma_a |q_a|`` (a per-axis Huber cap). It agrees with
H wherever ``|dH/dp_a| <= sigma_a`` and keeps the operator a convex
M-function, so Newton's method converges from any start.
"""

import numpy as np
from numba import njit

from ._kernels import capped_h
from ._sweep import _neighbours


@njit(cache=True)
def _unravel(flat, strides, cidx):
    rem = flat
    for b in range(3):
        cidx[b] = rem // strides[b]
        rem -= cidx[b] * strides[b]


@njit(cache=True)
def lf_operator(u, n, shape, strides, periodic, h, sigma, kind, prm, coefs, pvec, delta):
    total = u.size
    F = np.empty(total)
    grad = np.empty(n)
    dh = np.empty(n)
    cidx = np.zeros(3, dtype=np.int64)
    for flat in range(total):
        _unravel(flat, strides, cidx)
        visc = 0.0
        for a in range(n):
            lo, hi = _neighbours(flat, cidx[a], a, shape, strides, periodic)
            grad[a] = pvec[a] + (u[hi] - u[lo]) / (2.0 * h[a])
            visc += sigma[flat, a] * (u[hi] + u[lo] - 2.0 * u[flat]) / (2.0 * h[a])
        F[flat] = delta * u[flat] + capped_h(kind, n, prm, coefs[flat], grad, sigma[flat], dh) - visc
    return F


@njit(cache=True)
def lf_jacobian(u, n, shape, strides, periodic, h, sigma, kind, prm, coefs, pvec, delta):
    """Operator values and the COO triplets of its Jacobian (duplicates sum)."""
    total = u.size
    F = np.empty(total)
    nnz = total * (2 * n + 1)
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz)
    grad = np.empty(n)
    dh = np.empty(n)
    lo_idx = np.empty(n, dtype=np.int64)
    hi_idx = np.empty(n, dtype=np.int64)
    cidx = np.zeros(3, dtype=np.int64)
    k = 0
    for flat in range(total):
        _unravel(flat, strides, cidx)
        visc = 0.0
        diag = delta
        for a in range(n):
            lo, hi = _neighbours(flat, cidx[a], a, shape, strides, periodic)
            lo_idx[a] = lo
            hi_idx[a] = hi
            grad[a] = pvec[a] + (u[hi] - u[lo]) / (2.0 * h[a])
            visc += sigma[flat, a] * (u[hi] + u[lo] - 2.0 * u[flat]) / (2.0 * h[a])
            diag += sigma[flat, a] / h[a]
        F[flat] = delta * u[flat] + capped_h(kind, n, prm, coefs[flat], grad, sigma[flat], dh) - visc
        rows[k] = flat
        cols[k] = flat
        vals[k] = diag
        k += 1
        for a in range(n):
            rows[k] = flat
            cols[k] = hi_idx[a]
            vals[k] = (dh[a] - sigma[flat, a]) / (2.0 * h[a])
            k += 1
            rows[k] = flat
            cols[k] = lo_idx[a]
            vals[k] = (-dh[a] - sigma[flat, a]) / (2.0 * h[a])
            k += 1
    return F, rows, cols, vals
