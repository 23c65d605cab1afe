"""Compiled Lax-Friedrichs kernels for the eikonal sweeps.

Fields are flat C-ordered arrays; ``shape`` and ``strides`` always have three
entries, with unused trailing axes of length 1.
"""

import numpy as np
from numba import njit

from ._kernels import capped_h, h_gradient


@njit(cache=True)
def _neighbours(flat, c, a, shape, strides, periodic):
    lo = flat - strides[a]
    hi = flat + strides[a]
    if periodic[a]:
        if c == 0:
            lo = flat + (shape[a] - 1) * strides[a]
        if c == shape[a] - 1:
            hi = flat - (shape[a] - 1) * strides[a]
    return lo, hi


@njit(cache=True)
def _node_update(u, flat, cidx, n, shape, strides, periodic, h, sigma, kind, prm, coef, pvec, mu, grad):
    """Lax-Friedrichs value at an interior node from its current neighbours."""
    num = mu
    den = 0.0
    dh = np.empty(n)
    for a in range(n):
        lo, hi = _neighbours(flat, cidx[a], a, shape, strides, periodic)
        grad[a] = pvec[a] + (u[hi] - u[lo]) / (2.0 * h[a])
        num += sigma[a] * (u[hi] + u[lo]) / (2.0 * h[a])
        den += sigma[a] / h[a]
    # capped slopes keep the update monotone for any iterate
    num -= capped_h(kind, n, prm, coef, grad, sigma, dh)
    return num / den


@njit(cache=True)
def _interior(cidx, n, shape, periodic):
    for a in range(n):
        if not periodic[a] and (cidx[a] == 0 or cidx[a] == shape[a] - 1):
            return False
    return True


@njit(cache=True)
def _outflow_closure(u, n, shape, strides, periodic, fixed):
    """Linear extrapolation onto non-periodic faces, never increasing a value."""
    change = 0.0
    cidx = np.zeros(3, dtype=np.int64)
    total = shape[0] * shape[1] * shape[2]
    for a in range(n):
        if periodic[a]:
            continue
        for flat in range(total):
            rem = flat
            for b in range(3):
                cidx[b] = rem // strides[b]
                rem -= cidx[b] * strides[b]
            if cidx[a] == 0:
                step = strides[a]
            elif cidx[a] == shape[a] - 1:
                step = -strides[a]
            else:
                continue
            if fixed[flat]:
                continue
            v1 = u[flat + step]
            v2 = u[flat + 2 * step]
            cand = max(2.0 * v1 - v2, v2)
            if cand < u[flat]:
                change = max(change, u[flat] - cand)
                u[flat] = cand
    return change


@njit(cache=True)
def lf_sweep(u, n, shape, strides, periodic, h, sigma, kind, prm, coefs, pvec, mu, fixed, order):
    """One Gauss-Seidel pass in the ordering encoded by the bits of ``order``.

    ``sigma`` holds one viscosity row per node.

    Returns the largest decrease of any node value.
    """
    grad = np.empty(n)
    cidx = np.zeros(3, dtype=np.int64)
    change = 0.0
    for ii in range(shape[0]):
        cidx[0] = shape[0] - 1 - ii if (order & 1) else ii
        for jj in range(shape[1]):
            cidx[1] = shape[1] - 1 - jj if (order & 2) else jj
            for kk in range(shape[2]):
                cidx[2] = shape[2] - 1 - kk if (order & 4) else kk
                flat = cidx[0] * strides[0] + cidx[1] * strides[1] + cidx[2] * strides[2]
                if fixed[flat] or not _interior(cidx, n, shape, periodic):
                    continue
                cand = _node_update(u, flat, cidx, n, shape, strides, periodic, h, sigma[flat], kind, prm,
                                    coefs[flat], pvec, mu, grad)
                if cand < u[flat]:
                    change = max(change, u[flat] - cand)
                    u[flat] = cand
    change = max(change, _outflow_closure(u, n, shape, strides, periodic, fixed))
    return change


@njit(cache=True)
def lf_candidates(u, n, shape, strides, periodic, h, sigma, kind, prm, coefs, pvec, mu, nodes):
    """Scheme values at the given interior nodes without the min rule."""
    grad = np.empty(n)
    cidx = np.zeros(3, dtype=np.int64)
    out = np.empty(nodes.size)
    for t in range(nodes.size):
        flat = nodes[t]
        rem = flat
        for b in range(3):
            cidx[b] = rem // strides[b]
            rem -= cidx[b] * strides[b]
        out[t] = _node_update(u, flat, cidx, n, shape, strides, periodic, h, sigma[flat], kind, prm,
                              coefs[flat], pvec, mu, grad)
    return out


@njit(cache=True)
def centered_gradient_bound(u, n, shape, strides, periodic, h, kind, prm, coefs, pvec):
    """Per-node max ``|dH/dp_a|`` at ``p + centred gradient``; zero on non-periodic faces."""
    grad = np.empty(n)
    dh = np.empty(n)
    cidx = np.zeros(3, dtype=np.int64)
    total = shape[0] * shape[1] * shape[2]
    out = np.zeros(total)
    for flat in range(total):
        rem = flat
        for b in range(3):
            cidx[b] = rem // strides[b]
            rem -= cidx[b] * strides[b]
        if not _interior(cidx, n, shape, periodic):
            continue
        for a in range(n):
            lo, hi = _neighbours(flat, cidx[a], a, shape, strides, periodic)
            grad[a] = pvec[a] + (u[hi] - u[lo]) / (2.0 * h[a])
        h_gradient(kind, n, prm, coefs[flat], grad, dh)
        for a in range(n):
            out[flat] = max(out[flat], abs(dh[a]))
    return out
