"""Compiled loops for the L-infinity tools: ring-local AMLE passes and discrete Hopf-Lax sups."""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _gap(u, nb, D, opp, k, lam, J):
    # cone values d(e_j) interpolated between mesh levels k-1 and k
    top = -math.inf
    bot = math.inf
    for j in range(J):
        if lam >= 1.0 or k == 0:
            dj = D[k, j]
            dm = D[k, opp[j]]
        else:
            dj = (1.0 - lam) * D[k - 1, j] + lam * D[k, j]
            dm = (1.0 - lam) * D[k - 1, opp[j]] + lam * D[k, opp[j]]
        v = u[nb[j]]
        top = max(top, v - dj)
        bot = min(bot, v + dm)
    return top, bot


@njit(cache=True)
def amle_pass(u, free, nbrs, D, opp, reverse):
    """One Gauss-Seidel pass; returns the largest change.

    At each free node the value is the midpoint of ``[max_j(u_j - d(e_j)),
    min_j(u_j + d(-e_j))]`` at the smallest level where that interval is
    nonempty (bisection in the level, cone values interpolated linearly
    between mesh levels).
    """
    K = D.shape[0]
    J = D.shape[1]
    change = 0.0
    m = free.size
    for s in range(m):
        t = m - 1 - s if reverse else s
        x = free[t]
        nb = nbrs[t]
        top, bot = _gap(u, nb, D, opp, 0, 1.0, J)
        if bot >= top:
            val = 0.5 * (top + bot)
        else:
            top, bot = _gap(u, nb, D, opp, K - 1, 1.0, J)
            if bot < top:
                val = 0.5 * (top + bot)
            else:
                lo = 0
                hi = K - 1
                while hi - lo > 1:
                    mid = (lo + hi) // 2
                    a, b = _gap(u, nb, D, opp, mid, 1.0, J)
                    if b >= a:
                        hi = mid
                    else:
                        lo = mid
                l0 = 0.0
                l1 = 1.0
                for _ in range(48):
                    lm = 0.5 * (l0 + l1)
                    a, b = _gap(u, nb, D, opp, hi, lm, J)
                    if b >= a:
                        l1 = lm
                    else:
                        l0 = lm
                top, bot = _gap(u, nb, D, opp, hi, l1, J)
                val = 0.5 * (top + bot)
        change = max(change, abs(val - u[x]))
        u[x] = val
    return change


@njit(cache=True)
def _interp_L(Lv, qlo, qh, qshape, qstr, n, q):
    """Multilinear interpolation of a table with +inf sentinels; +inf if any corner is."""
    i0 = np.empty(3, dtype=np.int64)
    fr = np.empty(3)
    for a in range(n):
        s = (q[a] - qlo[a]) / qh[a]
        if s < -1e-9 or s > qshape[a] - 1 + 1e-9:
            return math.inf
        i = int(math.floor(s))
        if i >= qshape[a] - 1:
            i = qshape[a] - 2
        if i < 0:
            i = 0
        f = min(max(s - i, 0.0), 1.0)
        # snap rounding noise onto nodes so sentinel corners of zero weight drop out
        if f < 1e-9:
            f = 0.0
        elif f > 1.0 - 1e-9:
            f = 1.0
        i0[a] = i
        fr[a] = f
    out = 0.0
    for corner in range(1 << n):
        w = 1.0
        flat = 0
        for a in range(n):
            bit = (corner >> a) & 1
            w *= fr[a] if bit else 1.0 - fr[a]
            flat += (i0[a] + bit) * qstr[a]
        if w == 0.0:
            continue
        v = Lv[flat]
        if v == math.inf:
            return math.inf
        out += w * v
    return out


@njit(cache=True)
def hopf_lax_at(u, mask, origin, h, shape, strides, n, targets, Lv, qlo, qh, qshape, qstr, t):
    """``sup_y (u(y) - t L((y - x)/t))`` over mask nodes y for each target node x (NaN if none)."""
    out = np.empty(targets.size)
    x = np.empty(3)
    q = np.empty(3)
    lo = np.zeros(3, dtype=np.int64)
    hi = np.zeros(3, dtype=np.int64)
    cx = np.zeros(3, dtype=np.int64)
    for k in range(targets.size):
        flat = targets[k]
        rem = flat
        for a in range(3):
            cx[a] = rem // strides[a]
            rem -= cx[a] * strides[a]
        for a in range(3):
            if a < n:
                x[a] = origin[a] + cx[a] * h[a]
                qmax = qlo[a] + (qshape[a] - 1) * qh[a]
                lo[a] = max(0, int(math.ceil((x[a] + t * qlo[a] - origin[a]) / h[a] - 1e-9)))
                hi[a] = min(shape[a] - 1, int(math.floor((x[a] + t * qmax - origin[a]) / h[a] + 1e-9)))
            else:
                lo[a] = 0
                hi[a] = 0
        best = -math.inf
        for i in range(lo[0], hi[0] + 1):
            for j in range(lo[1], hi[1] + 1):
                for m in range(lo[2], hi[2] + 1):
                    yf = i * strides[0] + j * strides[1] + m * strides[2]
                    if not mask[yf]:
                        continue
                    idx0 = i
                    if n >= 1:
                        q[0] = (origin[0] + idx0 * h[0] - x[0]) / t
                    if n >= 2:
                        q[1] = (origin[1] + j * h[1] - x[1]) / t
                    if n >= 3:
                        q[2] = (origin[2] + m * h[2] - x[2]) / t
                    L = _interp_L(Lv, qlo, qh, qshape, qstr, n, q)
                    if L == math.inf:
                        continue
                    v = u[yf] - t * L
                    if v > best:
                        best = v
        out[k] = best if best > -math.inf else math.nan
    return out
