"""Compiled evaluation of the Hamiltonian catalog.

Every solver goes through these two scalar kernels so that the eikonal,
corrector and residual code paths see one definition of H and of its
p-gradient.

Parameter vector layout (length ``n*n + n + 1``): a matrix ``A`` (row major),
a centre ``c`` and an offset ``m``. Coefficient rows hold the node-local
medium data: ``V`` or ``c`` in slot 0, the matrix ``a`` flattened, or the
drift vector ``b``.
"""

import math

import numpy as np
from numba import njit

QUADRATIC = 0  # (p-c).A(p-c) + m
NORM = 1  # sqrt((p-c).A(p-c)) + m
SEPARABLE = 2  # |p|^2 + V(y)
METRIC = 3  # c(y) sqrt(p.G p)
ANISOTROPIC = 4  # p.a(y)p / (2|p|), zero at p = 0
DRIFT = 5  # |p|^2/2 + b(y).p


@njit(cache=True)
def _quad_form(n, A, p, c):
    s = 0.0
    for i in range(n):
        zi = p[i] - c[i]
        for j in range(n):
            s += zi * A[i * n + j] * (p[j] - c[j])
    return s


@njit(cache=True)
def h_value(kind, n, prm, coef, p):
    A = prm[: n * n]
    c = prm[n * n: n * n + n]
    m = prm[n * n + n]
    if kind == QUADRATIC:
        return _quad_form(n, A, p, c) + m
    if kind == NORM:
        return math.sqrt(max(_quad_form(n, A, p, c), 0.0)) + m
    if kind == SEPARABLE:
        s = 0.0
        for i in range(n):
            s += p[i] * p[i]
        return s + coef[0]
    if kind == METRIC:
        s = 0.0
        for i in range(n):
            for j in range(n):
                s += p[i] * A[i * n + j] * p[j]
        return coef[0] * math.sqrt(max(s, 0.0))
    if kind == ANISOTROPIC:
        r2 = 0.0
        for i in range(n):
            r2 += p[i] * p[i]
        if r2 == 0.0:
            return 0.0
        s = 0.0
        for i in range(n):
            for j in range(n):
                s += p[i] * coef[i * n + j] * p[j]
        return s / (2.0 * math.sqrt(r2))
    # DRIFT
    s = 0.0
    for i in range(n):
        s += 0.5 * p[i] * p[i] + coef[i] * p[i]
    return s


@njit(cache=True)
def h_gradient(kind, n, prm, coef, p, out):
    """Writes a (sub)gradient of ``p -> H`` into ``out``; zero at kinks."""
    A = prm[: n * n]
    c = prm[n * n: n * n + n]
    if kind == QUADRATIC or kind == NORM:
        for i in range(n):
            s = 0.0
            for j in range(n):
                s += (A[i * n + j] + A[j * n + i]) * (p[j] - c[j])
            out[i] = s
        if kind == NORM:
            q = math.sqrt(max(_quad_form(n, A, p, c), 0.0))
            for i in range(n):
                out[i] = 0.0 if q == 0.0 else out[i] / (2.0 * q)
        return
    if kind == SEPARABLE:
        for i in range(n):
            out[i] = 2.0 * p[i]
        return
    if kind == METRIC:
        s = 0.0
        for i in range(n):
            for j in range(n):
                s += p[i] * A[i * n + j] * p[j]
        q = math.sqrt(max(s, 0.0))
        for i in range(n):
            g = 0.0
            for j in range(n):
                g += (A[i * n + j] + A[j * n + i]) * p[j]
            out[i] = 0.0 if q == 0.0 else coef[0] * g / (2.0 * q)
        return
    if kind == ANISOTROPIC:
        r2 = 0.0
        for i in range(n):
            r2 += p[i] * p[i]
        if r2 == 0.0:
            for i in range(n):
                out[i] = 0.0
            return
        r = math.sqrt(r2)
        s = 0.0
        for i in range(n):
            for j in range(n):
                s += p[i] * coef[i * n + j] * p[j]
        for i in range(n):
            g = 0.0
            for j in range(n):
                g += (coef[i * n + j] + coef[j * n + i]) * p[j]
            out[i] = g / (2.0 * r) - s * p[i] / (2.0 * r2 * r)
        return
    for i in range(n):
        out[i] = p[i] + coef[i]


@njit(cache=True)
def _huber(z, s):
    """Value and slope of the inf-convolution of z^2/2 with s|z|."""
    if z > s:
        return s * z - 0.5 * s * s, s
    if z < -s:
        return -s * z - 0.5 * s * s, -s
    return 0.5 * z * z, z


@njit(cache=True)
def _capped_quadratic(n, prm, q, sig, s):
    """``max_{|s_a| <= sig_a} s.z - s.B s / 4 + m`` with ``B = A^-1``, ``z = q - c``; maximiser into ``s``."""
    A = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            A[i, j] = 0.5 * (prm[i * n + j] + prm[j * n + i])
    B = np.linalg.inv(A)
    z = np.empty(n)
    for i in range(n):
        z[i] = q[i] - prm[n * n + i]
        s[i] = min(max(s[i], -sig[i]), sig[i])
    for _ in range(500):
        move = 0.0
        for a in range(n):
            r = 2.0 * z[a]
            for b in range(n):
                if b != a:
                    r -= B[a, b] * s[b]
            new = min(max(r / B[a, a], -sig[a]), sig[a])
            move = max(move, abs(new - s[a]))
            s[a] = new
        if move <= 1e-15 * (1.0 + sig.max()):
            break
    val = prm[n * n + n]
    for i in range(n):
        val += s[i] * z[i]
        for j in range(n):
            val -= 0.25 * s[i] * B[i, j] * s[j]
    return val


@njit(cache=True)
def capped_h(kind, n, prm, coef, q, sig, dh):
    """H capped to slopes ``|dH/dp_a| <= sig[a]``; writes the gradient into ``dh``."""
    if kind == SEPARABLE:
        val = coef[0]
        for a in range(n):
            # q^2 = 2 * (z^2/2) with z = q, slope bound sig/2 on z
            f, g = _huber(q[a], 0.5 * sig[a])
            val += 2.0 * f
            dh[a] = 2.0 * g
        return val
    if kind == QUADRATIC:
        # inf-convolution with sum sig_a |.|: a box-constrained dual QP over s = gradient
        h_gradient(kind, n, prm, coef, q, dh)
        inside = True
        for a in range(n):
            if abs(dh[a]) > sig[a]:
                inside = False
        if inside:
            return h_value(kind, n, prm, coef, q)
        return _capped_quadratic(n, prm, q, sig, dh)
    if kind == DRIFT:
        val = 0.0
        for a in range(n):
            f, g = _huber(q[a] + coef[a], sig[a])
            val += f - 0.5 * coef[a] * coef[a]
            dh[a] = g
        return val
    h_gradient(kind, n, prm, coef, q, dh)
    for a in range(n):
        dh[a] = min(max(dh[a], -sig[a]), sig[a])
    return h_value(kind, n, prm, coef, q)


@njit(cache=True)
def h_values(kind, n, prm, coefs, ps):
    m = ps.shape[0]
    out = np.empty(m)
    for k in range(m):
        out[k] = h_value(kind, n, prm, coefs[k], ps[k])
    return out


@njit(cache=True)
def h_gradients(kind, n, prm, coefs, ps):
    m = ps.shape[0]
    out = np.empty((m, n))
    for k in range(m):
        h_gradient(kind, n, prm, coefs[k], ps[k], out[k])
    return out


@njit(cache=True)
def _ray_right_end(kind, n, prm, coef, theta, level, cap, tol):
    """Right end of ``{r >= 0 : H(r theta) <= level}`` (0 when empty, -1 past ``cap``)."""
    p = np.empty(n)
    for i in range(n):
        p[i] = 0.0
    f0 = h_value(kind, n, prm, coef, p)
    r_prev = 0.0
    f_prev = f0
    r = 1.0
    found_low = f0 <= level
    low = 0.0
    while True:
        for i in range(n):
            p[i] = r * theta[i]
        f = h_value(kind, n, prm, coef, p)
        if f <= level:
            found_low = True
            low = r
        elif f >= f_prev:
            # convex along the ray: nondecreasing from here on
            break
        if r > cap:
            return -1.0
        r_prev = r
        f_prev = f
        r *= 2.0
    hi = r
    if not found_low:
        # the sublevel interval, if any, sits inside [0, hi]; locate the minimum
        a = 0.0
        b = hi
        for _ in range(200):
            m1 = a + (b - a) / 3.0
            m2 = b - (b - a) / 3.0
            for i in range(n):
                p[i] = m1 * theta[i]
            f1 = h_value(kind, n, prm, coef, p)
            for i in range(n):
                p[i] = m2 * theta[i]
            f2 = h_value(kind, n, prm, coef, p)
            if f1 <= f2:
                b = m2
            else:
                a = m1
            if b - a < tol * 1e-3:
                break
        rm = 0.5 * (a + b)
        for i in range(n):
            p[i] = rm * theta[i]
        if h_value(kind, n, prm, coef, p) > level:
            return 0.0
        low = rm
    lo = low
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        for i in range(n):
            p[i] = mid * theta[i]
        if h_value(kind, n, prm, coef, p) <= level:
            lo = mid
        else:
            hi = mid
    return hi


@njit(cache=True)
def sublevel_right_ends(kind, n, prm, coefs, thetas, level, cap, tol):
    """Per (direction, sample) right ends of the ray sublevel intervals."""
    nd = thetas.shape[0]
    ny = coefs.shape[0]
    out = np.empty((nd, ny))
    for d in range(nd):
        for k in range(ny):
            out[d, k] = _ray_right_end(kind, n, prm, coefs[k], thetas[d], level, cap, tol)
    return out
