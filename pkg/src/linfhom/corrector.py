"""The discounted problem ``delta v + H(p + Dv, y) = 0`` on a torus and point estimates of Hbar."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import maximum_filter
from scipy.optimize import brentq
from scipy.sparse.linalg import spsolve

from . import _discount, _sweep
from .eikonal import _block_layout
from .errors import BoundaryStencilError, ConvergenceError, UnreliableEstimateWarning
from .grid import Grid, ScalarField, centered_gradient, interpolate
from .media import EnvironmentRealization, HamiltonianSpec, NodeHamiltonian, _sublevel_radius_coefs

DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class CorrectorSolution:
    """A converged ``v^delta`` with the data needed to audit it."""

    field: ScalarField
    p: tuple[float, ...]
    delta: float
    residual: float
    iterations: int
    converged: bool
    method: str
    bounds: tuple[float, float]
    grad_radius: float
    sigma: np.ndarray = field(repr=False, compare=False)
    history: tuple[float, ...] = field(default=(), repr=False, compare=False)
    spec: HamiltonianSpec | None = field(default=None, repr=False, compare=False)
    env: EnvironmentRealization | None = field(default=None, repr=False, compare=False)

    @property
    def grid(self) -> Grid:
        return self.field.grid

    def minus_delta_v(self, y=None) -> float:
        """``-delta v(y)``, at the origin by default."""
        y = np.zeros(self.grid.dim) if y is None else np.asarray(y, dtype=float)
        return -self.delta * float(interpolate(self.field, y))


def _common_setup(spec, env, grid, pvec):
    if not grid.fully_periodic:
        raise BoundaryStencilError("the discounted problem is solved on a fully periodic grid")
    H = NodeHamiltonian(spec, env, grid.points())
    hp = H.values(np.repeat(pvec[None], grid.size, axis=0))
    return H, float(hp.min()), float(hp.max())


def viscosity_rows(H: NodeHamiltonian, radius: float, n: int) -> np.ndarray:
    """Node-local viscosity rows sized for gradients ``|p + Dv| <= radius``."""
    sig = np.ones((H.points.shape[0], 3))
    sig[:, :n] = H.node_gradient_bounds(radius)[:, None]
    return sig


def solve_discounted(spec: HamiltonianSpec, env: EnvironmentRealization | None, p, delta: float, grid: Grid,
                     tol: float = DEFAULT_TOL, max_iters: int | None = None, method: str = "newton",
                     sigma=None, adapt_sigma: bool = True, viscosity: str = "local",
                     raise_on_failure: bool = True) -> CorrectorSolution:
    """Solve the Lax-Friedrichs discretisation of the discounted problem.

    ``method="newton"`` runs Newton's method with a sparse Jacobian; the
    (slope-capped) operator is a convex M-function, so the iterates converge
    monotonically. ``method="march"`` is the explicit monotone time march with
    step ``1 / (delta + 2 sum sigma_a / h_a)``. Both start from ``-C2/delta``
    and stop when ``max |F(u)| < tol``.

    The viscosity starts from the slope bound over the sublevel set of level
    ``C2 + 1``. With ``adapt_sigma`` it is raised wherever the converged
    gradient violates monotonicity; with ``viscosity="local"`` it is then
    lowered to the realised slopes (max-filtered over the stencil) and the
    solve repeated, keeping the result only if it passes the same check.
    ``sigma`` overrides the starting viscosity (scalar or one value per node).
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if method not in ("newton", "march"):
        raise ValueError(f"unknown method {method!r}")
    if viscosity not in ("local", "global"):
        raise ValueError(f"unknown viscosity mode {viscosity!r}")
    n = grid.dim
    pvec = np.asarray(p, dtype=float).reshape(n)
    H, c1, c2 = _common_setup(spec, env, grid, pvec)
    radius = _sublevel_radius_coefs(spec, H.coefs, c2 + 1.0)
    if sigma is None:
        sig = viscosity_rows(H, radius, n)
    else:
        sig = np.ones((grid.size, 3))
        sig[:, :n] = np.broadcast_to(np.asarray(sigma, dtype=float).reshape(-1, 1), (grid.size, 1))
    layout = _block_layout(grid)
    if max_iters is None:
        max_iters = 200 if method == "newton" else 10_000_000
    run = _newton if method == "newton" else _march
    shape, strides, periodic, h = layout

    def attempt(s):
        out = run(H, layout, n, s, pvec, float(delta), -c2 / delta, tol, max_iters)
        need = _sweep.centered_gradient_bound(out[0], n, shape, strides, periodic, h, H.kind, H.prm, H.coefs, pvec)
        return out, need

    (u, res, iters, hist), need = attempt(sig)
    for _ in range(3):
        short = need > sig[:, 0] * (1 + 1e-9)
        if not adapt_sigma or not short.any():
            break
        # viscosity below the realised slope somewhere: raise it there and start over
        sig[short, :n] = 1.5 * need[short, None]
        (u, res, iters, hist), need = attempt(sig)
    if viscosity == "local" and sigma is None and adapt_sigma and res < tol \
            and not np.any(need > sig[:, 0] * (1 + 1e-9)):
        floor = 0.02 * float(sig[:, 0].max())
        spread = maximum_filter(need.reshape(grid.shape), size=5, mode="wrap").ravel()
        trial = np.ones_like(sig)
        trial[:, :n] = np.maximum(1.2 * spread, floor)[:, None]
        for _ in range(6):
            out, tneed = attempt(trial)
            bad = tneed > trial[:, 0] * (1 + 1e-9)
            if out[1] < tol and not bad.any():
                (u, res, iters, hist), sig = out, trial
                break
            spread = maximum_filter(tneed.reshape(grid.shape), size=5, mode="wrap").ravel()
            trial[:, :n] = np.maximum(trial[:, 0], 1.5 * spread)[:, None]
    converged = res < tol
    sol = CorrectorSolution(field=ScalarField(grid, u.reshape(grid.shape)), p=tuple(pvec), delta=float(delta),
                            residual=float(res), iterations=iters, converged=converged, method=method,
                            bounds=(c1, c2), grad_radius=radius + float(np.linalg.norm(pvec)),
                            sigma=sig[:, :n].copy(), history=tuple(hist), spec=spec, env=env)
    if not converged and raise_on_failure:
        raise ConvergenceError(f"discounted solve stopped after {iters} iterations with residual {res:.3g}",
                               residual=res, iterations=iters, partial=sol)
    return sol


def _operator(H, layout, n, sig, pvec, delta, w, shift):
    shape, strides, periodic, h = layout
    F = _discount.lf_operator(w, n, shape, strides, periodic, h, sig, H.kind, H.prm, H.coefs, pvec, delta)
    return F + delta * shift


def _newton(H, layout, n, sig, pvec, delta, start, tol, max_iters):
    shape, strides, periodic, h = layout
    size = H.points.shape[0]
    # u = shift + w with w kept mean-free so differences stay exact in floating point
    shift = start
    w = np.zeros(size)
    hist = []
    iters = 0
    while True:
        F, rows, cols, vals = _discount.lf_jacobian(w, n, shape, strides, periodic, h, sig, H.kind, H.prm,
                                                    H.coefs, pvec, delta)
        F += delta * shift
        res = float(np.max(np.abs(F)))
        hist.append(res)
        if res < tol or iters >= max_iters:
            break
        J = sp.csc_matrix((vals, (rows, cols)), shape=(size, size))
        w = w - spsolve(J, F)
        m = float(w.mean())
        shift += m
        w -= m
        iters += 1
    return shift + w, res, iters, hist


def _march(H, layout, n, sig, pvec, delta, start, tol, max_iters):
    h = layout[3]
    dt = 1.0 / (delta + 2.0 * float(np.max(np.sum(sig[:, :n] / h[:n], axis=1))))
    shift = start
    w = np.zeros(H.points.shape[0])
    hist = []
    iters = 0
    while True:
        F = _operator(H, layout, n, sig, pvec, delta, w, shift)
        res = float(np.max(np.abs(F)))
        if iters % 1000 == 0:
            hist.append(res)
        if res < tol or iters >= max_iters:
            break
        w -= dt * F
        m = float(w.mean())
        shift += m
        w -= m
        iters += 1
    hist.append(res)
    return shift + w, res, iters, hist


def subcorrector_upper_bound(sol: CorrectorSolution) -> float:
    """``max_y H(p + D_c w, y)`` for the periodic ``w = v - v(0)``: an upper bound for the torus Hbar."""
    g = centered_gradient(sol.field.values, sol.grid).reshape(-1, sol.grid.dim)
    H = NodeHamiltonian(sol.spec, sol.env, sol.grid.points())
    return float(np.max(H.values(g + np.asarray(sol.p))))


@dataclass
class HbarPoint:
    """Point estimate of Hbar(p) over a decreasing delta schedule."""

    p: tuple[float, ...]
    estimate: float
    deltas: tuple[float, ...]
    sequence: tuple[float, ...]
    oscillations: tuple[float, ...]
    residuals: tuple[float, ...]
    iterations: tuple[int, ...]
    extrapolated: float
    alpha: float
    window_radius: float
    window_bound: str
    unreliable: bool
    upper_bound: float = math.nan

    @property
    def oscillation(self) -> float:
        return self.oscillations[-1]

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["delta", "minus_delta_v_at_0", "oscillation_window", "residual", "iterations"])
            for row in zip(self.deltas, self.sequence, self.oscillations, self.residuals, self.iterations):
                wr.writerow([repr(float(x)) for x in row[:4]] + [row[4]])
            wr.writerow([f"# extrapolated={self.extrapolated!r}", f"alpha={self.alpha!r}",
                         f"window_radius={self.window_radius!r}", f"window_bound={self.window_bound}"])
        return path

    def write_plotdata(self, path) -> Path:
        from .effective import write_series

        return write_series(path, self.deltas, self.sequence, "delta", "minus_delta_v_at_0", scale="log-linear")


def richardson(deltas: Sequence[float], values: Sequence[float], lo: float = 0.3, hi: float = 1.0):
    """Fit ``f = H + c delta^alpha`` through the last three points, ``alpha`` clamped to ``[lo, hi]``.

    With two points ``alpha = 1``. Returns ``(H, alpha)``; ``alpha`` is NaN
    when the increments change sign or vanish and the last value is returned.
    """
    d = np.asarray(deltas, dtype=float)[-3:]
    f = np.asarray(values, dtype=float)[-3:]
    if d.size < 2:
        raise ValueError("need at least two schedule entries")
    if d.size == 2:
        c = (f[0] - f[1]) / (d[0] - d[1])
        return float(f[1] - c * d[1]), 1.0
    a, b = f[0] - f[1], f[1] - f[2]
    if a == 0 or b == 0 or np.sign(a) != np.sign(b):
        return float(f[-1]), math.nan
    ratio = a / b

    def g(al):
        return (d[0] ** al - d[1] ** al) / (d[1] ** al - d[2] ** al) - ratio

    glo, ghi = g(lo), g(hi)
    if glo * ghi <= 0:
        al = brentq(g, lo, hi, xtol=1e-12)
    else:
        al = lo if abs(glo) < abs(ghi) else hi
    c = b / (d[1] ** al - d[2] ** al)
    return float(f[2] - c * d[2] ** al), float(al)


def _periodic_distance(grid: Grid, y0) -> np.ndarray:
    diff = grid.points() - np.asarray(y0, dtype=float)
    period = grid.upper - grid.lower
    diff -= period * np.round(diff / period)
    return np.linalg.norm(diff, axis=1)


def hbar_point(spec: HamiltonianSpec, env: EnvironmentRealization | None, p, deltas: Sequence[float], grid: Grid,
               tol: float = DEFAULT_TOL, radius: float = 1.0, upper_bound: bool = False, **solve_kw) -> HbarPoint:
    """Estimate ``Hbar(p)`` as ``-delta v(0)`` at the smallest ``delta`` of a decreasing schedule.

    The oscillation of ``-delta v`` is taken over the nodes within
    ``min(radius/delta, half period)`` of the origin. A warning is issued when
    it exceeds ten times the last increment of the sequence.
    """
    deltas = [float(x) for x in deltas]
    if len(deltas) < 2 or any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("delta schedule must be strictly decreasing with at least two entries")
    half = 0.5 * float(np.min(grid.upper - grid.lower))
    dist = _periodic_distance(grid, np.zeros(grid.dim))
    seq, osc, res, its = [], [], [], []
    sol = None
    for d in deltas:
        sol = solve_discounted(spec, env, p, d, grid, tol=tol, **solve_kw)
        vals = -d * sol.field.values.ravel()
        r = min(radius / d, half)
        win = dist <= r + 1e-12
        seq.append(sol.minus_delta_v())
        osc.append(float(vals[win].max() - vals[win].min()))
        res.append(sol.residual)
        its.append(sol.iterations)
    r = min(radius / deltas[-1], half)
    bound = "radius/delta" if radius / deltas[-1] <= half else "half-period"
    est, alpha = richardson(deltas, seq)
    step = abs(seq[-1] - seq[-2])
    unreliable = osc[-1] > 10.0 * step
    if unreliable:
        warnings.warn(f"oscillation {osc[-1]:.3g} exceeds ten times the last increment {step:.3g}",
                      UnreliableEstimateWarning, stacklevel=2)
    ub = subcorrector_upper_bound(sol) if upper_bound else math.nan
    return HbarPoint(p=tuple(np.asarray(p, dtype=float).reshape(grid.dim)), estimate=seq[-1], deltas=tuple(deltas),
                     sequence=tuple(seq), oscillations=tuple(osc), residuals=tuple(res), iterations=tuple(its),
                     extrapolated=est, alpha=alpha, window_radius=r, window_bound=bound, unreliable=unreliable,
                     upper_bound=ub)


@dataclass
class PRegularityReport:
    """Lipschitz quotient and midpoint-concavity defect of ``p -> v(0; p)``."""

    max_quotient: float
    max_defect: float
    quotient_bound: float
    pairs: int
    sigma: float


def p_regularity_report(spec: HamiltonianSpec, env: EnvironmentRealization | None, delta: float, grid: Grid,
                        p_pairs: Sequence, tol: float = DEFAULT_TOL) -> PRegularityReport:
    """Solve at ``p``, ``q`` and their midpoint with one shared viscosity and compare.

    The quotient is ``|delta v(0;p) - delta v(0;q)| / |p - q|`` (zero when
    ``p = q``); the defect is ``v(0;p)/2 + v(0;q)/2 - v(0;(p+q)/2)``.
    """
    n = grid.dim
    pairs = [(np.asarray(a, dtype=float).reshape(n), np.asarray(b, dtype=float).reshape(n)) for a, b in p_pairs]
    H = NodeHamiltonian(spec, env, grid.points())
    moms = [q for pr in pairs for q in (pr[0], pr[1], 0.5 * (pr[0] + pr[1]))]
    top = max(float(H.values(np.repeat(q[None], grid.size, axis=0)).max()) for q in moms) if moms else 0.0
    radius = _sublevel_radius_coefs(spec, H.coefs, top + 1.0)
    # the same viscosity for every momentum keeps the discrete operator jointly convex
    sig = float(np.max(H.node_gradient_bounds(radius)))
    cache: dict = {}

    def v0(q):
        key = tuple(np.round(q, 14))
        if key not in cache:
            sol = solve_discounted(spec, env, q, delta, grid, tol=tol, sigma=sig, adapt_sigma=False)
            cache[key] = float(interpolate(sol.field, np.zeros(n)))
        return cache[key]

    quot, defect = 0.0, -math.inf
    for a, b in pairs:
        va, vb, vm = v0(a), v0(b), v0(0.5 * (a + b))
        gap = float(np.linalg.norm(a - b))
        if gap > 0:
            quot = max(quot, abs(delta * va - delta * vb) / gap)
        defect = max(defect, 0.5 * va + 0.5 * vb - vm)
    return PRegularityReport(max_quotient=quot, max_defect=defect if pairs else 0.0,
                             quotient_bound=float(np.max(H.node_gradient_bounds(radius))), pairs=len(pairs),
                             sigma=sig)
