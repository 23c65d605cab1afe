"""Distance functions: exact cones for p-only Hamiltonians and fast-sweeping solves.

The cone of level ``mu`` is the support function of the sublevel set
``{q : H(q) <= mu}``. For y-dependent Hamiltonians the distance function
from a vertex solves ``H(p + Du, y) = mu`` away from the vertex; it is
computed by Lax-Friedrichs fast sweeping from a supersolution cone.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from . import _sweep
from .errors import CoercivityError, ConvergenceError, EmptySublevelError, InfeasibleLevelError
from .grid import Grid, ScalarField, interpolate, pde_residual
from .media import (EnvironmentRealization, HamiltonianSpec, NodeHamiltonian, _sublevel_radius_coefs,
                    coefficients, direction_mesh, eval_h)

Evaluator = Callable[[np.ndarray], np.ndarray]

_RAY_CAP = 1e6


def _unit(v: np.ndarray) -> np.ndarray:
    v = np.atleast_2d(np.asarray(v, dtype=float))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _minimize_evaluator(Hp: Evaluator, dim: int, start=None) -> tuple[np.ndarray, float]:
    x0 = np.zeros(dim) if start is None else np.asarray(start, dtype=float)
    f = lambda q: float(Hp(np.asarray(q, dtype=float).reshape(1, dim))[0])
    if dim == 1:
        res = minimize_scalar(lambda t: f([t]), bracket=(x0[0] - 1.0, x0[0] + 1.0))
        return np.array([res.x]), float(res.fun)
    res = minimize(f, x0, method="Nelder-Mead",
                   options={"xatol": 1e-11, "fatol": 1e-13, "maxiter": 20000, "maxfev": 40000})
    return np.asarray(res.x), float(res.fun)


def _ray_ends(Hp: Evaluator, center: np.ndarray, level: float, dirs: np.ndarray, tol: float):
    """Bisection brackets ``[lo, hi]`` of the boundary along rays from ``center``."""
    m = dirs.shape[0]
    lo = np.zeros(m)
    hi = np.ones(m)
    inside = Hp(center + hi[:, None] * dirs) <= level
    while inside.any():
        lo[inside] = hi[inside]
        hi[inside] *= 2.0
        if np.any(hi > _RAY_CAP):
            raise CoercivityError("sublevel set is unbounded along some ray")
        inside = Hp(center + hi[:, None] * dirs) <= level
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        ok = Hp(center + mid[:, None] * dirs) <= level
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    return lo, hi


def cone_support(Hp: Evaluator, mu: float, theta, tol: float = 1e-9, dim: int | None = None,
                 rays: int | None = None, center=None) -> float | np.ndarray:
    """``max {q . theta : Hp(q) <= mu}`` by ray bisection from the minimiser.

    ``Hp`` maps an ``(m, dim)`` array of momenta to ``m`` values. ``theta`` is
    one unit vector or rows of unit vectors.

    Raises:
        EmptySublevelError: ``mu`` is below ``min Hp``.
    """
    th = np.asarray(theta, dtype=float)
    single = th.ndim <= 1
    dim = dim or (th.size if single else th.shape[1])
    th = _unit(th.reshape(-1, dim))
    qmin, hmin = _minimize_evaluator(Hp, dim, center)
    if mu < hmin - tol:
        raise EmptySublevelError(f"level {mu:g} is below min H = {hmin:g}")
    if mu <= hmin + tol:
        out = th @ qmin
        return float(out[0]) if single else out
    dirs = direction_mesh(dim, rays)
    lo, _ = _ray_ends(Hp, qmin, mu, dirs, tol)
    pts = qmin + lo[:, None] * dirs
    out = np.empty(th.shape[0])
    for k, t in enumerate(th):
        j = int(np.argmax(pts @ t))
        best = float(pts[j] @ t)
        if dim >= 2:
            best = max(best, _refine_support(Hp, qmin, mu, t, dirs[j], dim, tol, len(dirs)))
        out[k] = best
    return float(out[0]) if single else out


def _refine_support(Hp, center, mu, theta, d0, dim, tol, count):
    def value(direction):
        direction = _unit(direction)
        lo, _ = _ray_ends(Hp, center, mu, direction, tol)
        return float((center + lo[0] * direction[0]) @ theta)

    if dim == 2:
        phi0 = math.atan2(d0[1], d0[0])
        width = 2 * math.pi / count
        res = minimize_scalar(lambda ph: -value(np.array([math.cos(ph), math.sin(ph)])),
                              bounds=(phi0 - width, phi0 + width), method="bounded",
                              options={"xatol": 1e-10})
        return -float(res.fun)
    res = minimize(lambda v: -value(v), d0, method="Nelder-Mead",
                   options={"xatol": 1e-9, "fatol": tol * 1e-2, "maxiter": 400})
    return -float(res.fun)


class ConeProvider:
    """Evaluates cone functions ``d_mu(z)`` for a p-only convex Hamiltonian."""

    dim: int
    min_level: float
    max_level: float = math.inf
    flat: bool = False

    def support(self, mu: float, thetas: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def cone(self, mu: float, z) -> np.ndarray:
        """``d_mu`` at the rows of ``z``; zero at the origin."""
        Z = np.atleast_2d(np.asarray(z, dtype=float)).reshape(-1, self.dim)
        r = np.linalg.norm(Z, axis=1)
        out = np.zeros(Z.shape[0])
        nz = r > 0
        if nz.any():
            out[nz] = r[nz] * self.support(mu, Z[nz] / r[nz, None])
        return out

    def check_level(self, mu: float, tol: float = 1e-12):
        if mu < self.min_level - tol:
            raise EmptySublevelError(f"level {mu:g} is below min H = {self.min_level:g}")

    @staticmethod
    def from_spec(spec: HamiltonianSpec) -> "ConeProvider":
        if not spec.p_only:
            raise ValueError("exact cones need a p-only Hamiltonian")
        return CatalogCone(spec)

    @staticmethod
    def from_evaluator(Hp: Evaluator, dim: int, rays: int | None = None, tol: float = 1e-9) -> "ConeProvider":
        return EvaluatorCone(Hp, dim, rays, tol)

    @staticmethod
    def from_table(table, tol: float | None = None) -> "ConeProvider":
        from .effective import TableCone

        return TableCone(table, tol)


class CatalogCone(ConeProvider):
    """Closed-form supports of the ellipsoidal sublevel sets of the p-only catalog."""

    def __init__(self, spec: HamiltonianSpec):
        self.spec = spec
        self.dim = spec.dim
        self.offset = float(spec.params.get("offset", 0.0))
        self.min_level = self.offset
        self.center = spec.center
        self.inv = np.linalg.inv(0.5 * (spec.matrix + spec.matrix.T))
        self.quadratic = spec.params.get("form", "quadratic") == "quadratic"

    def radius(self, mu: float) -> float:
        self.check_level(mu)
        s = max(mu - self.offset, 0.0)
        return math.sqrt(s) if self.quadratic else s

    def support(self, mu: float, thetas: np.ndarray) -> np.ndarray:
        T = np.atleast_2d(np.asarray(thetas, dtype=float)).reshape(-1, self.dim)
        s = self.radius(mu)
        return T @ self.center + s * np.sqrt(np.einsum("ij,jk,ik->i", T, self.inv, T))

    def __call__(self, q: np.ndarray) -> np.ndarray:
        return eval_h(self.spec, np.atleast_2d(q), np.zeros((1, self.dim)))


class EvaluatorCone(ConeProvider):
    """Numerical supports of an arbitrary convex evaluator, cached per level."""

    def __init__(self, Hp: Evaluator, dim: int, rays: int | None = None, tol: float = 1e-9):
        self.Hp = Hp
        self.dim = dim
        self.rays = rays
        self.tol = tol
        self.qmin, self.min_level = _minimize_evaluator(Hp, dim)

    def support(self, mu: float, thetas: np.ndarray) -> np.ndarray:
        self.check_level(mu, self.tol)
        T = np.atleast_2d(np.asarray(thetas, dtype=float)).reshape(-1, self.dim)
        return np.atleast_1d(cone_support(self.Hp, mu, T, self.tol, self.dim, self.rays, self.qmin))


def cone_value(provider: ConeProvider, vertex, y, mu: float):
    """``d_mu(y - vertex)`` for one point or the rows of ``y``."""
    Y = np.asarray(y, dtype=float)
    single = Y.ndim <= 1 and Y.size == provider.dim
    Z = Y.reshape(-1, provider.dim) - np.asarray(vertex, dtype=float).reshape(1, provider.dim)
    out = provider.cone(mu, Z)
    return float(out[0]) if single else out


@dataclass(frozen=True)
class DistanceField:
    """A converged ``d_{mu, x0, p}`` on a grid with its diagnostics."""

    field: ScalarField
    source: tuple[float, ...]
    mu: float
    p: tuple[float, ...]
    residual: float
    lipschitz: float
    lipschitz_bound: float
    error_bound: float
    sweeps: int
    converged: bool
    tol: float
    sigma: tuple[float, ...] = ()
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def grid(self) -> Grid:
        return self.field.grid

    def __call__(self, y):
        return interpolate(self.field, y)

    def shifted(self) -> ScalarField:
        """``d_{mu, x0}``: the stored field plus ``p . (y - x0)``."""
        pts = self.grid.points() - np.asarray(self.source)
        add = (pts @ np.asarray(self.p)).reshape(self.grid.shape)
        return ScalarField(self.grid, self.field.values + add)

    def sidecar(self) -> dict:
        return {"mu": self.mu, "source": list(self.source), "p": list(self.p),
                "residual": self.residual, "sweeps": self.sweeps, "converged": self.converged,
                "lipschitz": self.lipschitz, "lipschitz_bound": self.lipschitz_bound,
                "error_bound": self.error_bound, "tol": self.tol, "sigma": list(self.sigma)}


def _block_layout(grid: Grid):
    shape = np.ones(3, dtype=np.int64)
    shape[: grid.dim] = grid.shape
    strides = np.array([shape[1] * shape[2], shape[2], 1], dtype=np.int64)
    periodic = np.zeros(3, dtype=np.bool_)
    periodic[: grid.dim] = grid.periodic
    h = np.ones(3)
    h[: grid.dim] = grid.spacing
    return shape, strides, periodic, h


def frozen_evaluator(spec: HamiltonianSpec, env, x0, p) -> Evaluator:
    """``q -> H(p + q, x0)``: the Hamiltonian frozen at the vertex."""
    coef = coefficients(spec, env, np.asarray(x0, dtype=float).reshape(1, spec.dim))
    pv = np.asarray(p, dtype=float).reshape(1, spec.dim)
    from . import _kernels as K

    def Hp(q):
        q = np.ascontiguousarray(np.atleast_2d(q) + pv)
        return K.h_values(spec.code, spec.dim, spec.param_vector, np.repeat(coef, q.shape[0], axis=0), q)

    return Hp


def residual_window(grid: Grid, source, margin: float = 0.2, exclude: int = 3) -> np.ndarray:
    """Nodes away from the outer margin and more than ``exclude`` steps from the source."""
    mask = np.ones(grid.shape, dtype=bool)
    for a in range(grid.dim):
        if grid.periodic[a]:
            continue
        layers = max(1, int(math.ceil(margin * grid.extent[a])))
        sl = [slice(None)] * grid.dim
        sl[a] = slice(0, layers)
        mask[tuple(sl)] = False
        sl[a] = slice(grid.shape[a] - layers, None)
        mask[tuple(sl)] = False
    pts = grid.points().reshape(grid.shape + (grid.dim,))
    steps = np.max(np.abs(pts - np.asarray(source)) / grid.h, axis=-1)
    return mask & (steps > exclude)


def solve_distance(spec: HamiltonianSpec, env: EnvironmentRealization | None, mu: float, x0, grid: Grid,
                   tol: float | None = None, max_sweeps: int = 500, p=None,
                   raise_on_failure: bool = True, source_radius: int = 3) -> DistanceField:
    """Distance function of level ``mu`` from ``x0`` by Lax-Friedrichs fast sweeping.

    Nodes within ``source_radius`` steps (max norm) of the vertex node are
    pinned to the cone of H frozen at ``x0``; the outer boundary is closed by linear extrapolation. The default
    tolerance on the largest node change is ``h^2 max(|mu|, 1)``.

    Raises:
        InfeasibleLevelError: ``mu`` is below ``min_p H(p, y)`` at some node.
        ConvergenceError: ``max_sweeps`` passes did not reach ``tol``.
    """
    n = grid.dim
    x0 = np.asarray(x0, dtype=float).reshape(n)
    pvec = np.zeros(n) if p is None else np.asarray(p, dtype=float).reshape(n)
    pts = grid.points()
    H = NodeHamiltonian(spec, env, pts)
    floor = float(H.min_over_p().max())
    if mu < floor - 1e-12:
        raise InfeasibleLevelError(f"level {mu:g} is below min_p H = {floor:g} at some node")
    hmax = float(np.max(grid.h))
    if tol is None:
        tol = hmax * hmax * max(abs(mu), 1.0)
    radius = _sublevel_radius_coefs(spec, H.coefs, mu)
    slope = radius + float(np.linalg.norm(pvec))
    sigma_node = H.node_gradient_bounds(1.1 * radius)

    shape, strides, periodic, h = _block_layout(grid)
    fixed = np.zeros(grid.size, dtype=np.bool_)
    node = np.asarray(grid.nearest_node(x0))
    ring = _ring_nodes(grid, node, source_radius)
    provider = EvaluatorCone(frozen_evaluator(spec, env, x0, pvec), n)
    ring_flat = np.ravel_multi_index(tuple(ring.T), grid.shape)
    ring_vals = provider.cone(mu, pts[ring_flat] - x0)
    # start above the discrete solution (twice the steepest cone); the min rule then only decreases
    init = (2.0 * slope + 1.0) * np.linalg.norm(pts - x0, axis=1)

    sigma = np.ones((grid.size, 3))
    sigma[:, :n] = sigma_node[:, None]
    for attempt in range(4):
        u = init.copy()
        u[ring_flat] = np.minimum(ring_vals, u[ring_flat])
        fixed[:] = False
        fixed[ring_flat] = True
        change = math.inf
        sweeps = 0
        orders = 1 << n
        while sweeps < max_sweeps:
            change = _sweep.lf_sweep(u, n, shape, strides, periodic, h, sigma, H.kind, H.prm, H.coefs,
                                     pvec, float(mu), fixed, sweeps % orders)
            sweeps += 1
            if change < tol:
                break
        need = _sweep.centered_gradient_bound(u, n, shape, strides, periodic, h, H.kind, H.prm,
                                              H.coefs, pvec)
        short = need > sigma[:, 0] * (1 + 1e-9)
        if not short.any():
            break
        # viscosity below the realised slope somewhere: raise it there and start over
        sigma[short, :n] = 1.5 * need[short, None]
    converged = change < tol
    values = u.reshape(grid.shape)
    fld = ScalarField(grid, values)
    window = residual_window(grid, x0, exclude=source_radius)
    res = math.nan
    if window.any():
        def Hres(g, y):
            return eval_h(spec, g + pvec, y, env)
        res = pde_residual(fld, Hres, mu, window)
    lip = _discrete_lipschitz(values, grid)
    err = _error_bound(grid, slope, tol)
    out = DistanceField(field=fld, source=tuple(x0), mu=float(mu), p=tuple(pvec), residual=res,
                        lipschitz=lip, lipschitz_bound=slope, error_bound=err, sweeps=sweeps,
                        converged=converged, tol=float(tol), sigma=tuple(np.max(sigma[:, :n], axis=0)))
    if not converged and raise_on_failure:
        raise ConvergenceError(f"fast sweeping stopped after {sweeps} sweeps with change {change:.3g}",
                               residual=change, iterations=sweeps, partial=out)
    return out


def _ring_nodes(grid: Grid, node: np.ndarray, radius: int = 1) -> np.ndarray:
    steps = np.arange(-radius, radius + 1)
    offs = np.stack(np.meshgrid(*[steps] * grid.dim, indexing="ij"), -1).reshape(-1, grid.dim)
    cand = node + offs
    keep = np.ones(len(cand), dtype=bool)
    for a in range(grid.dim):
        if grid.periodic[a]:
            cand[:, a] %= grid.shape[a]
        else:
            keep &= (cand[:, a] >= 0) & (cand[:, a] < grid.shape[a])
    return cand[keep]


def _discrete_lipschitz(values: np.ndarray, grid: Grid) -> float:
    """Max difference quotient over axis and diagonal neighbour pairs."""
    h = np.asarray(grid.h, dtype=float)
    best = 0.0
    for off in itertools.product((-1, 0, 1), repeat=grid.dim):
        if not any(off) or next(o for o in off if o) < 0:
            continue
        target = values
        src, dst = [], []
        for ax, o in enumerate(off):
            if grid.periodic[ax] or o == 0:
                target = np.roll(target, -o, axis=ax)
                src.append(slice(None))
                dst.append(slice(None))
            elif o > 0:
                src.append(slice(0, -o))
                dst.append(slice(o, None))
            else:
                src.append(slice(-o, None))
                dst.append(slice(0, o))
        diff = np.abs(target[tuple(dst)] - values[tuple(src)])
        q = np.nan_to_num(diff, nan=0.0, posinf=0.0).max(initial=0.0) / float(np.linalg.norm(h * off))
        best = max(best, float(q))
    return best


def _error_bound(grid: Grid, slope: float, tol: float) -> float:
    """A priori error estimate of the scheme: ``C_mu h (1 + |log h|)`` plus the sweep tolerance."""
    h = float(np.max(grid.h))
    return slope * h * (1.0 + abs(math.log(h))) + tol


def rescale_distance(d: DistanceField, eps: float) -> DistanceField:
    """``y -> eps d(y / eps)`` on the grid scaled by ``eps``, vertex ``eps x0``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = d.grid.scaled(eps)
    return replace(d, field=ScalarField(g, eps * d.field.values),
                   source=tuple(eps * np.asarray(d.source)), error_bound=eps * d.error_bound,
                   tol=eps * d.tol, meta=dict(d.meta, eps=eps))


def check_subadditivity(spec: HamiltonianSpec, env, mu: float, triples: Sequence, grid: Grid,
                        solved: dict | None = None, **solver_kw) -> float:
    """Max over ``(x, z, y)`` of ``d_x(y) - d_z(y) - d_x(z)``; one solve per distinct vertex."""
    cache = {} if solved is None else solved
    worst = -math.inf

    def dist(v):
        key = tuple(np.round(np.asarray(v, dtype=float), 12))
        if key not in cache:
            cache[key] = solve_distance(spec, env, mu, v, grid, **solver_kw)
        return cache[key]

    for x, z, y in triples:
        dx = dist(x)
        dz = dist(z)
        v = dx(np.asarray(y, dtype=float)) - dz(np.asarray(y, dtype=float)) - dx(np.asarray(z, dtype=float))
        worst = max(worst, float(v))
    return worst
