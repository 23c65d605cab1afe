"""Comparisons with distance functions, a ring-local AMLE constructor and the Hopf-Lax criterion."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import _linf
from .eikonal import ConeProvider, _block_layout
from .errors import (ConvergenceError, InvalidConfigError, ReachabilityError, ValidationRejectedError)
from .grid import Grid, ScalarField, interpolate
from .media import direction_mesh

# ---------------------------------------------------------------- comparisons with cones


@dataclass(frozen=True)
class CdfConfig:
    """A level, a closed box window ``[lo, hi]`` and a cone vertex outside it."""

    mu: float
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    vertex: tuple[float, ...]

    @classmethod
    def make(cls, c) -> "CdfConfig":
        if isinstance(c, CdfConfig):
            return c
        mu, window, x0 = c
        lo, hi = window
        as_t = lambda v: tuple(float(x) for x in np.atleast_1d(np.asarray(v, dtype=float)))
        return cls(float(mu), as_t(lo), as_t(hi), as_t(x0))

    def to_dict(self) -> dict:
        return {"mu": self.mu, "lo": list(self.lo), "hi": list(self.hi), "vertex": list(self.vertex)}


@dataclass
class CdfReport:
    side: str
    configs: list
    excess: np.ndarray = field(repr=False)
    worst: float
    witness: CdfConfig | None
    tol: float

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol

    def to_dict(self) -> dict:
        return {"side": self.side, "worst": self.worst, "tol": self.tol, "passed": self.passed,
                "count": len(self.configs), "witness": None if self.witness is None else self.witness.to_dict()}

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path


def _window_nodes(grid: Grid, lo, hi):
    """Flat indices of the closed box and, among them, those on its discrete boundary."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    idx_lo = np.ceil((lo - grid.lower) / grid.h - 1e-9).astype(int)
    idx_hi = np.floor((hi - grid.lower) / grid.h + 1e-9).astype(int)
    if np.any(idx_lo < 0) or np.any(idx_hi > np.asarray(grid.shape) - 1) or np.any(idx_hi < idx_lo):
        raise InvalidConfigError("window must lie inside the grid and contain nodes")
    axes = [np.arange(a, b + 1) for a, b in zip(idx_lo, idx_hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    flat = np.ravel_multi_index(tuple(m.ravel() for m in mesh), grid.shape)
    on_edge = np.zeros(flat.size, dtype=bool)
    for a, m in enumerate(mesh):
        on_edge |= (m.ravel() == idx_lo[a]) | (m.ravel() == idx_hi[a])
    return flat, flat[on_edge]


def check_cdf(u: ScalarField, provider: ConeProvider, side: str = "above", configs: Sequence = (),
              tol: float = 1e-9) -> CdfReport:
    """Audit comparisons with cones of ``provider`` on box windows.

    ``above``: the excess is ``max_V (u - d(x - x0)) - max_dV (u - d(x - x0))``.
    ``below``: the same with ``-u`` and the reflected cone ``d(x0 - x)``.
    The check passes when every excess is at most ``tol``.

    Raises:
        InvalidConfigError: a vertex lies in its closed window, or a window
            leaves the grid or meets undefined values of ``u``.
    """
    if side not in ("above", "below"):
        raise ValueError(f"side must be 'above' or 'below', not {side!r}")
    g = u.grid
    pts = g.points()
    vals = u.values.ravel()
    cfgs = [CdfConfig.make(c) for c in configs]
    excess = np.empty(len(cfgs))
    for k, c in enumerate(cfgs):
        x0 = np.asarray(c.vertex)
        if np.all(x0 >= np.asarray(c.lo) - 1e-12) and np.all(x0 <= np.asarray(c.hi) + 1e-12):
            raise InvalidConfigError(f"vertex {c.vertex} lies in the window {c.lo}..{c.hi}")
        inner, edge = _window_nodes(g, c.lo, c.hi)
        if not np.all(np.isfinite(vals[inner])):
            raise InvalidConfigError("window meets nodes where u is undefined")
        z = pts[inner] - x0
        if side == "above":
            phi = vals[inner] - provider.cone(c.mu, z)
        else:
            phi = -vals[inner] - provider.cone(c.mu, -z)
        is_edge = np.isin(inner, edge)
        excess[k] = float(phi.max() - phi[is_edge].max())
    if len(cfgs):
        j = int(np.argmax(excess))
        worst, witness = float(excess[j]), cfgs[j]
    else:
        worst, witness = -math.inf, None
    return CdfReport(side=side, configs=cfgs, excess=excess, worst=worst, witness=witness, tol=tol)


def level_for_slope(provider: ConeProvider, slope: float, dim: int) -> float:
    """Smallest level (by doubling and bisection) whose cone grows at least ``slope`` in every direction."""
    dirs = direction_mesh(dim, 64 if dim == 2 else None)
    base = provider.min_level
    ok = lambda mu: float(np.min(provider.support(mu, dirs))) >= slope
    cap = provider.max_level - base
    step = min(1.0, cap)
    while not ok(base + step):
        if step >= cap:
            return provider.max_level
        step = min(2.0 * step, cap)
        if step > 1e12:
            raise InvalidConfigError("cones never reach the requested slope")
    lo, hi = 0.0, step
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if ok(base + mid):
            hi = mid
        else:
            lo = mid
    return base + hi


def random_configs(grid: Grid, count: int, seed: int, provider: ConeProvider, lipschitz: float,
                   domain: tuple | None = None, avoid: Sequence = (), min_steps: int = 2,
                   level_tol: float = 1e-6) -> list[CdfConfig]:
    """Multi-scale random box windows inside ``domain`` with vertices outside them.

    Levels are geometric between ``min_level + level_tol`` and the level
    whose cones outgrow ``lipschitz + 1``; steeper cones pass trivially.
    Windows never contain a point of ``avoid`` (e.g. the vertex of a cone
    field under test).
    """
    rng = np.random.default_rng(seed)
    lo = grid.lower if domain is None else np.asarray(domain[0], dtype=float)
    hi = grid.upper if domain is None else np.asarray(domain[1], dtype=float)
    width = hi - lo
    h = grid.h
    top = level_for_slope(provider, lipschitz + 1.0, grid.dim) - provider.min_level
    bottom = min(level_tol, 0.5 * top)
    avoid = [np.asarray(a, dtype=float) for a in avoid]
    out = []
    while len(out) < count:
        size = np.exp(rng.uniform(np.log(min_steps * h), np.log(0.6 * width)))
        a = lo + rng.uniform(0, 1, grid.dim) * (width - size)
        b = a + size
        a = lo + np.round((a - lo) / h) * h
        b = np.minimum(lo + np.round((b - lo) / h) * h, hi)
        if np.any(b - a < min_steps * h - 1e-12):
            continue
        if any(np.all(p >= a - 1e-12) and np.all(p <= b + 1e-12) for p in avoid):
            continue
        # vertex in a box twice the domain size, outside the window
        x0 = lo - 0.5 * width + rng.uniform(0, 1, grid.dim) * 2 * width
        if np.all(x0 >= a - 0.5 * h) and np.all(x0 <= b + 0.5 * h):
            continue
        mu = provider.min_level + bottom * (top / bottom) ** rng.uniform()
        out.append(CdfConfig(float(mu), tuple(a), tuple(b), tuple(x0)))
    return out


# ---------------------------------------------------------------- AMLE constructor


@dataclass
class AmleResult:
    field: ScalarField
    passes: int
    change: float
    converged: bool
    unique: bool
    report_above: CdfReport | None = None
    report_below: CdfReport | None = None


def ring_offsets(dim: int, radius: int = 1) -> np.ndarray:
    """Integer offsets on the max-norm sphere of the given radius."""
    r = np.arange(-radius, radius + 1)
    offs = np.stack(np.meshgrid(*[r] * dim, indexing="ij"), -1).reshape(-1, dim)
    return offs[np.max(np.abs(offs), axis=1) == radius]


def _level_mesh(provider: ConeProvider, steps: np.ndarray, osc: float, count: int) -> tuple[np.ndarray, np.ndarray]:
    base = provider.min_level
    opp = _opposite(steps)

    def wide_enough(mu):
        d = provider.cone(mu, steps)
        return float(np.min(d[:, None] + d[opp][None, :])) >= osc

    cap = provider.max_level - base
    s = min(1.0, cap)
    while s < cap and not wide_enough(base + s):
        s = min(2.0 * s, cap)
    s_lo = s * 1e-7
    mus = base + np.concatenate([[0.0], np.geomspace(s_lo, s, count - 1)])
    D = np.stack([provider.cone(mu, steps) for mu in mus])
    # support values never decrease with the level; clean rounding
    D = np.maximum.accumulate(D, axis=0)
    return mus, D


def _opposite(steps: np.ndarray) -> np.ndarray:
    key = {tuple(s): i for i, s in enumerate(np.rint(steps * 1e9).astype(np.int64))}
    return np.array([key[tuple(-s)] for s in np.rint(steps * 1e9).astype(np.int64)], dtype=np.int64)


def construct_amle(provider: ConeProvider, grid: Grid, g: ScalarField | Callable, mask: np.ndarray | None = None,
                   tol: float = 1e-10, max_passes: int = 200_000, ring: int = 1, levels: int = 400,
                   multilevel: bool = True, flat_spot: bool | None = None, validate: int = 100,
                   cdf_tol: float | None = None, seed: int = 0, raise_on_failure: bool = True) -> AmleResult:
    """Absolute minimizer for the cones of ``provider`` with boundary data ``g``.

    Nodes whose ring (max-norm radius ``ring``) leaves the mask keep the
    values of ``g``; every other node is updated by Gauss-Seidel passes that
    enforce cone comparisons on its ring, until the largest change is below
    ``tol``. On full boxes with even extents a coarse solve seeds the fine one.
    With a flat spot (given, or detected on a table provider) the result is
    marked non-unique. ``validate`` random box configurations are then audited from above and
    below with tolerance ``cdf_tol`` (default ``2 tol``).

    Raises:
        ConvergenceError: ``max_passes`` reached.
        ValidationRejectedError: the audit found a comparison failure.
    """
    n = grid.dim
    if flat_spot is None:
        flat_spot = False
        if hasattr(provider, "table"):
            from .effective import argmin_region
            flat_spot = argmin_region(provider.table).flat_spot
    if mask is None:
        mask = np.ones(grid.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool).reshape(grid.shape)
    gvals = _boundary_values(grid, g)
    offs = ring_offsets(n, ring)
    fixed = _fixed_nodes(mask, offs)
    u = np.where(mask, gvals, np.nan).ravel().copy()
    free_mask = mask & ~fixed
    bvals = gvals[fixed & mask]
    if bvals.size == 0:
        raise InvalidConfigError("the mask has no boundary nodes")
    init = 0.5 * (float(bvals.max()) + float(bvals.min()))
    seeded = None
    if multilevel and mask.all() and all(e % 2 == 0 and e >= 8 * ring for e in grid.extent):
        coarse = Grid(grid.origin, tuple(2 * s for s in grid.spacing), tuple(e // 2 for e in grid.extent),
                      grid.periodic)
        sub = construct_amle(provider, coarse, g, None, tol=tol, max_passes=max_passes, ring=ring,
                             levels=levels, multilevel=True, flat_spot=flat_spot, validate=0, seed=seed,
                             raise_on_failure=False)
        seeded = np.atleast_1d(interpolate(sub.field, grid.points()))
    u[free_mask.ravel()] = init if seeded is None else seeded[free_mask.ravel()]
    steps = offs * grid.spacing
    osc = float(bvals.max() - bvals.min()) + 1e-12
    mus, D = _level_mesh(provider, steps, osc, levels)
    opp = _opposite(steps)
    free = np.flatnonzero(free_mask.ravel())
    coords = np.array(np.unravel_index(free, grid.shape)).T
    nbrs = np.ravel_multi_index(tuple((coords[:, None, :] + offs[None]).transpose(2, 0, 1)), grid.shape)
    nbrs = np.ascontiguousarray(nbrs.astype(np.int64))
    change = math.inf
    passes = 0
    while passes < max_passes:
        change = _linf.amle_pass(u, free, nbrs, D, opp, passes % 2 == 1)
        passes += 1
        if change < tol:
            break
    result = AmleResult(field=ScalarField(grid, u.reshape(grid.shape)), passes=passes, change=change,
                        converged=change < tol, unique=not flat_spot)
    if not result.converged:
        if raise_on_failure:
            raise ConvergenceError(f"AMLE passes stopped at change {change:.3g}", residual=change,
                                   iterations=passes, partial=result)
        return result
    if validate:
        cdf_tol = 2 * tol if cdf_tol is None else cdf_tol
        dom = _mask_box(grid, free_mask | fixed & mask)
        lip = _lipschitz(result.field, mask)
        cfgs = random_configs(grid, validate, seed, provider, lip, domain=dom)
        result.report_above = check_cdf(result.field, provider, "above", cfgs, cdf_tol)
        result.report_below = check_cdf(result.field, provider, "below", cfgs, cdf_tol)
        if raise_on_failure and not (result.report_above.passed and result.report_below.passed):
            worst = max(result.report_above.worst, result.report_below.worst)
            raise ValidationRejectedError(f"constructed field fails cone comparisons by {worst:.3g}",
                                          report=(result.report_above, result.report_below))
    return result


def _boundary_values(grid: Grid, g) -> np.ndarray:
    if isinstance(g, ScalarField):
        if g.grid.shape == grid.shape:
            return np.asarray(g.values, dtype=float)
        return np.atleast_1d(interpolate(g, grid.points())).reshape(grid.shape)
    return np.asarray(g(grid.points()), dtype=float).reshape(grid.shape)


def _fixed_nodes(mask: np.ndarray, offs: np.ndarray) -> np.ndarray:
    """Mask nodes with some ring neighbour outside the mask or the grid."""
    shape = mask.shape
    fixed = np.zeros(shape, dtype=bool)
    idx = np.array(np.nonzero(mask)).T
    for o in offs:
        nb = idx + o
        out = np.any((nb < 0) | (nb >= np.asarray(shape)), axis=1)
        inside = ~out
        bad = out.copy()
        bad[inside] = ~mask[tuple(nb[inside].T)]
        fixed[tuple(idx[bad].T)] = True
    return fixed & mask


def _mask_box(grid: Grid, mask: np.ndarray):
    idx = np.array(np.nonzero(mask)).T
    lo = grid.lower + idx.min(axis=0) * grid.h
    hi = grid.lower + idx.max(axis=0) * grid.h
    return lo, hi


def _lipschitz(f: ScalarField, mask: np.ndarray) -> float:
    v = np.where(mask, f.values, np.nan)
    worst = 0.0
    for a in range(f.grid.dim):
        d = np.abs(np.diff(v, axis=a)) / f.grid.spacing[a]
        if np.any(np.isfinite(d)):
            worst = max(worst, float(np.nanmax(d)))
    return worst * math.sqrt(f.grid.dim)


# ---------------------------------------------------------------- Legendre and Hopf-Lax


@dataclass
class LagrangianTable:
    """``L(q) = sup_p (p . q - Hbar(p))`` on a q-grid; ``+inf`` marks slopes beyond the tabulated range."""

    grid: Grid
    values: np.ndarray

    @property
    def finite(self) -> np.ndarray:
        return np.isfinite(self.values)

    def __call__(self, q) -> np.ndarray:
        Q = np.atleast_2d(np.asarray(q, dtype=float)).reshape(-1, self.grid.dim)
        shape, strides, _, h = _block_layout(self.grid)
        out = np.empty(Q.shape[0])
        lo = np.zeros(3)
        lo[: self.grid.dim] = self.grid.lower
        qq = np.zeros(3)
        for k, row in enumerate(Q):
            qq[: self.grid.dim] = row
            out[k] = _linf._interp_L(self.values.ravel(), lo, h, shape, strides, self.grid.dim, qq)
        return out


def legendre(source, q_grid: Grid, p_grid: Grid | None = None, chunk: int = 2048) -> LagrangianTable:
    """Discrete conjugate over the nodes of a table (or of ``p_grid`` for an evaluator).

    ``source`` is an HbarTable on a structured grid, or a callable mapping an
    ``(m, n)`` momentum array to values (then ``p_grid`` is required). The
    sentinel ``+inf`` is stored where no maximiser lies off the p-grid boundary.
    """
    from .effective import HbarTable, _boundary_mask

    if isinstance(source, HbarTable):
        if source.grid is None:
            raise ValueError("legendre needs a structured table")
        pg = source.grid
        hv = source.values
    else:
        if p_grid is None:
            raise ValueError("p_grid is required for an evaluator")
        pg = p_grid
        hv = np.asarray(source(pg.points()), dtype=float).ravel()
    P = pg.points()
    edge = _boundary_mask(pg)
    Q = q_grid.points()
    out = np.empty(Q.shape[0])
    for s in range(0, Q.shape[0], chunk):
        S = Q[s: s + chunk] @ P.T - hv[None, :]
        best = S.max(axis=1)
        inner = np.where(edge[None, :], -np.inf, S).max(axis=1)
        scale = 1e-12 * np.maximum(1.0, np.abs(best))
        out[s: s + chunk] = np.where(inner >= best - scale, best, np.inf)
    return LagrangianTable(q_grid, out.reshape(q_grid.shape))


def hopf_lax(u: ScalarField, L: LagrangianTable, t: float, mask: np.ndarray | None = None,
             targets: np.ndarray | None = None) -> ScalarField:
    """Discrete ``T^t u(x) = sup_y (u(y) - t L((y - x)/t))`` over mask nodes ``y``.

    ``targets`` restricts the evaluation to the given flat node indices (NaN
    elsewhere). ``t = 0`` returns ``u``.

    Raises:
        ReachabilityError: every ``y`` is excluded for some target.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return ScalarField(u.grid, np.array(u.values, dtype=float))
    g = u.grid
    if L.grid.dim != g.dim:
        raise ValueError("dimension mismatch between field and Lagrangian")
    mask = np.isfinite(u.values) if mask is None else np.asarray(mask, dtype=bool) & np.isfinite(u.values)
    tg = np.flatnonzero(mask.ravel()) if targets is None else np.asarray(targets, dtype=np.int64).ravel()
    shape, strides, _, h = _block_layout(g)
    origin = np.zeros(3)
    origin[: g.dim] = g.lower
    qshape, qstr, _, qh = _block_layout(L.grid)
    qlo = np.zeros(3)
    qlo[: g.dim] = L.grid.lower
    vals = _linf.hopf_lax_at(np.nan_to_num(u.values.ravel(), nan=-np.inf), mask.ravel(), origin, h, shape, strides,
                             g.dim, tg, L.values.ravel(), qlo, qh, qshape, qstr, float(t))
    if np.any(np.isnan(vals)):
        raise ReachabilityError(f"no admissible y for some target at t={t:g}; the q-grid is too small for h/t")
    out = np.full(g.size, np.nan)
    out[tg] = vals
    return ScalarField(g, out.reshape(g.shape))


@dataclass
class ConvexityCriterionReport:
    worst: float
    defects: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    times: tuple[float, ...] = ()
    probes: np.ndarray = field(default=None, repr=False)

    def passed(self, tol: float) -> bool:
        return self.worst <= tol


def convexity_criterion(u: ScalarField, L: LagrangianTable, times: Sequence[float], probes,
                        mask: np.ndarray | None = None) -> ConvexityCriterionReport:
    """Worst concavity defect of ``t -> T^t u(x)`` over consecutive time triples and probe nodes.

    The defect of ``(t0, t1, t2)`` is ``f(t1)`` minus the chord value at ``t1``.
    ``probes`` are points (snapped to the nearest nodes) or flat indices.
    """
    times = [float(t) for t in times]
    if len(times) < 3 or any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("need at least three increasing times")
    g = u.grid
    pr = np.asarray(probes)
    if pr.dtype.kind in "iu":
        tg = pr.ravel().astype(np.int64)
    else:
        pr = np.atleast_2d(pr.astype(float)).reshape(-1, g.dim)
        tg = np.array([np.ravel_multi_index(g.nearest_node(x), g.shape) for x in pr], dtype=np.int64)
    F = np.empty((tg.size, len(times)))
    for k, t in enumerate(times):
        F[:, k] = hopf_lax(u, L, t, mask=mask, targets=tg).values.ravel()[tg]
    defects = np.empty((tg.size, len(times) - 2))
    for k in range(len(times) - 2):
        t0, t1, t2 = times[k: k + 3]
        chord = ((t2 - t1) * F[:, k] + (t1 - t0) * F[:, k + 2]) / (t2 - t0)
        defects[:, k] = F[:, k + 1] - chord
    return ConvexityCriterionReport(worst=float(defects.max()), defects=defects, values=F, times=tuple(times),
                                    probes=tg)
