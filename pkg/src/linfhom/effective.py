"""Tabulated effective Hamiltonians, their structure, effective cones and homogenization runs."""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import ConvexHull, QhullError

from .corrector import DEFAULT_TOL, hbar_point
from .eikonal import ConeProvider, DistanceField, rescale_distance, solve_distance
from .errors import ConvergenceError, EmptySublevelError, LinfhomError, RangeTooSmallError
from .grid import Grid, interpolate
from .media import EnvironmentRealization, HamiltonianSpec, NodeHamiltonian

WORKERS_ENV = "LINFHOM_WORKERS"


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------- oracles

def oracle_hbar_separable_1d(V: Callable | np.ndarray, p: float, quad_n: int = 200_000,
                             tol: float = 1e-12) -> float:
    """Hbar for ``|p|^2 + V(y)`` with V 1-periodic: ``max V`` on the flat branch, else the
    ``mu`` solving ``int_0^1 sqrt(mu - V) = |p|``.

    ``V`` is a callable on ``[0, 1)`` or an array of samples on a uniform
    periodic mesh (midpoint rule either way).
    """
    if callable(V):
        y = (np.arange(quad_n) + 0.5) / quad_n
        v = np.asarray(V(y), dtype=float)
    else:
        v = np.asarray(V, dtype=float).ravel()
    top = float(v.max())
    flat_end = float(np.mean(np.sqrt(top - v)))
    a = abs(float(p))
    if a <= flat_end:
        return top
    f = lambda mu: float(np.mean(np.sqrt(mu - v))) - a
    return float(brentq(f, top, top + a * a + 1.0, xtol=tol, rtol=4 * np.finfo(float).eps))


def flat_spot_halfwidth_1d(V: Callable | np.ndarray, quad_n: int = 200_000) -> float:
    """``int_0^1 sqrt(max V - V)``: the end of the flat branch of the oracle above."""
    if callable(V):
        v = np.asarray(V((np.arange(quad_n) + 0.5) / quad_n), dtype=float)
    else:
        v = np.asarray(V, dtype=float).ravel()
    return float(np.mean(np.sqrt(v.max() - v)))


def oracle_metric_1d(c, p: float, probs=None) -> float:
    """``|p| / E[1/c]`` with ``E`` the mean over ``c`` (weighted by ``probs`` when given).

    ``c`` is either the value set of an iid cell distribution or a sampled path.
    """
    c = np.asarray(c, dtype=float).ravel()
    if np.any(c <= 0):
        raise ValueError("metric coefficient must be positive")
    w = np.full(c.size, 1.0 / c.size) if probs is None else np.asarray(probs, dtype=float)
    return abs(float(p)) / float(np.sum(w / c))


# ---------------------------------------------------------------- tables

@dataclass
class HbarTable:
    """Hbar sampled at momentum nodes, with raw and derived values.

    ``grid`` is set for structured tables (``points`` are its nodes in C
    order); scattered tables keep ``grid = None``. ``values`` is the active
    column: the chosen estimator, or its lower convex envelope once
    :meth:`convexify` has been applied.
    """

    points: np.ndarray
    point: np.ndarray
    extrapolated: np.ndarray
    upper: np.ndarray
    spread: np.ndarray
    error: np.ndarray
    unreliable: np.ndarray
    crude_lo: np.ndarray
    crude_hi: np.ndarray
    estimator: str = "point"
    grid: Grid | None = None
    convexified: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def raw(self) -> np.ndarray:
        return {"point": self.point, "extrapolated": self.extrapolated, "infsup-bound": self.upper}[self.estimator]

    @property
    def values(self) -> np.ndarray:
        return self.convexified if self.convexified is not None else self.raw

    def convexify(self) -> "HbarTable":
        """Copy whose active values are the lower convex envelope of the raw column."""
        env = lower_convex_envelope(self.points, self.raw)
        prov = dict(self.provenance, convexified=True,
                    max_correction=float(np.max(self.raw - env)) if env.size else 0.0)
        return replace(self, convexified=env, provenance=prov)

    def crude_violations(self, slack: float | None = None) -> int:
        """Nodes outside ``[min_y H(p,y), max_y H(p,y)]``.

        The default slack is the solver residual tolerance plus relative rounding,
        the accuracy to which ``-delta v`` reproduces ``H`` at a constant solution.
        """
        v = self.values
        if slack is None:
            slack = float(self.provenance.get("tol", 0.0))
        slack = slack + 1e-12 * np.maximum(1.0, np.abs(v))
        return int(np.sum((v < self.crude_lo - slack) | (v > self.crude_hi + slack)))

    def to_dict(self) -> dict:
        d = {"points": self.points.tolist(), "estimator": self.estimator,
             "grid": self.grid.to_dict() if self.grid is not None else None,
             "provenance": self.provenance}
        for name in ("point", "extrapolated", "upper", "spread", "error", "crude_lo", "crude_hi"):
            d[name] = [_num(x) for x in getattr(self, name)]
        d["unreliable"] = [bool(x) for x in self.unreliable]
        d["convexified"] = None if self.convexified is None else [_num(x) for x in self.convexified]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HbarTable":
        arr = lambda k: np.array([math.nan if x is None else x for x in d[k]], dtype=float)
        return cls(points=np.asarray(d["points"], dtype=float).reshape(len(d["points"]), -1),
                   point=arr("point"), extrapolated=arr("extrapolated"), upper=arr("upper"),
                   spread=arr("spread"), error=arr("error"), unreliable=np.asarray(d["unreliable"], dtype=bool),
                   crude_lo=arr("crude_lo"), crude_hi=arr("crude_hi"), estimator=d["estimator"],
                   grid=Grid.from_dict(d["grid"]) if d.get("grid") else None,
                   convexified=None if d.get("convexified") is None else arr("convexified"),
                   provenance=d.get("provenance", {}))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        return path

    def write_plotdata(self, path) -> list[Path]:
        """Hbar against p along each axis.

        1D tables give one series at ``path``. Structured tables in higher
        dimension give one file per axis (``<stem>_axis<a><suffix>``), each a
        slice through the node of least value. Scattered tables give
        ``(node index, Hbar)``.
        """
        path = Path(path)
        if self.dim == 1:
            order = np.argsort(self.points[:, 0], kind="stable")
            return [write_series(path, self.points[order, 0], self.values[order], "p", "Hbar")]
        if self.grid is None:
            return [write_series(path, np.arange(len(self.points)), self.values, "node", "Hbar")]
        V = self.values.reshape(self.grid.shape)
        star = np.unravel_index(int(np.argmin(self.values)), self.grid.shape)
        out = []
        for a in range(self.dim):
            idx = list(star)
            idx[a] = slice(None)
            out.append(write_series(path.with_name(f"{path.stem}_axis{a}{path.suffix}"), self.grid.coords(a),
                                    V[tuple(idx)], f"p_{a}", "Hbar"))
        return out


def load_table(path) -> HbarTable:
    return HbarTable.from_dict(json.loads(Path(path).read_text()))


def _num(x):
    x = float(x)
    return None if math.isnan(x) else x


def write_series(path, x, y, xlabel: str = "x", ylabel: str = "y", units: str = "dimensionless",
                 scale: str = "linear") -> Path:
    """Plot data as two whitespace-separated columns below a ``#`` header naming axes and units."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# x: {xlabel} [{units}]\n# y: {ylabel} [{units}]\n# axes: {scale}\n")
        for a, b in zip(np.asarray(x, dtype=float).tolist(), np.asarray(y, dtype=float).tolist()):
            fh.write(f"{a!r} {b!r}\n")
    return path


def _table_node(args):
    spec, envs, p, deltas, torus, tol, upper = args
    rows = []
    for env in envs:
        hp = hbar_point(spec, env, p, deltas, torus, tol=tol, upper_bound=upper)
        H = NodeHamiltonian(spec, env, torus.points())
        hv = H.values(np.repeat(np.asarray(p, dtype=float)[None], torus.size, axis=0))
        rows.append((hp.estimate, hp.extrapolated, hp.upper_bound, hp.unreliable, float(hv.min()), float(hv.max()),
                     hp.sequence))
    return rows


def build_table(spec: HamiltonianSpec, envs, p_grid: Grid | np.ndarray, deltas: Sequence[float], torus: Grid,
                tol: float = DEFAULT_TOL, estimator: str = "point", upper_bound: bool = False,
                workers: int | None = None) -> HbarTable:
    """Run :func:`hbar_point` at every momentum node, averaging over the realizations in ``envs``.

    ``envs`` is one realization, a list of them, or ``None`` for p-only
    Hamiltonians. ``p_grid`` is a momentum Grid or an ``(m, n)`` array.
    Nodes are processed in C order; with ``workers > 1`` they fan out over
    processes and are collected in the same order.
    """
    if estimator not in ("point", "extrapolated", "infsup-bound"):
        raise ValueError(f"unknown estimator {estimator!r}")
    env_list = list(envs) if isinstance(envs, (list, tuple)) else [envs]
    grid = p_grid if isinstance(p_grid, Grid) else None
    pts = grid.points() if grid is not None else np.atleast_2d(np.asarray(p_grid, dtype=float))
    need_upper = upper_bound or estimator == "infsup-bound"
    jobs = [(spec, env_list, p, list(deltas), torus, tol, need_upper) for p in pts]
    workers = default_workers() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_table_node, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_table_node(j) for j in jobs]
    arr = np.array([[r[k] for r in rows] for rows in results for k in range(6)], dtype=float)
    arr = arr.reshape(len(pts), 6, len(env_list))
    seqs = np.array([[r[6] for r in rows] for rows in results], dtype=float).mean(axis=1)
    point = arr[:, 0].mean(axis=1)
    extra = arr[:, 1].mean(axis=1)
    prov = {"deltas": [float(d) for d in deltas], "torus": torus.to_dict(),
            "seeds": [getattr(e, "seed", None) for e in env_list], "estimator": estimator, "tol": tol,
            "hamiltonian": spec.to_dict(), "convexified": False,
            "sequences": [[_num(x) for x in row] for row in seqs]}
    return HbarTable(points=pts, point=point, extrapolated=extra, upper=arr[:, 2].mean(axis=1),
                     spread=arr[:, 0].std(axis=1), error=np.abs(extra - point),
                     unreliable=arr[:, 3].astype(bool).any(axis=1), crude_lo=arr[:, 4].min(axis=1),
                     crude_hi=arr[:, 5].max(axis=1), estimator=estimator, grid=grid, provenance=prov)


def table_from_function(f: Callable[[np.ndarray], np.ndarray], p_grid: Grid | np.ndarray) -> HbarTable:
    """An exact table of a known function (p-only Hamiltonians, oracles, synthetic tests)."""
    grid = p_grid if isinstance(p_grid, Grid) else None
    pts = grid.points() if grid is not None else np.atleast_2d(np.asarray(p_grid, dtype=float))
    v = np.asarray(f(pts), dtype=float).reshape(-1)
    z = np.zeros_like(v)
    return HbarTable(points=pts, point=v, extrapolated=v.copy(), upper=v.copy(), spread=z, error=z.copy(),
                     unreliable=np.zeros(v.size, dtype=bool), crude_lo=v.copy(), crude_hi=v.copy(), grid=grid,
                     provenance={"estimator": "point", "source": "function", "convexified": False})


# ---------------------------------------------------------------- convexity

def lower_convex_envelope(points: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Values of the lower convex envelope of ``(points, values)`` at the points."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    v = np.asarray(values, dtype=float).ravel()
    if P.shape[0] <= P.shape[1]:
        return v.copy()
    lifted = np.column_stack([P, v])
    try:
        hull = ConvexHull(lifted)
    except QhullError:
        # every lifted point on one hyperplane: the data are affine already
        return v.copy()
    eq = hull.equations
    lower = eq[eq[:, -2] < -1e-12]
    planes = -(P @ lower[:, :-2].T + lower[:, -1]) / lower[:, -2]
    return np.minimum(np.max(planes, axis=1), v)


@dataclass
class ConvexityReport:
    max_violation: float
    triples: int
    envelope: np.ndarray = field(repr=False)
    max_correction: float


def _offsets(dim: int, extent: Sequence[int]):
    dirs = [d for d in itertools.product((-1, 0, 1), repeat=dim) if any(d)]
    # one sign per direction
    dirs = [np.array(d) for d in dirs if next(x for x in d if x) > 0]
    for d in dirs:
        kmax = min(extent[a] // 2 for a in range(dim) if d[a]) if any(d) else 0
        for k in range(1, kmax + 1):
            yield k * d


def convexity_report(table: HbarTable) -> ConvexityReport:
    """Max over aligned node triples of ``t(p) - t(p-q)/2 - t(p+q)/2`` and the lower convex envelope."""
    v = table.values
    env = lower_convex_envelope(table.points, v)
    worst, count = -math.inf, 0
    if table.grid is not None:
        g = table.grid
        V = v.reshape(g.shape)
        for off in _offsets(g.dim, g.shape):
            lo = [slice(None)] * g.dim
            mid = [slice(None)] * g.dim
            hi = [slice(None)] * g.dim
            for a, o in enumerate(off):
                o = int(o)
                n = g.shape[a]
                if o >= 0:
                    lo[a], mid[a], hi[a] = slice(0, n - 2 * o), slice(o, n - o), slice(2 * o, n)
                else:
                    o = -o
                    lo[a], mid[a], hi[a] = slice(2 * o, n), slice(o, n - o), slice(0, n - 2 * o)
            d = V[tuple(mid)] - 0.5 * V[tuple(lo)] - 0.5 * V[tuple(hi)]
            if d.size:
                worst = max(worst, float(d.max()))
                count += d.size
    return ConvexityReport(max_violation=worst if count else 0.0, triples=count, envelope=env,
                           max_correction=float(np.max(v - env)) if v.size else 0.0)


# ---------------------------------------------------------------- argmin

@dataclass
class ArgminRegion:
    nodes: np.ndarray
    points: np.ndarray
    flat_spot: bool
    tol: float
    minimum: float
    p_star: np.ndarray


def _boundary_mask(g: Grid) -> np.ndarray:
    m = np.zeros(g.shape, dtype=bool)
    for a in range(g.dim):
        sl = [slice(None)] * g.dim
        sl[a] = 0
        m[tuple(sl)] = True
        sl[a] = -1
        m[tuple(sl)] = True
    return m.ravel()


def argmin_region(table: HbarTable, tol: float | None = None) -> ArgminRegion:
    """Nodes within ``tol`` of the minimum; flat spot iff the region holds a full grid cell.

    The default tolerance is twice the largest per-node estimator error
    (distance between raw and extrapolated values), floored at 1e-9.

    Raises:
        RangeTooSmallError: the minimum sits on the boundary of the p-grid.
    """
    g = table.grid
    if g is None:
        raise ValueError("argmin regions need a structured p-grid")
    if tol is None:
        tol = max(2.0 * float(np.max(table.error)), 1e-9)
    v = table.values
    vmin = float(v.min())
    if _boundary_mask(g)[int(np.argmin(v))]:
        raise RangeTooSmallError("the table minimum lies on the p-grid boundary")
    sel = v <= vmin + tol
    M = sel.reshape(g.shape)
    cell = np.ones(tuple(s - 1 for s in g.shape), dtype=bool)
    for corner in itertools.product((0, 1), repeat=g.dim):
        cell &= M[tuple(slice(c, c + s - 1) for c, s in zip(corner, g.shape))]
    nodes = np.flatnonzero(sel)
    pts = table.points[nodes]
    order = np.lexsort(pts.T[::-1])
    return ArgminRegion(nodes=nodes, points=pts, flat_spot=bool(cell.any()), tol=float(tol), minimum=vmin,
                        p_star=pts[order[0]])


# ---------------------------------------------------------------- effective cones

class TableCone(ConeProvider):
    """Support functions of the sublevel sets of a (convexified) table.

    On structured tables the sublevel set is the hull of the nodes below the
    level together with the linear crossing points on grid edges leaving it.
    """

    def __init__(self, table: HbarTable, tol: float | None = None, crossings: bool = True):
        self.table = table
        self.dim = table.dim
        self.values = table.values if table.convexified is not None else \
            lower_convex_envelope(table.points, table.values)
        self.min_level = float(self.values.min())
        self.crossings = crossings and table.grid is not None
        self.boundary = _boundary_mask(table.grid) if table.grid is not None else np.zeros(len(self.values), bool)
        # highest level whose sublevel set stays off the p-grid boundary
        self.max_level = float(np.nextafter(self.values[self.boundary].min(), -np.inf)) \
            if self.boundary.any() else math.inf
        self._cache: dict = {}

    def cloud(self, mu: float) -> np.ndarray:
        key = float(mu)
        if key in self._cache:
            return self._cache[key]
        v = self.values
        inside = v <= mu
        if not inside.any():
            raise EmptySublevelError(f"level {mu:g} is below the table minimum {self.min_level:g}")
        if np.any(inside & self.boundary):
            raise RangeTooSmallError(f"sublevel set of level {mu:g} touches the p-grid boundary")
        pts = [self.table.points[inside]]
        if self.crossings:
            g = self.table.grid
            V = v.reshape(g.shape)
            P = self.table.points.reshape(g.shape + (g.dim,))
            for a in range(g.dim):
                lo = [slice(None)] * g.dim
                hi = [slice(None)] * g.dim
                lo[a] = slice(0, g.shape[a] - 1)
                hi[a] = slice(1, None)
                va, vb = V[tuple(lo)], V[tuple(hi)]
                pa, pb = P[tuple(lo)], P[tuple(hi)]
                cut = (va <= mu) != (vb <= mu)
                if cut.any():
                    t = ((mu - va[cut]) / (vb[cut] - va[cut]))[:, None]
                    pts.append(pa[cut] + t * (pb[cut] - pa[cut]))
        cloud = np.concatenate(pts)
        self._cache[key] = cloud
        return cloud

    def support(self, mu: float, thetas: np.ndarray) -> np.ndarray:
        T = np.atleast_2d(np.asarray(thetas, dtype=float)).reshape(-1, self.dim)
        return np.max(T @ self.cloud(mu).T, axis=1)


def effective_cone(table: HbarTable | ConeProvider, mu: float, y):
    """``max {p . y : p in conv{table <= mu}}`` at one point or the rows of ``y``."""
    provider = table if isinstance(table, ConeProvider) else TableCone(table)
    Y = np.asarray(y, dtype=float)
    single = Y.ndim <= 1 and Y.size == provider.dim
    out = provider.cone(mu, Y.reshape(-1, provider.dim))
    return float(out[0]) if single else out


# ---------------------------------------------------------------- homogenization

@dataclass
class HomogenizationReport:
    mu: float
    x0: tuple[float, ...]
    eps: tuple[float, ...]
    seeds: tuple[int, ...]
    window: tuple[tuple[float, ...], tuple[float, ...]]
    errors: np.ndarray
    failures: list = field(default_factory=list)

    @property
    def max_errors(self) -> np.ndarray:
        """Per-eps max over seeds (NaN where every seed failed)."""
        e = self.errors
        out = np.full(e.shape[0], math.nan)
        for i in range(e.shape[0]):
            row = e[i][~np.isnan(e[i])]
            if row.size:
                out[i] = row.max()
        return out

    def trend(self, inversion: float = 0.10) -> tuple[bool, int]:
        """(decreasing with at most one inversion of relative size <= ``inversion``, inversion count)."""
        m = self.max_errors
        inv = 0
        ok = True
        for a, b in zip(m, m[1:]):
            if b > a:
                inv += 1
                if b > a * (1 + inversion):
                    ok = False
        return ok and inv <= 1, inv

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["eps", "seed", "sup_error"])
            for i, e in enumerate(self.eps):
                for j, s in enumerate(self.seeds):
                    wr.writerow([repr(float(e)), s, repr(float(self.errors[i, j]))])
        return path

    def write_plotdata(self, path) -> Path:
        return write_series(path, self.eps, self.max_errors, "eps", "sup_window_error", scale="log-log")


def homogenization_experiment(spec: HamiltonianSpec, media: Sequence[tuple[int, EnvironmentRealization]],
                              mu: float, x0, eps_list: Sequence[float], window, cone: ConeProvider | HbarTable,
                              h: float, margin: float = 0.25, exclude: float | None = None,
                              keep: dict | None = None, **solve_kw) -> HomogenizationReport:
    """Compare ``eps d(x/eps)`` with the effective cone over a macroscopic window.

    ``media`` pairs each seed with its realization on the unit scale.
    ``window`` is a box ``(lo, hi)`` in macroscopic coordinates; each solve
    runs on the micro box ``[lo - m, hi + m] / eps`` (``m = margin`` times the
    window width) with spacing ``h``, so the window stays clear of the outer
    truncation layer. Nodes within ``exclude`` of ``x0`` are skipped (default
    ``2 max(eps) h``). Non-converged solves leave NaN and are listed in
    ``failures``. Converged fields are stored in ``keep`` when given.
    """
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps list must be strictly decreasing")
    provider = cone if isinstance(cone, ConeProvider) else TableCone(cone)
    lo = np.atleast_1d(np.asarray(window[0], dtype=float))
    hi = np.atleast_1d(np.asarray(window[1], dtype=float))
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    width = hi - lo
    exclude = 2.0 * max(eps_list) * h if exclude is None else exclude
    errors = np.full((len(eps_list), len(media)), math.nan)
    failures = []
    for i, eps in enumerate(eps_list):
        micro = Grid.box((lo - margin * width) / eps, (hi + margin * width) / eps, h)
        for j, (seed, env) in enumerate(media):
            try:
                d = solve_distance(spec, env, mu, x0 / eps, micro, **solve_kw)
            except (ConvergenceError, LinfhomError) as exc:
                failures.append({"eps": eps, "seed": seed, "error": type(exc).__name__, "message": str(exc)})
                continue
            de = rescale_distance(d, eps)
            errors[i, j] = window_error(de, provider, mu, x0, lo, hi, exclude)
            if keep is not None:
                keep[(eps, seed)] = de
    return HomogenizationReport(mu=float(mu), x0=tuple(x0), eps=tuple(eps_list),
                                seeds=tuple(int(s) for s, _ in media), window=(tuple(lo), tuple(hi)),
                                errors=errors, failures=failures)


def window_error(d: DistanceField, provider: ConeProvider, mu: float, x0, lo, hi, exclude: float = 0.0) -> float:
    """Sup over the grid nodes in the box ``[lo, hi]`` (minus a ball around ``x0``) of ``|d - cone|``."""
    pts = d.grid.points()
    x0 = np.asarray(x0, dtype=float)
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    sel = np.all((pts >= lo - 1e-12) & (pts <= hi + 1e-12), axis=1)
    sel &= np.linalg.norm(pts - x0, axis=1) >= exclude
    if not sel.any():
        raise ValueError("test window holds no grid nodes")
    vals = d.field.values.ravel()[sel]
    ref = provider.cone(mu, pts[sel] - x0)
    return float(np.max(np.abs(vals - ref)))
