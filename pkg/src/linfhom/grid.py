"""Node-centred grids, fields on them, and the finite-difference calculus.

A :class:`Grid` stores ``extent`` cells per axis. A periodic axis holds
``extent`` distinct nodes (index ``extent`` wraps to 0); a non-periodic
axis holds ``extent + 1`` nodes including both end points.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import BoundaryStencilError, DomainError, EmptyWindowError

_HULL_SLACK = 1e-9


@dataclass(frozen=True)
class Grid:
    origin: tuple[float, ...]
    spacing: tuple[float, ...]
    extent: tuple[int, ...]
    periodic: tuple[bool, ...]

    def __post_init__(self):
        dim = len(self.origin)
        if dim not in (1, 2, 3):
            raise ValueError(f"grid dimension must be 1, 2 or 3, got {dim}")
        if not (len(self.spacing) == len(self.extent) == len(self.periodic) == dim):
            raise ValueError("origin, spacing, extent and periodic must have equal length")
        if any(h <= 0 for h in self.spacing):
            raise ValueError("grid spacing must be positive on every axis")
        if any(n < 3 for n in self.extent):
            raise ValueError("grid needs at least 3 cells per axis")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "spacing", tuple(float(v) for v in self.spacing))
        object.__setattr__(self, "extent", tuple(int(v) for v in self.extent))
        object.__setattr__(self, "periodic", tuple(bool(v) for v in self.periodic))

    @classmethod
    def box(cls, lo: Sequence[float], hi: Sequence[float], h: float | Sequence[float]) -> "Grid":
        """Non-periodic grid spanning ``[lo, hi]`` with spacing close to ``h``."""
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        hs = np.broadcast_to(np.asarray(h, dtype=float), lo.shape)
        extent = np.maximum(np.rint((hi - lo) / hs).astype(int), 3)
        spacing = (hi - lo) / extent
        return cls(tuple(lo), tuple(spacing), tuple(extent), (False,) * lo.size)

    @classmethod
    def torus(cls, period: float | Sequence[float], nodes: int | Sequence[int], dim: int | None = None,
              origin: Sequence[float] | None = None) -> "Grid":
        """Fully periodic grid with ``nodes`` nodes per period on each axis."""
        if dim is None:
            dim = len(period) if isinstance(period, Sequence) else (
                len(nodes) if isinstance(nodes, Sequence) else 1)
        period = np.broadcast_to(np.asarray(period, dtype=float), (dim,))
        nodes = np.broadcast_to(np.asarray(nodes, dtype=int), (dim,))
        origin = np.zeros(dim) if origin is None else np.asarray(origin, dtype=float)
        return cls(tuple(origin), tuple(period / nodes), tuple(nodes), (True,) * dim)

    @property
    def dim(self) -> int:
        return len(self.origin)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(n if p else n + 1 for n, p in zip(self.extent, self.periodic))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def h(self) -> np.ndarray:
        return np.asarray(self.spacing)

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.origin)

    @property
    def upper(self) -> np.ndarray:
        """Far corner of the hull (for periodic axes, one full period)."""
        return self.lower + self.h * np.asarray(self.extent)

    @property
    def fully_periodic(self) -> bool:
        return all(self.periodic)

    def coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.spacing[axis] * np.arange(self.shape[axis])

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*[self.coords(a) for a in range(self.dim)], indexing="ij")

    def points(self) -> np.ndarray:
        """All node coordinates, shape ``(size, dim)`` in C order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=1)

    def node_point(self, node: Sequence[int]) -> np.ndarray:
        return self.lower + self.h * np.asarray(node, dtype=float)

    def nearest_node(self, x: Sequence[float]) -> tuple[int, ...]:
        s = np.rint((np.asarray(x, dtype=float) - self.lower) / self.h).astype(int)
        out = []
        for a, i in enumerate(s):
            if self.periodic[a]:
                out.append(int(i % self.shape[a]))
            else:
                out.append(int(np.clip(i, 0, self.shape[a] - 1)))
        return tuple(out)

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Whether each point (rows of ``x``) lies in the hull; periodic axes always do."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ok = np.ones(x.shape[0], dtype=bool)
        for a in range(self.dim):
            if self.periodic[a]:
                continue
            slack = _HULL_SLACK * max(1.0, abs(self.upper[a]))
            ok &= (x[:, a] >= self.lower[a] - slack) & (x[:, a] <= self.upper[a] + slack)
        return ok

    def scaled(self, eps: float) -> "Grid":
        return Grid(tuple(eps * o for o in self.origin), tuple(eps * h for h in self.spacing),
                    self.extent, self.periodic)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "origin": list(self.origin), "spacing": list(self.spacing),
                "extent": list(self.extent), "periodic": list(self.periodic)}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        return cls(tuple(d["origin"]), tuple(d["spacing"]), tuple(d["extent"]), tuple(d["periodic"]))


@dataclass(frozen=True)
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid shape {self.grid.shape}")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def __call__(self, x) -> float | np.ndarray:
        return interpolate(self, x)


@dataclass(frozen=True)
class VectorField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape + (self.grid.dim,):
            raise ValueError("vector field values must have shape grid.shape + (dim,)")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def component(self, axis: int) -> ScalarField:
        return ScalarField(self.grid, self.values[..., axis])


def _shift_index(grid: Grid, node: tuple[int, ...], axis: int, step: int) -> tuple[int, ...]:
    idx = list(node)
    j = idx[axis] + step
    if grid.periodic[axis]:
        j %= grid.shape[axis]
    elif j < 0 or j >= grid.shape[axis]:
        raise BoundaryStencilError(
            f"node {tuple(node)} has no neighbour at offset {step} on non-periodic axis {axis}")
    idx[axis] = j
    return tuple(idx)


def upwind_gradients(f: ScalarField, node: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Backward and forward one-sided difference gradients at ``node``."""
    node = tuple(int(i) for i in node)
    g = f.grid
    back = np.empty(g.dim)
    fwd = np.empty(g.dim)
    for a in range(g.dim):
        lo = f.values[_shift_index(g, node, a, -1)]
        hi = f.values[_shift_index(g, node, a, +1)]
        back[a] = (f.values[node] - lo) / g.spacing[a]
        fwd[a] = (hi - f.values[node]) / g.spacing[a]
    return back, fwd


def one_sided_differences(values: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Array form of :func:`upwind_gradients`; entries needing a missing neighbour are NaN.

    Returns arrays of shape ``grid.shape + (dim,)``.
    """
    back = np.full(grid.shape + (grid.dim,), np.nan)
    fwd = np.full(grid.shape + (grid.dim,), np.nan)
    for a in range(grid.dim):
        h = grid.spacing[a]
        if grid.periodic[a]:
            back[..., a] = (values - np.roll(values, 1, axis=a)) / h
            fwd[..., a] = (np.roll(values, -1, axis=a) - values) / h
        else:
            d = np.diff(values, axis=a) / h
            sl_hi = [slice(None)] * grid.dim
            sl_lo = [slice(None)] * grid.dim
            sl_hi[a] = slice(1, None)
            sl_lo[a] = slice(None, -1)
            back[tuple(sl_hi) + (a,)] = d
            fwd[tuple(sl_lo) + (a,)] = d
    return back, fwd


def centered_gradient(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Centred differences on a fully periodic grid, shape ``grid.shape + (dim,)``."""
    if not grid.fully_periodic:
        raise BoundaryStencilError("centred gradient requires a fully periodic grid")
    out = np.empty(grid.shape + (grid.dim,))
    for a in range(grid.dim):
        out[..., a] = (np.roll(values, -1, axis=a) - np.roll(values, 1, axis=a)) / (2 * grid.spacing[a])
    return out


def _cell_coordinates(grid: Grid, x: np.ndarray):
    """Lower corner indices and fractional offsets for multilinear interpolation."""
    s = (x - grid.lower) / grid.h
    i0 = np.floor(s).astype(int)
    frac = s - i0
    i1 = i0 + 1
    for a in range(grid.dim):
        n = grid.shape[a]
        if grid.periodic[a]:
            i0[:, a] %= n
            i1[:, a] %= n
        else:
            # the far end point sits in the last cell with offset 1
            top = i0[:, a] >= n - 1
            i0[top, a] = n - 2
            i1[top, a] = n - 1
            frac[top, a] = s[top, a] - (n - 2)
            low = i0[:, a] < 0
            i0[low, a] = 0
            i1[low, a] = 1
            frac[low, a] = s[low, a]
            np.clip(frac[:, a], 0.0, 1.0, out=frac[:, a])
    return i0, i1, frac


def interpolate(f: ScalarField, x) -> float | np.ndarray:
    """Multilinear interpolation of ``f`` at one point or at the rows of ``x``."""
    g = f.grid
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 0 or (arr.ndim == 1 and arr.size == g.dim)
    pts = arr.reshape(-1, g.dim)
    inside = g.contains(pts)
    if not np.all(inside):
        bad = pts[~inside][0]
        raise DomainError(f"point {bad.tolist()} lies outside the grid hull")
    i0, i1, frac = _cell_coordinates(g, pts)
    out = np.zeros(pts.shape[0])
    for corner in itertools.product((0, 1), repeat=g.dim):
        w = np.ones(pts.shape[0])
        idx = []
        for a, c in enumerate(corner):
            w *= frac[:, a] if c else 1.0 - frac[:, a]
            idx.append(i1[:, a] if c else i0[:, a])
        out += w * f.values[tuple(idx)]
    return float(out[0]) if single else out


HamiltonianEvaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _window_indices(grid: Grid, window) -> np.ndarray:
    w = np.asarray(window)
    if w.dtype == bool:
        if w.shape != grid.shape:
            raise ValueError("boolean window must match the grid shape")
        idx = np.flatnonzero(w.ravel())
    else:
        idx = np.asarray(w, dtype=int).ravel()
    if idx.size == 0:
        raise EmptyWindowError("residual window contains no nodes")
    return idx


def pde_residual(f: ScalarField, H: HamiltonianEvaluator, mu: float, window) -> float:
    """Max over ``window`` of ``|H(g, y) - mu|`` with the H-maximising one-sided gradient.

    ``H`` is called as ``H(p, y)`` with arrays of shape ``(m, dim)`` and must
    return ``m`` values. ``window`` is a boolean mask or flat node indices.
    """
    g = f.grid
    idx = _window_indices(g, window)
    back, fwd = one_sided_differences(f.values, g)
    back = back.reshape(-1, g.dim)[idx]
    fwd = fwd.reshape(-1, g.dim)[idx]
    if np.isnan(back).any() or np.isnan(fwd).any():
        raise BoundaryStencilError("residual window touches a non-periodic boundary node")
    y = g.points()[idx]
    best = np.full(idx.size, -np.inf)
    for combo in itertools.product((0, 1), repeat=g.dim):
        grad = np.where(np.asarray(combo, dtype=bool), fwd, back)
        best = np.maximum(best, H(grad, y))
    return float(np.max(np.abs(best - mu)))


def interior_mask(grid: Grid, layers: int = 1) -> np.ndarray:
    """Nodes at least ``layers`` nodes away from every non-periodic boundary."""
    mask = np.ones(grid.shape, dtype=bool)
    for a in range(grid.dim):
        if grid.periodic[a] or layers <= 0:
            continue
        sl = [slice(None)] * grid.dim
        sl[a] = slice(0, layers)
        mask[tuple(sl)] = False
        sl[a] = slice(grid.shape[a] - layers, None)
        mask[tuple(sl)] = False
    return mask


def save_field(path, f: ScalarField | VectorField, meta: dict | None = None) -> Path:
    """Binary export: an ``.npz`` archive holding the values and the grid header."""
    path = Path(path)
    header = dict(f.grid.to_dict(), kind=type(f).__name__, meta=meta or {})
    with open(path, "wb") as fh:
        np.savez(fh, values=np.asarray(f.values), header=np.frombuffer(
            json.dumps(header, sort_keys=True).encode(), dtype=np.uint8))
    return path


def load_field(path) -> tuple[ScalarField | VectorField, dict]:
    with np.load(Path(path)) as data:
        header = json.loads(bytes(data["header"]).decode())
        values = data["values"]
    grid = Grid.from_dict(header)
    cls = VectorField if header.get("kind") == "VectorField" else ScalarField
    return cls(grid, values), header.get("meta", {})


def export_csv(path, f: ScalarField) -> Path:
    """Node coordinates followed by the value, one node per row."""
    path = Path(path)
    pts = f.grid.points()
    vals = np.asarray(f.values).ravel()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{a}" for a in range(f.grid.dim)] + ["value"])
        for p, v in zip(pts, vals):
            w.writerow([repr(float(c)) for c in p] + [repr(float(v))])
    return path
