"""Hamiltonian catalog H(p, y, omega) and seeded stationary media.

Media live on a fully periodic torus, a surrogate for the whole space.
Smooth media store node fields and are interpolated multilinearly;
checkerboards store one value per lattice cell and are looked up without
interpolation so the declared value distribution is preserved.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .errors import CoercivityError, DegenerateMediumError, InvalidConfigError
from .grid import Grid, ScalarField, VectorField, interpolate

HAMILTONIAN_KINDS = (
    "p-only-convex",
    "separable",
    "metric",
    "anisotropic-homogeneous",
    "quadratic-drift",
)
ENVIRONMENT_KINDS = ("periodic", "iid-checkerboard", "smoothed-bump", "stream-drift")


@dataclass(frozen=True)
class HamiltonianSpec:
    """A catalog entry.

    ``params`` depend on ``kind``:

    * ``p-only-convex``: ``form`` ("quadratic" or "norm"), ``matrix``,
      ``center``, ``offset``. Quadratic is ``(p-c).A(p-c) + m``, norm is
      ``sqrt((p-c).A(p-c)) + m``.
    * ``metric``: optional ``gauge`` matrix G, giving ``c(y) sqrt(p.G p)``.
    * the other kinds take no parameters; their coefficients come from the
      environment.
    """

    kind: str
    dim: int
    params: dict = field(default_factory=dict, hash=False, compare=False)

    def __post_init__(self):
        if self.kind not in HAMILTONIAN_KINDS:
            raise InvalidConfigError(f"unknown Hamiltonian kind {self.kind!r}")
        if self.dim not in (1, 2, 3):
            raise InvalidConfigError("Hamiltonian dimension must be 1, 2 or 3")
        if self.kind == "p-only-convex":
            form = self.params.get("form", "quadratic")
            if form not in ("quadratic", "norm"):
                raise InvalidConfigError(f"unknown p-only form {form!r}")
            A = self.matrix
            if np.any(np.linalg.eigvalsh(0.5 * (A + A.T)) <= 0):
                raise InvalidConfigError("p-only matrix must be positive definite")

    @classmethod
    def quadratic(cls, matrix=None, center=None, offset=0.0, dim=None):
        dim = dim or (np.atleast_2d(matrix).shape[0] if matrix is not None else
                      len(center) if center is not None else 1)
        return cls("p-only-convex", dim, {"form": "quadratic", "matrix": _as_list(matrix, dim),
                                          "center": _as_vec(center, dim), "offset": float(offset)})

    @classmethod
    def norm(cls, matrix=None, center=None, offset=0.0, dim=None):
        dim = dim or (np.atleast_2d(matrix).shape[0] if matrix is not None else
                      len(center) if center is not None else 1)
        return cls("p-only-convex", dim, {"form": "norm", "matrix": _as_list(matrix, dim),
                                          "center": _as_vec(center, dim), "offset": float(offset)})

    @property
    def p_only(self) -> bool:
        return self.kind == "p-only-convex"

    @property
    def code(self) -> int:
        if self.kind == "p-only-convex":
            return K.NORM if self.params.get("form") == "norm" else K.QUADRATIC
        return {"separable": K.SEPARABLE, "metric": K.METRIC,
                "anisotropic-homogeneous": K.ANISOTROPIC, "quadratic-drift": K.DRIFT}[self.kind]

    @property
    def matrix(self) -> np.ndarray:
        key = "gauge" if self.kind == "metric" else "matrix"
        m = self.params.get(key)
        return np.eye(self.dim) if m is None else np.asarray(m, dtype=float).reshape(self.dim, self.dim)

    @property
    def center(self) -> np.ndarray:
        c = self.params.get("center")
        return np.zeros(self.dim) if c is None else np.asarray(c, dtype=float).reshape(self.dim)

    @property
    def param_vector(self) -> np.ndarray:
        return np.concatenate([self.matrix.ravel(), self.center,
                               [float(self.params.get("offset", 0.0))]])

    @property
    def coef_width(self) -> int:
        return max(1, self.dim * self.dim)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "params": _jsonable(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "HamiltonianSpec":
        return cls(d["kind"], int(d["dim"]), dict(d.get("params", {})))


def _as_list(matrix, dim):
    return (np.eye(dim) if matrix is None else np.atleast_2d(np.asarray(matrix, dtype=float))).tolist()


def _as_vec(v, dim):
    return (np.zeros(dim) if v is None else np.asarray(v, dtype=float).reshape(dim)).tolist()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


@dataclass(frozen=True)
class EnvironmentRealization:
    """One sampled medium on a torus.

    Exactly which of ``scalar``/``vector``/``matrix`` are set depends on the
    kind. ``cells`` replaces ``scalar`` for checkerboards: one value per
    lattice cell, shifted by ``phase``.
    """

    kind: str
    seed: int
    params: dict
    grid: Grid
    cell: float
    scalar: ScalarField | None = None
    vector: VectorField | None = None
    matrix: np.ndarray | None = None
    cells: np.ndarray | None = None
    phase: tuple[float, ...] = ()
    stream: np.ndarray | None = None
    lipschitz: float | None = None
    bounds: tuple[float, float] = (-math.inf, math.inf)

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def period(self) -> np.ndarray:
        return self.grid.upper - self.grid.lower

    def scalar_at(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.cells is not None:
            ncell = np.asarray(self.cells.shape)
            s = (pts - self.grid.lower - np.asarray(self.phase)) / self.cell
            # snap values within rounding of a cell face onto the upper cell
            idx = np.floor(s + 1e-9).astype(int) % ncell
            return self.cells[tuple(idx.T)]
        if self.scalar is None:
            raise InvalidConfigError(f"{self.kind} medium carries no scalar field")
        return np.atleast_1d(interpolate(self.scalar, pts))

    def vector_at(self, points: np.ndarray) -> np.ndarray:
        if self.vector is None:
            raise InvalidConfigError(f"{self.kind} medium carries no vector field")
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.stack([np.atleast_1d(interpolate(self.vector.component(a), pts))
                         for a in range(self.dim)], axis=1)

    def matrix_at(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.matrix is None:
            s = self.scalar_at(pts)
            return s[:, None, None] * np.eye(self.dim)[None]
        out = np.empty((pts.shape[0], self.dim, self.dim))
        for i in range(self.dim):
            for j in range(self.dim):
                out[:, i, j] = interpolate(ScalarField(self.grid, self.matrix[..., i, j]), pts)
        return out

    def descriptor(self) -> dict:
        lo, hi = self.bounds
        return {"kind": self.kind, "seed": int(self.seed), "parameters": _jsonable(self.params),
                "lambda": lo, "Lambda": hi, "cell": self.cell, "grid": self.grid.to_dict()}

    def save_descriptor(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.descriptor(), indent=2, sort_keys=True))
        return path


def load_descriptor(path) -> EnvironmentRealization:
    """Rebuild a realization from its descriptor; sampling is deterministic."""
    d = json.loads(Path(path).read_text())
    return sample_environment(d["kind"], d["parameters"], d["seed"], Grid.from_dict(d["grid"]))


def coefficients(spec: HamiltonianSpec, env: EnvironmentRealization | None, points) -> np.ndarray:
    """Node-local coefficient rows for the compiled kernels, shape ``(m, coef_width)``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros((pts.shape[0], spec.coef_width))
    if spec.p_only:
        return out
    if env is None:
        raise InvalidConfigError(f"{spec.kind} Hamiltonian needs an environment")
    if env.dim != spec.dim:
        raise InvalidConfigError("environment and Hamiltonian dimensions differ")
    if spec.kind in ("separable", "metric"):
        out[:, 0] = env.scalar_at(pts)
        if spec.kind == "metric" and np.any(out[:, 0] <= 0):
            raise DegenerateMediumError("metric coefficient must be positive")
    elif spec.kind == "anisotropic-homogeneous":
        a = env.matrix_at(pts)
        if np.any(np.linalg.eigvalsh(0.5 * (a + np.swapaxes(a, 1, 2)))[:, 0] <= 0):
            raise DegenerateMediumError("anisotropic coefficient must be positive definite")
        out[:, : spec.dim * spec.dim] = a.reshape(pts.shape[0], -1)
    else:
        out[:, : spec.dim] = env.vector_at(pts)
    return out


def eval_h(spec: HamiltonianSpec, p, y, env: EnvironmentRealization | None = None):
    """Evaluate H at one ``(p, y)`` pair or at matching rows of two arrays."""
    P = np.asarray(p, dtype=float)
    single = P.ndim <= 1
    P = P.reshape(-1, spec.dim)
    Y = np.asarray(y, dtype=float).reshape(-1, spec.dim)
    if Y.shape[0] == 1 and P.shape[0] > 1:
        Y = np.repeat(Y, P.shape[0], axis=0)
    coefs = coefficients(spec, env, Y)
    vals = K.h_values(spec.code, spec.dim, spec.param_vector, coefs, np.ascontiguousarray(P))
    return float(vals[0]) if single else vals


def eval_grad_h(spec: HamiltonianSpec, p, y, env: EnvironmentRealization | None = None) -> np.ndarray:
    P = np.ascontiguousarray(np.asarray(p, dtype=float).reshape(-1, spec.dim))
    Y = np.asarray(y, dtype=float).reshape(-1, spec.dim)
    if Y.shape[0] == 1 and P.shape[0] > 1:
        Y = np.repeat(Y, P.shape[0], axis=0)
    return K.h_gradients(spec.code, spec.dim, spec.param_vector, coefficients(spec, env, Y), P)


class NodeHamiltonian:
    """H with its coefficients frozen at a fixed set of points (usually grid nodes).

    Calling it with ``(p, y)`` follows the residual-evaluator protocol of
    :func:`linfhom.grid.pde_residual`; ``y`` must be rows of the frozen points
    or ``None`` for all of them in order.
    """

    def __init__(self, spec: HamiltonianSpec, env: EnvironmentRealization | None, points: np.ndarray):
        self.spec = spec
        self.env = env
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.coefs = np.ascontiguousarray(coefficients(spec, env, self.points))
        self.kind = spec.code
        self.prm = spec.param_vector
        self._lookup = None

    def values(self, p: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
        coefs = self.coefs if rows is None else self.coefs[rows]
        return K.h_values(self.kind, self.spec.dim, self.prm, np.ascontiguousarray(coefs),
                          np.ascontiguousarray(p, dtype=float))

    def gradients(self, p: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
        coefs = self.coefs if rows is None else self.coefs[rows]
        return K.h_gradients(self.kind, self.spec.dim, self.prm, np.ascontiguousarray(coefs),
                             np.ascontiguousarray(p, dtype=float))

    def __call__(self, p: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
        if y is None:
            return self.values(p)
        return eval_h(self.spec, p, y, self.env)

    def min_over_p(self) -> np.ndarray:
        """Pointwise ``min_p H(p, y)`` at the frozen points."""
        return min_over_p(self.spec, self.coefs)

    def gradient_bound(self, radius: float) -> float:
        return gradient_bound(self.spec, self.coefs, radius)

    def node_gradient_bounds(self, radius: float) -> np.ndarray:
        return node_gradient_bounds(self.spec, self.coefs, radius)


def min_over_p(spec: HamiltonianSpec, coefs: np.ndarray) -> np.ndarray:
    m = coefs.shape[0]
    if spec.p_only:
        return np.full(m, float(spec.params.get("offset", 0.0)))
    if spec.kind == "separable":
        return coefs[:, 0].copy()
    if spec.kind in ("metric", "anisotropic-homogeneous"):
        return np.zeros(m)
    b = coefs[:, : spec.dim]
    return -0.5 * np.sum(b * b, axis=1)


def gradient_bound(spec: HamiltonianSpec, coefs: np.ndarray, radius: float) -> float:
    """Upper bound on ``|dH/dp_i|`` over ``|p| <= radius`` and the given coefficient rows."""
    return float(np.max(node_gradient_bounds(spec, coefs, radius)))


def node_gradient_bounds(spec: HamiltonianSpec, coefs: np.ndarray, radius: float) -> np.ndarray:
    """Per-row bounds on ``|dH/dp_i|`` over ``|p| <= radius``."""
    n = spec.dim
    m = coefs.shape[0]
    if spec.p_only:
        A = spec.matrix
        lam = float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (A + A.T)))))
        if spec.params.get("form") == "norm":
            return np.full(m, math.sqrt(lam))
        return np.full(m, 2.0 * lam * (radius + float(np.linalg.norm(spec.center))))
    if spec.kind == "separable":
        return np.full(m, 2.0 * radius)
    if spec.kind == "metric":
        G = spec.matrix
        return np.abs(coefs[:, 0]) * math.sqrt(float(np.max(np.linalg.eigvalsh(G))))
    if spec.kind == "anisotropic-homogeneous":
        a = coefs[:, : n * n].reshape(-1, n, n)
        return 1.5 * np.linalg.norm(a, ord=2, axis=(1, 2))
    return radius + np.linalg.norm(coefs[:, :n], axis=1)


def direction_mesh(dim: int, count: int | None = None) -> np.ndarray:
    """Unit vectors covering the sphere: both signs in 1D, a ring in 2D, a Fibonacci set in 3D."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        count = count or 256
        t = 2 * np.pi * np.arange(count) / count
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    count = count or 600
    k = np.arange(count) + 0.5
    z = 1 - 2 * k / count
    r = np.sqrt(1 - z * z)
    phi = np.pi * (1 + 5 ** 0.5) * k
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def sublevel_radius(spec: HamiltonianSpec, env: EnvironmentRealization | None, level: float,
                    y_samples=None, directions: int | None = None, cap: float = 1e6,
                    tol: float = 1e-9) -> float:
    """Smallest R (on a direction mesh) with ``min_y H(p, y) > level`` whenever ``|p| >= R``.

    Raises:
        CoercivityError: some ray stays below ``level`` beyond ``cap``.
    """
    if y_samples is None:
        y_samples = env.grid.points() if env is not None else np.zeros((1, spec.dim))
    coefs = np.ascontiguousarray(coefficients(spec, env, y_samples))
    return _sublevel_radius_coefs(spec, coefs, level, directions, cap, tol)


def _sublevel_radius_coefs(spec, coefs, level, directions=None, cap=1e6, tol=1e-9) -> float:
    # one representative per distinct coefficient row keeps checkerboards cheap
    coefs = np.unique(coefs, axis=0)
    thetas = np.ascontiguousarray(direction_mesh(spec.dim, directions))
    ends = K.sublevel_right_ends(spec.code, spec.dim, spec.param_vector, coefs, thetas,
                                 float(level), float(cap), float(tol))
    if np.any(ends < 0):
        raise CoercivityError(f"{spec.kind}: no sublevel radius below {cap:g} at level {level:g}")
    return float(ends.max())


def drift_from_stream(psi: ScalarField) -> VectorField:
    """Divergence-free drift ``b = (d psi/dy2, -d psi/dy1)`` by centred differences."""
    g = psi.grid
    if g.dim != 2 or not g.fully_periodic:
        raise InvalidConfigError("drift_from_stream needs a fully periodic 2D grid")
    v = psi.values
    d1 = (np.roll(v, -1, axis=0) - np.roll(v, 1, axis=0)) / (2 * g.spacing[0])
    d2 = (np.roll(v, -1, axis=1) - np.roll(v, 1, axis=1)) / (2 * g.spacing[1])
    return VectorField(g, np.stack([d2, -d1], axis=-1))


def discrete_divergence(b: VectorField) -> np.ndarray:
    g = b.grid
    out = np.zeros(g.shape)
    for a in range(g.dim):
        v = b.values[..., a]
        out += (np.roll(v, -1, axis=a) - np.roll(v, 1, axis=a)) / (2 * g.spacing[a])
    return out


def _bump(r):
    out = np.zeros_like(r)
    inside = r < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
    return out


def _bump_slope_max() -> float:
    r = np.linspace(0, 1, 200001)[:-1]
    b = _bump(r)
    return float(np.max(np.abs(np.gradient(b, r))))


def sample_environment(kind: str, params: dict, seed: int, grid: Grid) -> EnvironmentRealization:
    """Draw one realization. Identical arguments give bit-identical fields.

    Raises:
        DegenerateMediumError: a declared lower bound is not positive while
            ``positive`` is requested, or the torus cannot hold one cell.
    """
    if kind not in ENVIRONMENT_KINDS:
        raise InvalidConfigError(f"unknown environment kind {kind!r}")
    if not grid.fully_periodic:
        raise InvalidConfigError("media are sampled on a fully periodic torus")
    params = dict(params)
    cell = float(params.get("cell", 1.0))
    if cell <= 0:
        raise DegenerateMediumError("cell size must be positive")
    period = grid.upper - grid.lower
    if np.any(period < cell * (1 - 1e-12)):
        raise DegenerateMediumError(f"torus period {period.tolist()} cannot hold one cell of size {cell}")
    if params.get("positive"):
        lo = params.get("lower")
        if lo is None and "values" in params:
            lo = min(params["values"])
        if lo is not None and lo <= 0:
            raise DegenerateMediumError(f"lower bound {lo} must be positive")
    rng = np.random.default_rng(int(seed))
    n = grid.dim
    pts = grid.points()

    if kind == "periodic":
        vals = _periodic_profile(params, pts, n).reshape(grid.shape)
        if params.get("target", "scalar") == "drift":
            b = drift_from_stream(ScalarField(grid, vals))
            return _finish(kind, seed, params, grid, cell, vector=b, stream=vals)
        return _finish(kind, seed, params, grid, cell, scalar=ScalarField(grid, vals))

    if kind == "iid-checkerboard":
        values = np.asarray(params.get("values", [1.0, 2.0]), dtype=float)
        probs = params.get("probs")
        ncell = np.rint(period / cell).astype(int)
        if np.any(np.abs(ncell * cell - period) > 1e-9 * period):
            raise DegenerateMediumError("torus period must be a whole number of cells")
        cells = rng.choice(values, size=tuple(ncell), p=probs)
        phase = np.zeros(n)
        if params.get("phase_jitter", True):
            steps = max(int(round(cell / grid.spacing[0])), 1)
            phase = rng.integers(0, steps, size=n) * np.asarray(grid.spacing)
        return _finish(kind, seed, params, grid, cell, cells=cells, phase=tuple(phase))

    if kind == "smoothed-bump":
        amp = float(params.get("amplitude", 1.0))
        radius = float(params.get("radius", 0.3 * cell))
        offset = float(params.get("offset", 0.0))
        if not 0 < radius <= cell / 2:
            raise DegenerateMediumError("bump radius must lie in (0, cell/2]")
        ncell = np.rint(period / cell).astype(int)
        corners = np.stack(np.meshgrid(*[np.arange(k) * cell for k in ncell], indexing="ij"), -1).reshape(-1, n)
        centers = grid.lower + corners + rng.uniform(radius, cell - radius, size=corners.shape)
        heights = amp * rng.uniform(0.0, 1.0, size=corners.shape[0])
        vals = np.full(pts.shape[0], offset)
        for c, hgt in zip(centers, heights):
            d = pts - c
            d -= period * np.round(d / period)
            vals += hgt * _bump(np.linalg.norm(d, axis=1) / radius)
        lip = abs(amp) * _bump_slope_max() / radius
        field_ = ScalarField(grid, vals.reshape(grid.shape))
        if params.get("target", "scalar") == "drift":
            return _finish(kind, seed, params, grid, cell, vector=drift_from_stream(field_),
                           stream=field_.values, lipschitz=None)
        return _finish(kind, seed, params, grid, cell, scalar=field_, lipschitz=lip)

    # stream-drift
    if n != 2:
        raise InvalidConfigError("stream-drift media are two-dimensional")
    amp = float(params.get("amplitude", 1.0))
    profile = params.get("profile", "random-modes")
    if profile == "product-sine":
        psi = amp * np.prod(np.sin(2 * np.pi * pts / period), axis=1) / (2 * np.pi)
    else:
        kmax = int(params.get("modes", 3))
        psi = np.zeros(pts.shape[0])
        for k1 in range(-kmax, kmax + 1):
            for k2 in range(0, kmax + 1):
                if (k2 == 0 and k1 <= 0) or k1 * k1 + k2 * k2 > kmax * kmax:
                    continue
                a, b = rng.standard_normal(2)
                ph = 2 * np.pi * (k1 * pts[:, 0] / period[0] + k2 * pts[:, 1] / period[1])
                psi += (a * np.cos(ph) + b * np.sin(ph)) / (k1 * k1 + k2 * k2)
        psi *= amp / max(np.max(np.abs(psi)), 1e-300)
    psi = psi.reshape(grid.shape)
    b = drift_from_stream(ScalarField(grid, psi))
    return _finish(kind, seed, params, grid, cell, vector=b, stream=psi)


def _periodic_profile(params: dict, pts: np.ndarray, n: int) -> np.ndarray:
    profile = params.get("profile", "sine")
    amp = float(params.get("amplitude", 1.0))
    offset = float(params.get("offset", 0.0))
    if profile == "sine":
        k = np.asarray(params.get("wavenumber", [1] + [0] * (n - 1)), dtype=float)
        return offset + amp * np.sin(2 * np.pi * pts @ k)
    if profile == "product-sine":
        k = np.asarray(params.get("wavenumber", [1] * n), dtype=float)
        scale = float(params.get("scale", 1.0))
        return offset + amp * scale * np.prod(np.sin(2 * np.pi * pts * k), axis=1)
    if profile == "steps":
        values = np.asarray(params["values"], dtype=float)
        axis = int(params.get("axis", 0))
        frac = np.mod(pts[:, axis], 1.0)
        idx = np.minimum(np.floor(frac * values.size + 1e-9).astype(int), values.size - 1)
        return values[idx]
    raise InvalidConfigError(f"unknown periodic profile {profile!r}")


def _finish(kind, seed, params, grid, cell, scalar=None, vector=None, cells=None, phase=(),
            stream=None, lipschitz=None) -> EnvironmentRealization:
    if cells is not None:
        vals = cells.ravel()
    elif scalar is not None:
        vals = scalar.values.ravel()
    else:
        vals = np.linalg.norm(vector.values.reshape(-1, grid.dim), axis=1)
    lo = float(params.get("lower", vals.min()))
    hi = float(params.get("upper", vals.max()))
    if vals.min() < lo - 1e-12 or vals.max() > hi + 1e-12:
        raise DegenerateMediumError(f"sampled coefficients leave the declared bounds [{lo}, {hi}]")
    if lipschitz is None and scalar is not None and cells is None:
        lipschitz = _discrete_lipschitz(scalar)
    env = EnvironmentRealization(kind=kind, seed=int(seed), params=_jsonable(params), grid=grid,
                                 cell=cell, scalar=scalar, vector=vector, cells=cells,
                                 phase=tuple(float(x) for x in phase) or (0.0,) * grid.dim,
                                 stream=stream, lipschitz=lipschitz, bounds=(lo, hi))
    return env


def _discrete_lipschitz(f: ScalarField) -> float:
    g = f.grid
    worst = 0.0
    for a in range(g.dim):
        d = np.abs(np.roll(f.values, -1, axis=a) - f.values) / g.spacing[a]
        worst = max(worst, float(d.max()))
    return worst * math.sqrt(g.dim)


def lipschitz_in_p(spec: HamiltonianSpec, env: EnvironmentRealization | None, radius: float,
                   y_samples=None) -> float:
    """Euclidean Lipschitz constant of ``p -> H(p, y)`` on ``|p| <= radius`` (catalog formulas)."""
    if y_samples is None:
        y_samples = env.grid.points() if env is not None else np.zeros((1, spec.dim))
    coefs = coefficients(spec, env, y_samples)
    return gradient_bound(spec, coefs, radius) * math.sqrt(spec.dim)


def random_triples(spec: HamiltonianSpec, env, count: int, radius: float, seed: int = 0):
    """Random ``(p, q, y)`` triples for property checks."""
    rng = np.random.default_rng(seed)
    p = rng.uniform(-radius, radius, size=(count, spec.dim))
    q = rng.uniform(-radius, radius, size=(count, spec.dim))
    if env is None:
        y = np.zeros((count, spec.dim))
    else:
        y = env.grid.lower + rng.uniform(0, 1, size=(count, spec.dim)) * env.period
    return p, q, y


__all__ = [
    "HamiltonianSpec", "EnvironmentRealization", "NodeHamiltonian", "sample_environment",
    "eval_h", "eval_grad_h", "sublevel_radius", "drift_from_stream", "discrete_divergence",
    "coefficients", "min_over_p", "gradient_bound", "direction_mesh", "load_descriptor",
    "lipschitz_in_p", "random_triples",
]
