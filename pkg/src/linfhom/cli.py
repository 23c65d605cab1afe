"""Config-driven experiment runner.

    linfhom <kind> --config CONFIG.yaml [--out DIR] [--workers N] [--seed-override K]

Kinds: hbar-table, distance, homogenize, amle, check-cdf, oracle-compare
(``run`` takes the kind from the config). Exit codes: 0 pass, 1 invalid
config, 2 solver failure, 3 a configured assertion failed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import platform
import sys
import time
import traceback
from contextlib import contextmanager
from pathlib import Path
from typing import Annotated, Any, Literal, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import __version__
from .effective import (HbarTable, TableCone, argmin_region, build_table, convexity_report, default_workers,
                        homogenization_experiment, load_table, oracle_hbar_separable_1d, oracle_metric_1d,
                        write_series)
from .eikonal import ConeProvider, solve_distance
from .errors import InvalidConfigError, LinfhomError, ValidationRejectedError
from .grid import Grid, ScalarField, export_csv, load_field, save_field
from .linf import CdfConfig, check_cdf, construct_amle, random_configs
from .media import ENVIRONMENT_KINDS, HAMILTONIAN_KINDS, HamiltonianSpec, eval_h, sample_environment

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_ASSERT = 0, 1, 2, 3
KINDS = ("hbar-table", "distance", "homogenize", "amle", "check-cdf", "oracle-compare")

# ---------------------------------------------------------------- config models


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


PosFloat = Annotated[float, Field(gt=0)]


class HamiltonianModel(Strict):
    kind: Literal[HAMILTONIAN_KINDS]
    dim: int = Field(ge=1, le=3)
    params: dict[str, Any] = {}

    @model_validator(mode="after")
    def _check(self):
        try:
            HamiltonianSpec(self.kind, self.dim, dict(self.params))
        except InvalidConfigError as exc:
            raise ValueError(str(exc)) from exc
        return self

    def build(self) -> HamiltonianSpec:
        return HamiltonianSpec(self.kind, self.dim, dict(self.params))


class TorusModel(Strict):
    period: Union[PosFloat, list[PosFloat]] = 1.0
    nodes: Union[Annotated[int, Field(ge=3)], list[Annotated[int, Field(ge=3)]]]

    def build(self, dim: int) -> Grid:
        return Grid.torus(self.period, self.nodes, dim=dim)


class EnvironmentModel(Strict):
    kind: Literal[ENVIRONMENT_KINDS]
    params: dict[str, Any] = {}
    seeds: list[int] = Field(default=[0], min_length=1)
    torus: TorusModel


class BoxModel(Strict):
    lo: list[float] = Field(min_length=1, max_length=3)
    hi: list[float] = Field(min_length=1, max_length=3)
    h: PosFloat

    @model_validator(mode="after")
    def _check(self):
        if len(self.lo) != len(self.hi) or any(b <= a for a, b in zip(self.lo, self.hi)):
            raise ValueError("box needs lo < hi in every coordinate")
        return self

    def build(self) -> Grid:
        return Grid.box(self.lo, self.hi, self.h)


class WindowModel(Strict):
    lo: list[float] = Field(min_length=1, max_length=3)
    hi: list[float] = Field(min_length=1, max_length=3)


class MetricOracleModel(Strict):
    values: list[PosFloat] = Field(min_length=1)
    probs: list[float] | None = None


class ConeModel(Strict):
    """Exactly one source: a p-only Hamiltonian, a saved table, or the 1D metric oracle."""

    hamiltonian: HamiltonianModel | None = None
    table: str | None = None
    metric_oracle_1d: MetricOracleModel | None = None

    @model_validator(mode="after")
    def _one(self):
        given = [x is not None for x in (self.hamiltonian, self.table, self.metric_oracle_1d)]
        if sum(given) != 1:
            raise ValueError("give exactly one of hamiltonian, table, metric_oracle_1d")
        if self.hamiltonian is not None and self.hamiltonian.kind != "p-only-convex":
            raise ValueError("cone hamiltonian must be p-only-convex")
        return self


class AssertionModel(Strict):
    name: str
    metric: str
    op: Literal["<=", "<", ">=", ">", "=="]
    value: float


class BaseExperiment(Strict):
    output: str = "out"
    workers: int | None = Field(default=None, ge=1)
    assertions: list[AssertionModel] = []


def _decreasing(v: list[float]) -> list[float]:
    if any(b >= a for a, b in zip(v, v[1:])):
        raise ValueError("must be strictly decreasing")
    return v


class HbarTableExperiment(BaseExperiment):
    kind: Literal["hbar-table"]
    hamiltonian: HamiltonianModel
    environment: EnvironmentModel | None = None
    torus: TorusModel | None = None
    p_grid: BoxModel | None = None
    p_points: list[list[float]] | None = None
    deltas: list[PosFloat] = Field(min_length=1)
    tol: PosFloat = 1e-10
    estimator: Literal["point", "extrapolated", "infsup-bound"] = "point"
    upper_bound: bool = False
    convexify: bool = False
    delta_series: bool = True

    _dec = field_validator("deltas")(_decreasing)

    @model_validator(mode="after")
    def _check(self):
        if (self.p_grid is None) == (self.p_points is None):
            raise ValueError("give exactly one of p_grid, p_points")
        if self.environment is None and self.torus is None:
            raise ValueError("give an environment or, for p-only Hamiltonians, a torus")
        if self.environment is None and self.hamiltonian.kind != "p-only-convex":
            raise ValueError("environment is required for this Hamiltonian kind")
        return self


class DistanceExperiment(BaseExperiment):
    kind: Literal["distance"]
    hamiltonian: HamiltonianModel
    environment: EnvironmentModel | None = None
    mu: float
    x0: list[float]
    grid: BoxModel
    tol: PosFloat | None = None
    max_sweeps: int = Field(default=500, ge=1)
    source_radius: int = Field(default=3, ge=0)


class HomogenizeExperiment(BaseExperiment):
    kind: Literal["homogenize"]
    hamiltonian: HamiltonianModel
    environment: EnvironmentModel
    cone: ConeModel
    mu: float
    x0: list[float]
    eps: list[PosFloat] = Field(min_length=1)
    window: WindowModel
    h: PosFloat
    margin: PosFloat = 0.25
    exclude: float | None = Field(default=None, ge=0)
    tol: PosFloat | None = None
    inversion: PosFloat = 0.10
    cdf_configs: int = Field(default=0, ge=0)
    cdf_seed: int = 0
    cdf_tol: PosFloat = 1e-9

    _dec = field_validator("eps")(_decreasing)


class BoundaryModel(Strict):
    kind: Literal["affine", "cone", "aronsson", "minus-norm"]
    slope: list[float] | None = None
    offset: float = 0.0
    mu: float | None = None
    vertex: list[float] | None = None


class AmleExperiment(BaseExperiment):
    kind: Literal["amle"]
    cone: ConeModel
    grid: BoxModel
    boundary: BoundaryModel
    tol: PosFloat = 1e-10
    max_passes: int = Field(default=200_000, ge=1)
    validate_configs: int = Field(default=100, ge=0)
    seed: int = 0


class CdfConfigModel(Strict):
    mu: float
    lo: list[float]
    hi: list[float]
    vertex: list[float]


class RandomConfigsModel(Strict):
    count: int = Field(ge=1)
    seed: int = 0
    lipschitz: PosFloat | None = None


class FieldSourceModel(Strict):
    path: str | None = None
    function: BoundaryModel | None = None
    grid: BoxModel | None = None

    @model_validator(mode="after")
    def _one(self):
        if (self.path is None) == (self.function is None):
            raise ValueError("give exactly one of path, function")
        if self.function is not None and self.grid is None:
            raise ValueError("function fields need a grid")
        return self


class CheckCdfExperiment(BaseExperiment):
    kind: Literal["check-cdf"]
    cone: ConeModel
    field: FieldSourceModel
    side: Literal["above", "below"] = "above"
    configs: list[CdfConfigModel] = []
    random: RandomConfigsModel | None = None
    tol: float = Field(default=1e-9, ge=0)

    @model_validator(mode="after")
    def _some(self):
        if not self.configs and self.random is None:
            raise ValueError("give configs or random")
        return self


class OracleCompareExperiment(BaseExperiment):
    kind: Literal["oracle-compare"]
    hamiltonian: HamiltonianModel
    environment: EnvironmentModel
    p: list[float] = Field(min_length=1)
    deltas: list[PosFloat] = Field(min_length=1)
    tol: PosFloat = 1e-10
    estimator: Literal["point", "extrapolated"] = "extrapolated"
    rel_threshold: PosFloat = 0.05
    abs_threshold: PosFloat = 0.05

    _dec = field_validator("deltas")(_decreasing)

    @model_validator(mode="after")
    def _check(self):
        if self.hamiltonian.kind not in ("separable", "metric") or self.hamiltonian.dim != 1:
            raise ValueError("oracles exist for 1D separable and 1D metric Hamiltonians")
        return self


Experiment = Annotated[Union[HbarTableExperiment, DistanceExperiment, HomogenizeExperiment, AmleExperiment,
                             CheckCdfExperiment, OracleCompareExperiment], Field(discriminator="kind")]


class ConfigFile(Strict):
    experiment: Experiment


def parse_config(data: dict) -> BaseExperiment:
    """Validate a config mapping; raises ``ValidationError`` naming the offending key."""
    return ConfigFile.model_validate({"experiment": data}).experiment


def load_config(path) -> dict:
    text = Path(path).read_text()
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if not isinstance(data, dict):
        raise InvalidConfigError("config must be a mapping")
    return data


def _first_error(exc: ValidationError) -> str:
    err = exc.errors()[0]
    loc = [str(x) for x in err["loc"]]
    # drop the wrapper key and the union tag pydantic inserts
    if loc and loc[0] == "experiment":
        loc = loc[1:]
    if loc and loc[0] in KINDS:
        loc = loc[1:]
    return f"{'.'.join(loc) or '<root>'}: {err['msg']}"


# ---------------------------------------------------------------- shared builders


def _environments(env: EnvironmentModel | None, dim: int):
    if env is None:
        return [(None, None)]
    torus = env.torus.build(dim)
    return [(s, sample_environment(env.kind, dict(env.params), s, torus)) for s in env.seeds]


def _provider(cone: ConeModel) -> ConeProvider:
    if cone.hamiltonian is not None:
        return ConeProvider.from_spec(cone.hamiltonian.build())
    if cone.table is not None:
        return TableCone(load_table(cone.table))
    m = cone.metric_oracle_1d
    slope = oracle_metric_1d(m.values, 1.0, m.probs)
    return ConeProvider.from_spec(HamiltonianSpec.norm(matrix=[[slope * slope]], dim=1))


def _function(b: BoundaryModel, dim: int, provider: ConeProvider | None = None):
    if b.kind == "affine":
        slope = np.zeros(dim) if b.slope is None else np.asarray(b.slope, dtype=float)
        return lambda P: P @ slope + b.offset
    if b.kind == "cone":
        if b.mu is None or b.vertex is None or provider is None:
            raise InvalidConfigError("cone data needs mu, vertex and a cone source")
        x0 = np.asarray(b.vertex, dtype=float)
        return lambda P: provider.cone(b.mu, P - x0) + b.offset
    if b.kind == "aronsson":
        if dim != 2:
            raise InvalidConfigError("aronsson data is two-dimensional")
        return lambda P: np.cbrt(P[:, 0]) ** 4 - np.cbrt(P[:, 1]) ** 4 + b.offset
    return lambda P: -np.linalg.norm(P, axis=1) + b.offset


def _num(x):
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    x = float(x)
    return None if math.isnan(x) or math.isinf(x) else x


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (str, type(None))):
        return obj
    return _num(obj)


# ---------------------------------------------------------------- plot data


def emit_plotdata(report, out_dir, name: str = "plot", delta_series: bool = True) -> list[Path]:
    """Two-column series for a table, homogenization report or delta sequence.

    Tables also give one ``-delta v(0)`` against ``delta`` series per node
    when their schedule was recorded and ``delta_series`` is set. ``None``
    writes ``<name>.dat`` with the header only.
    """
    from .corrector import HbarPoint
    from .effective import HomogenizationReport

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = out_dir / f"{name}.dat"
    if report is None:
        return [write_series(base, [], [], "x", "y")]
    if isinstance(report, HbarTable):
        paths = report.write_plotdata(base)
        seqs = report.provenance.get("sequences")
        deltas = report.provenance.get("deltas")
        if delta_series and seqs and deltas:
            for k, row in enumerate(seqs):
                vals = [math.nan if v is None else v for v in row]
                paths.append(write_series(out_dir / f"{name}_delta_node{k:04d}.dat", deltas, vals, "delta",
                                          "minus_delta_v_at_0", scale="log-linear"))
        return paths
    if isinstance(report, HomogenizationReport):
        return [report.write_plotdata(base)]
    if isinstance(report, HbarPoint):
        return [report.write_plotdata(base)]
    raise TypeError(f"no plot data for {type(report).__name__}")


# ---------------------------------------------------------------- pipelines


class Run:
    def __init__(self, out: Path, workers: int):
        self.out = out
        self.workers = workers
        self.stages: list[dict] = []
        self.artifacts: list[Path] = []

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        rec = {"name": name, "status": "running"}
        self.stages.append(rec)
        try:
            yield
        except BaseException as exc:
            rec["status"] = "failed"
            rec["error"] = f"{type(exc).__name__}: {exc}"
            raise
        finally:
            rec["seconds"] = time.perf_counter() - t0
        rec["status"] = "ok"

    def keep(self, *paths) -> None:
        for p in paths:
            if isinstance(p, (list, tuple)):
                self.keep(*p)
            else:
                self.artifacts.append(Path(p))


def _run_hbar_table(cfg: HbarTableExperiment, run: Run) -> dict:
    spec = cfg.hamiltonian.build()
    pg = cfg.p_grid.build() if cfg.p_grid is not None else np.asarray(cfg.p_points, dtype=float)
    with run.stage("sample"):
        media = _environments(cfg.environment, spec.dim)
        torus = cfg.environment.torus.build(spec.dim) if cfg.environment else cfg.torus.build(spec.dim)
    with run.stage("solve"):
        envs = [e for _, e in media]
        table = build_table(spec, envs if cfg.environment else None, pg, cfg.deltas, torus, tol=cfg.tol,
                            estimator=cfg.estimator, upper_bound=cfg.upper_bound, workers=run.workers)
        if cfg.convexify:
            table = table.convexify()
    with run.stage("report"):
        run.keep(table.save(run.out / "table.json"))
        run.keep(_table_csv(table, run.out / "table.csv"))
        run.keep(emit_plotdata(table, run.out / "plotdata", "hbar", cfg.delta_series))
        metrics = {"nodes": len(table.points), "crude_violations": table.crude_violations(),
                   "unreliable_nodes": int(table.unreliable.sum()), "min_value": float(table.values.min()),
                   "max_error_estimate": float(np.max(table.error))}
        if spec.p_only:
            exact = eval_h(spec, table.points, np.zeros_like(table.points))
            metrics["max_abs_vs_h"] = float(np.max(np.abs(table.values - exact)))
        if table.grid is not None:
            rep = convexity_report(table)
            metrics["convexity_violation"] = rep.max_violation
            try:
                reg = argmin_region(table)
                metrics.update(flat_spot=reg.flat_spot, argmin_nodes=len(reg.nodes), flat_tol=reg.tol)
                if table.dim == 1:
                    metrics.update(argmin_lo=float(reg.points[:, 0].min()), argmin_hi=float(reg.points[:, 0].max()))
            except LinfhomError as exc:
                metrics["argmin_error"] = type(exc).__name__
    return metrics


def _table_csv(table: HbarTable, path: Path) -> Path:
    cols = ["p%d" % a for a in range(table.dim)] + ["value", "point", "extrapolated", "upper", "spread", "error",
                                                      "unreliable", "crude_lo", "crude_hi"]
    with path.open("w") as fh:
        fh.write(",".join(cols) + "\n")
        for k in range(len(table.points)):
            row = [repr(float(x)) for x in table.points[k]]
            row += [repr(float(getattr(table, c)[k])) if c != "value" else repr(float(table.values[k]))
                    for c in ("value", "point", "extrapolated", "upper", "spread", "error")]
            row += [str(int(table.unreliable[k])), repr(float(table.crude_lo[k])), repr(float(table.crude_hi[k]))]
            fh.write(",".join(row) + "\n")
    return path


def _run_distance(cfg: DistanceExperiment, run: Run) -> dict:
    spec = cfg.hamiltonian.build()
    with run.stage("sample"):
        seed, env = _environments(cfg.environment, spec.dim)[0]
    with run.stage("solve"):
        d = solve_distance(spec, env, cfg.mu, cfg.x0, cfg.grid.build(), tol=cfg.tol, max_sweeps=cfg.max_sweeps,
                           source_radius=cfg.source_radius)
    with run.stage("report"):
        run.keep(save_field(run.out / "distance.npz", d.field, d.sidecar()))
        run.keep(export_csv(run.out / "distance.csv", d.field))
        side = run.out / "distance.json"
        side.write_text(json.dumps(_clean(d.sidecar()), indent=2, sort_keys=True))
        run.keep(side)
    return {"converged": d.converged, "sweeps": d.sweeps, "residual": d.residual, "lipschitz": d.lipschitz,
            "error_bound": d.error_bound}


def _run_homogenize(cfg: HomogenizeExperiment, run: Run) -> dict:
    spec = cfg.hamiltonian.build()
    with run.stage("sample"):
        media = _environments(cfg.environment, spec.dim)
        provider = _provider(cfg.cone)
    kept: dict = {}
    with run.stage("solve"):
        kw = {} if cfg.tol is None else {"tol": cfg.tol}
        rep = homogenization_experiment(spec, media, cfg.mu, cfg.x0, cfg.eps, (cfg.window.lo, cfg.window.hi),
                                        provider, cfg.h, margin=cfg.margin, exclude=cfg.exclude,
                                        keep=kept if cfg.cdf_configs else None, **kw)
    ok, inv = rep.trend(cfg.inversion)
    m = rep.max_errors
    metrics = {"max_errors": [float(x) for x in m], "final_error": float(m[-1]), "trend_ok": ok,
               "inversions": inv, "failures": len(rep.failures),
               "improvement": float(m[-1] < m[0]) if len(m) > 1 else 0.0}
    if cfg.cdf_configs:
        with run.stage("cdf"):
            metrics["cdf_worst"] = _cone_cdf(provider, cfg, kept)
    with run.stage("report"):
        run.keep(rep.to_csv(run.out / "errors.csv"))
        run.keep(emit_plotdata(rep, run.out / "plotdata", "error_vs_eps"))
    return metrics


def _cone_cdf(provider: ConeProvider, cfg: HomogenizeExperiment, kept: dict) -> float:
    """Effective cone on each converged run's grid, audited with configs avoiding ``x0``."""
    worst = -math.inf
    x0 = np.asarray(cfg.x0, dtype=float)
    for (eps, seed), d in sorted(kept.items()):
        g = d.grid
        u = ScalarField(g, provider.cone(cfg.mu, g.points() - x0).reshape(g.shape))
        lip = float(np.max(provider.support(cfg.mu, _unit_dirs(g.dim))))
        cfgs = random_configs(g, cfg.cdf_configs, cfg.cdf_seed + seed, provider, lip, avoid=[x0])
        worst = max(worst, check_cdf(u, provider, "above", cfgs, cfg.cdf_tol).worst)
    return worst


def _unit_dirs(dim: int) -> np.ndarray:
    from .media import direction_mesh

    return direction_mesh(dim, 64 if dim == 2 else None)


def _run_amle(cfg: AmleExperiment, run: Run) -> dict:
    provider = _provider(cfg.cone)
    grid = cfg.grid.build()
    g = _function(cfg.boundary, grid.dim, provider)
    with run.stage("solve"):
        try:
            res = construct_amle(provider, grid, g, tol=cfg.tol, max_passes=cfg.max_passes,
                                 validate=cfg.validate_configs, seed=cfg.seed)
        except ValidationRejectedError as exc:
            above, below = exc.report
            above.save(run.out / "cdf_above.json")
            below.save(run.out / "cdf_below.json")
            raise
    with run.stage("report"):
        run.keep(save_field(run.out / "amle.npz", res.field, {"passes": res.passes, "unique": res.unique}))
        run.keep(export_csv(run.out / "amle.csv", res.field))
        metrics = {"passes": res.passes, "converged": res.converged, "unique": res.unique,
                   "max_error_vs_boundary_function": float(np.max(np.abs(res.field.values.ravel() - g(grid.points()))))}
        if res.report_above is not None:
            run.keep(res.report_above.save(run.out / "cdf_above.json"), res.report_below.save(run.out / "cdf_below.json"))
            metrics.update(cdf_above_worst=res.report_above.worst, cdf_below_worst=res.report_below.worst)
    return metrics


def _run_check_cdf(cfg: CheckCdfExperiment, run: Run) -> dict:
    provider = _provider(cfg.cone)
    with run.stage("field"):
        if cfg.field.path is not None:
            u, _ = load_field(cfg.field.path)
        else:
            grid = cfg.field.grid.build()
            f = _function(cfg.field.function, grid.dim, provider)
            u = ScalarField(grid, f(grid.points()).reshape(grid.shape))
    with run.stage("check"):
        cfgs = [CdfConfig(c.mu, tuple(c.lo), tuple(c.hi), tuple(c.vertex)) for c in cfg.configs]
        if cfg.random is not None:
            lip = cfg.random.lipschitz
            if lip is None:
                from .linf import _lipschitz
                lip = _lipschitz(u, np.isfinite(u.values))
            cfgs += random_configs(u.grid, cfg.random.count, cfg.random.seed, provider, lip)
        rep = check_cdf(u, provider, cfg.side, cfgs, cfg.tol)
    with run.stage("report"):
        run.keep(rep.save(run.out / "cdf_report.json"))
    return {"worst": rep.worst, "passed": rep.passed, "configs": len(cfgs)}


def _run_oracle_compare(cfg: OracleCompareExperiment, run: Run) -> dict:
    spec = cfg.hamiltonian.build()
    with run.stage("sample"):
        media = _environments(cfg.environment, 1)
        torus = cfg.environment.torus.build(1)
    with run.stage("solve"):
        table = build_table(spec, [e for _, e in media], np.asarray(cfg.p, dtype=float)[:, None], cfg.deltas,
                            torus, tol=cfg.tol, estimator=cfg.estimator, workers=run.workers)
    rows = []
    with run.stage("compare"):
        for k, p in enumerate(cfg.p):
            refs = []
            for _, env in media:
                if spec.kind == "separable":
                    V = lambda y, env=env: env.scalar_at(np.asarray(y)[:, None])
                    refs.append(oracle_hbar_separable_1d(V, p))
                else:
                    c = env.cells if env.cells is not None else env.scalar.values
                    refs.append(oracle_metric_1d(c, p))
            ref = float(np.mean(refs))
            got = float(table.values[k])
            err = abs(got - ref)
            ok = err <= max(cfg.rel_threshold * abs(ref), cfg.abs_threshold if abs(ref) <= 1.5 else 0.0)
            rows.append((p, got, ref, err, ok))
    with run.stage("report"):
        path = run.out / "oracle_compare.csv"
        with path.open("w") as fh:
            fh.write("p,table,oracle,abs_error,pass\n")
            for p, got, ref, err, ok in rows:
                fh.write(f"{p!r},{got!r},{ref!r},{err!r},{int(ok)}\n")
        run.keep(path, table.save(run.out / "table.json"))
        run.keep(emit_plotdata(table, run.out / "plotdata", "hbar"))
    rel = [e / abs(r) for _, _, r, e, _ in rows if r != 0]
    return {"all_pass": all(r[-1] for r in rows), "failed_nodes": sum(not r[-1] for r in rows),
            "max_abs_error": max(r[3] for r in rows), "max_rel_error": max(rel) if rel else 0.0,
            "node_pass": [bool(r[-1]) for r in rows]}


PIPELINES = {"hbar-table": _run_hbar_table, "distance": _run_distance, "homogenize": _run_homogenize,
             "amle": _run_amle, "check-cdf": _run_check_cdf, "oracle-compare": _run_oracle_compare}


def _evaluate(assertions, metrics: dict) -> list[dict]:
    ops = {"<=": lambda a, b: a <= b, "<": lambda a, b: a < b, ">=": lambda a, b: a >= b,
           ">": lambda a, b: a > b, "==": lambda a, b: a == b}
    out = []
    for a in assertions:
        obs = metrics.get(a.metric)
        if isinstance(obs, list):
            obs = obs[-1] if obs else None
        ok = obs is not None and not (isinstance(obs, float) and math.isnan(obs)) and ops[a.op](float(obs), a.value)
        out.append({"name": a.name, "metric": a.metric, "op": a.op, "value": a.value, "observed": _num(obs)
                    if obs is not None else None, "passed": bool(ok)})
    return out


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _apply_seed_override(data: dict, seed: int) -> dict:
    data = json.loads(json.dumps(data))
    env = data.get("environment")
    if isinstance(env, dict):
        n = len(env.get("seeds", [0]))
        env["seeds"] = [seed + i for i in range(n)]
    for key in ("seed", "cdf_seed"):
        if key in data:
            data[key] = seed
    if isinstance(data.get("random"), dict):
        data["random"]["seed"] = seed
    return data


def run_experiment(data: dict, out: str | None = None, workers: int | None = None,
                   seed_override: int | None = None, kind: str | None = None) -> tuple[int, Path | None]:
    """Validate, run and persist one experiment; returns ``(exit code, output dir)``."""
    if seed_override is not None:
        data = _apply_seed_override(data, seed_override)
    try:
        cfg = parse_config(data)
    except ValidationError as exc:
        print(f"invalid config: {_first_error(exc)}", file=sys.stderr)
        return EXIT_CONFIG, None
    if kind is not None and kind != cfg.kind:
        print(f"invalid config: kind: config is {cfg.kind!r}, subcommand is {kind!r}", file=sys.stderr)
        return EXIT_CONFIG, None
    outdir = Path(out if out is not None else cfg.output)
    outdir.mkdir(parents=True, exist_ok=True)
    if workers is None:
        env_w = os.environ.get("LINFHOM_WORKERS")
        workers = default_workers() if env_w else (cfg.workers or 1)
    run = Run(outdir, workers)
    t0 = time.perf_counter()
    status, code, metrics, error = "pass", EXIT_OK, {}, None
    marker = outdir / "FAILED"
    if marker.exists():
        marker.unlink()
    try:
        metrics = PIPELINES[cfg.kind](cfg, run)
    except Exception as exc:  # any pipeline error leaves a marker and partial artifacts
        error = f"{type(exc).__name__}: {exc}"
        config_error = isinstance(exc, InvalidConfigError)
        status = "invalid-config" if config_error else "solver-failure"
        code = EXIT_CONFIG if config_error else EXIT_SOLVER
        marker.write_text(error + "\n" + traceback.format_exc())
        print(f"failed: {error}", file=sys.stderr)
    results = _evaluate(cfg.assertions, metrics) if code == EXIT_OK else []
    if code == EXIT_OK and not all(r["passed"] for r in results):
        status, code = "assertion-failure", EXIT_ASSERT
    summary = {"kind": cfg.kind, "status": status, "metrics": _clean(metrics), "assertions": results,
               "error": error, "version": __version__}
    spath = outdir / "summary.json"
    spath.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    run.keep(spath)
    manifest = {"config": cfg.model_dump(mode="json"), "version": __version__,
                "python": platform.python_version(), "numpy": np.__version__, "workers": workers,
                "wall_seconds": time.perf_counter() - t0, "status": status, "stages": run.stages,
                "artifacts": [{"path": str(p.relative_to(outdir)), "sha256": _sha256(p), "bytes": p.stat().st_size}
                              for p in sorted(set(run.artifacts)) if p.exists()]}
    (outdir / "manifest.json").write_text(json.dumps(_clean(manifest), indent=2, sort_keys=True) + "\n")
    return code, outdir


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="linfhom", description="Homogenization experiments for L-infinity problems.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run",) + KINDS:
        sp = sub.add_parser(name, help="run the kind named in the config" if name == "run" else f"{name} experiment")
        sp.add_argument("--config", required=True, help="YAML or JSON experiment config")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--workers", type=int, help="worker processes (overrides LINFHOM_WORKERS and the config)")
        sp.add_argument("--seed-override", type=int, help="replace every seed, consecutively from K")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        data = load_config(args.config)
    except (OSError, yaml.YAMLError, json.JSONDecodeError, InvalidConfigError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.workers is not None and args.workers < 1:
        print("invalid config: workers: must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    kind = None if args.command == "run" else args.command
    code, out = run_experiment(data, args.out, args.workers, args.seed_override, kind)
    if out is not None:
        print(f"{out / 'summary.json'}")
    return code


if __name__ == "__main__":
    sys.exit(main())
