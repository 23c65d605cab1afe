"""Acceptance criteria 1-9 at their stated tolerances; one summary line each at the end of the run."""

import json
import warnings

import numpy as np
import pytest
import yaml

from conftest import record
from linfhom.cli import main
from linfhom.corrector import DEFAULT_TOL, p_regularity_report
from linfhom.effective import (TableCone, argmin_region, build_table, flat_spot_halfwidth_1d, homogenization_experiment,
                               oracle_hbar_separable_1d)
from linfhom.eikonal import ConeProvider, check_subadditivity, residual_window, solve_distance
from linfhom.errors import InfeasibleLevelError
from linfhom.grid import Grid, ScalarField
from linfhom.linf import check_cdf, construct_amle, convexity_criterion, legendre, random_configs
from linfhom.media import HamiltonianSpec, sample_environment

pytestmark = pytest.mark.slow

SINE = lambda y: np.sin(2 * np.pi * y)
DELTAS = [0.1, 0.03, 0.01]
TABLES = []  # every table built here, audited by criterion 3
KEPT = {}  # converged homogenization runs, audited by criterion 8


def field_of(grid, f):
    return ScalarField(grid, f(grid.points()).reshape(grid.shape))


# ---------------------------------------------------------------- 1: separable oracle


def test_criterion_1_separable_oracle():
    g = Grid.torus(1.0, 1000, dim=1)
    env = sample_environment("periodic", {"profile": "sine"}, 0, g)
    spec = HamiltonianSpec("separable", 1)
    ps = np.array([0.0, 0.5, -0.5, 1.0, -1.0, 1.5, -1.5, 2.0, -2.0, 3.0, -3.0])
    with warnings.catch_warnings():
        # unreliable-extrapolation warnings are expected at the flat-spot edges
        warnings.simplefilter("ignore")
        listed = build_table(spec, env, ps[:, None], DELTAS, g, estimator="extrapolated")
    ref = np.array([oracle_hbar_separable_1d(SINE, p) for p in ps])
    err = np.abs(listed.values - ref)
    match = bool(np.all(err <= np.maximum(0.05 * ref, 0.05)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fine = build_table(spec, env, Grid.box([-1.5], [1.5], 0.025), DELTAS, g, estimator="extrapolated")
    TABLES.extend([listed, fine])
    region = argmin_region(fine)
    L0 = flat_spot_halfwidth_1d(SINE)
    ends = region.points[[0, -1], 0]
    end_err = float(np.max(np.abs(np.abs(ends) - L0)))
    ok = match and region.flat_spot and end_err <= 0.05
    record(1, ok, f"max oracle error {err.max():.2e}, flat spot {region.flat_spot}, "
                  f"ends {ends[0]:+.3f} {ends[1]:+.3f} (off by {end_err:.3f})")
    assert ok


# ---------------------------------------------------------------- 2: drift lower bound


def test_criterion_2_drift_lower_bound():
    t = Grid.torus(1.0, 64, dim=2)
    env = sample_environment("periodic", {"profile": "product-sine", "scale": 1 / (2 * np.pi), "target": "drift"},
                             0, t)
    P = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [np.sqrt(2), np.sqrt(2)]])
    table = build_table(HamiltonianSpec("quadratic-drift", 2), env, P, DELTAS, t)
    TABLES.append(table)
    sq = np.sum(P ** 2, axis=1)
    bound = 0.5 * sq - 0.05 * (1 + sq)
    zero = abs(table.values[0]) <= 10 * DEFAULT_TOL
    ok = bool(np.all(table.values[1:] >= bound[1:])) and zero
    record(2, ok, f"values {np.round(table.values, 3).tolist()} vs bounds {np.round(bound[1:], 3).tolist()}, "
                  f"table(0) = {table.values[0]:.1e}")
    assert ok


# ---------------------------------------------------------------- 4: metric homogenization


METRIC_CONE_1D = ConeProvider.from_spec(HamiltonianSpec.norm(matrix=[[16 / 9]]))


def test_criterion_4_metric_homogenization():
    tor = Grid.torus(64.0, 64 * 128, dim=1)
    media = [(s, sample_environment("iid-checkerboard", {"values": [1, 2], "cell": 1 / 32}, s, tor)) for s in range(4)]
    keep1 = {}
    rep1 = homogenization_experiment(HamiltonianSpec("metric", 1), media, 1.0, [0.0], [1, 0.5, 0.25, 0.125],
                                     ([-0.5], [0.5]), METRIC_CONE_1D, h=1 / 128, keep=keep1)
    ok1 = rep1.trend()[0] and rep1.max_errors[-1] <= 0.05 and not rep1.failures

    cell = Grid.torus(8.0, 64, dim=2)
    spec2 = HamiltonianSpec("metric", 2)
    table = build_table(spec2, sample_environment("iid-checkerboard", {"values": [1, 2]}, 0, cell),
                        Grid.box([-1.25, -1.25], [1.25, 1.25], 0.3125), DELTAS, cell)
    TABLES.append(table)
    big = Grid.torus(64.0, 512, dim=2)
    media2 = [(s, sample_environment("iid-checkerboard", {"values": [1, 2]}, s, big)) for s in range(4)]
    keep2 = {}
    cone2 = TableCone(table.convexify())
    rep2 = homogenization_experiment(spec2, media2, 1.0, [0.0, 0.0], [1, 0.5, 0.25, 0.125],
                                     ([-0.5, -0.5], [0.5, 0.5]), cone2, h=0.125, keep=keep2)
    e2 = rep2.max_errors
    ok2 = rep2.trend()[0] and e2[-1] < e2[0] and not rep2.failures
    KEPT["1d"] = (METRIC_CONE_1D, keep1)
    KEPT["2d"] = (cone2, keep2)
    ok = ok1 and ok2
    record(4, ok, f"1D errors {np.round(rep1.max_errors, 3).tolist()}; 2D errors {np.round(e2, 3).tolist()}")
    assert ok


# ---------------------------------------------------------------- 6: corrector regularity


def test_criterion_6_corrector_regularity():
    rng = np.random.default_rng(6)
    g1 = Grid.torus(1.0, 200, dim=1)
    sep = sample_environment("periodic", {"profile": "sine"}, 0, g1)
    pairs1 = [(rng.uniform(-2, 2, 1), rng.uniform(-2, 2, 1)) for _ in range(30)]
    r1 = p_regularity_report(HamiltonianSpec("separable", 1), sep, 0.05, g1, pairs1)
    g2 = Grid.torus(1.0, 32, dim=2)
    drift = sample_environment("periodic", {"profile": "product-sine", "scale": 1 / (2 * np.pi), "target": "drift"},
                               0, g2)
    pairs2 = [(rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)) for _ in range(20)]
    r2 = p_regularity_report(HamiltonianSpec("quadratic-drift", 2), drift, 0.1, g2, pairs2)
    reg_ok = all(r.max_defect <= 10 * DEFAULT_TOL and r.max_quotient <= r.quotient_bound for r in (r1, r2))

    tables = [build_table(HamiltonianSpec("separable", 1), sep, Grid.box([-2], [2], 0.5), DELTAS, g1,
                          upper_bound=True),
              build_table(HamiltonianSpec("quadratic-drift", 2), drift, Grid.box([-1, -1], [1, 1], 1.0), DELTAS, g2,
                          upper_bound=True)]
    TABLES.extend(tables)
    crude = sum(t.crude_violations() for t in tables)
    below = all(np.all(t.point <= t.upper + 10 * DEFAULT_TOL) for t in tables)
    ok = reg_ok and crude == 0 and below
    record(6, ok, f"defects {r1.max_defect:.1e} {r2.max_defect:.1e}, quotients {r1.max_quotient:.2f}/"
                  f"{r1.quotient_bound:.2f} {r2.max_quotient:.2f}/{r2.quotient_bound:.2f}, crude violations {crude}, "
                  f"point <= upper bound {below}")
    assert ok


# ---------------------------------------------------------------- 3: crude bounds on every table


def test_criterion_3_crude_bounds():
    if not TABLES:
        pytest.skip("no tables were built")
    counts = [t.crude_violations() for t in TABLES]
    nodes = sum(len(t.values) for t in TABLES)
    ok = sum(counts) == 0
    record(3, ok, f"{sum(counts)} violations over {len(TABLES)} tables, {nodes} nodes")
    assert ok


# ---------------------------------------------------------------- 5: distance-function properties


def catalog():
    t2 = Grid.torus(4.0, 32, dim=2)
    return [
        (HamiltonianSpec.quadratic(matrix=[[2.0, 0.3], [0.3, 1.0]], center=[0.2, -0.1], offset=0.5), None, 1.5),
        (HamiltonianSpec.norm(matrix=[[1.0, 0.0], [0.0, 3.0]]), None, 1.0),
        (HamiltonianSpec("metric", 2), sample_environment("iid-checkerboard", {"values": [1, 2]}, 3, t2), 1.0),
        (HamiltonianSpec("anisotropic-homogeneous", 2),
         sample_environment("smoothed-bump", {"amplitude": 0.5, "offset": 1.0, "target": "matrix"}, 1, t2), 1.0),
        (HamiltonianSpec("quadratic-drift", 2),
         sample_environment("periodic", {"profile": "product-sine", "scale": 1 / (2 * np.pi), "target": "drift"},
                            0, t2), 1.0),
    ]


def test_criterion_5_distance_properties():
    cat = catalog()
    g = Grid.box([-2, -2], [2, 2], 0.125)
    rng = np.random.default_rng(5)
    h = 0.125
    sub, red, ext = [], [], []
    for k in range(50):
        spec, env, mu = cat[k % len(cat)]
        x, z, y = rng.uniform(-1, 1, (3, 2))
        cache = {}
        v = check_subadditivity(spec, env, mu, [(x, z, y)], g, solved=cache)
        sub.append(v / (3 * max(d.error_bound for d in cache.values())))
    for k in range(50):
        spec, env, mu = cat[k % len(cat)]
        x0 = rng.uniform(-0.5, 0.5, 2)
        p, q = rng.uniform(-0.3, 0.3, (2, 2))
        dp = solve_distance(spec, env, mu, x0, g, p=p)
        dq = solve_distance(spec, env, mu, x0, g, p=q)
        shift = (g.points() - x0) @ (q - p)
        win = residual_window(g, x0).ravel()
        gap = np.abs(dp.field.values.ravel() - shift - dq.field.values.ravel())[win]
        red.append(gap.max() / (3 * max(dp.error_bound, dq.error_bound)))
    pts = g.points().reshape(g.shape + (2,))
    k = 0
    while len(ext) < 50:
        spec, env, mu = cat[k % len(cat)]
        k += 1
        x0 = rng.uniform(-0.5, 0.5, 2)
        size = rng.uniform(0.5, 1.5, 2)
        lo = np.round(rng.uniform(-1.4, 1.4 - size) / h) * h
        hi = lo + np.round(size / h) * h
        if np.all((x0 >= lo - 3 * h) & (x0 <= hi + 3 * h)):
            continue
        u = solve_distance(spec, env, mu, x0, g)
        v = solve_distance(spec, env, mu * rng.uniform(1.2, 1.8), x0, g)
        inside = np.all((pts >= lo - 1e-9) & (pts <= hi + 1e-9), axis=-1)
        interior = np.all((pts > lo + 1e-9) & (pts < hi - 1e-9), axis=-1)
        diff = u.field.values - v.field.values
        edge = diff[inside & ~interior].max()
        ext.append((diff[inside].max() - edge) / (3 * max(u.tol, v.tol)))
    raised = 0
    for _ in range(50):
        m = rng.uniform(0.2, 2.0)
        spec = HamiltonianSpec.quadratic(dim=2, center=rng.uniform(-1, 1, 2), offset=m)
        try:
            solve_distance(spec, None, m * rng.uniform(0.0, 0.99), [0.0, 0.0], g)
        except InfeasibleLevelError:
            raised += 1
    ok = max(sub) <= 1 and max(red) <= 1 and max(ext) <= 1 and raised == 50
    record(5, ok, f"200 configs; worst / allowed: subadditivity {max(sub):.3f}, redundancy {max(red):.3f}, "
                  f"exterior {max(ext):.3f}; infeasible raised {raised}/50")
    assert ok


# ---------------------------------------------------------------- 7: L-infinity suite


def test_criterion_7_linf_suite():
    norm = ConeProvider.from_spec(HamiltonianSpec.norm(dim=2))
    quad = ConeProvider.from_spec(HamiltonianSpec.quadratic(dim=2))
    tol, h = 1e-10, 1 / 64
    g = Grid.box([-1, -1], [1, 1], h)
    affine = lambda P: 0.4 * P[:, 0] - 0.7 * P[:, 1] + 0.1
    cone = lambda P: quad.cone(1.0, P - np.array([2.0, 0.5]))
    aronsson = lambda P: np.cbrt(P[:, 0]) ** 4 - np.cbrt(P[:, 1]) ** 4
    errs, cdf_ok = [], True
    for prov, f in ((norm, affine), (quad, cone), (quad, aronsson)):
        res = construct_amle(prov, g, f, tol=tol, validate=100)
        errs.append(float(np.max(np.abs(res.field.values - f(g.points()).reshape(g.shape)))))
        cdf_ok &= res.report_above.passed and res.report_below.passed
    amle_ok = errs[0] <= tol and errs[1] <= tol + 2 * h and errs[2] <= 0.05

    ug = Grid.box([-1, -1], [1, 1], 0.05)
    bad = check_cdf(field_of(ug, lambda P: -np.linalg.norm(P, axis=1)), norm, "above",
                    [(0.1, ([-0.5, -0.5], [0.5, 0.5]), [2.0, 0.0])])

    half_sq = lambda P: 0.5 * np.sum(P ** 2, axis=1)
    L = legendre(half_sq, Grid.box([-1, -1], [1, 1], 0.025), Grid.box([-2, -2], [2, 2], 0.025))
    lat = Grid.box([-1, -1], [1, 1], 0.02)
    c_aff = convexity_criterion(field_of(lat, lambda P: P @ np.array([0.3, -0.2])), L, [0.2, 0.4, 0.8],
                                [[0.0, 0.0], [0.1, -0.1]]).worst
    norm_L = legendre(lambda P: np.linalg.norm(P, axis=1), Grid.box([-1.5, -1.5], [1.5, 1.5], 0.05),
                      Grid.box([-3, -3], [3, 3], 0.05))
    c_cone = convexity_criterion(field_of(ug, lambda P: np.linalg.norm(P, axis=1)), norm_L, [0.1, 0.2, 0.3],
                                 [[0.2, 0.1]]).worst
    c_concave = convexity_criterion(field_of(ug, lambda P: -np.linalg.norm(P, axis=1)), norm_L, [0.1, 0.2, 0.3],
                                    [[0.0, 0.0], [0.2, 0.1]]).worst
    conv_ok = c_aff <= tol and c_cone <= tol and c_concave > 0
    ok = amle_ok and cdf_ok and (not bad.passed and bad.worst > 0) and conv_ok
    record(7, ok, f"amle errors affine {errs[0]:.1e} cone {errs[1]:.1e} aronsson {errs[2]:.3f}; cdf audits {cdf_ok}; "
                  f"-|x| excess {bad.worst:.3f}; convexity defects {c_aff:.1e} {c_cone:.1e} concave {c_concave:.3f}")
    assert ok


# ---------------------------------------------------------------- 8: effective cones satisfy comparison


def test_criterion_8_effective_cones_cdf():
    if not KEPT:
        pytest.skip("criterion 4 runs unavailable")
    worst, count, passed = -np.inf, 0, True
    for provider, kept in KEPT.values():
        for (eps, seed), d in sorted(kept.items()):
            grid = d.grid
            x0 = np.zeros(grid.dim)
            u = ScalarField(grid, provider.cone(1.0, grid.points() - x0).reshape(grid.shape))
            lip = float(np.max(provider.cone(1.0, np.eye(grid.dim)))) + 1.0
            cfgs = random_configs(grid, 20, seed, provider, lip, avoid=[x0])
            rep = check_cdf(u, provider, "above", cfgs)
            worst, passed = max(worst, rep.worst), passed and rep.passed
            count += 1
    ok = passed
    record(8, ok, f"{count} converged runs, worst excess {worst:.1e}")
    assert ok


# ---------------------------------------------------------------- 9: reproducibility


def test_criterion_9_byte_identical(tmp_path):
    cfg = {"kind": "homogenize", "hamiltonian": {"kind": "metric", "dim": 1},
           "environment": {"kind": "iid-checkerboard", "params": {"values": [1, 2], "cell": 1 / 32},
                           "seeds": [0, 1, 2, 3], "torus": {"period": 64.0, "nodes": 8192}},
           "cone": {"metric_oracle_1d": {"values": [1, 2]}}, "mu": 1.0, "x0": [0.0],
           "eps": [1.0, 0.5, 0.25, 0.125], "window": {"lo": [-0.5], "hi": [0.5]}, "h": 0.0078125,
           "cdf_configs": 20}
    path = tmp_path / "c4.yaml"
    path.write_text(yaml.safe_dump(cfg))
    codes = [main(["homogenize", "--config", str(path), "--out", str(tmp_path / o)]) for o in ("a", "b")]
    a, b = ((tmp_path / o / "summary.json").read_bytes() for o in ("a", "b"))
    ok = a == b and codes[0] == codes[1]
    record(9, ok, f"summary {len(a)} bytes, identical {a == b}, status {json.loads(a)['status']}")
    assert ok
