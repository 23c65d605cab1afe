import numpy as np
import pytest

from linfhom.effective import (HbarTable, TableCone, argmin_region, build_table, convexity_report, effective_cone,
                               flat_spot_halfwidth_1d, homogenization_experiment, load_table, lower_convex_envelope,
                               oracle_hbar_separable_1d, oracle_metric_1d, table_from_function, window_error)
from linfhom.eikonal import ConeProvider, solve_distance
from linfhom.errors import EmptySublevelError, RangeTooSmallError
from linfhom.grid import Grid
from linfhom.media import HamiltonianSpec, sample_environment

SINE = lambda y: np.sin(2 * np.pi * y)


def sq(P):
    return np.sum(np.asarray(P) ** 2, axis=1)


# ---------------------------------------------------------------- oracles


def test_separable_oracle_examples():
    assert oracle_hbar_separable_1d(SINE, 0.0) == pytest.approx(1.0, abs=1e-9)
    assert flat_spot_halfwidth_1d(SINE) == pytest.approx(2 * np.sqrt(2) / np.pi, abs=1e-6)
    mu = oracle_hbar_separable_1d(SINE, 2.0)
    assert mu == pytest.approx(4.03, abs=0.01)
    y = (np.arange(200_000) + 0.5) / 200_000
    assert np.mean(np.sqrt(mu - SINE(y))) == pytest.approx(2.0, abs=1e-9)


def test_metric_oracle_examples():
    assert oracle_metric_1d([1.0], 2.5) == pytest.approx(2.5)
    assert oracle_metric_1d([1.0, 2.0], 1.0) == pytest.approx(4 / 3)
    assert oracle_metric_1d([1.0, 2.0], 0.0) == 0.0


# ---------------------------------------------------------------- tables


@pytest.fixture(scope="module")
def sine_table():
    g = Grid.torus(1.0, 200, dim=1)
    env = sample_environment("periodic", {"profile": "sine"}, 0, g)
    with pytest.warns(Warning):
        return build_table(HamiltonianSpec("separable", 1), env, Grid.box([-3], [3], 0.25), [0.1, 0.03, 0.01], g,
                           estimator="extrapolated")


def test_p_only_table_exact():
    spec = HamiltonianSpec.quadratic(matrix=[[1.0, 0.2], [0.2, 2.0]], center=[0.1, 0.0])
    pg = Grid.box([-1, -1], [1, 1], 0.5)
    t = build_table(spec, None, pg, [0.1, 0.05], Grid.torus(1.0, 8, dim=2))
    P = pg.points() - [0.1, 0.0]
    exact = np.einsum("ij,jk,ik->i", P, np.array([[1.0, 0.2], [0.2, 2.0]]), P)
    assert np.allclose(t.values, exact, atol=1e-12)
    assert t.crude_violations() == 0


def test_separable_table_matches_oracle(sine_table):
    ref = np.array([oracle_hbar_separable_1d(SINE, p) for p in sine_table.points[:, 0]])
    assert np.all(np.abs(sine_table.values - ref) <= 0.05 * np.maximum(ref, 1.0))
    assert sine_table.crude_violations() == 0


def test_separable_flat_spot(sine_table):
    region = argmin_region(sine_table)
    assert region.flat_spot
    L0 = 2 * np.sqrt(2) / np.pi
    ends = region.points[[0, -1], 0]
    # the detected ends sit on nodes of the 0.25-spaced p-grid
    assert np.all(np.abs(np.abs(ends) - L0) <= 0.25)
    assert region.p_star[0] == ends[0]


def test_table_round_trip(tmp_path, sine_table):
    back = load_table(sine_table.save(tmp_path / "t.json"))
    assert np.array_equal(back.values, sine_table.values) and back.estimator == "extrapolated"
    assert back.grid == sine_table.grid


def test_table_plotdata(tmp_path, sine_table):
    path = sine_table.write_plotdata(tmp_path / "hbar.dat")[0]
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# x:") and len(lines) == 3 + len(sine_table.values)


# ---------------------------------------------------------------- convexity and argmin


def test_convexity_of_convex_tables():
    pg = Grid.box([-2, -2], [2, 2], 0.25)
    t = table_from_function(sq, pg)
    assert convexity_report(t).max_violation <= 1e-12
    t = table_from_function(lambda P: np.linalg.norm(P, axis=1), pg)
    assert convexity_report(t).max_violation <= 1e-12


def test_convexity_noise_bound():
    pg = Grid.box([-2, -2], [2, 2], 0.25)
    eta = 0.01
    rng = np.random.default_rng(0)
    t = table_from_function(lambda P: sq(P) + rng.uniform(0, eta, len(P)), pg)
    rep = convexity_report(t)
    assert rep.max_violation <= 2 * eta
    fixed = t.convexify()
    assert convexity_report(fixed).max_violation <= 1e-12
    assert np.all(fixed.values <= t.raw + 1e-15)


def test_lower_convex_envelope_1d():
    x = np.linspace(-1, 1, 5)[:, None]
    v = np.array([1.0, 0.0, 0.8, 0.0, 1.0])
    assert np.allclose(lower_convex_envelope(x, v), [1.0, 0.0, 0.0, 0.0, 1.0])


def test_argmin_quadratic_and_aniso():
    pg = Grid.box([-1, -1], [1, 1], 0.25)
    region = argmin_region(table_from_function(sq, pg), tol=0.25 ** 2 / 2)
    assert np.array_equal(region.points, [[0.0, 0.0]]) and not region.flat_spot
    t2 = Grid.torus(2.0, 16, dim=2)
    iso = sample_environment("periodic", {"profile": "sine", "amplitude": 0.0, "offset": 1.0, "target": "matrix"}, 0,
                             t2)
    t = build_table(HamiltonianSpec("anisotropic-homogeneous", 2), iso, pg, [0.1, 0.05], t2)
    region = argmin_region(t)
    assert np.array_equal(region.points, [[0.0, 0.0]]) and not region.flat_spot


def test_argmin_on_boundary_raises():
    t = table_from_function(lambda P: P[:, 0], Grid.box([-1], [1], 0.25))
    with pytest.raises(RangeTooSmallError):
        argmin_region(t)


# ---------------------------------------------------------------- effective cones


def test_effective_cone_examples():
    pg = Grid.box([-3, -3], [3, 3], 0.125)
    norm = table_from_function(lambda P: np.linalg.norm(P, axis=1), pg)
    y = np.array([0.6, -0.8])
    assert effective_cone(norm, 2.0, y) == pytest.approx(2.0, abs=0.01)
    ell = table_from_function(lambda P: P[:, 0] ** 2 + 4 * P[:, 1] ** 2, pg)
    assert effective_cone(ell, 1.0, [0.0, 1.0]) == pytest.approx(0.5, abs=1e-12)
    assert effective_cone(ell, 1.0, [0.0, 0.0]) == 0.0


def test_effective_cone_homogeneous_and_monotone():
    pg = Grid.box([-3, -3], [3, 3], 0.25)
    prov = TableCone(table_from_function(lambda P: sq(P - [0.3, 0.0]), pg))
    Y = np.random.default_rng(2).normal(size=(50, 2))
    base = prov.cone(1.0, Y)
    assert np.allclose(prov.cone(1.0, 2.5 * Y), 2.5 * base, rtol=1e-12, atol=1e-12)
    assert np.all(prov.cone(1.5, Y) >= base - 1e-12)


def test_effective_cone_range_errors():
    pg = Grid.box([-1, -1], [1, 1], 0.25)
    t = table_from_function(sq, pg)
    with pytest.raises(RangeTooSmallError):
        effective_cone(t, 1.5, [1.0, 0.0])
    with pytest.raises(EmptySublevelError):
        effective_cone(t, -1.0, [1.0, 0.0])


def test_effective_cone_residual_refines():
    # the cone of a tabulated |p|^2 solves the table equation better on finer p-grids
    res = []
    for hp in (0.25, 0.125):
        prov = TableCone(table_from_function(sq, Grid.box([-2, -2], [2, 2], hp)))
        res.append(abs(prov.cone(1.0, np.array([[1.0, 1.0]]))[0] - np.sqrt(2)))
    assert res[1] <= res[0]


# ---------------------------------------------------------------- homogenization


def test_homogenization_p_only():
    spec = HamiltonianSpec.quadratic(dim=2, center=[0.3, 0.1])
    cone = ConeProvider.from_spec(spec)
    keep = {}
    rep = homogenization_experiment(spec, [(0, None)], 1.0, [0, 0], [1.0, 0.5], ([-0.5, -0.5], [0.5, 0.5]), cone,
                                    h=0.05, keep=keep)
    for (eps, _), d in keep.items():
        i = rep.eps.index(eps)
        assert rep.errors[i, 0] <= 2 * d.error_bound
    assert np.all(rep.errors >= 0) and not rep.failures


def test_homogenization_metric_1d():
    tor = Grid.torus(64.0, 64 * 128, dim=1)
    media = [(s, sample_environment("iid-checkerboard", {"values": [1, 2], "cell": 1 / 32}, s, tor)) for s in range(4)]
    cone = ConeProvider.from_spec(HamiltonianSpec.norm(matrix=[[16 / 9]]))
    assert cone.cone(1.0, np.array([[1.0]]))[0] == pytest.approx(0.75)
    rep = homogenization_experiment(HamiltonianSpec("metric", 1), media, 1.0, [0.0], [1, 0.5, 0.25, 0.125],
                                    ([-0.5], [0.5]), cone, h=1 / 128)
    ok, _ = rep.trend()
    assert ok and rep.max_errors[-1] <= 0.05


def test_homogenization_report_csv(tmp_path):
    spec = HamiltonianSpec.norm(dim=1)
    rep = homogenization_experiment(spec, [(0, None), (1, None)], 1.0, [0.0], [1.0, 0.5], ([-0.5], [0.5]),
                                    ConeProvider.from_spec(spec), h=0.05)
    rows = rep.to_csv(tmp_path / "h.csv").read_text().splitlines()
    assert rows[0] == "eps,seed,sup_error" and len(rows) == 5
    assert rep.write_plotdata(tmp_path / "h.dat").read_text().count("\n") == 5


def test_homogenization_rejects_increasing_eps():
    spec = HamiltonianSpec.norm(dim=1)
    with pytest.raises(ValueError):
        homogenization_experiment(spec, [(0, None)], 1.0, [0.0], [0.5, 1.0], ([-0.5], [0.5]),
                                  ConeProvider.from_spec(spec), h=0.05)


def test_window_error_exact_cone():
    spec = HamiltonianSpec.norm(dim=1)
    d = solve_distance(spec, None, 1.0, [0.0], Grid.box([-1], [1], 0.05))
    assert window_error(d, ConeProvider.from_spec(spec), 1.0, [0.0], [-0.5], [0.5]) <= 1e-9
