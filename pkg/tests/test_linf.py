import numpy as np
import pytest

from linfhom.eikonal import ConeProvider
from linfhom.errors import InvalidConfigError, ReachabilityError
from linfhom.grid import Grid, ScalarField
from linfhom.linf import (CdfConfig, check_cdf, construct_amle, convexity_criterion, hopf_lax, legendre,
                          random_configs)
from linfhom.media import HamiltonianSpec

NORM = ConeProvider.from_spec(HamiltonianSpec.norm(dim=2))
QUAD = ConeProvider.from_spec(HamiltonianSpec.quadratic(dim=2))


def field_of(grid, f):
    return ScalarField(grid, f(grid.points()).reshape(grid.shape))


def half_sq(P):
    return 0.5 * np.sum(P ** 2, axis=1)


# ---------------------------------------------------------------- check_cdf


@pytest.fixture(scope="module")
def unit_grid():
    return Grid.box([-1, -1], [1, 1], 0.05)


def test_cdf_cone_itself_passes(unit_grid):
    x0 = np.array([1.5, 0.2])
    u = field_of(unit_grid, lambda P: NORM.cone(0.8, P - x0))
    rep = check_cdf(u, NORM, "above", [(0.8, ([-0.5, -0.5], [0.5, 0.5]), x0)])
    assert rep.worst == pytest.approx(0.0, abs=1e-12) and rep.passed


def test_cdf_affine_passes(unit_grid):
    p = np.array([0.6, -0.3])
    u = field_of(unit_grid, lambda P: P @ p)
    configs = random_configs(unit_grid, 50, 0, NORM, lipschitz=float(np.linalg.norm(p)))
    above = check_cdf(u, NORM, "above", configs)
    below = check_cdf(u, NORM, "below", configs)
    assert above.passed and below.passed


def test_cdf_counterexample_fails(unit_grid):
    u = field_of(unit_grid, lambda P: -np.linalg.norm(P, axis=1))
    rep = check_cdf(u, NORM, "above", [(0.1, ([-0.5, -0.5], [0.5, 0.5]), [2.0, 0.0])])
    assert rep.worst > 0.3 and not rep.passed
    assert rep.witness is not None


def test_cdf_vertex_inside_window_rejected(unit_grid):
    u = field_of(unit_grid, lambda P: P[:, 0])
    with pytest.raises(InvalidConfigError):
        check_cdf(u, NORM, "above", [(1.0, ([-0.5, -0.5], [0.5, 0.5]), [0.0, 0.0])])


def test_cdf_config_round_trip():
    c = CdfConfig.make((0.5, ([-0.2, -0.1], [0.3, 0.4]), [1.0, 1.0]))
    assert CdfConfig.make((c.mu, (c.lo, c.hi), c.vertex)) == c
    assert c.to_dict()["mu"] == 0.5


def test_random_configs_deterministic(unit_grid):
    a = random_configs(unit_grid, 20, 7, QUAD, lipschitz=1.0)
    b = random_configs(unit_grid, 20, 7, QUAD, lipschitz=1.0)
    assert a == b and len(a) == 20
    for c in a:
        inside = np.all((np.asarray(c.vertex) >= c.lo) & (np.asarray(c.vertex) <= c.hi))
        assert not inside


# ---------------------------------------------------------------- construct_amle


def test_amle_affine_exact():
    g = Grid.box([-1, -1], [1, 1], 1 / 16)
    f = lambda P: 0.4 * P[:, 0] - 0.7 * P[:, 1] + 0.1
    res = construct_amle(NORM, g, f, tol=1e-10, validate=30)
    assert np.max(np.abs(res.field.values - f(g.points()).reshape(g.shape))) <= 1e-9
    assert res.converged and res.unique


def test_amle_cone_order_h():
    g = Grid.box([-1, -1], [1, 1], 1 / 16)
    x0 = np.array([2.0, 0.5])
    f = lambda P: QUAD.cone(1.0, P - x0)
    res = construct_amle(QUAD, g, f, tol=1e-10, validate=30)
    assert np.max(np.abs(res.field.values - f(g.points()).reshape(g.shape))) <= 1e-10 + 2 / 16


def test_amle_aronsson_coarse():
    g = Grid.box([-1, -1], [1, 1], 1 / 16)
    f = lambda P: np.cbrt(P[:, 0]) ** 4 - np.cbrt(P[:, 1]) ** 4
    res = construct_amle(QUAD, g, f, tol=1e-10, validate=30)
    assert np.max(np.abs(res.field.values - f(g.points()).reshape(g.shape))) <= 0.05
    assert res.report_above.passed and res.report_below.passed


# ---------------------------------------------------------------- legendre


@pytest.fixture(scope="module")
def p_grid():
    return Grid.box([-3, -3], [3, 3], 0.05)


def test_legendre_half_square(p_grid):
    q = Grid.box([-1, -1], [1, 1], 0.1)
    L = legendre(half_sq, q, p_grid)
    assert np.max(np.abs(L.values.ravel() - half_sq(q.points()))) <= 0.05 ** 2


def test_legendre_square(p_grid):
    q = Grid.box([-1, -1], [1, 1], 0.1)
    L = legendre(lambda P: np.sum(P ** 2, axis=1), q, p_grid)
    assert np.max(np.abs(L.values.ravel() - np.sum(q.points() ** 2, axis=1) / 4)) <= 0.05 ** 2


def test_legendre_norm_sentinel(p_grid):
    q = Grid.box([-2, -2], [2, 2], 0.25)
    L = legendre(lambda P: np.linalg.norm(P, axis=1), q, p_grid)
    r = np.linalg.norm(q.points(), axis=1)
    v = L.values.ravel()
    assert np.all(v[r <= 0.99] == pytest.approx(0.0, abs=1e-12))
    assert np.all(np.isinf(v[r >= 1.01]))


def test_fenchel_young(p_grid):
    q = Grid.box([-1, -1], [1, 1], 0.1)
    H = lambda P: P[:, 0] ** 2 + 0.5 * P[:, 1] ** 2 + 0.2 * P[:, 0]
    L = legendre(H, q, p_grid)
    rng = np.random.default_rng(0)
    P = rng.uniform(-2, 2, (500, 2))
    Q = q.points()[rng.integers(0, q.size, 500)]
    lq = L(Q)
    assert np.all(np.sum(P * Q, axis=1) <= H(P) + lq + 1e-12)
    assert np.all(L.values >= -H(np.zeros((1, 2)))[0] - 1e-12)


# ---------------------------------------------------------------- hopf-lax


@pytest.fixture(scope="module")
def norm_L(p_grid):
    return legendre(lambda P: np.linalg.norm(P, axis=1), Grid.box([-1.5, -1.5], [1.5, 1.5], 0.05), p_grid)


def test_hopf_lax_constant(p_grid):
    g = Grid.box([-1, -1], [1, 1], 0.1)
    L = legendre(half_sq, Grid.box([-2, -2], [2, 2], 0.05), p_grid)
    u = field_of(g, lambda P: np.full(len(P), 3.0))
    assert np.allclose(hopf_lax(u, L, 0.3).values, 3.0, atol=1e-12)
    assert hopf_lax(u, L, 0.0) is u or np.array_equal(hopf_lax(u, L, 0.0).values, u.values)


def test_hopf_lax_cone(norm_L):
    g = Grid.box([-1, -1], [1, 1], 0.05)
    u = field_of(g, lambda P: 0.7 * np.linalg.norm(P, axis=1))
    t = 0.3
    P = g.points()
    targets = np.flatnonzero(np.max(np.abs(P), axis=1) <= 0.6)
    out = hopf_lax(u, norm_L, t, targets=targets).values.ravel()[targets]
    ref = 0.7 * (np.linalg.norm(P[targets], axis=1) + t)
    assert np.max(np.abs(out - ref)) <= 2 * 0.05


def test_hopf_lax_small_time_limit(norm_L):
    g = Grid.box([-1, -1], [1, 1], 0.05)
    u = field_of(g, lambda P: np.sin(2 * P[:, 0]) + P[:, 1] ** 2)
    inner = np.flatnonzero(np.max(np.abs(g.points()), axis=1) <= 0.8)
    gaps = [np.max(np.abs(hopf_lax(u, norm_L, t, targets=inner).values.ravel()[inner] - u.values.ravel()[inner]))
            for t in (0.1, 0.05)]
    assert gaps[1] < gaps[0]


def test_hopf_lax_monotone(norm_L):
    g = Grid.box([-1, -1], [1, 1], 0.1)
    rng = np.random.default_rng(1)
    u = ScalarField(g, rng.normal(size=g.shape))
    v = ScalarField(g, u.values + rng.uniform(0, 1, g.shape))
    assert np.all(hopf_lax(u, norm_L, 0.3).values <= hopf_lax(v, norm_L, 0.3).values)


def test_hopf_lax_semigroup(p_grid):
    g = Grid.box([-1, -1], [1, 1], 0.05)
    L = legendre(half_sq, Grid.box([-2, -2], [2, 2], 0.05), p_grid)
    u = field_of(g, lambda P: np.abs(P[:, 0]) - 0.5 * P[:, 1])
    probes = np.flatnonzero(np.max(np.abs(g.points()), axis=1) <= 0.3)
    both = hopf_lax(u, L, 0.4, targets=probes).values.ravel()[probes]
    steps = hopf_lax(hopf_lax(u, L, 0.2), L, 0.2, targets=probes).values.ravel()[probes]
    assert np.max(np.abs(both - steps)) <= 2 * 0.05


def test_hopf_lax_unreachable():
    g = Grid.box([-1, -1], [1, 1], 0.1)
    L = legendre(lambda P: np.linalg.norm(P, axis=1), Grid.box([-1.5, -1.5], [1.5, 1.5], 0.05),
                 Grid.box([-3, -3], [3, 3], 0.05))
    u = field_of(g, lambda P: P[:, 0])
    masked = np.zeros(g.shape, dtype=bool)
    masked[0, 0] = True
    with pytest.raises(ReachabilityError):
        hopf_lax(u, L, 0.05, mask=masked, targets=[g.size - 1])


# ---------------------------------------------------------------- convexity criterion


def test_convexity_criterion_affine():
    # slope and times chosen so the maximiser lies on every displacement lattice h / t
    g = Grid.box([-1, -1], [1, 1], 0.02)
    L = legendre(half_sq, Grid.box([-1, -1], [1, 1], 0.025), Grid.box([-2, -2], [2, 2], 0.025))
    u = field_of(g, lambda P: P @ np.array([0.3, -0.2]))
    rep = convexity_criterion(u, L, [0.2, 0.4, 0.8], [[0.0, 0.0], [0.1, -0.1]])
    assert rep.worst <= 1e-10 and rep.passed(1e-10)


def test_convexity_criterion_cone_and_concave(norm_L):
    g = Grid.box([-1, -1], [1, 1], 0.05)
    times = [0.1, 0.2, 0.3]
    cone = field_of(g, lambda P: np.linalg.norm(P, axis=1))
    assert convexity_criterion(cone, norm_L, times, [[0.2, 0.1]]).worst <= 1e-10
    concave = field_of(g, lambda P: -np.linalg.norm(P, axis=1))
    rep = convexity_criterion(concave, norm_L, times, [[0.0, 0.0], [0.2, 0.1]])
    assert rep.worst > 0
