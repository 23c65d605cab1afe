import numpy as np
import pytest

from linfhom.corrector import (CorrectorSolution, hbar_point, p_regularity_report, richardson, solve_discounted,
                               subcorrector_upper_bound)
from linfhom.errors import BoundaryStencilError, ConvergenceError
from linfhom.grid import Grid
from linfhom.media import HamiltonianSpec, NodeHamiltonian, sample_environment

SEP = HamiltonianSpec("separable", 1)
METRIC1 = HamiltonianSpec("metric", 1)


@pytest.fixture(scope="module")
def sine():
    g = Grid.torus(1.0, 1000, dim=1)
    return g, sample_environment("periodic", {"profile": "sine"}, 0, g)


@pytest.fixture(scope="module")
def sine_solution(sine):
    g, env = sine
    return solve_discounted(SEP, env, [0.0], 1e-2, g)


def crude_bounds_hold(sol: CorrectorSolution, tol: float) -> bool:
    H = NodeHamiltonian(sol.spec, sol.env, sol.grid.points())
    hp = H.values(np.repeat(np.asarray(sol.p)[None], sol.grid.size, axis=0))
    mdv = -sol.delta * sol.field.values.ravel()
    return bool(np.all(mdv >= hp.min() - tol) and np.all(mdv <= hp.max() + tol))


# ---------------------------------------------------------------- solve_discounted


def test_constant_solution_for_p_only():
    g = Grid.torus(4.0, 16, dim=2)
    sol = solve_discounted(HamiltonianSpec.norm(dim=2), None, [1.0, 0.0], 0.1, g)
    assert np.allclose(sol.field.values, -10.0, atol=1e-9)
    assert sol.minus_delta_v() == pytest.approx(1.0, abs=1e-10)


def test_drift_at_zero_momentum_is_zero():
    g = Grid.torus(4.0, 16, dim=2)
    env = sample_environment("periodic", {"profile": "product-sine", "scale": 1 / (2 * np.pi), "target": "drift"},
                             0, g)
    sol = solve_discounted(HamiltonianSpec("quadratic-drift", 2), env, [0.0, 0.0], 0.1, g)
    assert np.max(np.abs(sol.field.values)) <= 1e-9


def test_separable_sine_near_one(sine_solution):
    assert 0.9 <= sine_solution.minus_delta_v() <= 1.1
    assert sine_solution.converged and sine_solution.residual < 1e-10


def test_crude_bounds(sine_solution):
    assert crude_bounds_hold(sine_solution, 1e-9)


def test_gradient_within_radius(sine_solution):
    v = sine_solution.field.values
    h = sine_solution.grid.h[0]
    slope = np.max(np.abs(np.roll(v, -1) - v)) / h
    assert slope <= sine_solution.grad_radius


def test_march_residual_monotone():
    g = Grid.torus(1.0, 100, dim=1)
    env = sample_environment("periodic", {"profile": "sine"}, 0, g)
    sol = solve_discounted(SEP, env, [0.5], 0.5, g, method="march", tol=1e-8)
    hist = np.asarray(sol.history)
    assert sol.converged and np.all(np.diff(hist) <= 1e-12 * hist[:-1])
    newton = solve_discounted(SEP, env, [0.5], 0.5, g, sigma=sol.sigma[:, 0], adapt_sigma=False)
    assert np.max(np.abs(newton.field.values - sol.field.values)) <= 1e-6


def test_rejects_bad_input():
    with pytest.raises(BoundaryStencilError):
        solve_discounted(HamiltonianSpec.norm(dim=1), None, [1.0], 0.1, Grid.box([0], [1], 0.1))
    with pytest.raises(ValueError):
        solve_discounted(HamiltonianSpec.norm(dim=1), None, [1.0], 0.0, Grid.torus(1.0, 10, dim=1))


def test_nonconvergence_reports_residual(sine):
    g, env = sine
    with pytest.raises(ConvergenceError) as info:
        solve_discounted(SEP, env, [0.3], 1e-2, g, max_iters=1, adapt_sigma=False)
    assert info.value.residual > 0 and info.value.partial is not None


# ---------------------------------------------------------------- estimates


def test_upper_bound_separable(sine_solution):
    ub = subcorrector_upper_bound(sine_solution)
    assert 1.0 <= ub <= 1.2
    assert ub >= sine_solution.minus_delta_v() - 10 * 1e-10


def test_p_only_point_and_bound_exact():
    g = Grid.torus(4.0, 16, dim=2)
    spec = HamiltonianSpec.quadratic(dim=2)
    hp = hbar_point(spec, None, [0.5, 0.3], [0.1, 0.01], g, upper_bound=True)
    assert np.allclose(hp.sequence, 0.34, atol=1e-12)
    assert hp.upper_bound == pytest.approx(0.34, abs=1e-12)


def test_separable_extrapolated_within_five_percent(sine):
    g, env = sine
    hp = hbar_point(SEP, env, [0.0], [0.1, 0.05, 0.025, 0.0125], g)
    assert abs(hp.extrapolated - 1.0) <= 0.05
    assert len(hp.sequence) == 4 and hp.window_bound in ("radius/delta", "half-period")


def test_metric_1d_near_four_thirds():
    g = Grid.torus(64.0, 1024, dim=1)
    env = sample_environment("iid-checkerboard", {"values": [1, 2]}, 0, g)
    hp = hbar_point(METRIC1, env, [1.0], [0.1, 0.05, 0.025], g)
    assert abs(hp.estimate - 4 / 3) <= 0.1 * 4 / 3


def test_hbar_point_schedule_validation(sine):
    g, env = sine
    with pytest.raises(ValueError):
        hbar_point(SEP, env, [0.0], [0.1], g)
    with pytest.raises(ValueError):
        hbar_point(SEP, env, [0.0], [0.05, 0.1], g)


def test_hbar_point_csv(tmp_path):
    g = Grid.torus(1.0, 20, dim=1)
    hp = hbar_point(HamiltonianSpec.norm(dim=1), None, [2.0], [0.5, 0.25], g)
    rows = hp.to_csv(tmp_path / "hp.csv").read_text().splitlines()
    assert rows[0] == "delta,minus_delta_v_at_0,oscillation_window,residual,iterations"
    assert len(rows) == 4 and rows[-1].startswith("# extrapolated=")


def test_richardson_recovers_power_law():
    d = [0.1, 0.05, 0.025]
    f = [2.0 + 3.0 * x ** 0.5 for x in d]
    est, alpha = richardson(d, f)
    assert est == pytest.approx(2.0, abs=1e-9) and alpha == pytest.approx(0.5, abs=1e-9)
    est, alpha = richardson(d[:2], [1.0 + x for x in d[:2]])
    assert est == pytest.approx(1.0) and alpha == 1.0


# ---------------------------------------------------------------- p regularity


def test_p_regularity_p_only():
    spec = HamiltonianSpec.quadratic(dim=1)
    pairs = [([0.3], [1.1]), ([0.5], [0.5])]
    rep = p_regularity_report(spec, None, 0.1, Grid.torus(1.0, 50, dim=1), pairs)
    R = 1.1
    assert rep.max_quotient <= 2 * R + 0.8 + 1e-9
    assert rep.max_defect <= 1e-9


def test_p_regularity_equal_pair():
    rep = p_regularity_report(HamiltonianSpec.norm(dim=1), None, 0.1, Grid.torus(1.0, 20, dim=1), [([0.7], [0.7])])
    assert rep.max_quotient == 0.0 and rep.max_defect == pytest.approx(0.0, abs=1e-12)


def test_p_regularity_separable():
    g = Grid.torus(1.0, 200, dim=1)
    env = sample_environment("periodic", {"profile": "sine"}, 0, g)
    pairs = [([0.0], [2.0]), ([0.5], [1.5]), ([0.2], [1.8]), ([1.0], [1.0])]
    rep = p_regularity_report(SEP, env, 0.05, g, pairs)
    assert rep.max_quotient <= 6.0
    assert rep.max_defect <= 10 * 1e-10


# ---------------------------------------------------------------- ergodic averaging


def test_seed_spread_shrinks_with_period():
    spreads = []
    for period in (16.0, 32.0):
        g = Grid.torus(period, int(period * 16), dim=1)
        vals = [solve_discounted(METRIC1, sample_environment("iid-checkerboard", {"values": [1, 2]}, s, g), [1.0],
                                 0.05, g).minus_delta_v() for s in range(8)]
        spreads.append(np.std(vals, ddof=1))
    assert spreads[1] < spreads[0]
