import numpy as np
import pytest
from scipy import stats

from membrane_lab.config import SimConfig, parse_experiment
from membrane_lab.errors import FrozenCoefficientRange
from membrane_lab.exit_lab import skew_exit_oracle_with_drift
from membrane_lab.membrane_sim import run_prelimit, simulate_strip_walk
from membrane_lab.model import MembraneDensity, MembraneFamily, ScalingRegime, make_field


def _family(points, eps=0.1):
    pts = np.asarray(points, dtype=float)
    return MembraneFamily(eps, pts, (0, pts.size - 1), MembraneDensity.constant(1.0))


def _walk(beta, points, n=100_000, seed=0, b=0.0, x0=0.0, delta=0.1, sojourn="exact",
          horizon=10.0):
    fld = make_field([[1.0]], [b], beta, [], 0.0, dim_y=0)
    cfg = SimConfig(initial_x=x0, horizon=horizon, n_paths=n, master_seed=seed, scheme="stripwalk",
                    grid_points=2, sojourn=sojourn)
    return simulate_strip_walk(fld, _family(points), ScalingRegime(0.1, delta, 0.0), cfg)


@pytest.mark.parametrize("beta,p", [(0.0, 0.5), (4.0, 0.7), (-4.0, 0.3)])
def test_single_visit_exit_side(beta, p):
    n = 100_000
    batch, raw = _walk(beta, [-0.1, 0.0, 0.1], n=n, seed=1)
    x = batch.x[:, -1]
    assert np.all(np.isin(x, [-0.1, 0.1])) and np.all(batch.escaped_window)
    se = np.sqrt(p * (1 - p) / n)
    assert abs(np.mean(x > 0) - p) < 3 * se


def test_exit_side_with_drift_matches_scale_function():
    n = 100_000
    batch, _ = _walk(2.0, [-0.1, 0.0, 0.2], n=n, seed=4, b=3.0)
    p = skew_exit_oracle_with_drift(0.6, 0.1, 0.2, 3.0, 1.0)
    assert abs(np.mean(batch.x[:, -1] > 0) - p) < 3 * np.sqrt(p * (1 - p) / n)


def test_visit_local_time_and_exact_sojourn_moments():
    batch, _ = _walk(4.0, [-0.1, 0.0, 0.1], n=20_000, seed=2)
    # one visit per path; with equal gaps the local time is exactly the gap
    np.testing.assert_allclose(batch.local_time_total[:, -1], 0.1, rtol=1e-12)
    # read the exit time off a fine grid: first grid time at an edge
    n = 20_000
    fld = make_field([[1.0]], [0.0], 4.0, [], 0.0, dim_y=0)
    cfg = SimConfig(horizon=0.1, n_paths=n, master_seed=2, scheme="stripwalk", grid_points=201)
    b2, _ = simulate_strip_walk(fld, _family([-0.1, 0.0, 0.1]), ScalingRegime(0.1, 0.1, 0.0), cfg)
    reached = np.abs(b2.x) >= 0.1 - 1e-12
    assert reached[:, -1].all()
    tau = b2.times[np.argmax(reached, axis=1)] - b2.times[1] / 2
    # driftless BM leaving (-a, a): mean a^2, variance 2 a^4 / 3
    var = 2 / 3 * 1e-4
    assert abs(tau.mean() - 0.01) < 4 * np.sqrt(var / n)
    assert tau.var() == pytest.approx(var, rel=0.05)


def test_mean_sojourn_mode_is_deterministic():
    fld = make_field([[1.0]], [0.0], 0.0, [], 0.0, dim_y=0)
    cfg = SimConfig(horizon=0.0105, n_paths=1000, scheme="stripwalk", grid_points=2, sojourn="mean")
    b, _ = simulate_strip_walk(fld, _family([-0.1, 0.0, 0.1]), ScalingRegime(0.1, 0.1, 0.0), cfg)
    assert np.all(np.abs(b.x[:, -1]) == 0.1)
    cfg = cfg.with_overrides(horizon=0.0095)
    b, _ = simulate_strip_walk(fld, _family([-0.1, 0.0, 0.1]), ScalingRegime(0.1, 0.1, 0.0), cfg)
    assert np.all(np.abs(b.x[:, -1]) < 0.1)


def test_entry_leg_reaches_membranes_with_brownian_odds():
    n = 40_000
    batch, _ = _walk(0.0, [-0.1, 0.0, 0.1], n=n, seed=6, x0=0.03)
    p = 0.3 + 0.7 * 0.5
    assert abs(np.mean(batch.x[:, -1] > 0) - p) < 3 * np.sqrt(p * (1 - p) / n)


def test_visit_counts_are_scale_free():
    """The number of visits before leaving a five-membrane strip does not depend on eps."""
    counts = []
    for eps, seed in ((0.1, 3), (0.05, 8)):
        fld = make_field([[1.0]], [0.0], 2.0, [], 0.0, dim_y=0)
        pts = eps * np.arange(-3, 4, dtype=float)
        fam = MembraneFamily(eps, pts, (-3, 3), MembraneDensity.constant(1.0))
        cfg = SimConfig(horizon=50.0, n_paths=20_000, master_seed=seed, scheme="stripwalk",
                        grid_points=2)
        b, _ = simulate_strip_walk(fld, fam, ScalingRegime(eps, 0.1, 0.0), cfg)
        visits = np.rint(b.local_time_total[:, -1] / eps).astype(int)
        counts.append(np.bincount(np.minimum(visits, 30), minlength=31))
    table = np.array(counts)
    table = table[:, table.sum(axis=0) > 0]
    assert stats.chi2_contingency(table).pvalue > 0.01


FROZEN_BAD = """
[coefficients]
sigma = [[1.0]]
beta = 1.0
gamma = 0.0
bounds = {{ {bounds} }}

[membranes]
density = 1.0

[scaling]
epsilon = 0.2
delta = 0.2

[simulation]
n_paths = 50
seed = 5
scheme = "stripwalk"
"""


@pytest.mark.parametrize("bounds,msg", [("beta = 0.5", "beyond its declared bound"),
                                        ("sigma00_floor = 2.0", "Sigma00 below")])
def test_frozen_coefficient_range_reported(bounds, msg):
    exp = parse_experiment(FROZEN_BAD.format(bounds=bounds))
    with pytest.raises(FrozenCoefficientRange, match=msg) as exc:
        run_prelimit(exp)
    assert "(path 0, seed 5)" in str(exc.value)
    assert exc.value.__cause__.path_index == 0
