import math
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from conftest import make_exp
from membrane_lab.analysis import (Check, ConvergenceRow, ConvergenceTable, DistanceReport,
                                   convergence_study, ks_distance, ks_to_law,
                                   limit_self_test, local_time_functional_check,
                                   null_ks_threshold, strictly_decreasing, time_change_collapse,
                                   wasserstein1)
from membrane_lab.config import SimConfig, load_experiment, parse_experiment, scenario_path
from membrane_lab.errors import EmptySample, MissingLocalTimes, RegimeMismatch
from membrane_lab.limit_solvers import solve_homogenized_sde
from membrane_lab.membrane_sim import run_prelimit
from membrane_lab.model import ExtReal, LimitKind, LimitSpec, MembraneDensity, make_field


def test_ks_examples():
    assert ks_distance([1, 2, 3], [2, 3, 4], n_boot=0).value == pytest.approx(1 / 3)
    assert ks_distance([0, 1], [5, 6], n_boot=0).value == 1.0
    assert ks_distance([3, 1, 2], [1, 2, 3], n_boot=0).value == 0.0


def test_w1_examples():
    assert wasserstein1([0.0], [1.0], n_boot=0).value == 1.0
    assert wasserstein1([0, 0, 0], [0, 2, 2], n_boot=0).value == pytest.approx(4 / 3)


def test_distances_match_scipy():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=3000), rng.normal(0.1, 1.2, size=2000)
    assert ks_distance(a, b, n_boot=0).value == pytest.approx(stats.ks_2samp(a, b).statistic, abs=1e-15)
    assert ks_to_law(a, stats.norm.cdf, n_boot=0).value == pytest.approx(
        stats.kstest(a, "norm").statistic, abs=1e-15)
    c = rng.normal(size=2000)
    assert wasserstein1(c, b, n_boot=0).value == pytest.approx(stats.wasserstein_distance(c, b),
                                                               rel=1e-12)
    # unequal sizes go through thinning; close to the exact value
    assert wasserstein1(a, b, n_boot=0).value == pytest.approx(stats.wasserstein_distance(a, b),
                                                               abs=0.01)


samples = st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=40)


@settings(max_examples=80, deadline=None)
@given(samples, samples, samples)
def test_ks_symmetric_and_triangle(a, b, c):
    d = lambda u, v: ks_distance(u, v, n_boot=0).value
    assert d(a, b) == d(b, a)
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-12
    assert 0.0 <= d(a, b) <= 1.0


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 20).flatmap(lambda n: st.tuples(*[st.lists(st.floats(-50, 50), min_size=n,
                                                                  max_size=n)] * 3)))
def test_w1_symmetric_and_triangle(abc):
    a, b, c = abc
    d = lambda u, v: wasserstein1(u, v, n_boot=0).value
    assert d(a, b) == pytest.approx(d(b, a))
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-9


def test_bootstrap_interval_contains_value():
    rng = np.random.default_rng(4)
    rep = ks_distance(rng.normal(size=500), rng.normal(0.3, 1, size=400), n_boot=100, seed=1)
    assert rep.bootstrap_ci[0] <= rep.value <= rep.bootstrap_ci[1]
    assert rep.n_a == 500 and rep.n_b == 400
    assert ks_to_law(rng.normal(size=50), stats.norm.cdf, n_boot=20).n_b == 0


def test_report_invariants():
    with pytest.raises(ValueError):
        DistanceReport("KS", 1.2, 1, 1, (0, 2))
    with pytest.raises(ValueError):
        DistanceReport("KS", 0.5, 1, 1, (0.6, 0.7))
    with pytest.raises(ValueError):
        DistanceReport("L2", 0.5, 1, 1, (0.5, 0.5))


def test_empty_samples_rejected():
    with pytest.raises(EmptySample):
        ks_distance([], [1.0])
    with pytest.raises(EmptySample):
        wasserstein1([1.0], [])


def test_null_threshold():
    assert null_ks_threshold(10_000) == pytest.approx(0.0136)
    assert null_ks_threshold(100, 100) == pytest.approx(1.36 * math.sqrt(0.02))


def test_table_sorting_and_slope():
    rows = [ConvergenceRow(e, e, 0.0, 0.5 * e, (0.4 * e, 0.6 * e), 100) for e in (0.05, 0.2, 0.1)]
    rows.append(ConvergenceRow(0.025, 0.025, 0.0, 0.0001, (0.0, 0.02), 100))
    t = ConvergenceTable.build("demo", "KS", rows, noise_floor=0.01)
    assert list(t.epsilons) == [0.2, 0.1, 0.05, 0.025]
    assert t.fitted_rows == 3
    assert t.slope == pytest.approx(1.0)
    assert math.isnan(ConvergenceTable.build("x", "KS", rows[:1]).slope)


def test_strictly_decreasing():
    assert strictly_decreasing([3, 2, 1]) and not strictly_decreasing([3, 3, 1])


def _exact_ltime_batch(eps, density):
    times = np.linspace(0, 1, 51)
    n = 4
    lt = np.broadcast_to(times / (eps * density), (n, times.size)).copy()
    return SimpleNamespace(times=times, x=np.zeros((n, times.size)), y=np.zeros((n, times.size, 0)),
                           local_time_total=lt, meta={"scheme": "test", "epsilon": eps},
                           kept=lambda: np.ones(n, dtype=bool))


def test_ltime_check_exact_functional():
    bm = make_field([[1.0]], [0.0], 0.0, [], 0.0, dim_y=0)
    for dval in (1.0, 1e3):
        chk = local_time_functional_check(_exact_ltime_batch(0.1, dval), bm, MembraneDensity.constant(dval))
        assert chk.mean_sup == pytest.approx(0.0, abs=1e-12)
        assert chk.limit_terminal_mean == pytest.approx(1.0 / dval)


def test_ltime_check_on_simulated_paths():
    exp = make_exp(beta=1.0, eps=0.1, n_paths=300, seed=2, grid_points=51)
    run = run_prelimit(exp)
    chk = local_time_functional_check(run.batch, exp.field, exp.density)
    assert chk.epsilon == 0.1 and chk.n_paths == 300
    assert chk.mean_sup < 0.1
    assert chk.terminal_mean == pytest.approx(1.0, abs=0.1)


def test_ltime_check_needs_membrane_local_times():
    fld = make_field([[1.0]], [0.0], 1.0, [], 0.0, dim_y=0)
    dens = MembraneDensity.constant(1.0)
    spec = LimitSpec(fld, dens, ExtReal(1.0), ExtReal(0.0), ExtReal(0.0), LimitKind.HOMOGENIZED_SDE)
    batch, _ = solve_homogenized_sde(spec, SimConfig(n_paths=5, grid_points=5))
    with pytest.raises(MissingLocalTimes):
        local_time_functional_check(batch, fld, dens)
    b = _exact_ltime_batch(0.1, 1.0)
    b.meta = {"scheme": "test"}
    with pytest.raises(MissingLocalTimes):
        local_time_functional_check(b, fld, dens)
    b.kept = lambda: np.zeros(4, dtype=bool)
    with pytest.raises(EmptySample):
        local_time_functional_check(b, fld, dens, epsilon=0.1)


def test_limit_self_test_rejection_rate():
    fld = make_field([[1.0]], [0.0], 1.0, [], 0.0, dim_y=0)
    spec = LimitSpec(fld, MembraneDensity.constant(1.0), ExtReal(1.0), ExtReal(0.0), ExtReal(0.0),
                     LimitKind.HOMOGENIZED_SDE)
    out = limit_self_test(spec, SimConfig(n_paths=2000, grid_points=2, limit_steps=100, master_seed=5),
                          repeats=20)
    assert out["threshold"] == pytest.approx(null_ks_threshold(2000, 2000))
    assert out["fraction_below"] >= 0.8


def test_small_homogenized_study_structure():
    exp = load_experiment(scenario_path("exa1"))
    res = convergence_study(exp, epsilons=[0.2, 0.4], n_paths=2000, n_boot=20)
    t = res.table
    assert list(t.epsilons) == [0.4, 0.2]
    assert {"ks_limit_solver", "ks_exact", "mean", "sd"} <= set(t.rows[0].extra)
    assert res.limit_samples.size == 2000
    assert [c.name for c in res.checks] == ["ks-decreasing", "final-ks"]
    assert all(isinstance(c, Check) for c in res.checks)


def test_study_kind_must_match_coupling():
    exp = load_experiment(scenario_path("exa1"))
    with pytest.raises(RegimeMismatch):
        convergence_study(replace(exp, converge={"kind": "degenerate-ode"}))
    with pytest.raises(RegimeMismatch):
        convergence_study(replace(exp, converge={"kind": "spline"}))


COLLAPSE = """
[coefficients]
sigma = [[1.0]]
beta = 0.0
gamma = 1.0

[membranes]
density = 1.0

[scaling]
epsilon = 0.1
delta_rule = {coef = 1.0, power = 1.0}
lambda_rule = {coef = 1.0, power = 0.5}

[simulation]
n_paths = 400
seed = 8
scheme = "stripwalk"
"""


def test_time_change_collapse_trend():
    exp = parse_experiment(COLLAPSE)
    t = time_change_collapse(exp, [0.2, 0.05, 0.0125], level=1.0)
    med = t.distances
    assert strictly_decreasing(med)
    # A grows like t + sqrt(eps) * L with L of order t/eps, so A^{-1}(1) ~ sqrt(eps)
    assert med[-1] < 0.2
    with pytest.raises(RegimeMismatch):
        time_change_collapse(load_experiment(scenario_path("exa1")), [0.1])
