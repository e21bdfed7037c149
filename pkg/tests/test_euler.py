import numpy as np
import pytest

from conftest import make_exp
from membrane_lab.errors import StepTooLarge
from membrane_lab.membrane_sim import run_prelimit, simulate_euler_mollified
from membrane_lab.model import build_membranes
from membrane_lab.sim.euler import step_plan


def test_step_plan_hits_grid():
    n, stride, h = step_plan(1.0, 11, 0.003)
    assert n == 10 * stride and h <= 0.003 and n * h == pytest.approx(1.0)


def test_brownian_motion_without_membrane_effects():
    n = 20_000
    run = run_prelimit(make_exp(eps=0.5, n_paths=n, seed=3))
    x = run.batch.terminal_x()
    assert abs(x.mean()) < 4.0 / np.sqrt(n)
    assert x.var() == pytest.approx(1.0, abs=4 * np.sqrt(2.0 / n))
    assert run.batch.escape_fraction == 0.0


def test_zero_stickiness_leaves_clock_untouched():
    run = run_prelimit(make_exp(beta=1.0, gamma=2.0, eps=0.5, lam=0.0, n_paths=200))
    b = run.batch
    assert np.array_equal(b.a_functional, np.broadcast_to(b.times, b.a_functional.shape))


def test_invariants_with_stickiness():
    run = run_prelimit(make_exp(beta=1.0, gamma=2.0, eps=0.5, lam=0.5, n_paths=200))
    b = run.batch
    b.check_invariants()
    assert np.all(b.a_functional[:, 0] == 0.0)
    assert np.all(b.a_functional >= b.times - 1e-15)
    assert np.all(np.diff(b.local_time_total, axis=1) >= 0)
    assert np.all(b.a_functional[:, -1] > 1.0)


def test_permeable_membranes_push_upwards():
    # skewed membranes with delta = eps push the mean towards p*beta*Sigma00/d = 1
    run = run_prelimit(make_exp(beta=1.0, eps=0.25, n_paths=4000, seed=9))
    m = run.batch.terminal_x().mean()
    assert 0.7 < m < 1.3


def test_reproducible_and_thread_invariant():
    exp = make_exp(beta=1.0, gamma=1.0, eps=0.5, lam=0.5, n_paths=64, seed=12)
    a = run_prelimit(exp, threads=1).batch
    b = run_prelimit(exp, threads=4).batch
    for k, v in a.arrays().items():
        assert np.array_equal(v, b.arrays()[k]), k
    c = run_prelimit(exp, seed=13, threads=1).batch
    assert not np.array_equal(a.x, c.x)


def test_first_path_offsets_select_the_same_lanes():
    exp = make_exp(beta=1.0, eps=0.5, n_paths=40, seed=2)
    full = run_prelimit(exp).batch
    tail = run_prelimit(exp, first_path=25, n_paths=15).batch
    assert np.array_equal(full.x[25:], tail.x)


def test_oversized_step_rejected(unit_density, bm_field):
    exp = make_exp(eps=0.5, n_paths=4)
    fam = build_membranes(unit_density, 0.5, -3.0, 3.0)
    cfg = exp.sim.with_overrides(rho=0.01, step=1e-3)
    with pytest.raises(StepTooLarge):
        simulate_euler_mollified(bm_field, fam, exp.regime, cfg)
    with pytest.raises(StepTooLarge):
        run_prelimit(make_exp(eps=0.5, n_paths=4, extra="step = 0.01"))
