from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from membrane_lab.errors import QueryBeyondHorizon, ValidationError
from membrane_lab.sim.timechange import (invert_time_change, local_time_sum_path, sample_at,
                                         time_changed)


def _bundle(a, x=None, ltime=None, eps=0.1):
    times = np.linspace(0.0, 1.0, a.size)
    x = times.copy() if x is None else x
    return SimpleNamespace(times=times, a_functional=a, x=x, y=np.zeros((a.size, 1)) + times[:, None],
                           local_time_total=np.zeros(a.size) if ltime is None else ltime,
                           epsilon=eps)


def test_identity_clock_inverts_to_itself():
    b = _bundle(np.linspace(0, 1, 11))
    q = np.array([0.0, 0.33, 1.0])
    np.testing.assert_allclose(invert_time_change(b, q), q)


def test_doubled_clock_halves_time():
    b = _bundle(2 * np.linspace(0, 1, 11))
    assert invert_time_change(b, 1.0)[0] == pytest.approx(0.5)
    s, x, y = time_changed(b, [1.0, 2.0])
    np.testing.assert_allclose(s, [0.5, 1.0])
    np.testing.assert_allclose(x, s)
    np.testing.assert_allclose(y[:, 0], s)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.01, 5.0), min_size=2, max_size=30), st.floats(0.0, 1.0))
def test_round_trip(incs, frac):
    a = np.concatenate([[0.0], np.cumsum(incs)])
    b = _bundle(a)
    t = frac * a[-1]
    s = invert_time_change(b, t)[0]
    assert np.interp(s, b.times, a) == pytest.approx(t, abs=1e-9 * max(1.0, a[-1]))


def test_query_beyond_horizon():
    b = _bundle(np.linspace(0, 1.5, 11))
    with pytest.raises(QueryBeyondHorizon):
        invert_time_change(b, 1.6)
    with pytest.raises(ValueError):
        invert_time_change(b, -0.1)


def test_flat_clock_rejected():
    a = np.array([0.0, 0.5, 0.5, 1.0])
    with pytest.raises(ValidationError):
        invert_time_change(_bundle(a), 0.2)


def test_sample_at_without_y():
    b = _bundle(np.linspace(0, 1, 5))
    b.y = np.zeros((5, 0))
    x, y = sample_at(b, [0.25, 0.6])
    np.testing.assert_allclose(x, [0.25, 0.6])
    assert y.shape == (2, 0)


def test_local_time_sum_path_scaling():
    lt = np.linspace(0.0, 3.0, 11)
    f = local_time_sum_path(_bundle(np.linspace(0, 1, 11), ltime=lt, eps=0.1))
    assert f(0.0) == 0.0
    assert f(1.0) == pytest.approx(0.3)
    assert f(0.55) == pytest.approx(0.165)
    zero = local_time_sum_path(_bundle(np.linspace(0, 1, 11)), epsilon=0.2)
    assert np.all(zero(np.linspace(0, 1, 7)) == 0.0)
    with pytest.raises(ValueError):
        local_time_sum_path(_bundle(np.linspace(0, 1, 3), eps=None))
