import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.interpolate import RegularGridInterpolator

from membrane_lab.errors import EllipticityViolation, ValidationError
from membrane_lab.model import PresetError, make_field, parse_preset, sigma_matrix, validate_field


def _field_2d(sigma, beta=1.0, theta=0.5, gamma=0.0, b=0.0):
    return make_field(sigma, [b, 0.0], beta, [theta], gamma, dim_y=1)


def test_identity_sigma_gives_identity_matrix():
    fld = _field_2d([[1.0, 0.0], [0.0, 1.0]])
    assert np.array_equal(sigma_matrix(fld, 0.0, 0.3, [0.1]), np.eye(2))


def test_sigma_matrix_known_example():
    fld = _field_2d([[0.6, 0.8], [1.0, 0.0]])
    s = sigma_matrix(fld, 0.0, 0.0, [0.0])
    assert s[0, 0] == pytest.approx(1.0, abs=1e-15)
    assert s[0, 1] == s[1, 0] == pytest.approx(0.6, abs=1e-15)
    assert s[1, 1] == pytest.approx(1.0, abs=1e-15)


coef = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.lists(coef, min_size=6, max_size=6), st.floats(-2, 2), st.floats(-2, 2))
def test_sigma_matrix_symmetric_with_exact_diagonal(vals, x, y):
    s = np.array(vals).reshape(2, 3)
    if np.sum(s[0] ** 2) < 1e-6:
        s[0, 0] = 1.0
    fld = make_field(s.tolist(), [0.0, 0.0], 0.0, [0.0], 0.0, dim_y=1,
                     bounds={"sigma00_floor": 1e-9})
    out = sigma_matrix(fld, 0.0, x, [y])
    assert np.array_equal(out, out.T)
    assert out[0, 0] == float(np.sum(s[0] * s[0]))
    assert np.all(np.linalg.eigvalsh(out) > -1e-12)


def test_ellipticity_floor_enforced():
    fld = make_field([[{"preset": "sinusoidal", "c0": 0.0, "amp": 1.0, "x": 1.0}]], [0.0], 0.0, [],
                     0.0, dim_y=0, bounds={"sigma00_floor": 0.25})
    with pytest.raises(EllipticityViolation):
        sigma_matrix(fld, 0.0, 0.0)
    assert sigma_matrix(fld, 0.0, math.pi / 2)[0, 0] == pytest.approx(1.0)


def _py_preset(spec, t, x, y):
    u = spec.get("shift", 0.0) + spec.get("t", 0.0) * t + spec.get("x", 0.0) * x + sum(
        w * v for w, v in zip(spec.get("y", []), y))
    c0, amp = spec.get("c0", 0.0), spec.get("amp", 1.0)
    kind = spec["preset"]
    if kind == "affine":
        return min(max(c0 + amp * u, spec["lo"]), spec["hi"])
    if kind == "sinusoidal":
        return c0 + amp * math.sin(u)
    if kind == "rational":
        return c0 + amp * u * u / (1 + u * u)
    return c0 + amp * max(0.0, 1 - abs(u))


PRESET_CASES = [
    {"preset": "affine", "c0": 0.5, "amp": 2.0, "lo": -1.0, "hi": 1.5, "x": 1.0, "y": [0.5]},
    {"preset": "sinusoidal", "c0": 1.0, "amp": 0.3, "t": 2.0, "x": -1.0, "y": [0.0]},
    {"preset": "rational", "c0": 0.2, "amp": 1.5, "shift": 0.1, "x": 3.0, "y": [1.0]},
    {"preset": "bump", "c0": 1.0, "amp": -0.5, "x": 2.0, "y": [0.0]},
]


@pytest.mark.parametrize("spec", PRESET_CASES, ids=lambda s: s["preset"])
def test_presets_match_python_oracle(spec):
    fld = make_field([[1.0], [1.0]], [0.0, 0.0], spec, [0.0], 0.0, dim_y=1)
    rng = np.random.default_rng(3)
    ts, xs, ys = rng.uniform(0, 2, 200), rng.uniform(-2, 2, 200), rng.uniform(-2, 2, (200, 1))
    got = fld.evaluate_row(fld.layout.beta, ts, xs, ys)
    want = [_py_preset(spec, t, x, y) for t, x, y in zip(ts, xs, ys)]
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-13)
    lo, hi = parse_preset(spec, 1).value_range()
    assert np.all(got >= lo - 1e-12) and np.all(got <= hi + 1e-12)


def test_table_matches_regular_grid_interpolator():
    tx, xx = np.linspace(0, 1, 5), np.linspace(-1, 2, 7)
    vals = np.add.outer(np.sin(3 * tx), xx ** 2)
    spec = {"preset": "table", "axes": ["t", "x"], "lo": [0.0, -1.0], "hi": [1.0, 2.0],
            "values": vals.tolist()}
    fld = make_field([[1.0]], [0.0], spec, [], 0.0, dim_y=0)
    rng = np.random.default_rng(1)
    ts, xs = rng.uniform(0, 1, 300), rng.uniform(-1, 2, 300)
    got = fld.evaluate_row(fld.layout.beta, ts, xs, np.zeros((300, 0)))
    want = RegularGridInterpolator((tx, xx), vals)(np.column_stack([ts, xs]))
    np.testing.assert_allclose(got, want, atol=1e-12)
    # outside the grid the value is clamped to the edge
    edge = fld.evaluate_row(fld.layout.beta, np.array([5.0]), np.array([-9.0]), np.zeros((1, 0)))
    assert edge[0] == pytest.approx(vals[-1, 0])


def test_missing_bounds_come_from_exact_ranges():
    fld = make_field([[{"preset": "sinusoidal", "c0": 2.0, "amp": 0.5, "x": 1.0}]], [0.3], -4.0, [],
                     {"preset": "bump", "c0": 1.0, "amp": 2.0, "x": 1.0}, dim_y=0)
    bd = fld.bounds
    assert bd.sigma == 2.5 and bd.b == 0.3 and bd.beta == 4.0 and bd.gamma == 3.0
    assert bd.sigma00_floor == pytest.approx(2.25) and bd.sigma00_max == pytest.approx(6.25)
    assert bd.gamma_floor == 1.0


@pytest.mark.parametrize("bad", [
    {"preset": "nope"},
    {"preset": "affine", "x": 1.0, "y": []},
    {"preset": "constant"},
    {"preset": "sinusoidal", "bogus": 1.0, "y": []},
    True,
    "1.0",
])
def test_malformed_presets_rejected(bad):
    with pytest.raises(PresetError):
        parse_preset(bad, 0)


def test_validate_field_accepts_consistent_bounds():
    fld = _field_2d([[1.0, 0.2], [0.0, 1.0]], beta={"preset": "sinusoidal", "amp": 2.0, "x": 1.0,
                                                    "y": [0.0]})
    out = validate_field(fld, (0, 1), (-3, 3), n_points=2000)
    assert out["sigma00_min"] == pytest.approx(1.04)
    assert out["beta_abs_max"] <= 2.0


def test_validate_field_flags_understated_bound():
    fld = make_field([[1.0]], [0.0], {"preset": "sinusoidal", "amp": 2.0, "x": 1.0}, [], 0.0,
                     dim_y=0, bounds={"beta": 1.0})
    with pytest.raises(ValidationError) as exc:
        validate_field(fld, (0, 1), (-3, 3), n_points=500)
    assert exc.value.invariant == "bounded"


def test_validate_field_flags_negative_gamma():
    fld = make_field([[1.0]], [0.0], 0.0, [], {"preset": "sinusoidal", "amp": 1.0, "x": 1.0},
                     dim_y=0)
    with pytest.raises(ValidationError) as exc:
        validate_field(fld, (0, 1), (-3, 3), n_points=500)
    assert exc.value.invariant == "gamma-nonnegative"
