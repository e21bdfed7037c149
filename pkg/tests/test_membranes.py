import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from membrane_lab.errors import NonPositiveDensity, ValidationError
from membrane_lab.model import MembraneDensity, build_membranes, window_halfwidth

RATIONAL = {"preset": "rational", "c0": 1.0, "amp": 1.0, "x": 1.0}


def test_unit_density_gives_the_integer_lattice(unit_density):
    fam = build_membranes(unit_density, 0.1, -1.0, 1.0)
    np.testing.assert_allclose(fam.points, 0.1 * fam.indices, atol=1e-14)
    assert fam.points[0] <= -1.1 + 1e-12 and fam.points[-1] >= 1.1 - 1e-12
    assert 0.0 in fam.points


def test_density_two_doubles_the_spacing():
    fam = build_membranes(MembraneDensity.constant(2.0), 0.05, -1.0, 1.0)
    np.testing.assert_allclose(np.diff(fam.points), 0.1, atol=1e-14)
    np.testing.assert_allclose(fam.spacing_ratios(), 2.0, atol=1e-12)


def test_rational_density_first_point_matches_quadrature():
    d = MembraneDensity.from_spec(RATIONAL)
    eps = 0.1
    fam = build_membranes(d, eps, -1.0, 1.0)
    k0 = -fam.window[0]
    f = lambda x: 1.0 + x * x / (1 + x * x)
    a1, _ = quad(f, 0.0, eps, epsabs=1e-15)
    am1, _ = quad(f, 0.0, -eps, epsabs=1e-15)
    a7, _ = quad(f, 0.0, 7 * eps, epsabs=1e-15)
    assert fam.points[k0] == 0.0
    assert fam.points[k0 + 1] == pytest.approx(a1, abs=1e-12)
    assert fam.points[k0 - 1] == pytest.approx(am1, abs=1e-12)
    assert fam.points[k0 + 7] == pytest.approx(a7, abs=1e-11)


def test_inverse_rule_solves_the_reciprocal_integral():
    d = MembraneDensity.from_spec(RATIONAL)
    eps = 0.1
    fam = build_membranes(d, eps, -0.5, 0.5, rule="inverse")
    k0 = -fam.window[0]
    g = lambda x: 1.0 / (1.0 + x * x / (1 + x * x))
    for j in (1, 3, -2):
        val, _ = quad(g, 0.0, fam.points[k0 + j], epsabs=1e-15)
        assert val == pytest.approx(eps * j, abs=1e-11)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.02, 0.5), st.floats(0.2, 1.5), st.floats(0.0, 0.9), st.floats(0.5, 3.0))
def test_spacing_ratios_stay_in_density_range(eps, c0, amp_frac, freq):
    spec = {"preset": "sinusoidal", "c0": c0, "amp": amp_frac * c0, "x": freq}
    d = MembraneDensity.from_spec(spec)
    fam = build_membranes(d, eps, -1.0, 1.0)
    r = fam.spacing_ratios()
    assert np.all(np.diff(fam.points) > 0)
    assert r.min() >= d.d_min - 1e-9 and r.max() <= d.d_max + 1e-9
    # deviation from the density at the left lattice point is O(eps)
    dev = np.abs(r - d(eps * fam.indices[:-1]))
    assert dev.max() <= 0.5 * d.lipschitz_const * max(1.0, d.d_max) * eps + 1e-9


def test_nonpositive_density_rejected():
    with pytest.raises(NonPositiveDensity):
        MembraneDensity.from_spec({"preset": "sinusoidal", "c0": 0.5, "amp": 1.0, "x": 1.0})
    with pytest.raises(NonPositiveDensity):
        MembraneDensity.constant(0.0)


def test_density_validate_catches_understated_range():
    d = MembraneDensity.from_spec({"preset": "sinusoidal", "c0": 1.0, "amp": 0.5, "x": 1.0},
                                  d_max=1.2)
    with pytest.raises(ValidationError):
        d.validate(-3.0, 3.0, n_points=500)


def test_narrowest_window_still_brackets_the_origin(unit_density):
    fam = build_membranes(unit_density, 1.0, -1e-3, 1e-3)
    np.testing.assert_array_equal(fam.points, [-1.0, 0.0, 1.0])


@pytest.mark.parametrize("eps,lo,hi,rule", [(1.5, -1, 1, "integral"), (0.1, 0.2, 1, "integral"),
                                            (0.1, -1, 1, "midpoint")])
def test_bad_arguments_rejected(unit_density, eps, lo, hi, rule):
    with pytest.raises(ValueError):
        build_membranes(unit_density, eps, lo, hi, rule)


def test_nearest_membrane(unit_density):
    fam = build_membranes(unit_density, 0.1, -1.0, 1.0)
    k0 = -fam.window[0]
    assert fam.nearest(0.04) == k0
    assert fam.nearest(0.06) == k0 + 1
    assert fam.nearest(-100.0) == 0
    assert fam.nearest(100.0) == len(fam) - 1


def test_window_halfwidth_formula():
    assert window_halfwidth(2.0, 4.0, 1.0) == pytest.approx(2.0 + 5.1 * 2.0)
