"""Exit time of standard Brownian motion from the unit interval.

For BM started at xi in (0, 1) the survival function S(u) = P(T > u) has two
convergent representations:

* a spectral series sum over odd n of 4/(n pi) sin(n pi xi) exp(-n^2 pi^2 u / 2),
  fast for moderate and large u;
* a method-of-images sum of Gaussian CDF differences, fast for small u.

Sampling inverts S by safeguarded Newton iteration on the density.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

from .rng import lane_state, next_uniform

SWITCH_U = 0.12
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@nb.njit(cache=True, inline="always")
def _ncdf(z):
    return 0.5 * math.erfc(-z / _SQRT2)


@nb.njit(cache=True, inline="always")
def _npdf(z):
    return _INV_SQRT_2PI * math.exp(-0.5 * z * z)


@nb.njit(cache=True)
def survival_spectral(u, xi, tol=1e-12):
    s = 0.0
    n = 1
    while True:
        w = math.exp(-0.5 * n * n * math.pi * math.pi * u)
        term = 4.0 / (n * math.pi) * math.sin(n * math.pi * xi) * w
        s += term
        if 4.0 / (n * math.pi) * w < tol:
            break
        n += 2
    return s


@nb.njit(cache=True)
def density_spectral(u, xi, tol=1e-12):
    """-dS/du from the spectral series."""
    s = 0.0
    n = 1
    while True:
        w = math.exp(-0.5 * n * n * math.pi * math.pi * u)
        term = 2.0 * n * math.pi * math.sin(n * math.pi * xi) * w
        s += term
        if 2.0 * n * math.pi * w < tol and n > 1:
            break
        n += 2
    return s


@nb.njit(cache=True)
def survival_images(u, xi, k_max=2):
    r = math.sqrt(u)
    s = 0.0
    for k in range(-k_max, k_max + 1):
        o = 2.0 * k
        s += (_ncdf((1.0 - xi + o) / r) - _ncdf((-xi + o) / r)
              - _ncdf((1.0 + xi + o) / r) + _ncdf((xi + o) / r))
    return s


@nb.njit(cache=True)
def density_images(u, xi, k_max=2):
    r = math.sqrt(u)
    s = 0.0
    for k in range(-k_max, k_max + 1):
        o = 2.0 * k
        # d/du Phi(c/sqrt(u)) = -c/(2 u^1.5) phi(c/sqrt(u))
        for c, sgn in ((1.0 - xi + o, 1.0), (-xi + o, -1.0), (1.0 + xi + o, -1.0), (xi + o, 1.0)):
            s += sgn * (c / (2.0 * u * r)) * _npdf(c / r)
    return s


@nb.njit(cache=True)
def unit_survival(u, xi):
    if u <= 0.0:
        return 1.0
    if u < SWITCH_U:
        return survival_images(u, xi)
    return survival_spectral(u, xi)


@nb.njit(cache=True)
def unit_density(u, xi):
    if u <= 0.0:
        return 0.0
    if u < SWITCH_U:
        return density_images(u, xi)
    return density_spectral(u, xi)


@nb.njit(cache=True)
def unit_exit_quantile(v, xi):
    """u with S(u) = v, i.e. the (1 - v)-quantile of the exit time from (0, 1)."""
    lo = 0.0
    # the slowest mode bounds the tail: S(u) <= 4/pi exp(-pi^2 u/2)
    hi = max(1.0, -2.0 * math.log(v * math.pi / 4.0) / (math.pi * math.pi)) + 1.0
    while unit_survival(hi, xi) > v:
        hi *= 2.0
    u = xi * (1.0 - xi)
    for _ in range(100):
        f = unit_survival(u, xi) - v
        if f > 0.0:
            lo = u
        else:
            hi = u
        dens = unit_density(u, xi)
        step_ok = False
        if dens > 0.0:
            nu = u + f / dens
            if lo < nu < hi:
                step_ok = True
        if not step_ok:
            nu = 0.5 * (lo + hi)
        if abs(nu - u) <= 1e-13 * max(u, 1e-300) or hi - lo <= 1e-15 * hi:
            return nu
        u = nu
    return u


@nb.njit(cache=True)
def _sample_unit_exits(seed, path_index, xi, out):
    st = lane_state(seed, path_index)
    for i in range(out.size):
        out[i] = unit_exit_quantile(next_uniform(st), xi)


def sample_unit_exit_times(xi: float, n: int, seed: int = 0, path_index: int = 0) -> np.ndarray:
    """n independent exit times from (0, 1) of BM started at xi."""
    if not 0.0 < xi < 1.0:
        raise ValueError("xi must lie strictly inside (0, 1)")
    out = np.empty(n)
    _sample_unit_exits(np.uint64(seed), np.uint64(path_index), float(xi), out)
    return out


def exit_time_survival(u, xi: float) -> np.ndarray:
    """Vectorised S(u) for tests and plots."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return np.array([unit_survival(float(v), float(xi)) for v in u])


# Quantile table for the symmetric start xi = 1/2, used by the strip walk on
# uniform lattices.  p is the exit-by-time probability 1 - S(u).
TABLE_P_LO = 1e-3
TABLE_P_HI = 0.99
TABLE_SIZE = 65537
_table_cache: dict = {}


@nb.njit(cache=True)
def _build_table(n, p_lo, p_hi, out):
    for j in range(n):
        p = p_lo + (p_hi - p_lo) * j / (n - 1)
        out[j] = unit_exit_quantile(1.0 - p, 0.5)


def symmetric_quantile_table() -> np.ndarray:
    tab = _table_cache.get("half")
    if tab is None:
        tab = np.empty(TABLE_SIZE)
        _build_table(TABLE_SIZE, TABLE_P_LO, TABLE_P_HI, tab)
        tab.setflags(write=False)
        _table_cache["half"] = tab
    return tab


@nb.njit(cache=True, inline="always")
def unit_exit_from_uniform(p, xi, table):
    """Exit time from (0, 1) started at xi, given p uniform on (0, 1)."""
    if abs(xi - 0.5) < 1e-12:
        if p > TABLE_P_HI:
            # u > 0.98 here, where the next mode is below 1e-16 relative: S(u) = 4/pi exp(-pi^2 u/2)
            return -2.0 * math.log((1.0 - p) * math.pi / 4.0) / (math.pi * math.pi)
        if p >= TABLE_P_LO:
            n = table.shape[0]
            pos = (p - TABLE_P_LO) / (TABLE_P_HI - TABLE_P_LO) * (n - 1)
            j = min(int(pos), n - 2)
            f = pos - j
            return table[j] + f * (table[j + 1] - table[j])
    return unit_exit_quantile(1.0 - p, xi)
