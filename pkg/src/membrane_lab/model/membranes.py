"""Membrane density and the finite window of interface positions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..errors import NonPositiveDensity, ValidationError, WindowTooSmall
from .coefficients import Preset, compile_presets, eval_component_batch, parse_preset

PLACEMENT_RULES = ("integral", "inverse")


@dataclass(frozen=True, eq=False)
class MembraneDensity:
    """Spacing profile d(x) of the membranes, a preset acting on x only."""

    preset: Preset
    d_min: float
    d_max: float
    lipschitz_const: float
    rows: np.ndarray = field(repr=False)
    table: np.ndarray = field(repr=False)

    @classmethod
    def from_spec(cls, spec: Any, d_min: float | None = None, d_max: float | None = None,
                  lipschitz_const: float | None = None) -> "MembraneDensity":
        p = parse_preset(spec, 0)
        if p.w_t != 0.0 or (p.kind == "table" and p.axes != ("x",)):
            raise ValueError("membrane density may depend on x only")
        lo, hi = p.value_range()
        rows, table = compile_presets([p], 0)
        dens = cls(p,
                   lo if d_min is None else float(d_min),
                   hi if d_max is None else float(d_max),
                   p.lipschitz() if lipschitz_const is None else float(lipschitz_const),
                   rows, table)
        if dens.d_min <= 0.0:
            raise NonPositiveDensity(f"density floor d_min = {dens.d_min:g} is not positive")
        if dens.d_max < dens.d_min:
            raise ValidationError("density-range", "d_max is below d_min")
        return dens

    @classmethod
    def constant(cls, value: float) -> "MembraneDensity":
        return cls.from_spec(float(value))

    def __call__(self, x):
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        flat = np.ascontiguousarray(xs.ravel())
        out = eval_component_batch(self.rows, 0, self.table, np.zeros_like(flat), flat,
                                   np.zeros((flat.size, 0)))
        out = out.reshape(xs.shape)
        return float(out[0]) if np.ndim(x) == 0 else out

    def validate(self, x_lo: float, x_hi: float, n_points: int = 10_000, seed: int = 0) -> None:
        """Spot-check the declared range and Lipschitz constant on [x_lo, x_hi]."""
        from scipy.stats import qmc

        pts = qmc.Halton(d=2, scramble=True, seed=seed).random(n_points)
        xa = x_lo + (x_hi - x_lo) * pts[:, 0]
        xb = x_lo + (x_hi - x_lo) * pts[:, 1]
        da = self(xa)
        db = self(xb)
        slack = 1e-12 * max(1.0, self.d_max)
        if da.min() <= 0.0:
            raise NonPositiveDensity(f"d({xa[np.argmin(da)]:g}) = {da.min():g} is not positive")
        if da.min() < self.d_min - slack or da.max() > self.d_max + slack:
            raise ValidationError("density-range",
                                  f"sampled d in [{da.min():g}, {da.max():g}] leaves declared "
                                  f"[{self.d_min:g}, {self.d_max:g}]")
        gap = np.abs(xa - xb)
        ok = gap > 0
        slope = np.abs(da - db)[ok] / gap[ok]
        if slope.size and slope.max() > self.lipschitz_const * (1 + 1e-9) + 1e-12:
            raise ValidationError("density-lipschitz",
                                  f"sampled slope {slope.max():g} exceeds declared "
                                  f"{self.lipschitz_const:g}")

    def describe(self) -> dict:
        return {"d": self.preset.describe(), "d_min": self.d_min, "d_max": self.d_max,
                "lipschitz": self.lipschitz_const}


def _simpson_cells(f, left: np.ndarray, width: float | np.ndarray, tol: float,
                   n_start: int = 2, n_max: int = 1 << 22) -> np.ndarray:
    """Integrate f over cells [left, left + width] with per-cell error below tol.

    Composite Simpson on every cell, doubled until the Richardson estimate
    |S_2n - S_n| / 15 falls below tol; the extrapolated value is returned.
    Only cells that have not converged are refined further.
    """
    left = np.asarray(left, dtype=float)
    width = np.broadcast_to(np.asarray(width, dtype=float), left.shape).copy()

    def simpson(lo, w, n):
        h = w / n
        nodes = lo[:, None] + h[:, None] * np.arange(n + 1)[None, :]
        vals = f(nodes.ravel()).reshape(nodes.shape)
        wts = np.ones(n + 1)
        wts[1:-1:2] = 4.0
        wts[2:-1:2] = 2.0
        return (vals @ wts) * h / 3.0

    out = np.empty_like(left)
    todo = np.arange(left.size)
    n = n_start
    coarse = simpson(left, width, n)
    while todo.size:
        fine = simpson(left[todo], width[todo], 2 * n)
        err = np.abs(fine - coarse) / 15.0
        done = err <= tol
        out[todo[done]] = fine[done] + (fine[done] - coarse[done]) / 15.0
        if 2 * n >= n_max:
            out[todo[~done]] = fine[~done]
            break
        todo = todo[~done]
        coarse = fine[~done]
        n *= 2
    return out


@dataclass(frozen=True, eq=False)
class MembraneFamily:
    """Sorted interface positions a_k for k in [k_min, k_max]."""

    epsilon: float
    points: np.ndarray
    window: tuple[int, int]
    density: MembraneDensity
    rule: str = "integral"

    def __post_init__(self):
        self.points.setflags(write=False)

    def __len__(self) -> int:
        return self.points.size

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.window[0], self.window[1] + 1)

    def spacing_ratios(self) -> np.ndarray:
        return np.diff(self.points) / self.epsilon

    def check_invariants(self, tol: float = 1e-9) -> None:
        pts = self.points
        if pts.size and np.any(np.diff(pts) <= 0):
            raise ValidationError("membranes-increasing", "points are not strictly increasing")
        ratio = self.spacing_ratios()
        if ratio.size == 0:
            return
        d = self.density
        if ratio.min() < d.d_min - tol or ratio.max() > d.d_max + tol:
            raise ValidationError("membranes-separated",
                                  f"spacing/eps in [{ratio.min():g}, {ratio.max():g}] leaves "
                                  f"[{d.d_min:g}, {d.d_max:g}]")
        # the integral rule tracks d on the eps*k lattice, the inverse rule tracks d(a_k)
        if self.rule == "integral":
            abscissa = self.epsilon * self.indices[:-1]
        else:
            abscissa = pts[:-1]
        dev = np.abs(ratio - d(abscissa))
        # a gap averages d over an x-interval of length eps (integral rule) or
        # eps*d (inverse rule), so it deviates from the endpoint value by at most half that times L
        bound = 0.5 * d.lipschitz_const * max(1.0, d.d_max) * self.epsilon + tol
        if dev.max() > bound:
            raise ValidationError("membranes-density",
                                  f"|spacing/eps - d| = {dev.max():g} exceeds {bound:g}")

    def nearest(self, x: float) -> int:
        """Position (0-based) of the membrane closest to x."""
        j = int(np.searchsorted(self.points, x))
        if j == 0:
            return 0
        if j == self.points.size:
            return j - 1
        return j if self.points[j] - x < x - self.points[j - 1] else j - 1

    def describe(self) -> dict:
        return {"epsilon": self.epsilon, "window": list(self.window), "count": len(self),
                "first": float(self.points[0]), "last": float(self.points[-1]),
                "rule": self.rule}


def _inverse_positions(d: MembraneDensity, eps: float, k_lo: int, k_hi: int) -> np.ndarray:
    """a_k with int_0^{a_k} dx/d(x) = eps*k, by Newton steps on every cell."""
    inv = lambda x: 1.0 / d(x)
    tol = 1e-13 * eps

    def march(start, steps, sign):
        pos = [start]
        a = start
        for _ in range(steps):
            guess = a + sign * eps * d(a)
            for _ in range(50):
                lo, w = (a, guess - a) if sign > 0 else (guess, a - guess)
                g = _simpson_cells(inv, np.array([lo]), w, tol)[0] - eps
                new = guess - sign * g * d(guess)
                if abs(new - guess) <= 1e-14 * max(1.0, abs(new)):
                    guess = new
                    break
                guess = new
            a = guess
            pos.append(a)
        return pos

    up = march(0.0, max(k_hi, 0), +1.0)
    down = march(0.0, max(-k_lo, 0), -1.0)
    allpts = down[::-1][:-1] + up
    ks = np.arange(-(len(down) - 1), len(up))
    sel = (ks >= k_lo) & (ks <= k_hi)
    return np.asarray(allpts)[sel]


def build_membranes(d: MembraneDensity, eps: float, x_lo: float, x_hi: float,
                    rule: str = "integral") -> MembraneFamily:
    """Membranes covering [x_lo - eps*d_max, x_hi + eps*d_max].

    ``rule="integral"`` places a_k at the integral of d over [0, eps*k];
    ``rule="inverse"`` solves int_0^{a_k} dx/d = eps*k instead, so that the
    gap after a_k is eps*d(a_k) to first order even when d varies.
    """
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {eps}")
    if not x_lo < 0.0 < x_hi:
        raise ValueError("the window must satisfy x_lo < 0 < x_hi")
    if rule not in PLACEMENT_RULES:
        raise ValueError(f"unknown placement rule {rule!r}")
    if d.d_min <= 0.0:
        raise NonPositiveDensity(f"density floor d_min = {d.d_min:g} is not positive")
    lo = x_lo - eps * d.d_max
    hi = x_hi + eps * d.d_max
    k_lo = int(math.floor(lo / (eps * d.d_min))) - 1
    k_hi = int(math.ceil(hi / (eps * d.d_min))) + 1
    if rule == "integral":
        # integrate cell by cell on each side of 0, then accumulate
        up_cells = np.arange(0, max(k_hi, 0)) * eps
        down_cells = -np.arange(1, max(-k_lo, 0) + 1) * eps
        tol = 1e-12 * eps
        up = np.concatenate([[0.0], np.cumsum(_simpson_cells(d, up_cells, eps, tol))])
        down = -np.cumsum(_simpson_cells(d, down_cells, eps, tol))
        pts = np.concatenate([down[::-1], up])
        ks = np.arange(-down.size, up.size)
    else:
        pts = _inverse_positions(d, eps, k_lo, k_hi)
        ks = np.arange(k_lo, k_lo + pts.size)
    keep = (pts >= lo) & (pts <= hi)
    pts = np.ascontiguousarray(pts[keep])
    ks = ks[keep]
    if pts.size < 3:
        raise WindowTooSmall(f"only {pts.size} membranes fit in [{lo:g}, {hi:g}]")
    fam = MembraneFamily(float(eps), pts, (int(ks[0]), int(ks[-1])), d, rule)
    fam.check_invariants()
    return fam


def window_halfwidth(drift_bound: float, sigma00_max: float, horizon: float,
                     z: float = 5.1) -> float:
    """Distance a path can travel before ``horizon`` except with tiny probability.

    Uses the reflection-free Gaussian tail P(|N| > z) < 1e-6 for z = 5.1 on top
    of the worst-case drift.  ``drift_bound`` must already include the
    membrane-induced drift.
    """
    return horizon * drift_bound + z * math.sqrt(sigma00_max * horizon)
