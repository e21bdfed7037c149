"""Coefficient presets compiled to a flat numeric program.

Every scalar coefficient component is one row of a float64 matrix so that
numba kernels can evaluate it without calling back into Python.  A row is

    [kind, c0, amp, lo, hi, shift, table_offset, 0, w_t, w_x, w_y1, ..., w_y4]

and the non-constant presets act on the linear argument
``u = shift + w_t*t + w_x*x + sum_i w_yi*y_i``:

    constant     c0
    affine       clip(c0 + amp*u, lo, hi)
    sinusoidal   c0 + amp*sin(u)
    rational     c0 + amp*u**2/(1 + u**2)
    bump         c0 + amp*max(0, 1 - |u|)
    table        multilinear interpolation on a uniform grid (clamped)

Coefficients may depend on at most the first four Y components; passing them
as scalars keeps the evaluator free of array loops, which numba compiles
far better inside the hot stepping loops.

Tables live in a separate flat array: ``[ndim, axis ids, sizes, lows, highs,
values...]`` starting at ``table_offset``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numba as nb
import numpy as np

KIND_CONSTANT = 0
KIND_AFFINE = 1
KIND_SINUSOIDAL = 2
KIND_RATIONAL = 3
KIND_BUMP = 4
KIND_TABLE = 5

PRESETS = {
    "constant": KIND_CONSTANT,
    "affine": KIND_AFFINE,
    "sinusoidal": KIND_SINUSOIDAL,
    "rational": KIND_RATIONAL,
    "bump": KIND_BUMP,
    "table": KIND_TABLE,
}

ROW_HEADER = 8
MAX_Y_ARGS = 4
ROW_WIDTH = ROW_HEADER + 2 + MAX_Y_ARGS
# max |d/du u^2/(1+u^2)|, attained at u = 1/sqrt(3)
_RATIONAL_SLOPE = 3.0 * math.sqrt(3.0) / 8.0


class PresetError(ValueError):
    """Raised for a malformed preset description; the caller adds the key path."""


@nb.njit(cache=True, inline="always")
def _axis_cell(tab, off, a, t, x, y1, y2, y3, y4):
    """(cell index, fractional position, stride) of the query along table axis a."""
    ndim = int(tab[off])
    ax = int(tab[off + 1 + a])
    if ax == 0:
        v = t
    elif ax == 1:
        v = x
    elif ax == 2:
        v = y1
    elif ax == 3:
        v = y2
    elif ax == 4:
        v = y3
    else:
        v = y4
    n = int(tab[off + 1 + ndim + a])
    lo = tab[off + 1 + 2 * ndim + a]
    hi = tab[off + 1 + 3 * ndim + a]
    stride = 1
    for b in range(a + 1, ndim):
        stride *= int(tab[off + 1 + ndim + b])
    if n == 1:
        return 0, 0.0, stride
    pos = (v - lo) / (hi - lo) * (n - 1)
    if pos <= 0.0:
        return 0, 0.0, stride
    if pos >= n - 1:
        return n - 2, 1.0, stride
    i = int(math.floor(pos))
    return i, pos - i, stride


@nb.njit(cache=True, inline="always")
def _table_eval(tab, off, t, x, y1, y2, y3, y4):
    # allocation-free multilinear interpolation; cell data are recomputed per corner
    ndim = int(tab[off])
    val_at = off + 1 + 4 * ndim
    total = 0.0
    for corner in range(1 << ndim):
        w = 1.0
        flat = 0
        for a in range(ndim):
            i, fr, stride = _axis_cell(tab, off, a, t, x, y1, y2, y3, y4)
            if (corner >> a) & 1:
                if int(tab[off + 1 + ndim + a]) == 1:
                    w = 0.0
                    break
                w *= fr
                flat += (i + 1) * stride
            else:
                w *= 1.0 - fr
                flat += i * stride
        if w != 0.0:
            total += w * tab[val_at + flat]
    return total


@nb.njit(cache=True, inline="always")
def eval_analytic(rows, i, tab, t, x, y1, y2, y3, y4):
    """Evaluate row i for fields without tables."""
    kind = rows[i, 0]
    c0 = rows[i, 1]
    if kind == 0.0:
        return c0
    u = (rows[i, 5] + rows[i, 8] * t + rows[i, 9] * x + rows[i, 10] * y1 + rows[i, 11] * y2
         + rows[i, 12] * y3 + rows[i, 13] * y4)
    amp = rows[i, 2]
    if kind == 1.0:
        return min(max(c0 + amp * u, rows[i, 3]), rows[i, 4])
    if kind == 2.0:
        return c0 + amp * math.sin(u)
    if kind == 3.0:
        return c0 + amp * u * u / (1.0 + u * u)
    # bump
    return c0 + amp * max(1.0 - abs(u), 0.0)


@nb.njit(cache=True, inline="always")
def eval_component(rows, i, tab, t, x, y1, y2, y3, y4):
    """Evaluate row i, tables included."""
    if rows[i, 0] == 5.0:
        return _table_eval(tab, int(rows[i, 6]), t, x, y1, y2, y3, y4)
    return eval_analytic(rows, i, tab, t, x, y1, y2, y3, y4)


@nb.njit(cache=True, inline="always")
def y_args(y):
    """First four Y components as scalars, zero-padded."""
    n = y.shape[0]
    return (y[0] if n > 0 else 0.0, y[1] if n > 1 else 0.0,
            y[2] if n > 2 else 0.0, y[3] if n > 3 else 0.0)


@nb.njit(cache=True)
def eval_component_batch(rows, i, tab, ts, xs, ys):
    out = np.empty(ts.shape[0])
    for n in range(ts.shape[0]):
        y1, y2, y3, y4 = y_args(ys[n])
        out[n] = eval_component(rows, i, tab, ts[n], xs[n], y1, y2, y3, y4)
    return out


def evaluator_for(rows: np.ndarray):
    """The cheapest evaluator able to handle every row; kernels take it as an argument.

    Keeping the table branch out of table-free programs lets numba optimise
    the stepping loops far better (roughly a threefold speed-up).
    """
    return eval_component if np.any(rows[:, 0] == KIND_TABLE) else eval_analytic


@dataclass(frozen=True)
class Preset:
    """One scalar coefficient component in parsed form."""

    kind: str
    c0: float = 0.0
    amp: float = 0.0
    lo: float = -math.inf
    hi: float = math.inf
    shift: float = 0.0
    w_t: float = 0.0
    w_x: float = 0.0
    w_y: tuple = ()
    # table only
    axes: tuple = ()
    lows: tuple = ()
    highs: tuple = ()
    values: Any = None

    def value_range(self) -> tuple[float, float]:
        """Exact range of the preset over all of (t, x, y) space."""
        k = self.kind
        if k == "constant":
            return self.c0, self.c0
        if k == "affine":
            if self.w_t == 0 and self.w_x == 0 and not any(self.w_y):
                v = min(max(self.c0 + self.amp * self.shift, self.lo), self.hi)
                return v, v
            return self.lo, self.hi
        if k == "sinusoidal":
            return self.c0 - abs(self.amp), self.c0 + abs(self.amp)
        if k in ("rational", "bump"):
            return self.c0 + min(0.0, self.amp), self.c0 + max(0.0, self.amp)
        vals = np.asarray(self.values, dtype=float)
        return float(vals.min()), float(vals.max())

    def lipschitz(self) -> float:
        """Upper bound of the Euclidean Lipschitz constant in (t, x, y)."""
        k = self.kind
        wnorm = math.sqrt(self.w_t**2 + self.w_x**2 + sum(w * w for w in self.w_y))
        if k == "constant":
            return 0.0
        if k in ("affine", "sinusoidal", "bump"):
            return abs(self.amp) * wnorm
        if k == "rational":
            return abs(self.amp) * wnorm * _RATIONAL_SLOPE
        vals = np.asarray(self.values, dtype=float)
        total = 0.0
        for a in range(vals.ndim):
            n = vals.shape[a]
            if n < 2:
                continue
            step = (self.highs[a] - self.lows[a]) / (n - 1)
            slope = np.abs(np.diff(vals, axis=a)).max() / step
            total += slope**2
        return math.sqrt(total)

    def describe(self) -> dict:
        if self.kind == "constant":
            return {"preset": "constant", "value": self.c0}
        out = {"preset": self.kind}
        if self.kind == "table":
            out.update(axes=list(self.axes), lo=list(self.lows), hi=list(self.highs),
                       values=np.asarray(self.values).tolist())
            return out
        out.update(c0=self.c0, amp=self.amp, shift=self.shift, t=self.w_t, x=self.w_x,
                   y=list(self.w_y))
        if self.kind == "affine":
            out.update(lo=self.lo, hi=self.hi)
        return out


def _axis_id(name: str, dim_y: int) -> int:
    if name == "t":
        return 0
    if name == "x":
        return 1
    if name.startswith("y"):
        try:
            j = int(name[1:])
        except ValueError:
            raise PresetError(f"unknown table axis {name!r}") from None
        if 1 <= j <= min(dim_y, MAX_Y_ARGS):
            return 1 + j
    raise PresetError(f"unknown table axis {name!r}")


def parse_preset(spec: Any, dim_y: int) -> Preset:
    """Turn a config value (number or inline table) into a :class:`Preset`."""
    if isinstance(spec, bool):
        raise PresetError("expected a number or a preset table")
    if isinstance(spec, (int, float)):
        return Preset("constant", c0=float(spec))
    if not isinstance(spec, Mapping):
        raise PresetError("expected a number or a preset table")
    kind = spec.get("preset")
    if kind not in PRESETS:
        raise PresetError(f"unknown preset {kind!r}; choose from {sorted(PRESETS)}")
    known = {"preset", "value", "c0", "amp", "lo", "hi", "shift", "t", "x", "y",
             "axes", "values"}
    extra = set(spec) - known
    if extra:
        raise PresetError(f"unexpected keys {sorted(extra)}")
    if kind == "constant":
        if "value" not in spec:
            raise PresetError("constant preset needs 'value'")
        return Preset("constant", c0=float(spec["value"]))
    if kind == "table":
        axes = tuple(spec.get("axes", ()))
        if not axes:
            raise PresetError("table preset needs 'axes'")
        for a in axes:
            _axis_id(a, dim_y)
        lows = tuple(float(v) for v in spec.get("lo", ()))
        highs = tuple(float(v) for v in spec.get("hi", ()))
        vals = np.asarray(spec.get("values"), dtype=float)
        if len(lows) != len(axes) or len(highs) != len(axes):
            raise PresetError("table 'lo'/'hi' must match 'axes'")
        if vals.ndim != len(axes):
            raise PresetError("table 'values' must have one nesting level per axis")
        if any(h <= l for l, h in zip(lows, highs)):
            raise PresetError("table needs hi > lo on every axis")
        if not np.all(np.isfinite(vals)):
            raise PresetError("table values must be finite")
        return Preset("table", axes=axes, lows=lows, highs=highs, values=vals)
    w_y = tuple(float(v) for v in spec.get("y", [0.0] * dim_y))
    if len(w_y) != dim_y:
        raise PresetError(f"'y' weights must have length {dim_y}")
    if any(w_y[MAX_Y_ARGS:]):
        raise PresetError(f"coefficients may depend on y1..y{MAX_Y_ARGS} only")
    p = Preset(
        kind,
        c0=float(spec.get("c0", 0.0)),
        amp=float(spec.get("amp", 1.0)),
        lo=float(spec.get("lo", -math.inf)),
        hi=float(spec.get("hi", math.inf)),
        shift=float(spec.get("shift", 0.0)),
        w_t=float(spec.get("t", 0.0)),
        w_x=float(spec.get("x", 0.0)),
        w_y=w_y,
    )
    if kind == "affine" and not (math.isfinite(p.lo) and math.isfinite(p.hi)):
        if p.w_t or p.w_x or any(p.w_y):
            raise PresetError("affine preset needs finite 'lo' and 'hi' to stay bounded")
    if p.lo > p.hi:
        raise PresetError("'lo' exceeds 'hi'")
    return p


def compile_presets(presets: Sequence[Preset], dim_y: int) -> tuple[np.ndarray, np.ndarray]:
    """Pack presets into the (rows, table) arrays consumed by the kernels."""
    rows = np.zeros((len(presets), ROW_WIDTH))
    tab: list[float] = [0.0]  # keep the array non-empty
    for i, p in enumerate(presets):
        rows[i, 0] = PRESETS[p.kind]
        rows[i, 1] = p.c0
        rows[i, 2] = p.amp
        rows[i, 3] = p.lo
        rows[i, 4] = p.hi
        rows[i, 5] = p.shift
        rows[i, 8] = p.w_t
        rows[i, 9] = p.w_x
        wy = p.w_y[:MAX_Y_ARGS]
        rows[i, 10:10 + len(wy)] = wy
        if p.kind == "table":
            vals = np.asarray(p.values, dtype=float)
            rows[i, 6] = len(tab)
            tab.append(float(len(p.axes)))
            tab.extend(float(_axis_id(a, dim_y)) for a in p.axes)
            tab.extend(float(n) for n in vals.shape)
            tab.extend(p.lows)
            tab.extend(p.highs)
            tab.extend(vals.ravel().tolist())
    rows.setflags(write=False)
    table = np.asarray(tab)
    table.setflags(write=False)
    return rows, table


class FieldLayout:
    """Row indices of each coefficient inside a compiled field program."""

    def __init__(self, dim_y: int, m: int):
        self.dim_y = dim_y
        self.m = m
        self.b0 = (dim_y + 1) * m
        self.beta = self.b0 + dim_y + 1
        self.theta0 = self.beta + 1
        self.gamma = self.theta0 + dim_y
        self.n_rows = self.gamma + 1

    def sigma(self, i: int, l: int) -> int:
        return i * self.m + l


@dataclass(frozen=True)
class CoefficientBounds:
    """Declared sup-norms and floors; validated by sampling, never proven."""

    sigma: float
    b: float
    beta: float
    theta: float
    gamma: float
    sigma00_floor: float
    sigma00_max: float
    gamma_floor: float = 0.0


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Coefficients (sigma, b, beta, theta, gamma) of the membrane system.

    ``sigma`` has ``dim_y + 1`` rows (row 0 drives X) and ``m`` columns.
    """

    dim_y: int
    m: int
    sigma_presets: tuple
    b_presets: tuple
    beta_preset: Preset
    theta_presets: tuple
    gamma_preset: Preset
    bounds: CoefficientBounds
    rows: np.ndarray = field(repr=False)
    table: np.ndarray = field(repr=False)

    @property
    def evaluator(self):
        return evaluator_for(self.rows)

    @property
    def layout(self) -> FieldLayout:
        return FieldLayout(self.dim_y, self.m)

    def _y(self, y) -> np.ndarray:
        y = np.zeros(self.dim_y) if y is None else np.asarray(y, dtype=float).reshape(self.dim_y)
        return y

    def _eval(self, row: int, t, x, y) -> float:
        return float(eval_component_batch(self.rows, row, self.table, np.array([float(t)]),
                                          np.array([float(x)]), self._y(y)[None, :])[0])

    def sigma(self, t, x, y=None) -> np.ndarray:
        lay = self.layout
        return np.array([[self._eval(lay.sigma(i, l), t, x, y) for l in range(self.m)]
                         for i in range(self.dim_y + 1)])

    def b(self, t, x, y=None) -> np.ndarray:
        return np.array([self._eval(self.layout.b0 + i, t, x, y) for i in range(self.dim_y + 1)])

    def beta(self, t, x, y=None) -> float:
        return self._eval(self.layout.beta, t, x, y)

    def theta(self, t, x, y=None) -> np.ndarray:
        return np.array([self._eval(self.layout.theta0 + i, t, x, y) for i in range(self.dim_y)])

    def gamma(self, t, x, y=None) -> float:
        return self._eval(self.layout.gamma, t, x, y)

    def evaluate_row(self, row: int, ts, xs, ys) -> np.ndarray:
        """Vectorised evaluation of one program row at many points."""
        ts = np.ascontiguousarray(ts, dtype=float)
        xs = np.ascontiguousarray(xs, dtype=float)
        ys = np.ascontiguousarray(np.asarray(ys, dtype=float).reshape(len(ts), self.dim_y))
        return eval_component_batch(self.rows, row, self.table, ts, xs, ys)

    def describe(self) -> dict:
        return {
            "dim_y": self.dim_y,
            "m": self.m,
            "sigma": [[p.describe() for p in row] for row in self.sigma_presets],
            "b": [p.describe() for p in self.b_presets],
            "beta": self.beta_preset.describe(),
            "theta": [p.describe() for p in self.theta_presets],
            "gamma": self.gamma_preset.describe(),
        }


def _sup(presets) -> float:
    return max((max(abs(lo), abs(hi)) for lo, hi in (p.value_range() for p in presets)),
               default=0.0)


def _sigma00_range(row0: Sequence[Preset]) -> tuple[float, float]:
    lo = 0.0
    hi = 0.0
    for p in row0:
        a, b = p.value_range()
        hi += max(a * a, b * b)
        lo += 0.0 if a <= 0.0 <= b else min(a * a, b * b)
    return lo, hi


def make_field(sigma, b, beta, theta, gamma, dim_y: int | None = None,
               bounds: Mapping[str, float] | None = None) -> CoefficientField:
    """Build a field from preset specs (numbers or preset dicts).

    ``sigma`` is a nested list with ``d + 1`` rows.  Missing bounds are
    taken from the exact preset ranges; declared ones are kept as given and
    checked later by :func:`membrane_lab.model.validate_field`.
    """
    sigma = [list(r) for r in sigma]
    if dim_y is None:
        dim_y = len(sigma) - 1
    if len(sigma) != dim_y + 1:
        raise PresetError(f"sigma must have {dim_y + 1} rows")
    m = len(sigma[0])
    if m < 1 or any(len(r) != m for r in sigma):
        raise PresetError("sigma rows must all have the same positive length")
    b = list(b) if isinstance(b, (list, tuple)) else [b] * (dim_y + 1)
    theta = list(theta) if isinstance(theta, (list, tuple)) else [theta] * dim_y
    if len(b) != dim_y + 1:
        raise PresetError(f"b must have {dim_y + 1} entries")
    if len(theta) != dim_y:
        raise PresetError(f"theta must have {dim_y} entries")

    sig_p = tuple(tuple(parse_preset(s, dim_y) for s in r) for r in sigma)
    b_p = tuple(parse_preset(v, dim_y) for v in b)
    beta_p = parse_preset(beta, dim_y)
    theta_p = tuple(parse_preset(v, dim_y) for v in theta)
    gamma_p = parse_preset(gamma, dim_y)

    s00_lo, s00_hi = _sigma00_range(sig_p[0])
    derived = {
        "sigma": _sup([p for r in sig_p for p in r]),
        "b": _sup(b_p),
        "beta": _sup([beta_p]),
        "theta": _sup(theta_p),
        "gamma": _sup([gamma_p]),
        "sigma00_floor": s00_lo,
        "sigma00_max": s00_hi,
        "gamma_floor": max(0.0, gamma_p.value_range()[0]),
    }
    if bounds:
        unknown = set(bounds) - set(derived)
        if unknown:
            raise PresetError(f"unknown bound keys {sorted(unknown)}")
        derived.update({k: float(v) for k, v in bounds.items()})

    flat = [p for r in sig_p for p in r] + list(b_p) + [beta_p] + list(theta_p) + [gamma_p]
    rows, table = compile_presets(flat, dim_y)
    return CoefficientField(dim_y, m, sig_p, b_p, beta_p, theta_p, gamma_p,
                            CoefficientBounds(**derived), rows, table)


def sigma_matrix(fld: CoefficientField, t, x, y=None) -> np.ndarray:
    """Sigma = sigma sigma^T at one point, with the ellipticity floor enforced."""
    from ..errors import EllipticityViolation

    s = fld.sigma(t, x, y)
    out = s @ s.T
    # keep (0,0) as the plain sum of squares of row 0 and force exact symmetry
    out[0, 0] = float(np.sum(s[0] * s[0]))
    out = 0.5 * (out + out.T)
    if out[0, 0] < fld.bounds.sigma00_floor:
        raise EllipticityViolation(
            f"Sigma00 = {out[0, 0]:g} below the floor {fld.bounds.sigma00_floor:g} at "
            f"t={t:g}, x={x:g}")
    return out


def validate_field(fld: CoefficientField, t_range, x_range, y_range=None,
                   n_points: int = 10_000, seed: int = 0) -> dict:
    """Check declared bounds, gamma >= 0 and the Sigma00 floor on a Halton sample.

    Returns the sampled extrema.  Raises a :class:`ValidationError` subclass
    naming the first invariant that fails.
    """
    from scipy.stats import qmc

    from ..errors import EllipticityViolation, ValidationError

    dy = fld.dim_y
    pts = qmc.Halton(d=2 + dy, scramble=True, seed=seed).random(n_points)
    ts = t_range[0] + (t_range[1] - t_range[0]) * pts[:, 0]
    xs = x_range[0] + (x_range[1] - x_range[0]) * pts[:, 1]
    if dy:
        lo, hi = (np.asarray(r, dtype=float) for r in (y_range or ([-1.0] * dy, [1.0] * dy)))
        ys = lo + (hi - lo) * pts[:, 2:]
    else:
        ys = np.zeros((n_points, 0))
    lay = fld.layout
    ev = lambda r: fld.evaluate_row(r, ts, xs, ys)
    sig = np.stack([np.stack([ev(lay.sigma(i, l)) for l in range(fld.m)], axis=1)
                    for i in range(dy + 1)], axis=1)  # (n, d+1, m)
    bvals = np.stack([ev(lay.b0 + i) for i in range(dy + 1)], axis=1)
    beta = ev(lay.beta)
    theta = np.stack([ev(lay.theta0 + i) for i in range(dy)], axis=1) if dy else np.zeros((n_points, 0))
    gamma = ev(lay.gamma)
    bd = fld.bounds
    slack = 1e-12
    for name, vals, bound in (("sigma", sig, bd.sigma), ("b", bvals, bd.b), ("beta", beta, bd.beta),
                              ("theta", theta, bd.theta), ("gamma", gamma, bd.gamma)):
        if vals.size and np.abs(vals).max() > bound * (1 + slack) + slack:
            raise ValidationError("bounded", f"|{name}| reaches {np.abs(vals).max():g} above "
                                             f"the declared {bound:g}")
    if gamma.min() < 0.0:
        raise ValidationError("gamma-nonnegative", f"gamma reaches {gamma.min():g}")
    s00 = np.sum(sig[:, 0, :] ** 2, axis=1)
    if bd.sigma00_floor <= 0.0 or s00.min() < bd.sigma00_floor * (1 - slack):
        raise EllipticityViolation(f"Sigma00 reaches {s00.min():g}; floor {bd.sigma00_floor:g}")
    return {"sigma00_min": float(s00.min()), "sigma00_max": float(s00.max()),
            "gamma_min": float(gamma.min()), "beta_abs_max": float(np.abs(beta).max())}
