"""Solvers for the homogenized limits.

* homogenized SDE: drift b + p*(beta, theta)*Sigma00/d, unchanged diffusion,
  and the limiting functional A_t = int (1 + q*gamma*Sigma00/d) ds;
* sticky SDE: the same process seen through A^{-1}, i.e. drift divided by
  1 + q*gamma*Sigma00/d and diffusion by its square root;
* degenerate ODE (delta/eps -> inf) with right-hand side (beta, theta)*Sigma00/d
  at time 0;
* sticky ODE (lambda/delta -> r) with right-hand side (beta, theta)/(r*gamma).

Both SDEs use plain Euler–Maruyama on the same random streams, so with
p = q = 0 they reproduce the unaugmented reference bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .errors import DensityZero, GammaFloorViolation, RegimeMismatch
from .model.coefficients import evaluator_for, y_args
from .model.regime import ExtReal, LimitKind, LimitSpec
from .sim.bundle import batch_from_arrays, empty_batch_arrays
from .sim.euler import step_plan
from .sim.parallel import run_chunks
from .sim.rng import lane_state, next_normal

MODE_HOMOGENIZED = 0
MODE_STICKY = 1


@nb.njit(cache=True, nogil=True)
def limit_sde_kernel(ev, rows, tab, evd, drows, dtab, d_floor, dim_y, m, i_b0, i_beta,
                     i_theta0, i_gamma, p_lim, q_lim, mode, h, n_steps, stride, x0, y0,
                     seed, first_path, a_stop,
                     out_x, out_y, out_l, out_wb, out_wth, out_wg, out_a, out_esc,
                     stop_t, stop_x, stop_y, status):
    n_paths = out_x.shape[0]
    sq_h = math.sqrt(h)
    sig = np.empty((dim_y + 1, m))
    dw = np.empty(m)
    drift = np.empty(dim_y + 1)
    y = np.empty(dim_y)
    y_old = np.empty(dim_y)
    wth = np.empty(dim_y)
    for p in range(n_paths):
        st = lane_state(seed, first_path + p)
        stf = st.view(np.float64)
        x = x0
        for i in range(dim_y):
            y[i] = y0[i]
            wth[i] = 0.0
        occ = 0.0
        wb = 0.0
        wg = 0.0
        a_val = 0.0
        g = 0
        out_x[p, 0] = x
        for i in range(dim_y):
            out_y[p, 0, i] = y[i]
            out_wth[p, 0, i] = 0.0
        out_l[p, 0] = 0.0
        out_wb[p, 0] = 0.0
        out_wg[p, 0] = 0.0
        out_a[p, 0] = 0.0
        code = 0
        for j in range(n_steps):
            t = j * h
            y1, y2, y3, y4 = y_args(y)
            s00 = 0.0
            for i in range(dim_y + 1):
                for l in range(m):
                    sig[i, l] = ev(rows, i * m + l, tab, t, x, y1, y2, y3, y4)
                drift[i] = ev(rows, i_b0 + i, tab, t, x, y1, y2, y3, y4)
            for l in range(m):
                s00 += sig[0, l] * sig[0, l]
            dval = evd(drows, 0, dtab, 0.0, x, 0.0, 0.0, 0.0, 0.0)
            if dval < d_floor:
                code = 1
                break
            rate = s00 / dval
            beta = ev(rows, i_beta, tab, t, x, y1, y2, y3, y4)
            gamma = ev(rows, i_gamma, tab, t, x, y1, y2, y3, y4)
            slow = 1.0 + q_lim * gamma * rate
            dx = (drift[0] + p_lim * beta * rate) * h
            for i in range(dim_y):
                th = ev(rows, i_theta0 + i, tab, t, x, y1, y2, y3, y4)
                wth[i] += th * rate * h
                drift[i + 1] = drift[i + 1] + p_lim * th * rate
            for l in range(m):
                dw[l] = sq_h * next_normal(st, stf)
            if mode == MODE_STICKY:
                dx = dx / slow
                scale = 1.0 / math.sqrt(slow)
            else:
                scale = 1.0
            noise = 0.0
            for l in range(m):
                noise += sig[0, l] * dw[l]
            x_old = x
            for i in range(dim_y):
                y_old[i] = y[i]
                incr = drift[i + 1] * h
                if mode == MODE_STICKY:
                    incr = incr / slow
                nz = 0.0
                for l in range(m):
                    nz += sig[i + 1, l] * dw[l]
                y[i] += incr + scale * nz
            x = x + dx + scale * noise
            occ += rate * h
            wb += beta * rate * h
            wg += gamma * rate * h
            a_old = a_val
            if mode == MODE_STICKY:
                a_val = (j + 1) * h
            else:
                a_val += slow * h
            if a_val >= a_stop:
                frac = (a_stop - a_old) / (a_val - a_old)
                stop_t[p] = t + frac * h
                stop_x[p] = x_old + frac * (x - x_old)
                for i in range(dim_y):
                    stop_y[p, i] = y_old[i] + frac * (y[i] - y_old[i])
                break
            if (j + 1) % stride == 0:
                g += 1
                out_x[p, g] = x
                for i in range(dim_y):
                    out_y[p, g, i] = y[i]
                    out_wth[p, g, i] = wth[i]
                out_l[p, g] = occ
                out_wb[p, g] = wb
                out_wg[p, g] = wg
                out_a[p, g] = a_val
        out_esc[p] = False
        status[p] = code


def _run_limit_sde(spec: LimitSpec, cfg, mode, threads, a_stop, first_path, n_paths):
    fld = spec.field
    dens = spec.density
    p_lim = spec.p_limit.finite("delta/eps limit")
    if mode == MODE_HOMOGENIZED and not spec.q_limit.is_finite:
        q_lim = 0.0  # A is not defined; the X, Y law does not depend on q
        track_a = False
    else:
        q_lim = spec.q_limit.finite("lambda/eps limit")
        track_a = True
    n = cfg.n_paths if n_paths is None else n_paths
    n_steps, stride, h = step_plan(cfg.horizon, cfg.grid_points, cfg.horizon / cfg.limit_steps)
    times = np.arange(cfg.grid_points) * (stride * h)
    times[-1] = cfg.horizon
    arr = empty_batch_arrays(n, cfg.grid_points, fld.dim_y)
    lay = fld.layout
    y0 = np.asarray(cfg.initial_y, dtype=float).reshape(fld.dim_y)
    head = (fld.evaluator, fld.rows, fld.table, evaluator_for(dens.rows), dens.rows, dens.table,
            0.5 * dens.d_min, fld.dim_y, fld.m, lay.b0, lay.beta, lay.theta0, lay.gamma,
            float(p_lim), float(q_lim), mode, h, n_steps, stride, float(cfg.initial_x), y0,
            np.uint64(cfg.master_seed))

    def work(s, e):
        limit_sde_kernel(*head, np.uint64(first_path + s), float(a_stop),
                         arr["x"][s:e], arr["y"][s:e], arr["ltot"][s:e], arr["wbeta"][s:e],
                         arr["wtheta"][s:e], arr["wgamma"][s:e], arr["a"][s:e],
                         arr["escaped"][s:e], arr["stop_t"][s:e], arr["stop_x"][s:e],
                         arr["stop_y"][s:e], arr["status"][s:e])

    run_chunks(n, work, threads)
    bad = np.flatnonzero(arr["status"])
    if bad.size:
        raise DensityZero(f"d(X) fell below d_min/2 on path {int(bad[0]) + first_path}")
    if not track_a:
        arr["a"][:] = times
    meta = {"scheme": "limit-" + ("sticky" if mode == MODE_STICKY else "homogenized"),
            "p_limit": spec.p_limit.to_json(), "q_limit": spec.q_limit.to_json(),
            "seed": cfg.master_seed, "h": h, "first_path": first_path}
    return batch_from_arrays(times, arr, meta), arr


def solve_homogenized_sde(spec: LimitSpec, cfg, threads=None, a_stop=math.inf, first_path=0,
                          n_paths=None):
    """Euler paths of the homogenized SDE; ``local_time_total`` holds int Sigma00/d ds."""
    if spec.kind not in (LimitKind.HOMOGENIZED_SDE, LimitKind.LIMIT_A_FUNCTIONAL):
        raise RegimeMismatch(f"spec kind {spec.kind.value} is not a homogenized SDE")
    return _run_limit_sde(spec, cfg, MODE_HOMOGENIZED, threads, a_stop, first_path, n_paths)


def solve_sticky_sde(spec: LimitSpec, cfg, threads=None, first_path=0, n_paths=None):
    """Euler paths of the time-changed (sticky) limit; A is the identity on this clock."""
    if spec.kind is not LimitKind.STICKY_SDE:
        raise RegimeMismatch(f"spec kind {spec.kind.value} is not the sticky SDE")
    return _run_limit_sde(spec, cfg, MODE_STICKY, threads, math.inf, first_path, n_paths)


def solve_plain_sde(fld, density, cfg, threads=None):
    """Reference Euler run without membrane effects (p = q = 0)."""
    spec = LimitSpec(fld, density, ExtReal(0.0), ExtReal(0.0), ExtReal(0.0),
                     LimitKind.HOMOGENIZED_SDE)
    return _run_limit_sde(spec, cfg, MODE_HOMOGENIZED, threads, math.inf, 0, None)


@dataclass(frozen=True)
class OdePath:
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray

    @property
    def terminal(self) -> tuple[float, np.ndarray]:
        return float(self.x[-1]), self.y[-1]


def _rk4(rhs, x0: float, y0: np.ndarray, horizon: float, step: float) -> OdePath:
    n = max(1, int(math.ceil(horizon / step - 1e-9)))
    h = horizon / n
    state = np.concatenate([[float(x0)], np.asarray(y0, dtype=float)])
    out = np.empty((n + 1, state.size))
    out[0] = state
    for j in range(n):
        k1 = rhs(state)
        k2 = rhs(state + 0.5 * h * k1)
        k3 = rhs(state + 0.5 * h * k2)
        k4 = rhs(state + h * k3)
        state = state + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[j + 1] = state
    return OdePath(np.linspace(0.0, horizon, n + 1), out[:, 0].copy(), out[:, 1:].copy())


def _point_eval(fld, row, x, y):
    return fld.evaluate_row(row, np.zeros(1), np.array([x]), np.asarray(y, dtype=float)[None, :])[0]


def solve_degenerate_ode(spec: LimitSpec, x0: float, y0, horizon: float, step: float) -> OdePath:
    """RK4 for dX/dt = beta*Sigma00/d, dY/dt = theta*Sigma00/d with coefficients at time 0."""
    if spec.kind is not LimitKind.DEGENERATE_ODE:
        raise RegimeMismatch(f"spec kind {spec.kind.value} is not the degenerate ODE")
    fld, dens = spec.field, spec.density
    lay = fld.layout
    y0 = np.zeros(fld.dim_y) if y0 is None else np.asarray(y0, dtype=float)

    def rhs(state):
        x, y = state[0], state[1:]
        s00 = sum(_point_eval(fld, lay.sigma(0, l), x, y) ** 2 for l in range(fld.m))
        dval = dens(x)
        if dval < 0.5 * dens.d_min:
            raise DensityZero(f"d({x:g}) = {dval:g}")
        rate = s00 / dval
        out = np.empty(state.size)
        out[0] = _point_eval(fld, lay.beta, x, y) * rate
        for i in range(fld.dim_y):
            out[1 + i] = _point_eval(fld, lay.theta0 + i, x, y) * rate
        return out

    return _rk4(rhs, x0, y0, horizon, step)


def solve_sticky_ode(spec: LimitSpec, x0: float, y0, horizon: float, step: float) -> OdePath:
    """RK4 for dX/dt = beta/(r*gamma), dY/dt = theta/(r*gamma) with coefficients at time 0."""
    if spec.kind is not LimitKind.STICKY_ODE:
        raise RegimeMismatch(f"spec kind {spec.kind.value} is not the sticky ODE")
    fld = spec.field
    r = spec.r_limit.finite("lambda/delta limit")
    floor = fld.bounds.gamma_floor
    if floor <= 0.0:
        raise GammaFloorViolation("the sticky ODE needs a positive declared gamma floor")
    lay = fld.layout
    y0 = np.zeros(fld.dim_y) if y0 is None else np.asarray(y0, dtype=float)

    def rhs(state):
        x, y = state[0], state[1:]
        gamma = _point_eval(fld, lay.gamma, x, y)
        if gamma < floor * (1 - 1e-12):
            raise GammaFloorViolation(f"gamma = {gamma:g} below the floor {floor:g} at x = {x:g}")
        out = np.empty(state.size)
        out[0] = _point_eval(fld, lay.beta, x, y) / (r * gamma)
        for i in range(fld.dim_y):
            out[1 + i] = _point_eval(fld, lay.theta0 + i, x, y) / (r * gamma)
        return out

    return _rk4(rhs, x0, y0, horizon, step)
