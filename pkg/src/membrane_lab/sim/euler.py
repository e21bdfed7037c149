"""Euler–Maruyama with mollified membrane local times.

The singular term at each membrane a_k is replaced by a drift acting on the
band |x - a_k - s_k| <= rho.  For a plain indicator drift of strength
c/(2 rho) the walker leaves the band upward with probability (1 + tanh c)/2,
so the strength is calibrated as c = atanh(delta*beta) to reproduce the
skew (1 + delta*beta)/2.  The band is shifted by
s = rho*(coth c - 1/c), which makes the scale function outside the band
coincide with the one of the sharp interface, and the occupation estimate of
the local time is rescaled by kappa = c/(delta*beta) so that it recovers the
symmetric local time instead of the band average.  For delta*beta -> 0 all
three corrections vanish.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

from ..errors import StepTooLarge
from ..model.coefficients import y_args
from .bundle import batch_from_arrays, empty_batch_arrays
from .parallel import run_chunks
from .rng import lane_state, next_normal

@nb.njit(cache=True, inline="always")
def band_params(db, rho):
    """(strength c, local-time factor kappa, band shift) for skew parameter db = delta*beta."""
    if abs(db) < 1e-12:
        return db, 1.0, rho * db / 3.0
    c = math.atanh(db)
    shift = rho * (1.0 / math.tanh(c) - 1.0 / c)
    return c, c / db, shift


@nb.njit(cache=True, nogil=True)
def euler_kernel(ev, rows, tab, dim_y, m, i_b0, i_beta, i_theta0, i_gamma,
                 pts, delta, lam, rho, h, n_steps, stride, x0, y0,
                 seed, first_path, a_stop,
                 out_x, out_y, out_l, out_wb, out_wth, out_wg, out_a, out_esc,
                 stop_t, stop_x, stop_y):
    n_paths = out_x.shape[0]
    n_mem = pts.shape[0]
    two_rho = 2.0 * rho
    reach = 2.0 * rho
    inv_2rho = 1.0 / two_rho
    sq_h = math.sqrt(h)
    edge_lo = pts[0] if n_mem > 0 else -np.inf
    edge_hi = pts[n_mem - 1] if n_mem > 0 else np.inf
    sig = np.empty((dim_y + 1, m))
    dw = np.empty(m)
    y = np.empty(dim_y)
    y_old = np.empty(dim_y)
    wth = np.empty(dim_y)
    ymem = np.empty(dim_y)
    drift = np.empty(dim_y + 1)
    for p in range(n_paths):
        st = lane_state(seed, first_path + p)
        stf = st.view(np.float64)
        x = x0
        for i in range(dim_y):
            y[i] = y0[i]
            wth[i] = 0.0
        ltot = 0.0
        wb = 0.0
        wg = 0.0
        a_val = 0.0
        escaped = False
        lo_idx = np.searchsorted(pts, x - reach)
        g = 0
        out_x[p, 0] = x
        for i in range(dim_y):
            out_y[p, 0, i] = y[i]
            out_wth[p, 0, i] = 0.0
        out_l[p, 0] = 0.0
        out_wb[p, 0] = 0.0
        out_wg[p, 0] = 0.0
        out_a[p, 0] = 0.0
        stopped = False
        last_beta = 0.0
        c, kappa, shift = band_params(0.0, rho)
        for j in range(n_steps):
            t = j * h
            y1, y2, y3, y4 = y_args(y)
            for i in range(dim_y + 1):
                for l in range(m):
                    sig[i, l] = ev(rows, i * m + l, tab, t, x, y1, y2, y3, y4)
                drift[i] = ev(rows, i_b0 + i, tab, t, x, y1, y2, y3, y4)
            s00 = 0.0
            for l in range(m):
                dw[l] = sq_h * next_normal(st, stf)
                s00 += sig[0, l] * sig[0, l]
            dx = drift[0] * h
            for l in range(m):
                dx += sig[0, l] * dw[l]
            for i in range(dim_y):
                y_old[i] = y[i]
                ymem[i] = 0.0
            # membrane bands around the current position
            while lo_idx > 0 and pts[lo_idx - 1] >= x - reach:
                lo_idx -= 1
            while lo_idx < n_mem and pts[lo_idx] < x - reach:
                lo_idx += 1
            k = lo_idx
            dl_step = 0.0
            dx_mem = 0.0
            dg_step = 0.0
            db_step = 0.0
            while k < n_mem and pts[k] <= x + reach:
                ak = pts[k]
                beta = ev(rows, i_beta, tab, t, ak, y1, y2, y3, y4)
                if beta != last_beta:
                    c, kappa, shift = band_params(delta * beta, rho)
                    last_beta = beta
                if abs(x - ak - shift) <= rho:
                    occ = s00 * h * inv_2rho
                    dl = kappa * occ
                    dl_step += dl
                    dx_mem += c * occ
                    db_step += beta * dl
                    dg_step += ev(rows, i_gamma, tab, t, ak, y1, y2, y3, y4) * dl
                    for i in range(dim_y):
                        th = ev(rows, i_theta0 + i, tab, t, ak, y1, y2, y3, y4)
                        wth[i] += th * dl
                        ymem[i] += delta * th * dl
                k += 1
            for i in range(dim_y):
                incr = drift[i + 1] * h + ymem[i]
                for l in range(m):
                    incr += sig[i + 1, l] * dw[l]
                y[i] += incr
            x_old = x
            x = x + dx + dx_mem
            ltot += dl_step
            wb += db_step
            wg += dg_step
            a_old = a_val
            a_val = (j + 1) * h + lam * wg
            if x < edge_lo or x > edge_hi:
                escaped = True
            if a_val >= a_stop and not stopped:
                frac = (a_stop - a_old) / (a_val - a_old)
                stop_t[p] = t + frac * h
                stop_x[p] = x_old + frac * (x - x_old)
                for i in range(dim_y):
                    stop_y[p, i] = y_old[i] + frac * (y[i] - y_old[i])
                stopped = True
                break
            if (j + 1) % stride == 0:
                g += 1
                out_x[p, g] = x
                for i in range(dim_y):
                    out_y[p, g, i] = y[i]
                    out_wth[p, g, i] = wth[i]
                out_l[p, g] = ltot
                out_wb[p, g] = wb
                out_wg[p, g] = wg
                out_a[p, g] = a_val
        out_esc[p] = escaped


def step_plan(horizon: float, grid_points: int, h_max: float) -> tuple[int, int, float]:
    """(n_steps, stride, h) with h <= h_max and grid times landing on steps."""
    cells = grid_points - 1
    per_cell = max(1, math.ceil(horizon / cells / h_max * (1 - 1e-12)))
    return cells * per_cell, per_cell, horizon / (cells * per_cell)


def _kernel_args(fld, family_points, regime, rho):
    lay = fld.layout
    return (fld.evaluator, fld.rows, fld.table, fld.dim_y, fld.m, lay.b0, lay.beta, lay.theta0, lay.gamma,
            np.ascontiguousarray(family_points, dtype=float), float(regime.delta),
            float(regime.lam), float(rho))


def simulate_euler_mollified(fld, membranes, regime, cfg, threads=None, first_path=0,
                             n_paths=None, a_stop=math.inf):
    """Sample ``cfg.n_paths`` Euler paths; returns (PathBatch, raw arrays).

    ``cfg`` must be resolved (step and rho set).  With a finite ``a_stop``
    each path halts as soon as A reaches it and the crossing state is kept in
    the raw arrays ``stop_t``, ``stop_x``, ``stop_y``; grid entries past
    the stop stay zero.
    """
    if cfg.step is None or cfg.rho is None:
        raise ValueError("resolve the SimConfig before simulating")
    s00max = fld.bounds.sigma00_max
    if math.sqrt(s00max * cfg.step) > cfg.rho / 3.0 * (1 + 1e-12):
        raise StepTooLarge(f"sqrt(|Sigma00| h) = {math.sqrt(s00max * cfg.step):g} exceeds rho/3")
    n = cfg.n_paths if n_paths is None else n_paths
    n_steps, stride, h = step_plan(cfg.horizon, cfg.grid_points, cfg.step)
    times = np.arange(cfg.grid_points) * (stride * h)
    times[-1] = cfg.horizon
    arr = empty_batch_arrays(n, cfg.grid_points, fld.dim_y)
    head = _kernel_args(fld, membranes.points, regime, cfg.rho)
    y0 = np.asarray(cfg.initial_y, dtype=float).reshape(fld.dim_y)

    def work(s, e):
        euler_kernel(*head, h, n_steps, stride, float(cfg.initial_x), y0,
                     np.uint64(cfg.master_seed), np.uint64(first_path + s), float(a_stop),
                     arr["x"][s:e], arr["y"][s:e], arr["ltot"][s:e], arr["wbeta"][s:e],
                     arr["wtheta"][s:e], arr["wgamma"][s:e], arr["a"][s:e], arr["escaped"][s:e],
                     arr["stop_t"][s:e], arr["stop_x"][s:e], arr["stop_y"][s:e])

    run_chunks(n, work, threads)
    meta = {"scheme": "euler", "epsilon": membranes.epsilon, "delta": regime.delta,
            "lambda": regime.lam, "seed": cfg.master_seed, "h": h, "rho": cfg.rho,
            "n_steps": n_steps, "first_path": first_path}
    batch = batch_from_arrays(times, arr, meta)
    object.__setattr__(batch, "first_index", first_path)
    return batch, arr
