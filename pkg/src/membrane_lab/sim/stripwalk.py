"""Event-driven sampling over membrane visits.

A path sitting on membrane a_k with neighbours a_{k-1} < a_k < a_{k+1}
freezes every coefficient at (t, a_k, Y) and jumps to one neighbour:

* the side is drawn from the exit law of a skew diffusion with skewness
  (1 + delta*beta)/2 and constant drift b0 (scale-function formula);
* the sojourn is either the mean exit time of frozen skew BM or an exact
  driftless BM exit time from (-a_minus, a_plus), rescaled to that mean;
* the local time gained is the mean a_minus*a_plus/D with
  D = alpha*a_minus + (1 - alpha)*a_plus;
* Y moves by delta*theta*dL + b_Y*dtau plus the Gaussian part, split into
  the X-correlated conditional mean and Schur-complement noise;
* A grows by dtau + lambda*gamma*dL.

Paths that do not start on a membrane first run a fine Euler leg until they
hit one.  Reaching the outermost membrane of the window sets the escape flag
and freezes the path.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

from ..model.coefficients import y_args
from .bundle import batch_from_arrays, empty_batch_arrays
from .parallel import run_chunks
from .rng import lane_state, next_normal, next_uniform
from .sojourn import symmetric_quantile_table, unit_exit_from_uniform

STATUS_OK = 0
STATUS_SIGMA_FLOOR = 1
STATUS_GAMMA_NEGATIVE = 2
STATUS_PERMEABILITY = 3
STATUS_BOUNDS = 4

STATUS_TEXT = {
    STATUS_SIGMA_FLOOR: "Sigma00 below its declared floor at a membrane visit",
    STATUS_GAMMA_NEGATIVE: "negative gamma at a membrane visit",
    STATUS_PERMEABILITY: "|delta*beta| >= 1 at a membrane visit",
    STATUS_BOUNDS: "coefficient beyond its declared bound at a membrane visit",
}


@nb.njit(cache=True, inline="always")
def _phi1(z):
    if abs(z) < 1e-8:
        return 1.0 + 0.5 * z
    return math.expm1(z) / z


@nb.njit(cache=True, nogil=True)
def stripwalk_kernel(ev, rows, tab, dim_y, m, i_b0, i_beta, i_theta0, i_gamma,
                     pts, delta, lam, h_leg, times, x0, y0, seed, first_path, a_stop,
                     exact_sojourn, qtable, s00_floor, beta_bound, gamma_bound,
                     out_x, out_y, out_l, out_wb, out_wth, out_wg, out_a, out_esc,
                     stop_t, stop_x, stop_y, status):
    n_paths = out_x.shape[0]
    n_mem = pts.shape[0]
    n_grid = times.shape[0]
    horizon = times[n_grid - 1]
    sig = np.empty((dim_y + 1, m))
    drift = np.empty(dim_y + 1)
    dw = np.empty(m)
    y = np.empty(dim_y)
    y_new = np.empty(dim_y)
    wth = np.empty(dim_y)
    wth_new = np.empty(dim_y)
    theta = np.empty(dim_y)
    cond = np.empty(dim_y)
    schur = np.empty((dim_y, dim_y))
    chol = np.empty((dim_y, dim_y))
    z = np.empty(dim_y)
    sq_leg = math.sqrt(h_leg)
    for p in range(n_paths):
        st = lane_state(seed, first_path + p)
        stf = st.view(np.float64)
        t = 0.0
        x = x0
        for i in range(dim_y):
            y[i] = y0[i]
            wth[i] = 0.0
        ltot = 0.0
        wb = 0.0
        wg = 0.0
        a_val = 0.0
        g = 0
        escaped = False
        stopped = False
        code = STATUS_OK
        # record the start
        out_x[p, 0] = x
        for i in range(dim_y):
            out_y[p, 0, i] = y[i]
            out_wth[p, 0, i] = 0.0
        out_l[p, 0] = 0.0
        out_wb[p, 0] = 0.0
        out_wg[p, 0] = 0.0
        out_a[p, 0] = 0.0
        g = 1
        k = np.searchsorted(pts, x)
        on_membrane = k < n_mem and abs(pts[k] - x) <= 1e-12 * max(1.0, abs(x))
        if not on_membrane and k > 0 and abs(pts[k - 1] - x) <= 1e-12 * max(1.0, abs(x)):
            k -= 1
            on_membrane = True
        if (not on_membrane and (k == 0 or k == n_mem)) or (
                on_membrane and (k == 0 or k == n_mem - 1)):
            escaped = True
        while t < horizon and not stopped:
            if escaped:
                break
            # ---- one event: either an Euler step of the entry leg or a membrane visit
            y1, y2, y3, y4 = y_args(y)
            if not on_membrane:
                lo_m = pts[k - 1]
                hi_m = pts[k]
                for i in range(dim_y + 1):
                    for l in range(m):
                        sig[i, l] = ev(rows, i * m + l, tab, t, x, y1, y2, y3, y4)
                    drift[i] = ev(rows, i_b0 + i, tab, t, x, y1, y2, y3, y4)
                s00 = 0.0
                for l in range(m):
                    dw[l] = sq_leg * next_normal(st, stf)
                    s00 += sig[0, l] * sig[0, l]
                dt = h_leg
                x_new = x + drift[0] * h_leg
                for l in range(m):
                    x_new += sig[0, l] * dw[l]
                for i in range(dim_y):
                    y_new[i] = y[i] + drift[i + 1] * h_leg
                    for l in range(m):
                        y_new[i] += sig[i + 1, l] * dw[l]
                hit = 0
                if x_new >= hi_m:
                    hit = 1
                elif x_new <= lo_m:
                    hit = -1
                else:
                    var = s00 * h_leg
                    gh = (hi_m - x) * (hi_m - x_new)
                    gl = (x - lo_m) * (x_new - lo_m)
                    if gh < 18.5 * var or gl < 18.5 * var:
                        ph = math.exp(-2.0 * gh / var)
                        pl = math.exp(-2.0 * gl / var)
                        u = next_uniform(st)
                        if u < ph:
                            hit = 1
                        elif u < ph + pl:
                            hit = -1
                if hit != 0:
                    x_new = hi_m if hit > 0 else lo_m
                    if hit < 0:
                        k -= 1
                    on_membrane = True
                    if k == 0 or k == n_mem - 1:
                        escaped = True
                l_new = ltot
                wb_new = wb
                wg_new = wg
                for i in range(dim_y):
                    wth_new[i] = wth[i]
            else:
                ak = pts[k]
                am = ak - pts[k - 1]
                ap = pts[k + 1] - ak
                s00 = 0.0
                for i in range(dim_y + 1):
                    for l in range(m):
                        sig[i, l] = ev(rows, i * m + l, tab, t, ak, y1, y2, y3, y4)
                    drift[i] = ev(rows, i_b0 + i, tab, t, ak, y1, y2, y3, y4)
                for l in range(m):
                    s00 += sig[0, l] * sig[0, l]
                beta = ev(rows, i_beta, tab, t, ak, y1, y2, y3, y4)
                gamma = ev(rows, i_gamma, tab, t, ak, y1, y2, y3, y4)
                for i in range(dim_y):
                    theta[i] = ev(rows, i_theta0 + i, tab, t, ak, y1, y2, y3, y4)
                if s00 < s00_floor * (1.0 - 1e-12):
                    code = STATUS_SIGMA_FLOOR
                    break
                if gamma < 0.0:
                    code = STATUS_GAMMA_NEGATIVE
                    break
                if abs(delta * beta) >= 1.0:
                    code = STATUS_PERMEABILITY
                    break
                if abs(beta) > beta_bound * (1 + 1e-12) or gamma > gamma_bound * (1 + 1e-12):
                    code = STATUS_BOUNDS
                    break
                alpha = 0.5 * (1.0 + delta * beta)
                b0 = drift[0]
                s_up = ap * _phi1(-2.0 * b0 * ap / s00)
                s_dn = am * _phi1(2.0 * b0 * am / s00)
                p_up = alpha * s_dn / (alpha * s_dn + (1.0 - alpha) * s_up)
                den = alpha * am + (1.0 - alpha) * ap
                mean_tau = am * ap * (alpha * ap + (1.0 - alpha) * am) / (den * s00)
                dl = am * ap / den
                u = next_uniform(st)
                up = u < p_up
                if exact_sojourn:
                    width = am + ap
                    unit = unit_exit_from_uniform(next_uniform(st), am / width, qtable)
                    # driftless BM mean is am*ap/s00; rescale to the frozen skew mean
                    dt = unit * width * width / s00 * (mean_tau * s00 / (am * ap))
                else:
                    dt = mean_tau
                if up:
                    x_new = pts[k + 1]
                    k += 1
                else:
                    x_new = pts[k - 1]
                    k -= 1
                if k == 0 or k == n_mem - 1:
                    escaped = True
                mean_dx = p_up * ap - (1.0 - p_up) * am
                dx_dev = (x_new - ak) - mean_dx
                if dim_y > 0:
                    # conditional mean along X and Cholesky of the Schur complement
                    for i in range(dim_y):
                        c0 = 0.0
                        for l in range(m):
                            c0 += sig[i + 1, l] * sig[0, l]
                        cond[i] = c0 / s00
                    for i in range(dim_y):
                        for jj in range(dim_y):
                            v = 0.0
                            for l in range(m):
                                v += sig[i + 1, l] * sig[jj + 1, l]
                            schur[i, jj] = v - cond[i] * cond[jj] * s00
                    for i in range(dim_y):
                        for jj in range(i + 1):
                            v = schur[i, jj]
                            for q in range(jj):
                                v -= chol[i, q] * chol[jj, q]
                            if i == jj:
                                chol[i, i] = math.sqrt(v) if v > 0.0 else 0.0
                            else:
                                chol[i, jj] = v / chol[jj, jj] if chol[jj, jj] > 0.0 else 0.0
                        for jj in range(i + 1, dim_y):
                            chol[i, jj] = 0.0
                    sq_dt = math.sqrt(dt)
                    for i in range(dim_y):
                        z[i] = next_normal(st, stf)
                    for i in range(dim_y):
                        noise = 0.0
                        for jj in range(i + 1):
                            noise += chol[i, jj] * z[jj]
                        y_new[i] = (y[i] + delta * theta[i] * dl + drift[i + 1] * dt
                                    + cond[i] * dx_dev + noise * sq_dt)
                        wth_new[i] = wth[i] + theta[i] * dl
                l_new = ltot + dl
                wb_new = wb + beta * dl
                wg_new = wg + gamma * dl
            a_new = a_val + dt + lam * (wg_new - wg)
            t_new = t + dt
            # ---- stop on the A level and fill grid points covered by this event
            if a_new >= a_stop:
                frac = (a_stop - a_val) / (a_new - a_val)
                stop_t[p] = t + frac * dt
                stop_x[p] = x + frac * (x_new - x)
                for i in range(dim_y):
                    stop_y[p, i] = y[i] + frac * (y_new[i] - y[i])
                stopped = True
            while g < n_grid and times[g] <= t_new:
                f = (times[g] - t) / dt
                out_x[p, g] = x + f * (x_new - x)
                for i in range(dim_y):
                    out_y[p, g, i] = y[i] + f * (y_new[i] - y[i])
                    out_wth[p, g, i] = wth[i] + f * (wth_new[i] - wth[i])
                out_l[p, g] = ltot + f * (l_new - ltot)
                out_wb[p, g] = wb + f * (wb_new - wb)
                out_wg[p, g] = wg + f * (wg_new - wg)
                out_a[p, g] = times[g] + lam * (out_wg[p, g])
                g += 1
            t = t_new
            x = x_new
            for i in range(dim_y):
                y[i] = y_new[i]
                wth[i] = wth_new[i]
            ltot = l_new
            wb = wb_new
            wg = wg_new
            a_val = a_new
        # frozen tail after an escape, a stop or an invalid visit
        while g < n_grid:
            out_x[p, g] = x
            for i in range(dim_y):
                out_y[p, g, i] = y[i]
                out_wth[p, g, i] = wth[i]
            out_l[p, g] = ltot
            out_wb[p, g] = wb
            out_wg[p, g] = wg
            out_a[p, g] = times[g] + lam * wg
            g += 1
        out_esc[p] = escaped
        status[p] = code


def simulate_strip_walk(fld, membranes, regime, cfg, threads=None, first_path=0,
                        n_paths=None, a_stop=math.inf):
    """Strip-walk counterpart of :func:`simulate_euler_mollified`; same return shape.

    The raw ``status`` array carries a nonzero code for paths stopped by a
    frozen-coefficient violation (see ``STATUS_TEXT``).
    """
    n = cfg.n_paths if n_paths is None else n_paths
    times = cfg.grid
    arr = empty_batch_arrays(n, cfg.grid_points, fld.dim_y)
    lay = fld.layout
    gap = float(np.min(np.diff(membranes.points)))
    h_leg = (gap / 40.0) ** 2 / fld.bounds.sigma00_max
    y0 = np.asarray(cfg.initial_y, dtype=float).reshape(fld.dim_y)
    exact = cfg.sojourn == "exact"
    qtable = symmetric_quantile_table()
    bd = fld.bounds
    head = (fld.evaluator, fld.rows, fld.table, fld.dim_y, fld.m, lay.b0, lay.beta, lay.theta0,
            lay.gamma, np.ascontiguousarray(membranes.points), float(regime.delta),
            float(regime.lam), h_leg, times, float(cfg.initial_x), y0, np.uint64(cfg.master_seed))
    tail = (float(a_stop), exact, qtable, float(bd.sigma00_floor), float(bd.beta), float(bd.gamma))

    def work(s, e):
        stripwalk_kernel(*head, np.uint64(first_path + s), *tail,
                         arr["x"][s:e], arr["y"][s:e], arr["ltot"][s:e], arr["wbeta"][s:e],
                         arr["wtheta"][s:e], arr["wgamma"][s:e], arr["a"][s:e],
                         arr["escaped"][s:e], arr["stop_t"][s:e], arr["stop_x"][s:e],
                         arr["stop_y"][s:e], arr["status"][s:e])

    run_chunks(n, work, threads)
    meta = {"scheme": "stripwalk", "epsilon": membranes.epsilon, "delta": regime.delta,
            "lambda": regime.lam, "seed": cfg.master_seed, "sojourn": cfg.sojourn,
            "first_path": first_path}
    batch = batch_from_arrays(times, arr, meta)
    object.__setattr__(batch, "first_index", first_path)
    return batch, arr
