"""Distribution distances, convergence studies and the local-time functional check."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, stats

from .errors import EmptySample, MissingLocalTimes, RegimeMismatch
from .limit_solvers import solve_degenerate_ode, solve_homogenized_sde, solve_sticky_sde
from .membrane_sim import run_prelimit
from .model import LimitKind, LimitSpec

KS_NULL_C95 = 1.36
N_BOOTSTRAP = 200


@dataclass(frozen=True)
class DistanceReport:
    statistic: str
    value: float
    n_a: int
    n_b: int
    bootstrap_ci: tuple[float, float]

    def __post_init__(self):
        if self.statistic not in ("KS", "W1"):
            raise ValueError(f"unknown statistic {self.statistic!r}")
        if self.value < 0 or (self.statistic == "KS" and self.value > 1):
            raise ValueError(f"{self.statistic} value {self.value} out of range")
        lo, hi = self.bootstrap_ci
        if not lo <= self.value <= hi:
            raise ValueError("bootstrap interval must contain the point value")


def _clean(samples, name: str) -> np.ndarray:
    a = np.asarray(samples, dtype=float).ravel()
    if a.size == 0:
        raise EmptySample(f"{name} is empty")
    return a


def _ks_sorted(a: np.ndarray, b: np.ndarray) -> float:
    merged = np.concatenate([a, b])
    fa = np.searchsorted(a, merged, side="right") / a.size
    fb = np.searchsorted(b, merged, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def _ks_law_sorted(a: np.ndarray, cdf: Callable) -> float:
    n = a.size
    f = np.asarray(cdf(a), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


def _interval(boot: np.ndarray, value: float) -> tuple[float, float]:
    lo, hi = np.percentile(boot, [2.5, 97.5]) if boot.size else (value, value)
    return float(min(lo, value)), float(max(hi, value))


def ks_distance(samples_a, samples_b, n_boot: int = N_BOOTSTRAP, seed: int = 0) -> DistanceReport:
    """Two-sample KS statistic with a percentile bootstrap interval."""
    a = np.sort(_clean(samples_a, "samples_a"))
    b = np.sort(_clean(samples_b, "samples_b"))
    value = _ks_sorted(a, b)
    rng = np.random.default_rng(seed)
    boot = np.array([_ks_sorted(np.sort(rng.choice(a, a.size)), np.sort(rng.choice(b, b.size)))
                     for _ in range(n_boot)])
    return DistanceReport("KS", value, a.size, b.size, _interval(boot, value))


def ks_to_law(samples, cdf: Callable, n_boot: int = N_BOOTSTRAP, seed: int = 0) -> DistanceReport:
    """One-sample KS statistic against a continuous CDF; ``n_b`` is 0."""
    a = np.sort(_clean(samples, "samples"))
    value = _ks_law_sorted(a, cdf)
    rng = np.random.default_rng(seed)
    boot = np.array([_ks_law_sorted(np.sort(rng.choice(a, a.size)), cdf) for _ in range(n_boot)])
    return DistanceReport("KS", value, a.size, 0, _interval(boot, value))


def _thin(sorted_x: np.ndarray, n: int) -> np.ndarray:
    """n evenly spaced order statistics of a sorted sample."""
    idx = np.floor((np.arange(n) + 0.5) * sorted_x.size / n).astype(np.int64)
    return sorted_x[idx]


def _w1_sorted(a: np.ndarray, b: np.ndarray) -> float:
    if a.size > b.size:
        a = _thin(a, b.size)
    elif b.size > a.size:
        b = _thin(b, a.size)
    return float(np.mean(np.abs(a - b)))


def wasserstein1(samples_a, samples_b, n_boot: int = N_BOOTSTRAP, seed: int = 0) -> DistanceReport:
    """W1 between empirical measures by sorted pairing.

    Unequal sizes: the larger sample is thinned to evenly spaced order statistics.
    """
    a = np.sort(_clean(samples_a, "samples_a"))
    b = np.sort(_clean(samples_b, "samples_b"))
    value = _w1_sorted(a, b)
    rng = np.random.default_rng(seed)
    boot = np.array([_w1_sorted(np.sort(rng.choice(a, a.size)), np.sort(rng.choice(b, b.size)))
                     for _ in range(n_boot)])
    return DistanceReport("W1", value, a.size, b.size, _interval(boot, value))


def null_ks_threshold(n_a: int, n_b: int = 0, c: float = KS_NULL_C95) -> float:
    """Asymptotic 95% KS critical value; ``n_b = 0`` means a one-sample test."""
    if n_b == 0:
        return c / math.sqrt(n_a)
    return c * math.sqrt((n_a + n_b) / (n_a * n_b))


@dataclass(frozen=True)
class ConvergenceRow:
    epsilon: float
    delta: float
    lam: float
    distance: float
    ci: tuple[float, float]
    n_paths: int
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ConvergenceTable:
    """Rows sorted by epsilon descending, with a log-log fit of distance on epsilon."""

    scenario: str
    statistic: str
    rows: tuple[ConvergenceRow, ...]
    slope: float
    intercept: float
    noise_floor: float
    fitted_rows: int

    @classmethod
    def build(cls, scenario: str, statistic: str, rows: Sequence[ConvergenceRow],
              noise_floor: float = 0.0) -> "ConvergenceTable":
        rows = tuple(sorted(rows, key=lambda r: -r.epsilon))
        # rows whose interval reaches down to the noise floor carry no rate information
        fit = [r for r in rows if r.ci[0] > noise_floor and r.distance > 0]
        if len(fit) >= 2:
            slope, intercept = np.polyfit(np.log([r.epsilon for r in fit]),
                                          np.log([r.distance for r in fit]), 1)
        else:
            slope = intercept = math.nan
        return cls(scenario, statistic, rows, float(slope), float(intercept), noise_floor, len(fit))

    @property
    def distances(self) -> np.ndarray:
        return np.array([r.distance for r in self.rows])

    @property
    def epsilons(self) -> np.ndarray:
        return np.array([r.epsilon for r in self.rows])

    def column(self, key: str) -> np.ndarray:
        return np.array([r.extra[key] for r in self.rows])


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


def strictly_decreasing(values) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) < 0))


# ---------------------------------------------------------------- local time


@dataclass(frozen=True)
class LocalTimeCheck:
    epsilon: float
    mean_sup: float
    p95_sup: float
    n_paths: int
    sup_per_path: np.ndarray
    terminal_mean: float
    limit_terminal_mean: float
    scaled_sum: np.ndarray = field(repr=False, default=None)
    limit_sum: np.ndarray = field(repr=False, default=None)


def local_time_functional_check(batch, fld, density, epsilon: float | None = None) -> LocalTimeCheck:
    """Sup over the grid of |eps * sum_k L^{a_k}_t - int_0^t Sigma00/d ds| per path.

    The integral uses the trapezoidal rule along each sampled path; escaped
    paths are dropped.
    """
    meta = getattr(batch, "meta", {}) or {}
    if str(meta.get("scheme", "")).startswith("limit") or batch.local_time_total is None:
        raise MissingLocalTimes("the batch carries no membrane local times")
    eps = meta.get("epsilon") if epsilon is None else epsilon
    if eps is None:
        raise MissingLocalTimes("epsilon unknown: pass it explicitly")
    keep = batch.kept()
    if not np.any(keep):
        raise EmptySample("every path left the membrane window")
    x = batch.x[keep]
    y = batch.y[keep]
    lt = batch.local_time_total[keep]
    if not np.all(np.isfinite(lt)):
        raise MissingLocalTimes("local times contain non-finite values")
    n, g = x.shape
    t = np.broadcast_to(batch.times, (n, g))
    lay = fld.layout
    s00 = np.zeros(n * g)
    tf, xf, yf = t.ravel(), x.ravel(), y.reshape(n * g, fld.dim_y)
    for l in range(fld.m):
        s00 += fld.evaluate_row(lay.sigma(0, l), tf, xf, yf) ** 2
    rate = (s00 / density(xf)).reshape(n, g)
    limit = integrate.cumulative_trapezoid(rate, batch.times, axis=1, initial=0.0)
    sup = np.max(np.abs(eps * lt - limit), axis=1)
    return LocalTimeCheck(float(eps), float(np.mean(sup)), float(np.percentile(sup, 95)), n, sup,
                          float(np.mean(eps * lt[:, -1])), float(np.mean(limit[:, -1])),
                          eps * lt, limit)


# ---------------------------------------------------------------- studies

STUDY_KINDS = ("homogenized-sde", "sticky-sde", "degenerate-ode")


def _limit_spec(exp, kind: str) -> LimitSpec:
    c = exp.coupling
    if kind == "homogenized-sde":
        if not c.p_limit.is_finite:
            raise RegimeMismatch("homogenized scenario needs delta/eps to converge")
        return LimitSpec(exp.field, exp.density, c.p_limit, c.q_limit, c.r_limit,
                         LimitKind.HOMOGENIZED_SDE)
    if kind == "sticky-sde":
        if not (c.p_limit.is_finite and c.q_limit.is_finite):
            raise RegimeMismatch("sticky scenario needs finite delta/eps and lambda/eps limits")
        return LimitSpec(exp.field, exp.density, c.p_limit, c.q_limit, c.r_limit,
                         LimitKind.STICKY_SDE)
    if kind == "degenerate-ode":
        if c.p_limit.is_finite:
            raise RegimeMismatch("degenerate scenario needs delta/eps to diverge (e.g. delta = sqrt(eps))")
        return LimitSpec(exp.field, exp.density, c.p_limit, c.q_limit, c.r_limit,
                         LimitKind.DEGENERATE_ODE)
    raise RegimeMismatch(f"unknown study kind {kind!r}; expected one of {STUDY_KINDS}")


@dataclass(frozen=True, eq=False)
class StudyResult:
    table: ConvergenceTable
    checks: tuple[Check, ...]
    limit_samples: np.ndarray | None
    prelimit_samples: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _exact_cdf(conv: dict):
    if "exact_mean" in conv and "exact_var" in conv:
        return stats.norm(conv["exact_mean"], math.sqrt(conv["exact_var"])).cdf
    return None


def convergence_study(exp, epsilons: Sequence[float] | None = None, n_paths: int | None = None,
                      seed: int | None = None, scheme: str | None = None, threads: int | None = None,
                      coupling=None, n_boot: int = N_BOOTSTRAP) -> StudyResult:
    """Compare prelimit marginals at the horizon with the matching limit along an eps ladder.

    ``exp.converge`` selects the limit (``kind``) and thresholds.  Homogenized and
    sticky scenarios report the KS distance of X_T (sticky: at A^{-1}(T)) to the
    exact normal law when ``exact_mean``/``exact_var`` are given, else to the
    limit-solver sample; both are kept in ``extra``.  Degenerate scenarios run
    to T*eps/delta and report |mean - ODE value| together with the sample sd.
    """
    conv = dict(exp.converge)
    if coupling is not None:
        exp = _with_coupling(exp, coupling)
    kind = conv.get("kind", "homogenized-sde")
    spec = _limit_spec(exp, kind)
    epsilons = sorted(epsilons if epsilons is not None else conv.get("epsilons", [0.2, 0.1, 0.05]),
                      reverse=True)
    cfg = exp.sim.with_overrides(n_paths=n_paths, master_seed=seed,
                                 scheme=scheme or conv.get("scheme"))
    horizon = cfg.horizon
    x0 = cfg.initial_x
    rows, checks, prelim = [], [], {}
    limit_x = None

    if kind == "degenerate-ode":
        y0 = np.asarray(cfg.initial_y, dtype=float)
        ode = solve_degenerate_ode(spec, x0, y0, horizon, horizon / conv.get("ode_steps", 1000))
        target = ode.terminal[0]
        for eps in epsilons:
            reg = exp.coupling.regime(eps)
            run = run_prelimit(exp, regime=reg, scheme=cfg.scheme, n_paths=cfg.n_paths,
                               seed=cfg.master_seed, horizon=horizon * eps / reg.delta, threads=threads)
            xs = run.batch.terminal_x()
            prelim[eps] = xs
            mean, sd = float(np.mean(xs)), float(np.std(xs, ddof=1))
            se = 1.96 * sd / math.sqrt(xs.size)
            err = abs(mean - target)
            rows.append(ConvergenceRow(eps, reg.delta, reg.lam, err, (max(0.0, err - se), err + se),
                                       xs.size, {"mean": mean, "sd": sd, "target": target,
                                                 "escape_fraction": run.batch.escape_fraction,
                                                 "rescaled_horizon": horizon * eps / reg.delta}))
        table = ConvergenceTable.build(exp.name, "abs-mean-error", rows)
        sds = table.column("sd")
        tol = conv.get("mean_tol", 0.05)
        checks.append(Check("sd-decreasing", strictly_decreasing(sds),
                            "sd by eps: " + ", ".join(f"{v:.4g}" for v in sds)))
        final = table.rows[-1]
        checks.append(Check("final-mean", final.distance <= tol,
                            f"|mean - {target:.6g}| = {final.distance:.4g} (tol {tol})"))
        return StudyResult(table, tuple(checks), None, prelim)

    sticky = kind == "sticky-sde"
    lim_cfg = cfg.with_overrides(master_seed=(cfg.master_seed + 1) % 2**64)
    if sticky:
        limit_batch, _ = solve_sticky_sde(spec, lim_cfg, threads)
    else:
        limit_batch, _ = solve_homogenized_sde(spec, lim_cfg, threads)
    limit_x = limit_batch.x[:, -1]
    cdf = _exact_cdf(conv)
    for eps in epsilons:
        reg = exp.coupling.regime(eps)
        run = run_prelimit(exp, regime=reg, scheme=cfg.scheme, n_paths=cfg.n_paths,
                           seed=cfg.master_seed, horizon=horizon,
                           a_stop=horizon if sticky else math.inf, threads=threads)
        if sticky:
            samp = run.stopped_sample()
            xs = samp.kept_x()
        else:
            xs = run.batch.terminal_x()
        prelim[eps] = xs
        two = ks_distance(xs, limit_x, n_boot=n_boot, seed=cfg.master_seed)
        extra = {"ks_limit_solver": two.value, "ks_limit_solver_ci": two.bootstrap_ci,
                 "mean": float(np.mean(xs)), "sd": float(np.std(xs, ddof=1)),
                 "escape_fraction": run.batch.escape_fraction}
        rep = two
        if cdf is not None:
            rep = ks_to_law(xs, cdf, n_boot=n_boot, seed=cfg.master_seed)
            extra["ks_exact"] = rep.value
        rows.append(ConvergenceRow(eps, reg.delta, reg.lam, rep.value, rep.bootstrap_ci, xs.size, extra))
    n = cfg.n_paths
    floor = null_ks_threshold(n) if cdf is not None else null_ks_threshold(n, n)
    table = ConvergenceTable.build(exp.name, "KS", rows, floor)
    d = table.distances
    checks.append(Check("ks-decreasing", strictly_decreasing(d),
                        "KS by eps: " + ", ".join(f"{v:.4g}" for v in d)))
    thr = conv.get("ks_final_max")
    if thr is not None:
        checks.append(Check("final-ks", d[-1] <= thr, f"KS at eps={table.rows[-1].epsilon:g}: "
                                                       f"{d[-1]:.4g} (max {thr})"))
    return StudyResult(table, tuple(checks), limit_x, prelim)


def _with_coupling(exp, coupling):
    return replace(exp, coupling=coupling, regime=coupling.regime(exp.regime.epsilon))


def time_change_collapse(exp, epsilons: Sequence[float], level: float = 1.0,
                         n_paths: int | None = None, seed: int | None = None,
                         scheme: str | None = None, threads: int | None = None) -> ConvergenceTable:
    """Median of A^{-1}(level) along an eps ladder; tends to 0 when lambda/eps diverges."""
    if exp.coupling.q_limit.is_finite:
        raise RegimeMismatch("the collapse check applies when lambda/eps diverges")
    rows = []
    for eps in sorted(epsilons, reverse=True):
        reg = exp.coupling.regime(eps)
        run = run_prelimit(exp, regime=reg, scheme=scheme, n_paths=n_paths, seed=seed,
                           horizon=level, a_stop=level, threads=threads)
        s = run.stopped_sample().s[~run.batch.escaped_window]
        med = float(np.median(s))
        q = np.percentile(s, [25, 75])
        rows.append(ConvergenceRow(eps, reg.delta, reg.lam, med, (min(q[0], med), max(q[1], med)),
                                   s.size, {"mean": float(np.mean(s))}))
    return ConvergenceTable.build(exp.name, "median-inverse-A", rows)


def limit_self_test(spec: LimitSpec, cfg, repeats: int = 20, threads: int | None = None) -> dict:
    """KS between independent limit-solver samples; under the null ~95% fall below the threshold."""
    solve = solve_sticky_sde if spec.kind is LimitKind.STICKY_SDE else solve_homogenized_sde
    values = []
    for r in range(repeats):
        a, _ = solve(spec, cfg.with_overrides(master_seed=cfg.master_seed + 2 * r), threads)
        b, _ = solve(spec, cfg.with_overrides(master_seed=cfg.master_seed + 2 * r + 1), threads)
        values.append(_ks_sorted(np.sort(a.x[:, -1]), np.sort(b.x[:, -1])))
    thr = null_ks_threshold(cfg.n_paths, cfg.n_paths)
    values = np.array(values)
    return {"values": values, "threshold": thr, "fraction_below": float(np.mean(values <= thr))}
