"""Command-line runner: ``membrane-lab <command> [options]``.

Commands: exit-lab, simulate, limit-sde, sticky-sde, ode-limit, converge,
ltime-check.  Each reads a TOML experiment (``--config`` or a built-in
``--scenario``), writes its artifacts under ``--out`` and exits with 0 only if
every check it ran passed.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import Check, _exact_cdf, convergence_study, local_time_functional_check
from .config import load_experiment, scenario_path
from .errors import ConfigError, MembraneLabError, SimulationError, ValidationError
from .exit_lab import single_membrane_exit_mc, skew_exit_oracle, strip_asymptotics
from .limit_solvers import (solve_degenerate_ode, solve_homogenized_sde, solve_sticky_ode,
                            solve_sticky_sde)
from .membrane_sim import run_prelimit
from .model import LimitKind, LimitSpec, sigma_matrix
from .report import Report, fig_convergence, fig_exit_stats, fig_local_time, fig_ode, fig_paths
from .sim.io import write_bundle, write_bundle_csv

COMMANDS = ("exit-lab", "simulate", "limit-sde", "sticky-sde", "ode-limit", "converge", "ltime-check")


def _eps_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals or any(not 0 < v <= 1 for v in vals):
        raise argparse.ArgumentTypeError("each eps must lie in (0, 1]")
    return vals


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--config", type=Path, help="experiment TOML file")
    src.add_argument("--scenario", help="built-in scenario name")
    common.add_argument("--seed", type=_seed, help="master seed (overrides the config)")
    common.add_argument("--paths", type=int, help="number of sample paths")
    common.add_argument("--eps", type=_eps_list, help="comma-separated membrane scales")
    common.add_argument("--scheme", choices=("euler", "stripwalk"), help="prelimit sampler")
    common.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
    common.add_argument("--out", type=Path, help="output directory (default runs/<command>-<name>)")
    common.add_argument("--no-figures", action="store_true", help="skip PNG figures")

    p = argparse.ArgumentParser(prog="membrane-lab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    e = sub.add_parser("exit-lab", parents=[common], help="single-membrane exit statistics")
    e.add_argument("--a-minus", type=float, help="lower strip half-width in units of eps")
    e.add_argument("--a-plus", type=float, help="upper strip half-width in units of eps")
    s = sub.add_parser("simulate", parents=[common], help="sample prelimit paths")
    s.add_argument("--csv-paths", type=int, default=200, help="paths written to the CSV file")
    for name, what in (("limit-sde", "homogenized limit SDE"), ("sticky-sde", "time-changed limit SDE")):
        q = sub.add_parser(name, parents=[common], help=what)
        q.add_argument("--csv-paths", type=int, default=200, help="paths written to the CSV file")
    o = sub.add_parser("ode-limit", parents=[common], help="deterministic limits")
    o.add_argument("--kind", choices=("auto", "degenerate", "sticky"), default="auto")
    o.add_argument("--step", type=float, default=1e-3, help="RK4 step")
    sub.add_parser("converge", parents=[common], help="prelimit-to-limit convergence study")
    sub.add_parser("ltime-check", parents=[common], help="scaled local-time sum against its limit")
    return p


def _experiment(args):
    if args.config is not None:
        return load_experiment(args.config)
    return load_experiment(scenario_path(args.scenario or "exa1"))


def _report(args, exp) -> Report:
    out = args.out or Path("runs") / f"{args.command}-{exp.name}"
    return Report(out, exp.config_hash, args.command, figures=not args.no_figures)


def _status(checks) -> int:
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}")
    return 0 if all(c.passed for c in checks) else 1


# ------------------------------------------------------------------ commands


def cmd_exit_lab(args, exp) -> int:
    conv = exp.exit
    a_minus = args.a_minus or conv.get("a_minus", 1.0)
    a_plus = args.a_plus or conv.get("a_plus", 1.0)
    n_paths = args.paths or exp.sim.n_paths
    seed = exp.sim.master_seed if args.seed is None else args.seed
    eps_list = args.eps or [exp.regime.epsilon]
    fld = exp.field
    y0 = np.asarray(exp.sim.initial_y, dtype=float)
    lay = fld.layout
    beta0 = float(fld.evaluate_row(lay.beta, np.zeros(1), np.zeros(1), y0[None, :])[0])
    b0 = float(fld.evaluate_row(lay.b0, np.zeros(1), np.zeros(1), y0[None, :])[0])
    s00 = float(sigma_matrix(fld, 0.0, 0.0, y0)[0, 0])
    rep = _report(args, exp)
    checks, rows, taus, log = [], [], [], []
    p_tol = conv.get("p_tol_abs", 0.01)
    disp_tol = conv.get("displacement_tol")
    for eps in eps_list:
        reg = exp.coupling.regime(eps)
        run = single_membrane_exit_mc(fld, reg, a_minus, a_plus, start_y=y0, n_paths=n_paths,
                                      seed=seed, bridge=conv.get("bridge", True), threads=args.threads)
        st = run.stats
        th = strip_asymptotics(a_minus, a_plus, eps, reg.delta, beta0, b0, s00)
        th["p_up"] = skew_exit_oracle(0.5 * (1 + reg.delta * beta0), a_minus, a_plus)
        est = {"p_up": st.p_up, "mean_local_time": st.mean_local_time,
               "mean_exit_time": st.mean_exit_time, "mean_displacement": st.mean_displacement}
        for k, e in est.items():
            rel = abs(e.value - th[k]) / abs(th[k]) if th[k] else math.nan
            rows.append((eps, k, e.value, e.half_width, th[k], rel))
        se = st.standard_error_p_up
        dp = abs(st.p_up.value - th["p_up"])
        checks.append(Check(f"p_up eps={eps:g}", dp <= max(3 * se, p_tol),
                            f"{st.p_up.value:.5f} vs {th['p_up']:.5f} (|diff| {dp:.2e}, 3SE {3 * se:.2e})"))
        for k in ("mean_local_time", "mean_exit_time"):
            e = est[k]
            d = abs(e.value - th[k])
            checks.append(Check(f"{k} eps={eps:g}", d <= 0.05 * th[k] + e.half_width,
                                f"{e.value:.6g} vs {th[k]:.6g} (tol 5% + CI)"))
        if disp_tol is not None:
            e = st.mean_displacement
            d = abs(e.value - th["mean_displacement"])
            checks.append(Check(f"mean_displacement eps={eps:g}",
                                d <= disp_tol * abs(th["mean_displacement"]),
                                f"{e.value:.6g} vs {th['mean_displacement']:.6g} (tol {disp_tol:.0%})"))
        checks.append(Check(f"exit before cap eps={eps:g}", st.n_capped == 0,
                            f"{st.n_capped} paths reached the cap {run.cap_time:.3g}"))
        taus.append((eps, st.mean_exit_time.value))
        log.append(f"eps={eps:g} delta={reg.delta:g} rho={run.rho:.6g} step={run.step:.6g} "
                   f"paths={n_paths} seed={seed}")
        rep.figure(f"exit_stats_eps{eps:g}.png", fig_exit_stats(
            [(k, est[k].value, est[k].half_width, th[k]) for k in est]))
    for (e1, t1), (e2, t2) in zip(taus, taus[1:]):
        if abs(e1 / e2 - 2.0) < 1e-9:
            ratio = t1 / t2
            checks.append(Check(f"exit-time ratio eps {e1:g}->{e2:g}", 3.6 <= ratio <= 4.4,
                                f"{ratio:.4f} (expected in [3.6, 4.4])"))
    rep.table("exit_stats.csv", ["epsilon", "statistic", "estimate", "ci", "theory", "relative_error"],
              rows, seed=seed, paths=n_paths)
    rep.verdict(checks, scenario=exp.name, seed=seed, paths=n_paths)
    rep.log(log)
    return _status(checks)


def _bundle_checks(batch, sticky_clock: bool = False) -> list:
    t = batch.times
    a = batch.a_functional
    da = np.diff(a, axis=1)
    slack = 1e-12 * max(1.0, float(np.abs(a).max()))
    checks = [
        Check("A starts at 0", bool(np.all(a[:, 0] == 0.0)), "A_0 = 0 on every path"),
        Check("A_t >= t", bool(np.all(a >= t - slack)), f"min(A - t) = {float(np.min(a - t)):.3g}"),
        Check("A strictly increasing", bool(np.all(da > 0)), f"min increment {float(da.min()):.3g}"),
        Check("local time nondecreasing", bool(np.all(np.diff(batch.local_time_total, axis=1) >= 0)),
              "total local time never decreases"),
    ]
    if sticky_clock:
        checks.append(Check("sticky clock", bool(np.allclose(a, t)), "A is the identity on this clock"))
    return checks


def _write_paths(args, rep, exp, batch, label: str) -> list[str]:
    write_bundle(rep.path("bundle.bin"), batch, exp.config_hash)
    n = write_bundle_csv(rep.path("paths.csv"), batch, exp.config_hash, max_paths=args.csv_paths,
                         command=args.command)
    xs = batch.terminal_x()
    rows = [("n_paths", batch.n_paths), ("escape_fraction", batch.escape_fraction),
            ("mean_x_T", float(np.mean(xs))), ("sd_x_T", float(np.std(xs, ddof=1))),
            ("mean_A_T", float(np.mean(batch.a_functional[:, -1]))),
            ("mean_local_time_T", float(np.mean(batch.local_time_total[:, -1])))]
    rep.table("summary.csv", ["quantity", "value"], rows)
    rep.figure("paths.png", fig_paths(batch.times, batch.x, xs, label))
    return [f"{k} = {v}" for k, v in rows] + [f"csv paths written: {n}"]


def cmd_simulate(args, exp) -> int:
    eps = args.eps[0] if args.eps else None
    run = run_prelimit(exp, epsilon=eps, scheme=args.scheme, n_paths=args.paths, seed=args.seed,
                       threads=args.threads)
    rep = _report(args, exp)
    log = [f"scheme={run.cfg.scheme} eps={run.regime.epsilon:g} delta={run.regime.delta:g} "
           f"lambda={run.regime.lam:g} membranes={len(run.membranes)} seed={run.cfg.master_seed}"]
    log += _write_paths(args, rep, exp, run.batch, f"{exp.name}, {run.cfg.scheme}")
    checks = _bundle_checks(run.batch)
    esc = run.batch.escape_fraction
    checks.append(Check("window escapes", esc < 1e-3, f"escape fraction {esc:.2e}"))
    rep.verdict(checks, scenario=exp.name, seed=run.cfg.master_seed)
    rep.log(log)
    return _status(checks)


def cmd_limit(args, exp, sticky: bool) -> int:
    c = exp.coupling
    kind = LimitKind.STICKY_SDE if sticky else LimitKind.HOMOGENIZED_SDE
    spec = LimitSpec(exp.field, exp.density, c.p_limit, c.q_limit, c.r_limit, kind)
    cfg = exp.sim.with_overrides(n_paths=args.paths, master_seed=args.seed)
    solve = solve_sticky_sde if sticky else solve_homogenized_sde
    batch, _ = solve(spec, cfg, args.threads)
    rep = _report(args, exp)
    log = [f"kind={kind.value} p={c.p_limit} q={c.q_limit} steps={cfg.limit_steps} "
           f"seed={cfg.master_seed}"]
    log += _write_paths(args, rep, exp, batch, f"{exp.name}, {kind.value}")
    checks = _bundle_checks(batch, sticky_clock=sticky)
    rep.verdict(checks, scenario=exp.name, seed=cfg.master_seed)
    rep.log(log)
    return _status(checks)


def cmd_ode(args, exp) -> int:
    c = exp.coupling
    kind = args.kind
    if kind == "auto":
        kind = "degenerate" if not c.p_limit.is_finite else "sticky"
    if kind == "degenerate":
        spec = LimitSpec(exp.field, exp.density, c.p_limit, c.q_limit, c.r_limit, LimitKind.DEGENERATE_ODE)
        solve = solve_degenerate_ode
    else:
        spec = LimitSpec(exp.field, exp.density, c.p_limit, c.q_limit, c.r_limit, LimitKind.STICKY_ODE)
        solve = solve_sticky_ode
    sim = exp.sim
    y0 = np.asarray(sim.initial_y, dtype=float)
    path = solve(spec, sim.initial_x, y0, sim.horizon, args.step)
    half = solve(spec, sim.initial_x, y0, sim.horizon, args.step / 2)
    quarter = solve(spec, sim.initial_x, y0, sim.horizon, args.step / 4)
    err1 = abs(path.terminal[0] - half.terminal[0])
    err2 = abs(half.terminal[0] - quarter.terminal[0])
    order = math.log2(err1 / err2) if err2 > 0 and err1 > 0 else math.inf
    rep = _report(args, exp)
    cols = ["t", "x"] + [f"y{i + 1}" for i in range(path.y.shape[1])]
    rep.table("ode_path.csv", cols, np.column_stack([path.times, path.x, path.y]), kind=kind)
    rep.dat("ode_path.dat", ["t", "x"], np.column_stack([path.times, path.x]))
    rep.figure("ode_path.png", fig_ode(path.times, path.x, f"{exp.name}: {kind} ODE"))
    checks = [Check("finite solution", bool(np.all(np.isfinite(path.x))), f"X_T = {path.terminal[0]:.12g}"),
              Check("step-halving", err1 <= 1e-6 * max(1.0, abs(path.terminal[0])) or order >= 3.8,
                    f"differences {err1:.3g}, {err2:.3g}; observed order {order:.3g}")]
    rep.verdict(checks, scenario=exp.name, kind=kind)
    rep.log([f"kind={kind} step={args.step:g} X_T={path.terminal[0]!r}"])
    return _status(checks)


def cmd_converge(args, exp) -> int:
    res = convergence_study(exp, epsilons=args.eps, n_paths=args.paths, seed=args.seed,
                            scheme=args.scheme, threads=args.threads)
    t = res.table
    rep = _report(args, exp)
    keys = sorted({k for r in t.rows for k, v in r.extra.items() if not isinstance(v, tuple)})
    rows = [(r.epsilon, r.delta, r.lam, r.distance, r.ci[0], r.ci[1], r.n_paths)
            + tuple(r.extra.get(k, math.nan) for k in keys) for r in t.rows]
    rep.table("convergence.csv", ["epsilon", "delta", "lambda", "distance", "ci_lo", "ci_hi", "n_paths"]
              + keys, rows, statistic=t.statistic, slope=fmt_num(t.slope), fitted_rows=t.fitted_rows)
    rep.dat("convergence.dat", ["log_eps", "log_distance"],
            np.column_stack([np.log(t.epsilons), np.log(np.maximum(t.distances, 1e-300))]))
    rep.figure("convergence.png", fig_convergence(t, res.prelimit_samples, res.limit_samples,
                                                  _exact_cdf(exp.converge)))
    rep.verdict(res.checks, scenario=exp.name, slope=t.slope, statistic=t.statistic)
    rep.log([f"eps={list(t.epsilons)} paths={t.rows[0].n_paths if t.rows else 0}"])
    return _status(res.checks)


def fmt_num(v: float) -> str:
    return "nan" if math.isnan(v) else format(v, ".17g")


def cmd_ltime(args, exp) -> int:
    conv = exp.converge
    eps_list = sorted(args.eps or conv.get("epsilons", [exp.regime.epsilon]), reverse=True)
    rep = _report(args, exp)
    rows, sups, last = [], [], None
    for eps in eps_list:
        run = run_prelimit(exp, epsilon=eps, scheme=args.scheme, n_paths=args.paths, seed=args.seed,
                           threads=args.threads)
        chk = local_time_functional_check(run.batch, exp.field, exp.density)
        rows.append((eps, chk.mean_sup, chk.p95_sup, chk.terminal_mean, chk.limit_terminal_mean,
                     chk.n_paths, run.batch.escape_fraction))
        sups.append(chk.mean_sup)
        last = run
    rep.table("ltime_check.csv", ["epsilon", "mean_sup", "p95_sup", "mean_scaled_sum_T",
                                  "mean_limit_T", "n_paths", "escape_fraction"], rows)
    rep.dat("ltime_check.dat", ["log_eps", "log_mean_sup"],
            np.column_stack([np.log(eps_list), np.log(sups)]))
    b = last.batch
    rep.figure("ltime_check.png", fig_local_time(b.times, chk.scaled_sum, chk.limit_sum, eps_list, sups))
    thr = conv.get("max_mean_sup", 0.05)
    checks = [Check("final mean sup", sups[-1] <= thr, f"{sups[-1]:.4g} at eps={eps_list[-1]:g} (max {thr})")]
    if len(sups) > 1:
        checks.append(Check("nonincreasing", bool(np.all(np.diff(sups) <= 0)),
                            "mean sup by eps: " + ", ".join(f"{v:.4g}" for v in sups)))
    rep.verdict(checks, scenario=exp.name)
    rep.log([f"eps={eps_list} paths={b.n_paths} scheme={last.cfg.scheme}"])
    return _status(checks)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        exp = _experiment(args)
        if args.command == "exit-lab":
            return cmd_exit_lab(args, exp)
        if args.command == "simulate":
            return cmd_simulate(args, exp)
        if args.command in ("limit-sde", "sticky-sde"):
            return cmd_limit(args, exp, args.command == "sticky-sde")
        if args.command == "ode-limit":
            return cmd_ode(args, exp)
        if args.command == "converge":
            return cmd_converge(args, exp)
        return cmd_ltime(args, exp)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 3
    except SimulationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return 4
    except MembraneLabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
