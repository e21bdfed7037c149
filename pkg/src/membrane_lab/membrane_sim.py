"""Prelimit path sampling: scheme dispatch, window sizing and failure reporting."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FrozenCoefficientRange, SimulationError
from .model import MembraneFamily, ScalingRegime, build_membranes, window_halfwidth
from .sim.bundle import PathBatch, PathBundle, TimeChangedSample
from .sim.euler import simulate_euler_mollified
from .sim.rng import RngLane
from .sim.stripwalk import STATUS_TEXT, simulate_strip_walk
from .sim.timechange import invert_time_change, local_time_sum_path, sample_at, time_changed

__all__ = [
    "PathBatch", "PathBundle", "RngLane", "TimeChangedSample", "PrelimitRun", "invert_time_change",
    "local_time_sum_path", "membrane_window", "run_prelimit", "sample_at", "simulate_euler_mollified",
    "simulate_strip_walk", "time_changed",
]


@dataclass(frozen=True, eq=False)
class PrelimitRun:
    batch: PathBatch
    raw: dict
    membranes: MembraneFamily
    regime: ScalingRegime
    cfg: object

    def stopped_sample(self) -> TimeChangedSample:
        """State at the first time A reached the requested level."""
        r = self.raw
        missing = np.isnan(r["stop_x"])
        # A never reached the level only if the horizon was too short; keep the terminal value
        x = np.where(missing, self.batch.x[:, -1], r["stop_x"])
        y = np.where(missing[:, None], self.batch.y[:, -1, :], r["stop_y"])
        s = np.where(missing, self.batch.times[-1], r["stop_t"])
        return TimeChangedSample(float("nan"), s, x, y, self.batch.escaped_window.copy())


def membrane_window(exp, regime: ScalingRegime, horizon: float, x0: float) -> tuple[float, float]:
    """Window around ``x0`` that paths leave before ``horizon`` with probability < 1e-6."""
    fld, dens = exp.field, exp.density
    bd = fld.bounds
    drift = bd.b + regime.p_ratio * bd.beta * bd.sigma00_max / dens.d_min
    half = window_halfwidth(drift, bd.sigma00_max, horizon) + 2.0 * regime.epsilon * dens.d_max
    lo, hi = min(x0, 0.0) - half, max(x0, 0.0) + half
    return lo, hi


def run_prelimit(exp, epsilon: float | None = None, regime: ScalingRegime | None = None,
                 scheme: str | None = None, n_paths: int | None = None, seed: int | None = None,
                 horizon: float | None = None, a_stop: float = math.inf, threads: int | None = None,
                 first_path: int = 0) -> PrelimitRun:
    """Build membranes for ``exp`` at scale ``epsilon`` and sample prelimit paths.

    The coupling of the experiment gives (delta, lambda) when only epsilon is
    passed.  Paths flagged by the strip walk raise :class:`FrozenCoefficientRange`
    naming the first offending path.
    """
    if regime is None:
        regime = exp.regime if epsilon is None else exp.coupling.regime(epsilon)
    regime.check_permeability(exp.field.bounds.beta)
    cfg = exp.sim.with_overrides(scheme=scheme, n_paths=n_paths, master_seed=seed, horizon=horizon)
    lo, hi = membrane_window(exp, regime, cfg.horizon, cfg.initial_x)
    fam = build_membranes(exp.density, regime.epsilon, lo, hi, rule=exp.rule)
    if cfg.scheme == "euler":
        cfg = cfg.resolved(regime.epsilon, exp.density.d_min, exp.field.bounds.sigma00_max)
        batch, raw = simulate_euler_mollified(exp.field, fam, regime, cfg, threads, first_path,
                                              a_stop=a_stop)
    else:
        batch, raw = simulate_strip_walk(exp.field, fam, regime, cfg, threads, first_path,
                                         a_stop=a_stop)
        bad = np.flatnonzero(raw["status"])
        if bad.size:
            code = int(raw["status"][bad[0]])
            err = SimulationError(STATUS_TEXT.get(code, f"status {code}"),
                                  first_path + int(bad[0]), cfg.master_seed)
            raise FrozenCoefficientRange(str(err)) from err
    return PrelimitRun(batch, raw, fam, regime, cfg)
