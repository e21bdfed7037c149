"""Sampled paths of (X, Y, local time, additive functional) on a time grid."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError


@dataclass(frozen=True, eq=False)
class PathBundle:
    """One path on the grid ``times``."""

    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    local_time_total: np.ndarray
    weighted_ltime_beta: np.ndarray
    weighted_ltime_theta: np.ndarray
    weighted_ltime_gamma: np.ndarray
    a_functional: np.ndarray
    escaped_window: bool = False
    epsilon: float | None = None
    path_index: int = 0

    def check_invariants(self, rtol: float = 1e-12) -> None:
        t = self.times
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValidationError("times-increasing", "grid must start at 0 and increase strictly")
        a = self.a_functional
        if a[0] != 0.0:
            raise ValidationError("a-start", f"A_0 = {a[0]!r}, expected 0")
        slack = rtol * max(1.0, float(np.abs(a).max()))
        if np.any(np.diff(a) - np.diff(t) < -slack):
            raise ValidationError("a-slope", "A grows slower than t on some grid cell")
        if np.any(a < t - slack):
            raise ValidationError("a-above-t", "A_t < t on some grid point")
        if np.any(np.diff(self.local_time_total) < 0):
            raise ValidationError("ltime-monotone", "total local time decreases")


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Many paths sharing a grid; row ``i`` is path index ``first_index + i``."""

    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    local_time_total: np.ndarray
    weighted_ltime_beta: np.ndarray
    weighted_ltime_theta: np.ndarray
    weighted_ltime_gamma: np.ndarray
    a_functional: np.ndarray
    escaped_window: np.ndarray
    meta: dict = field(default_factory=dict)
    first_index: int = 0

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]

    @property
    def dim_y(self) -> int:
        return self.y.shape[2]

    def __len__(self) -> int:
        return self.n_paths

    def path(self, i: int) -> PathBundle:
        return PathBundle(self.times, self.x[i], self.y[i], self.local_time_total[i],
                          self.weighted_ltime_beta[i], self.weighted_ltime_theta[i],
                          self.weighted_ltime_gamma[i], self.a_functional[i],
                          bool(self.escaped_window[i]), self.meta.get("epsilon"),
                          self.first_index + i)

    def __iter__(self):
        return (self.path(i) for i in range(self.n_paths))

    @property
    def escape_fraction(self) -> float:
        return float(np.mean(self.escaped_window)) if self.n_paths else 0.0

    def kept(self) -> np.ndarray:
        """Boolean mask of paths that never left the membrane window."""
        return ~self.escaped_window

    def terminal_x(self, drop_escaped: bool = True) -> np.ndarray:
        xs = self.x[:, -1]
        return xs[self.kept()] if drop_escaped else xs

    def check_invariants(self) -> None:
        for p in self:
            p.check_invariants()

    def arrays(self) -> dict:
        return {
            "x": self.x, "y": self.y, "local_time_total": self.local_time_total,
            "weighted_ltime_beta": self.weighted_ltime_beta,
            "weighted_ltime_theta": self.weighted_ltime_theta,
            "weighted_ltime_gamma": self.weighted_ltime_gamma,
            "a_functional": self.a_functional,
            "escaped_window": self.escaped_window.astype(np.uint8),
        }


def empty_batch_arrays(n: int, grid_len: int, dim_y: int) -> dict:
    return {
        "x": np.zeros((n, grid_len)),
        "y": np.zeros((n, grid_len, dim_y)),
        "ltot": np.zeros((n, grid_len)),
        "wbeta": np.zeros((n, grid_len)),
        "wtheta": np.zeros((n, grid_len, dim_y)),
        "wgamma": np.zeros((n, grid_len)),
        "a": np.zeros((n, grid_len)),
        "escaped": np.zeros(n, dtype=np.bool_),
        "stop_t": np.full(n, np.nan),
        "stop_x": np.full(n, np.nan),
        "stop_y": np.full((n, dim_y), np.nan),
        "status": np.zeros(n, dtype=np.int64),
    }


def batch_from_arrays(times: np.ndarray, arr: dict, meta: dict) -> PathBatch:
    return PathBatch(times, arr["x"], arr["y"], arr["ltot"], arr["wbeta"], arr["wtheta"],
                     arr["wgamma"], arr["a"], arr["escaped"], meta)


@dataclass(frozen=True)
class TimeChangedSample:
    """Values of (X, Y) at the instant A first reaches ``level``, one row per path."""

    level: float
    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    escaped: np.ndarray

    def kept_x(self) -> np.ndarray:
        return self.x[~self.escaped]
