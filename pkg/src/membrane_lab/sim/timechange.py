"""Inverse of the additive functional A and the scaled local-time sum."""
from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import QueryBeyondHorizon, ValidationError


def invert_time_change(bundle, query_times) -> np.ndarray:
    """s-values with A(s) = t, by piecewise-linear inversion on the bundle grid."""
    a = np.asarray(bundle.a_functional, dtype=float)
    times = np.asarray(bundle.times, dtype=float)
    q = np.atleast_1d(np.asarray(query_times, dtype=float))
    if np.any(np.diff(a) <= 0):
        raise ValidationError("a-increasing", "A must be strictly increasing to invert it")
    if np.any(q < 0):
        raise ValueError("query times must be non-negative")
    if np.any(q > a[-1]):
        raise QueryBeyondHorizon(f"query {q.max():g} beyond A_T = {a[-1]:g}")
    return np.interp(q, a, times)


def sample_at(bundle, s) -> tuple[np.ndarray, np.ndarray]:
    """(X, Y) linearly interpolated at times s."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    x = np.interp(s, bundle.times, bundle.x)
    y = np.stack([np.interp(s, bundle.times, bundle.y[:, i]) for i in range(bundle.y.shape[1])],
                 axis=-1) if bundle.y.ndim == 2 and bundle.y.shape[1] else np.zeros((s.size, 0))
    return x, y


def time_changed(bundle, query_times) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(s, X_s, Y_s) with s = A^{-1}(t) for every query time t."""
    s = invert_time_change(bundle, query_times)
    x, y = sample_at(bundle, s)
    return s, x, y


def local_time_sum_path(bundle, epsilon: float | None = None) -> Callable[[np.ndarray], np.ndarray]:
    """t -> eps * sum_k L^{a_k}_t, piecewise linear on the grid and zero at t = 0."""
    eps = bundle.epsilon if epsilon is None else epsilon
    if eps is None:
        raise ValueError("epsilon is needed to scale the local-time sum")
    values = eps * np.asarray(bundle.local_time_total, dtype=float)
    times = np.asarray(bundle.times, dtype=float)

    def f(t):
        return np.interp(t, times, values)

    f.times = times
    f.values = values
    return f
