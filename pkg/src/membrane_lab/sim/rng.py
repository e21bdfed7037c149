"""Counter-based random streams (Philox4x32-10), one lane per sample path.

A lane is addressed by ``(master_seed, path_index)``: the master seed is the
Philox key, the path index occupies the upper half of the 128-bit counter and
the draw index the lower half.  Every path therefore owns a private stream
that is reproducible no matter which worker thread generates it or in which
order paths are scheduled.

Inside numba kernels a stream is a small ``uint64`` state vector created by
:func:`lane_state`; draws go through :func:`next_uniform` / :func:`next_normal`
(the latter also takes the float64 view of the same buffer).
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

# state layout: key0, key1, path_lo, path_hi, counter, cached_normal_bits, has_cached
STATE_SIZE = 7
_TWO_M53 = 1.0 / 9007199254740992.0


@nb.njit(cache=True, inline="always")
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten-round Philox4x32 bijection; all inputs/outputs are uint64 holding 32 bits."""
    for r in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _SHIFT32
        lo0 = p0 & _MASK32
        hi1 = p1 >> _SHIFT32
        lo1 = p1 & _MASK32
        c0 = (hi1 ^ c1 ^ k0) & _MASK32
        c1 = lo1
        c2 = (hi0 ^ c3 ^ k1) & _MASK32
        c3 = lo0
        if r < 9:
            k0 = (k0 + _W0) & _MASK32
            k1 = (k1 + _W1) & _MASK32
    return c0, c1, c2, c3


@nb.njit(cache=True)
def lane_state(master_seed, path_index):
    st = np.zeros(STATE_SIZE, dtype=np.uint64)
    seed = np.uint64(master_seed)
    idx = np.uint64(path_index)
    st[0] = seed & _MASK32
    st[1] = seed >> _SHIFT32
    st[2] = idx & _MASK32
    st[3] = idx >> _SHIFT32
    return st


@nb.njit(cache=True, inline="always")
def _next_block(st):
    ctr = st[4]
    st[4] = ctr + np.uint64(1)
    return philox4x32(ctr & _MASK32, ctr >> _SHIFT32, st[2], st[3], st[0], st[1])


@nb.njit(cache=True, inline="always")
def _to_unit(hi, lo):
    # 53-bit mantissa, strictly inside (0, 1)
    bits = (hi << np.uint64(21)) | (lo >> np.uint64(11))
    return (float(bits) + 0.5) * _TWO_M53


@nb.njit(cache=True, inline="always")
def next_uniform_pair(st):
    a, b, c, d = _next_block(st)
    return _to_unit(a, b), _to_unit(c, d)


@nb.njit(cache=True, inline="always")
def next_uniform(st):
    u, _ = next_uniform_pair(st)
    return u


@nb.njit(cache=True, inline="always")
def next_normal(st, stf):
    """Marsaglia polar method.

    ``stf`` must be ``st.view(np.float64)``; the spare variate of each pair is
    parked in slot 5 of the shared buffer.
    """
    if st[6] != 0:
        st[6] = np.uint64(0)
        return stf[5]
    while True:
        u1, u2 = next_uniform_pair(st)
        v1 = 2.0 * u1 - 1.0
        v2 = 2.0 * u2 - 1.0
        s = v1 * v1 + v2 * v2
        if 0.0 < s < 1.0:
            break
    f = math.sqrt(-2.0 * math.log(s) / s)
    stf[5] = v2 * f
    st[6] = np.uint64(1)
    return v1 * f


@nb.njit(cache=True)
def _fill_normals(master_seed, path_index, out):
    st = lane_state(master_seed, path_index)
    stf = st.view(np.float64)
    for i in range(out.size):
        out[i] = next_normal(st, stf)


@nb.njit(cache=True)
def _fill_uniforms(master_seed, path_index, out):
    st = lane_state(master_seed, path_index)
    for i in range(out.size):
        out[i] = next_uniform(st)


class RngLane:
    """Python-side view of one path's stream, mainly for tests and small draws."""

    def __init__(self, master_seed: int, path_index: int):
        if not 0 <= master_seed < 2**64:
            raise ValueError("master_seed must fit in 64 bits")
        if not 0 <= path_index < 2**64:
            raise ValueError("path_index must fit in 64 bits")
        self.master_seed = int(master_seed)
        self.path_index = int(path_index)

    def normals(self, n: int) -> np.ndarray:
        out = np.empty(n)
        _fill_normals(np.uint64(self.master_seed), np.uint64(self.path_index), out)
        return out

    def uniforms(self, n: int) -> np.ndarray:
        out = np.empty(n)
        _fill_uniforms(np.uint64(self.master_seed), np.uint64(self.path_index), out)
        return out

    def __repr__(self):
        return f"RngLane(master_seed={self.master_seed}, path_index={self.path_index})"
