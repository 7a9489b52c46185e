"""Monte-Carlo plumbing: counter-based substreams and deterministic reductions.

Each path draws from its own Philox stream whose key is derived by mixing
(master seed, stream id) through splitmix64. Streams are therefore
order-independent: a path's noise depends only on (seed, id), never on how
paths are batched across workers.
"""

from __future__ import annotations

import numpy as np

from .errors import GridError, ParameterError

__all__ = ["stream_key", "gaussian_increments", "normal_increment_matrix", "reduce_mean_se"]

_MASK = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def stream_key(seed: int, stream_id: int) -> tuple[int, int]:
    """Two 64-bit Philox key words from (master seed, stream id)."""
    a = _splitmix64((seed & _MASK) ^ _splitmix64(stream_id & _MASK))
    b = _splitmix64(a ^ 0xD1B54A32D192ED03)
    return a, b


def _generator(seed: int, stream_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(seed, stream_id)))


def gaussian_increments(seed: int, stream_id: int, n: int, dt: float) -> np.ndarray:
    """n i.i.d. N(0, dt) variates, a pure function of (seed, stream_id)."""
    if dt <= 0:
        raise GridError("dt must be positive")
    return _generator(seed, stream_id).standard_normal(n) * np.sqrt(dt)


def normal_increment_matrix(seed: int, stream_ids, n: int, dt: float) -> np.ndarray:
    """Stack gaussian_increments for several stream ids, row per stream."""
    if dt <= 0:
        raise GridError("dt must be positive")
    ids = np.asarray(stream_ids, dtype=np.int64)
    out = np.empty((ids.size, n))
    root = np.sqrt(dt)
    for row, sid in enumerate(ids):
        out[row] = _generator(seed, int(sid)).standard_normal(n)
    out *= root
    return out


def _pairwise_sum(values: np.ndarray) -> np.ndarray:
    # fixed-tree pairwise fold over axis 0; odd leftover passes through a level
    a = values
    while a.shape[0] > 1:
        m = (a.shape[0] // 2) * 2
        folded = a[0:m:2] + a[1:m:2]
        if m < a.shape[0]:
            folded = np.concatenate([folded, a[m:]], axis=0)
        a = folded
    return a[0]


def reduce_mean_se(values, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and standard error with a fixed pairwise reduction tree.

    The tree depends only on the number of values, so results are
    bit-identical no matter how the values were produced in parallel.
    """
    a = np.asarray(values, dtype=float)
    if axis != 0:
        a = np.moveaxis(a, axis, 0)
    n = a.shape[0]
    if n < 2:
        raise ParameterError("standard error needs at least 2 values")
    mean = _pairwise_sum(a) / n
    var = _pairwise_sum((a - mean) ** 2) / (n - 1)
    return mean, np.sqrt(var / n)
