"""Deterministic pseudo-random generation, bit-exact regardless of platform.

Everything random in this package flows through splitmix64: a 64-bit
counter-based generator (state advances by a fixed odd constant, output is a
finalizer mix of the state).  Because the state is a pure function of the
seed and the draw index, streams can be produced either one value at a time
(SplitMix64) or as whole numpy arrays (splitmix64_stream); both paths give
identical bits.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(x: int) -> int:
    """splitmix64 output finalizer applied to a 64-bit value."""
    z = x & MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def stream_seed(seed: int, tag: int) -> int:
    """Derive an independent stream seed: the tag-th raw output for `seed`."""
    return mix64((seed + tag * GOLDEN) & MASK64)


class SplitMix64:
    """Scalar splitmix64 generator."""

    def __init__(self, seed: int):
        self._state = seed & MASK64

    def next_u64(self) -> int:
        self._state = (self._state + GOLDEN) & MASK64
        return mix64(self._state)

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n) via floor(output * n / 2**64)."""
        return (self.next_u64() * n) >> 64

    def next_signed_unit(self) -> float:
        """Uniform float in the open interval (-1, 1)."""
        u = ((self.next_u64() >> 11) + 0.5) / 2.0**53
        return 2.0 * u - 1.0


def splitmix64_stream(seed: int, count: int) -> np.ndarray:
    """First `count` outputs of SplitMix64(seed) as a uint64 array."""
    if count == 0:
        return np.empty(0, dtype=np.uint64)
    idx = np.arange(1, count + 1, dtype=np.uint64)
    states = np.uint64(seed & MASK64) + idx * np.uint64(GOLDEN)
    z = states
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def _mul_shift_64(outs: np.ndarray, ranges: np.ndarray) -> np.ndarray:
    # floor(out * range / 2**64), exact for range < 2**32: split out into
    # 32-bit halves so every intermediate fits in uint64.
    hi = outs >> np.uint64(32)
    lo = outs & np.uint64(0xFFFFFFFF)
    r = ranges.astype(np.uint64)
    return ((hi * r + ((lo * r) >> np.uint64(32))) >> np.uint64(32)).astype(np.int64)


def sample_without_replacement(total: int, count: int, seed: int) -> np.ndarray:
    """Sample `count` distinct integers from [0, total), sorted ascending.

    Forward Fisher-Yates over [0, total): at step i swap position i with
    position i + floor(output * (total - i) / 2**64); the first `count`
    positions are the sample.  Steps beyond `count` cannot change them, so
    only `count` draws are consumed.
    """
    if not 0 < count <= total:
        raise ValueError(f"need 0 < count <= total, got count={count} total={total}")
    if count == total:
        return np.arange(total, dtype=np.int64)
    if total >= 1 << 32:
        raise ValueError("sampling domain must be below 2**32")
    outs = splitmix64_stream(seed, count)
    offsets = np.arange(count, dtype=np.int64)
    js = (offsets + _mul_shift_64(outs, (total - offsets))).tolist()
    # Sparse partial shuffle: only displaced slots are tracked.
    displaced: dict[int, int] = {}
    picked = [0] * count
    for i, j in enumerate(js):
        vj = displaced.get(j, j)
        picked[i] = vj
        displaced[j] = displaced.get(i, i)
    return np.sort(np.asarray(picked, dtype=np.int64))


def uniform_open_values(count: int, seed: int) -> np.ndarray:
    """`count` uniform floats in (-1, 1), matching SplitMix64.next_signed_unit."""
    outs = splitmix64_stream(seed, count)
    u = ((outs >> np.uint64(11)).astype(np.float64) + 0.5) / 2.0**53
    return 2.0 * u - 1.0
