"""Seedable, splittable pseudo-random numbers with cross-platform semantics.

The generator is a vectorised splitmix64: output ``i`` after seeding is
``mix64(seed + (i+1) * GOLDEN)`` where ``mix64`` is the standard finalizer
(Steele, Lea & Flood's SplittableRandom). Everything downstream (uniforms,
Box-Muller normals, bounded integers, partial shuffles) is derived from that
single 64-bit stream, so a seed fully determines every draw regardless of
how draws are batched.  ``split`` derives an independent child stream, which
is how per-batch / per-sample streams are handed out during training and
sampling.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """splitmix64 stream of uniforms, normals and bounded integers."""

    def __init__(self, seed: int):
        self._state = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)

    def next_u64(self, n: int = 1) -> np.ndarray:
        """Next ``n`` raw 64-bit outputs."""
        with np.errstate(over="ignore"):
            idx = np.arange(1, n + 1, dtype=np.uint64)
            states = self._state + idx * _GOLDEN
            self._state = states[-1]
            return _mix64(states)

    def split(self) -> "Rng":
        """Derive an independent child stream (consumes one output)."""
        return Rng(int(self.next_u64(1)[0]))

    def uniform(self, shape=()) -> np.ndarray:
        """Uniforms in (0, 1), 53-bit resolution, never exactly 0 or 1."""
        n = int(np.prod(shape)) if shape else 1
        bits = self.next_u64(n) >> np.uint64(11)
        u = (bits.astype(np.float64) + 0.5) * 2.0**-53
        return u.reshape(shape) if shape else float(u[0])

    def normal(self, shape=()) -> np.ndarray:
        """Standard normals via the Box-Muller transform."""
        n = int(np.prod(shape)) if shape else 1
        half = (n + 1) // 2
        u1 = np.asarray(self.uniform((half,)))
        u2 = np.asarray(self.uniform((half,)))
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape) if shape else float(z[0])

    def integers(self, high: int, shape=()) -> np.ndarray:
        """Integers uniform on [0, high). Modulo reduction; bias is O(high/2^64)."""
        if high <= 0:
            raise DomainError(f"integers() needs high >= 1, got {high}")
        n = int(np.prod(shape)) if shape else 1
        vals = (self.next_u64(n) % np.uint64(high)).astype(np.int64)
        return vals.reshape(shape) if shape else int(vals[0])

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct integers from [0, n), via a partial Fisher-Yates shuffle."""
        if not 0 <= k <= n:
            raise DomainError(f"cannot draw {k} distinct values from range({n})")
        pool = np.arange(n, dtype=np.int64)
        for i in range(k):
            j = i + int(self.integers(n - i))
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k].copy()
