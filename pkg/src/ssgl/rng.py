"""SplitMix64 random stream.

Every random choice in the package (subset selection, splits, noise,
synthetic data) draws from this generator so that a run is fully
determined by its integer seed.
"""
from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


class SplitMix64:
    """Sequential SplitMix64 stream with a few derived distributions."""

    def __init__(self, seed: int) -> None:
        self.state = int(seed) & _MASK
        self._spare: float | None = None

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK
        return _mix(self.state)

    def u64_array(self, count: int) -> np.ndarray:
        """Next `count` outputs, identical to calling next_u64 that many times."""
        steps = np.arange(1, count + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(_GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + count * _GAMMA) & _MASK
        return z

    def uniform(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform_array(self, count: int) -> np.ndarray:
        return (self.u64_array(count) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def below(self, bound: int) -> int:
        """Integer in [0, bound) by multiply-shift."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return (self.next_u64() * bound) >> 64

    def shuffle(self, items: list) -> list:
        """Fisher-Yates shuffle returning a new list."""
        out = list(items)
        for i in range(len(out) - 1, 0, -1):
            j = self.below(i + 1)
            out[i], out[j] = out[j], out[i]
        return out

    def normal_array(self, count: int) -> np.ndarray:
        """Standard normals by Box-Muller, two per pair of uniforms.

        Draws ceil(count / 2) pairs; the cosine branch fills even slots and
        the sine branch odd slots.
        """
        pairs = (count + 1) // 2
        u = self.uniform_array(2 * pairs).reshape(pairs, 2)
        # 1 - u lies in (0, 1], keeping the log finite
        radius = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
        theta = 2.0 * math.pi * u[:, 1]
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(theta)
        z[1::2] = radius * np.sin(theta)
        return z[:count]
