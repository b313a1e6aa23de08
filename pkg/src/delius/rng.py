"""Deterministic random number generation.

The stream is xoshiro256++ with its four state words seeded from
splitmix64, implemented on Python integers so a given seed produces the
same sequence of 64-bit words on every platform.  Every stochastic
choice in the package (weight initialisation, epoch shuffles, restart
seeds, sampling, layout initialisation) draws from one of these
generators, which is what makes whole pipeline runs reproducible from a
single seed.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_INV_2_53 = 2.0 ** -53


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state by one step; returns (new_state, output)."""
    state = (state + _GOLDEN) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


class Rng:
    """xoshiro256++ generator with the draw helpers used across the package."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        sm = self.seed
        state = []
        for _ in range(4):
            sm, word = splitmix64(sm)
            state.append(word)
        self._s = state

    def next_u64(self) -> int:
        """Next raw 64-bit word of the stream."""
        s0, s1, s2, s3 = self._s
        x = (s0 + s3) & _MASK
        result = ((((x << 23) & _MASK) | (x >> 41)) + s0) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) & _MASK) | (s3 >> 19)
        self._s = [s0, s1, s2, s3]
        return result

    def _u64_block(self, n: int) -> list[int]:
        # Inlined next_u64 loop; the generator is the hot path when
        # initialising multi-million parameter networks.
        s0, s1, s2, s3 = self._s
        mask = _MASK
        out = [0] * n
        for i in range(n):
            x = (s0 + s3) & mask
            out[i] = ((((x << 23) & mask) | (x >> 41)) + s0) & mask
            t = (s1 << 17) & mask
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) & mask) | (s3 >> 19)
        self._s = [s0, s1, s2, s3]
        return out

    def uniform(self) -> float:
        """One float in [0, 1) with 53-bit resolution."""
        return (self.next_u64() >> 11) * _INV_2_53

    def uniforms(self, n: int) -> np.ndarray:
        block = self._u64_block(n)
        ints = np.fromiter((x >> 11 for x in block), dtype=np.float64, count=n)
        return ints * _INV_2_53

    def normal(self, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """Gaussian draws via the Box-Muller transform."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        count = 1
        for dim in shape:
            count *= dim
        pairs = (count + 1) // 2
        block = self._u64_block(2 * pairs)
        # u1 lies in (0, 1] so the logarithm is always defined.
        u1 = np.fromiter((x >> 11 for x in block[0::2]), dtype=np.float64, count=pairs)
        u2 = np.fromiter((x >> 11 for x in block[1::2]), dtype=np.float64, count=pairs)
        u1 = (u1 + 1.0) * _INV_2_53
        u2 = u2 * _INV_2_53
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * math.pi * u2
        draws = np.empty(2 * pairs, dtype=np.float64)
        draws[0::2] = radius * np.cos(angle)
        draws[1::2] = radius * np.sin(angle)
        return (mean + std * draws[:count]).reshape(shape)

    def below(self, bound: int) -> int:
        """Unbiased integer in [0, bound) via rejection sampling."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % bound

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        order = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            order[i], order[j] = order[j], order[i]
        return np.array(order, dtype=np.int64)

    def weighted_index(self, weights: np.ndarray) -> int:
        """Index drawn with probability proportional to the given weights."""
        weights = np.asarray(weights, dtype=np.float64)
        total = float(weights.sum())
        if not total > 0.0 or not np.isfinite(total):
            raise ValueError("weights must have a positive finite sum")
        target = self.uniform() * total
        cumulative = np.cumsum(weights)
        idx = int(np.searchsorted(cumulative, target, side="right"))
        return min(idx, len(weights) - 1)

    def spawn(self) -> "Rng":
        """Child generator seeded from the next word of this stream."""
        return Rng(self.next_u64())
