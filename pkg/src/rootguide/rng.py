"""Portable seeded PRNG: xorshift64* with splitmix64 seeding.

Streams are defined bit-for-bit so other implementations can reproduce them:

    state = splitmix64(seed)            (0 is remapped to a fixed constant)
    next: x ^= x >> 12; x ^= x << 25; x ^= x >> 27; out = x * 0x2545F4914F6CDD1D
    uniform() = (out >> 11) * 2**-53
"""

from __future__ import annotations

import math

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class XorShift64Star:
    def __init__(self, seed: int):
        s = splitmix64(int(seed) & MASK64)
        self.state = s if s else 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & MASK64

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return lo + (hi - lo) * ((self.next_u64() >> 11) * 2.0**-53)

    def uniform_vec(self, lo: float, hi: float, n: int) -> list[float]:
        return [self.uniform(lo, hi) for _ in range(n)]

    def integers(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi) by rejection (no modulo bias)."""
        span = hi - lo
        if span <= 0:
            raise ValueError("empty integer range")
        limit = (1 << 64) - ((1 << 64) % span)
        while True:
            v = self.next_u64()
            if v < limit:
                return lo + v % span

    def normal(self) -> float:
        # Box-Muller; one draw per call keeps the stream position simple
        u1 = 1.0 - self.uniform()  # (0, 1]
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
