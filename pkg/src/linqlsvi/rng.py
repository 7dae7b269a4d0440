"""xoshiro256** seeded through SplitMix64.

Agent runs draw exactly one 64-bit word per sampled transition (and one per
random initial state), so traces can be replayed from the seed alone.
"""
from __future__ import annotations

_MASK = (1 << 64) - 1


def splitmix64(state: int):
    """Return (next_state, output) of one SplitMix64 step."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Xoshiro256:
    """xoshiro256** 1.0 with SplitMix64 seeding."""

    __slots__ = ("_s", "draws")

    def __init__(self, seed: int):
        seed = int(seed) & _MASK
        words = []
        for _ in range(4):
            seed, out = splitmix64(seed)
            words.append(out)
        self._s = words
        self.draws = 0

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        self.draws += 1
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits of one draw."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def integers(self, n: int) -> int:
        """Index in [0, n) from one draw."""
        return min(int(self.random() * n), n - 1)
