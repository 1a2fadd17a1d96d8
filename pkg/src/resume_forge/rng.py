"""Seedable xoshiro256** generator with a persistable four-word state.

numpy's generators are avoided on purpose: the whole state here is four
unsigned 64-bit words, which the checkpoint format stores verbatim so a
resumed run continues the exact same stream.
"""

from __future__ import annotations

from typing import Iterable

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One splitmix64 output for the counter value ``x``."""
    z = (x + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, stream: int) -> int:
    """Mix a base seed with a stream index (e.g. an epoch number)."""
    return splitmix64((seed & MASK64) ^ splitmix64((stream + 1) & MASK64))


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    """xoshiro256** (Blackman & Vigna), pure Python integers."""

    __slots__ = ("_s",)

    def __init__(self, seed: int = 0):
        s = []
        x = seed & MASK64
        for _ in range(4):
            s.append(splitmix64(x))
            x = (x + _GOLDEN) & MASK64
        self._s = s

    @classmethod
    def from_state(cls, words: Iterable[int]) -> "Xoshiro256":
        words = [int(w) & MASK64 for w in words]
        if len(words) != 4:
            raise ValueError(f"xoshiro256 state needs 4 words, got {len(words)}")
        if not any(words):
            raise ValueError("xoshiro256 state must not be all zero")
        g = cls.__new__(cls)
        g._s = words
        return g

    @property
    def state(self) -> tuple[int, int, int, int]:
        return tuple(self._s)

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = ((1 << 64) // n) * n
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def permutation(self, m: int) -> list[int]:
        """Fisher-Yates shuffle of range(m)."""
        perm = list(range(m))
        for i in range(m - 1, 0, -1):
            j = self.randbelow(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm
