"""Portable seedable RNG (PCG32) for reproducible dataset construction.

PCG-XSH-RR 64/32 (O'Neill 2014). Implemented here rather than taken from
``random``/``numpy.random`` so that generated splits are bit-reproducible
across platforms and library versions; the algorithm below is frozen.
"""

from __future__ import annotations

_MULT = 6364136223846793005
_MASK64 = (1 << 64) - 1


class Pcg32:
    """32-bit PCG generator with a seed and an independent stream id."""

    def __init__(self, seed: int, stream: int = 0):
        self._state = 0
        self._inc = ((stream << 1) | 1) & _MASK64
        self._next_u32()
        self._state = (self._state + (seed & _MASK64)) & _MASK64
        self._next_u32()

    def _next_u32(self) -> int:
        old = self._state
        self._state = (old * _MULT + self._inc) & _MASK64
        xorshifted = (((old >> 18) ^ old) >> 27) & 0xFFFFFFFF
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & 0xFFFFFFFF

    def randrange(self, n: int) -> int:
        """Uniform integer in [0, n) via unbiased rejection sampling."""
        if n <= 0:
            raise ValueError("randrange() bound must be positive")
        threshold = (1 << 32) % n
        while True:
            r = self._next_u32()
            if r >= threshold:
                return r % n

    def random(self) -> float:
        """Uniform float in [0, 1) with 32 bits of entropy."""
        return self._next_u32() / (1 << 32)

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def choice(self, seq):
        if not seq:
            raise ValueError("choice() from empty sequence")
        return seq[self.randrange(len(seq))]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randrange(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample_indices(self, n: int, k: int) -> list[int]:
        """k distinct indices drawn from range(n), order randomized."""
        if k > n:
            raise ValueError("sample larger than population")
        pool = list(range(n))
        self.shuffle(pool)
        return pool[:k]


def stream_for(label: str) -> int:
    """Stable 63-bit stream id for a string label (FNV-1a)."""
    h = 0xCBF29CE484222325
    for byte in label.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & _MASK64
    return h >> 1
