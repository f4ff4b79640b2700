"""Portable pseudo-random numbers: xorshift64* lanes seeded through splitmix64.

Lane i starts from the (i+1)-th splitmix64 output of the seed and then steps
with xorshift64* (shifts 12/25/27, multiplier 0x2545F4914F6CDD1D). Drawing a
(rows, cols) block uses one lane per row, so the integer stream is the same
in any language that implements these two generators.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
XORSHIFT_MULT = 0x2545F4914F6CDD1D
_INV_2_53 = 1.0 / (1 << 53)


def splitmix64(x: int) -> int:
    """One splitmix64 output for state ``x`` (after the gamma increment)."""
    z = (x + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *tags: int) -> int:
    """Fold integer tags into a seed so independent draws use independent streams."""
    value = seed & MASK64
    for tag in tags:
        value = splitmix64(value ^ (tag & MASK64))
    return value


def _splitmix_lanes(seed: int, lanes: int) -> np.ndarray:
    index = np.arange(1, lanes + 1, dtype=np.uint64)
    z = np.uint64(seed & MASK64) + index * np.uint64(GOLDEN_GAMMA)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    # xorshift must never sit in the all-zero state
    return np.where(z == 0, np.uint64(GOLDEN_GAMMA), z)


class XorShift64Star:
    """Vector of independent xorshift64* generators advanced in lockstep."""

    def __init__(self, seed: int, lanes: int = 1) -> None:
        if lanes < 1:
            raise ValueError(f"lanes must be >= 1, got {lanes}")
        self._state = _splitmix_lanes(seed, lanes)

    @property
    def lanes(self) -> int:
        return int(self._state.size)

    def next_u64(self, steps: int) -> np.ndarray:
        """Raw outputs, shape (lanes, steps)."""
        out = np.empty((self.lanes, steps), dtype=np.uint64)
        s = self._state
        for k in range(steps):
            s = s ^ (s >> np.uint64(12))
            s = s ^ (s << np.uint64(25))
            s = s ^ (s >> np.uint64(27))
            out[:, k] = s * np.uint64(XORSHIFT_MULT)
        self._state = s
        return out

    def uniform(self, steps: int) -> np.ndarray:
        """Doubles in [0, 1) from the top 53 bits, shape (lanes, steps)."""
        return (self.next_u64(steps) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def normal(self, steps: int) -> np.ndarray:
        """Standard normals by Box-Muller on consecutive pairs, shape (lanes, steps)."""
        pairs = (steps + 1) // 2
        raw = self.next_u64(2 * pairs) >> np.uint64(11)
        u1 = (raw[:, 0::2].astype(np.float64) + 1.0) * _INV_2_53  # (0, 1]
        u2 = raw[:, 1::2].astype(np.float64) * _INV_2_53
        radius = np.sqrt(-2.0 * np.log(u1))
        out = np.empty((self.lanes, 2 * pairs), dtype=np.float64)
        out[:, 0::2] = radius * np.cos(2.0 * np.pi * u2)
        out[:, 1::2] = radius * np.sin(2.0 * np.pi * u2)
        return out[:, :steps]


def normal_matrix(seed: int, rows: int, cols: int) -> np.ndarray:
    return XorShift64Star(seed, lanes=rows).normal(cols)


def uniform_vector(seed: int, size: int) -> np.ndarray:
    return XorShift64Star(seed, lanes=size).uniform(1)[:, 0]


def permutation(seed: int, size: int) -> np.ndarray:
    """Seeded permutation of range(size): stable argsort of one uniform per element."""
    return np.argsort(uniform_vector(seed, size), kind="stable")
