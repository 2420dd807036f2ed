"""Seeded substream derivation so every module draws from its own named stream."""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step; returns (next_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def derive_seed(seed: int, name: str) -> int:
    """Derive a 64-bit substream seed from a root seed and a stream name."""
    state = seed & _MASK64
    for byte in name.encode("utf-8"):
        state, out = splitmix64(state ^ byte)
        state ^= out
    state, out = splitmix64(state)
    return out


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for the named substream of a root seed."""
    return np.random.Generator(np.random.PCG64(derive_seed(seed, name)))
