"""Deterministic derivation of labeled random streams from a master seed.

Every consumer of randomness owns a named stream: the master seed is mixed
with a stream label (a string plus any integer indices) through SplitMix64.
Streams depend only on their own labels, so adding a new consumer never
perturbs the draws of an existing one, and re-running with the same master
seed reproduces every stream bit for bit.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(state: int) -> int:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _label_value(label: int | str) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & _MASK64
    if isinstance(label, str):
        # FNV-1a, 64 bit: stable across platforms, unlike hash().
        h = 0xCBF29CE484222325
        for byte in label.encode("utf-8"):
            h = ((h ^ byte) * 0x100000001B3) & _MASK64
        return h
    raise TypeError(f"seed labels must be int or str, got {type(label).__name__}")


def derive_seed(master: int, *labels: int | str) -> int:
    """Mix ``master`` and ``labels`` into a 63-bit seed for one stream."""
    state = int(master) & _MASK64
    for label in labels:
        state = _splitmix64(state ^ _label_value(label))
    return _splitmix64(state) >> 1


def stream(master: int, *labels: int | str) -> np.random.Generator:
    """Seeded generator for the stream identified by ``labels``."""
    return np.random.default_rng(derive_seed(master, *labels))
