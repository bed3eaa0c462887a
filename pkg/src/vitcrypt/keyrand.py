"""Keyed deterministic randomness.

SplitMix64 drives everything: permutation vectors for block/pixel
rearrangement and the exactly balanced binary vector for sign flipping.
All arithmetic is modulo 2**64 so results are identical on every platform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

MASK64 = (1 << 64) - 1

_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def splitmix64_next(state: int) -> tuple[int, int]:
    """Advance a SplitMix64 state once and return (value, new_state)."""
    state = (state + _GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31), state


def bounded_uniform(state: int, bound: int) -> tuple[int, int]:
    """Unbiased draw in [0, bound) via rejection sampling.

    Values >= floor(2**64 / bound) * bound are rejected so every residue
    is equally likely. Returns (value, new_state).
    """
    if bound < 1:
        raise ValueError("empty range")
    threshold = ((1 << 64) // bound) * bound
    while True:
        value, state = splitmix64_next(state)
        if value < threshold:
            return value % bound, state


def gen_permutation(seed: int, n: int) -> list[int]:
    """Key-derived permutation of [0, n) by top-down Fisher-Yates."""
    if n < 1:
        raise ValueError("permutation length must be >= 1")
    entries = list(range(n))
    state = seed & MASK64
    for i in range(n - 1, 0, -1):
        j, state = bounded_uniform(state, i + 1)
        entries[i], entries[j] = entries[j], entries[i]
    return entries


def invert_permutation(perm: list[int]) -> list[int]:
    inv = [0] * len(perm)
    for i, p in enumerate(perm):
        inv[p] = i
    return inv


def is_permutation(entries: list[int]) -> bool:
    return sorted(entries) == list(range(len(entries)))


def gen_flipvector(seed: int, n: int) -> list[int]:
    """Key-derived binary vector of length n with exactly n/2 ones.

    Built by shuffling a perfectly balanced vector, so the 50/50 split
    holds at every length, not just in expectation.
    """
    if n < 2 or n % 2 != 0:
        raise ValueError("balanced flip vector requires even length")
    base = [0] * (n // 2) + [1] * (n // 2)
    perm = gen_permutation(seed, n)
    bits = [base[p] for p in perm]
    assert sum(bits) == n // 2
    return bits


@dataclass(frozen=True)
class KeySet:
    """Three independent 64-bit seeds: block permutation, pixel shuffling, bit flipping."""

    k1: int
    k2: int
    k3: int

    def __post_init__(self):
        for name in ("k1", "k2", "k3"):
            v = getattr(self, name)
            if not (0 <= v <= MASK64):
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {v}")

    @classmethod
    def from_master_seed(cls, seed: int) -> "KeySet":
        """Derive the three sub-seeds from one master seed (three SplitMix64 steps)."""
        state = seed & MASK64
        k1, state = splitmix64_next(state)
        k2, state = splitmix64_next(state)
        k3, state = splitmix64_next(state)
        return cls(k1, k2, k3)

    def to_json(self) -> str:
        return json.dumps({"k1": f"{self.k1:016x}", "k2": f"{self.k2:016x}", "k3": f"{self.k3:016x}"})

    @classmethod
    def from_json(cls, text: str) -> "KeySet":
        obj = json.loads(text)
        try:
            return cls(int(obj["k1"], 16), int(obj["k2"], 16), int(obj["k3"], 16))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed key file: {exc}") from exc
