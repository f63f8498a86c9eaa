"""Portable counter-based pseudo-random numbers for dataset generation.

Synthetic datasets must be byte-identical across runs, platforms, and
reimplementations, so the generator is pinned by algorithm rather than by
library: SplitMix64 (Steele, Lea & Flood's 64-bit finalizer mix), the same
mixer used to seed the xoshiro/xoroshiro family.

State update, all arithmetic mod 2**64:

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    output = z ^ (z >> 31)

Derived quantities are defined exactly as:

* ``uniform()``   -> ``(output >> 11) * 2**-53`` (a float in [0, 1))
* ``randint(n)``  -> ``floor(uniform() * n)``
* ``shuffle``     -> Fisher-Yates, drawing ``randint(i + 1)`` for
  ``i = len-1 .. 1``
* stream derivation -> reseed with the next output of the parent stream
  after folding in an integer key (see :func:`derive_seed`)
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    """Fold integer keys into a seed, one SplitMix64 round per key.

    Used to give train/dev/test splits (and per-example regeneration)
    provably disjoint streams from a single user seed.
    """
    state = seed & _MASK64
    for key in keys:
        state = _mix((state + _GAMMA + (key & _MASK64)) & _MASK64)
    return state


class SplitMix64:
    """SplitMix64 stream; see module docstring for the exact algorithm."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        return _mix(self._state)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * 2.0**-53

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n); floor(uniform * n)."""
        if n <= 0:
            raise ValueError(f"randint upper bound must be positive, got {n}")
        return int(self.uniform() * n)

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]
