"""Deterministic counter-based random number generation.

Dataset samples must be reproducible across runs, machines, and process
counts, so all randomness flows through a small integer-only generator
instead of platform RNGs. Each (seed, stream) pair opens an independent
sequence; the same pair always yields the same draws.
"""

from __future__ import annotations

_MASK = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15


def _mix(x: int) -> int:
    # SplitMix64 finalizer; full avalanche on 64-bit inputs.
    x &= _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


class CounterRng:
    """SplitMix64 sequence keyed by (seed, stream).

    `stream` is typically a sample index: drawing sample k never requires
    advancing through samples 0..k-1, which keeps parallel generation
    deterministic regardless of worker scheduling.
    """

    def __init__(self, seed: int, stream: int = 0):
        self._state = _mix(_mix(seed & _MASK) ^ _mix((stream + 0x1234567) & _MASK))

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK
        return _mix(self._state)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        """Uniform draw in [lo, hi]; degenerate ranges return lo exactly."""
        u = (self.next_u64() >> 11) * (1.0 / (1 << 53))
        return lo + (hi - lo) * u
