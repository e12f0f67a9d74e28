"""SplitMix64 pseudo-random stream used everywhere determinism is required.

The generator is pinned to the published SplitMix64 constants so that a
(seed, position) pair identifies one value on every platform.  Draw n of a
stream is mix64(seed + n*GAMMA mod 2^64) for n = 1, 2, ...
"""

import math
from dataclasses import dataclass

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1
_INV_2_53 = 2.0 ** -53


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


@dataclass
class RngState:
    """Value-semantics RNG: equal (seed, position) means equal future draws."""

    seed: int
    position: int = 0

    def __post_init__(self):
        self.seed &= _MASK

    def next_u64(self) -> int:
        self.position += 1
        return _mix64((self.seed + self.position * GAMMA) & _MASK)

    def clone(self) -> "RngState":
        return RngState(self.seed, self.position)


def next_uniform(rng: RngState, lo: float, hi: float) -> float:
    """One uniform draw in [lo, hi); exactly lo when the interval is degenerate.

    Always advances the stream by one so draw counts do not depend on the
    interval bounds.
    """
    if lo > hi:
        raise ValueError(f"empty interval [{lo}, {hi})")
    u = (rng.next_u64() >> 11) * _INV_2_53
    if lo == hi:
        return lo
    return lo + u * (hi - lo)


def next_index(rng: RngState, n: int) -> int:
    """One uniform integer draw in [0, n). Requires n >= 1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return min(n - 1, int(next_uniform(rng, 0.0, float(n))))


def shuffle(items: list, rng: RngState) -> None:
    """In-place Fisher-Yates shuffle driven by the stream."""
    for i in range(len(items) - 1, 0, -1):
        j = next_index(rng, i + 1)
        items[i], items[j] = items[j], items[i]


def raw_u64_block(rng: RngState, n: int) -> np.ndarray:
    """Vectorized block of n raw draws; bit-identical to n next_u64() calls."""
    with np.errstate(over="ignore"):
        idx = np.arange(rng.position + 1, rng.position + n + 1, dtype=np.uint64)
        states = (np.uint64(rng.seed) + idx * np.uint64(GAMMA)).astype(np.uint64)
        z = states
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    rng.position += n
    return z


def uniform_block(rng: RngState, n: int) -> np.ndarray:
    """n uniform draws in [0, 1) as float64."""
    return (raw_u64_block(rng, n) >> np.uint64(11)).astype(np.float64) * _INV_2_53


def normal_block(rng: RngState, n: int) -> np.ndarray:
    """n standard-normal draws via Box-Muller on consecutive uniform pairs.

    Pairs (u1, u2) are consumed in stream order; u1 is flipped to (0, 1] so
    the log is always finite.  An odd n discards the sine half of the last
    pair, which still consumes both draws.
    """
    pairs = (n + 1) // 2
    u = uniform_block(rng, 2 * pairs).reshape(pairs, 2)
    r = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
    theta = 2.0 * math.pi * u[:, 1]
    out = np.empty(2 * pairs, dtype=np.float64)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out[:n]
