"""Small shared helpers: deterministic rounding, keyed RNG streams, stable hashing."""

from __future__ import annotations

import hashlib
import math

import numpy as np

# Generator family used for every stochastic choice in the toolkit. All
# streams are keyed by logical indices (seed, copy, instance, ...) so results
# never depend on worker count or execution order.
RNG_ALGORITHM = "seedseq-pcg64"

# Stream lanes keep the toolkit's independent consumers on disjoint keys.
LANE_MASK = 1
LANE_SHUFFLE = 2
LANE_DROPOUT = 3
LANE_INIT = 4


def round_half_up(x: float) -> int:
    """Round a nonnegative quantity to the nearest integer, halves upward.

    Python's round() uses banker's rounding, which would send 1.5 -> 2 but
    2.5 -> 2; schedules and mask counts need a single predictable rule.
    """
    if x < 0:
        raise ValueError(f"round_half_up expects x >= 0, got {x}")
    return int(math.floor(x + 0.5))


def rng_stream(*key: int) -> np.random.Generator:
    """Return a PCG64 generator keyed by a tuple of integers.

    Streams with distinct keys are statistically independent, and a given
    key always yields the same stream regardless of which worker asks.
    """
    return np.random.default_rng(list(key))


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def hash_u64(*parts: int) -> int:
    """Mix integers into a platform-stable 64-bit hash (splitmix64 chain)."""
    h = 0
    for p in parts:
        h = _splitmix64(h ^ (p & 0xFFFFFFFFFFFFFFFF))
    return h


def fingerprint_u64(text: str) -> int:
    """First 8 bytes (little-endian) of SHA-256 over a canonical string."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
