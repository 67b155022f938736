"""Counter-based deterministic RNG (splitmix64 hashing).

Every random quantity in the renderer is a pure function of integer counters
and the seed, so renders are bitwise reproducible and thread-count invariant.
"""

from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

# stream ids keep independent uses decorrelated
STREAM_SUBPIXEL = 0x11
STREAM_LIGHT = 0x22
STREAM_INDIRECT = 0x33
STREAM_EDGE = 0x44


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash_counters(seed: int, stream: int, *counters) -> np.ndarray:
    """Hash integer counter arrays into uint64; broadcasts like numpy."""
    with np.errstate(over="ignore"):
        h = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + _GAMMA * np.uint64(stream)
        h = _mix(np.asarray(h, dtype=np.uint64))
        for c in counters:
            arr = np.asarray(c, dtype=np.uint64)
            h = _mix(h + _GAMMA * arr + _GAMMA)
    return h


def uniform(seed: int, stream: int, *counters) -> np.ndarray:
    """Uniform float64 in [0, 1), one value per broadcast counter element."""
    h = hash_counters(seed, stream, *counters)
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def uniform_pair(seed: int, stream: int, *counters) -> tuple[np.ndarray, np.ndarray]:
    """Two 26-bit uniforms from one hash (cheap subpixel jitter)."""
    h = hash_counters(seed, stream, *counters)
    a = ((h >> np.uint64(38)) & np.uint64(0x3FFFFFF)).astype(np.float64) * (1.0 / (1 << 26))
    b = ((h >> np.uint64(12)) & np.uint64(0x3FFFFFF)).astype(np.float64) * (1.0 / (1 << 26))
    return a, b
