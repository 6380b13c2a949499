"""Shared helpers: angle wrapping and named deterministic RNG streams."""

from __future__ import annotations

import math
import zlib

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.remainder(a, TWO_PI)
    if w <= -math.pi:
        w += TWO_PI
    return w


def wrap_angles(a: np.ndarray) -> np.ndarray:
    """Vectorized wrap to (-pi, pi]."""
    w = np.remainder(np.asarray(a, dtype=np.float64) + np.pi, TWO_PI) - np.pi
    # remainder maps to [-pi, pi); move the open end to +pi
    return np.where(w <= -np.pi, w + TWO_PI, w)


def stream_seed(base_seed: int, name: str) -> np.random.SeedSequence:
    """Derive a named, order-independent sub-stream from one base seed.

    Uses crc32 of the name rather than hash() so streams are stable
    across processes and Python versions.
    """
    tag = zlib.crc32(name.encode("utf-8")) & 0xFFFFFFFF
    return np.random.SeedSequence([int(base_seed) & 0xFFFFFFFFFFFF, tag])


def stream_rng(base_seed: int, name: str) -> np.random.Generator:
    """Seeded Generator for the named sub-stream."""
    return np.random.Generator(np.random.PCG64(stream_seed(base_seed, name)))


def stream_int(base_seed: int, name: str) -> int:
    """A stable 63-bit integer seed for libraries that want a plain int."""
    return int(stream_seed(base_seed, name).generate_state(1, np.uint64)[0] >> 1)
