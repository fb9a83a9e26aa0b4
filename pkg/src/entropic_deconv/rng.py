"""Deterministic random streams.

All randomness flows through a Philox counter-based generator (4x64,
10 rounds, as shipped by numpy) keyed directly by the 64-bit seed, so a
stream is fully determined by its seed. Samplers draw uniforms and apply
inverse CDFs; nothing uses rejection, which keeps streams stable across
models.
"""
from __future__ import annotations

import numpy as np

_DENOM = float(2**53)


def make_generator(seed: int) -> np.random.Generator:
    """Philox generator keyed by ``seed``."""
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


def uniform_open01(gen: np.random.Generator, size=None) -> np.ndarray:
    """Uniforms on the open interval (0, 1).

    Uses (k + 0.5) / 2^53 over 53-bit integers so inverse CDFs never see
    an endpoint.
    """
    k = gen.integers(0, 2**53, size=size, dtype=np.uint64)
    return (k.astype(np.float64) + 0.5) / _DENOM
