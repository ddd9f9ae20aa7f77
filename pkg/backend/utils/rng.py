"""Seed derivation for every stochastic choice in the pipeline.

A generator is a pure function of ``(seed, purpose, index)``: the three
values feed a ``numpy.random.SeedSequence`` that keys a counter-based
Philox bit generator. Sample ``i`` of any stream can therefore be drawn
without touching samples ``0..i-1``.

Example
-------
>>> from backend.utils.rng import derive_rng
>>> a = derive_rng(7, "synth", 3).random()
>>> b = derive_rng(7, "synth", 3).random()
>>> a == b
True
"""

import zlib

import numpy as np

_MASK32: int = 0xFFFFFFFF


def derive_rng(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Return an independent Philox generator for ``(seed, purpose, index)``."""
    seed = int(seed)
    index = int(index)
    if seed < 0 or index < 0:
        raise ValueError(f"seed and index must be non-negative, got {seed}, {index}")
    label: int = zlib.crc32(purpose.encode("utf-8"))
    entropy: list[int] = [
        seed & _MASK32,
        (seed >> 32) & _MASK32,
        label,
        index & _MASK32,
        (index >> 32) & _MASK32,
    ]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, purpose: str, index: int = 0) -> int:
    """Return a 63-bit integer seed drawn from :func:`derive_rng`."""
    return int(derive_rng(seed, purpose, index).integers(0, 2**63 - 1))
