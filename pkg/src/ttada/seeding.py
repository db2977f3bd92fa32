"""Deterministic RNG derivation.

Every stochastic component derives its generator from explicit integer or
string key parts, never from global state, so any run is reproducible from
its seed alone and independent runs draw from disjoint substreams.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stable_seed(*parts: int | str) -> int:
    """Hash a mixed key of ints and strings into a 64-bit seed.

    Unlike builtin ``hash``, the result is stable across processes.
    """
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, str):
            h.update(b"s" + part.encode("utf-8"))
        else:
            h.update(b"i" + int(part).to_bytes(16, "little", signed=True))
        h.update(b"\x00")
    return int.from_bytes(h.digest()[:8], "little")


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """PCG64 generator for ``seed``, optionally on the substream ``key``."""
    ss = np.random.SeedSequence(entropy=seed & _MASK64, spawn_key=tuple(key))
    return np.random.Generator(np.random.PCG64(ss))
