"""Deterministic derivation of named random substreams.

Every source of randomness in the package draws from a substream named
after its component ("split", "train-shuffle", "pool-sampling", ...), all
derived from one global seed. Changing how one component consumes
randomness can therefore never perturb another component's draws, and
every run is bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stream_tag(name: str) -> int:
    """Stable 64-bit tag for a substream name."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def substream(seed: int, name: str) -> np.random.Generator:
    """PCG64 generator for the substream ``name`` of ``seed``."""
    entropy = [int(seed) & _MASK64, stream_tag(name)]
    return np.random.default_rng(np.random.SeedSequence(entropy))
