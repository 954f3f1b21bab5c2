"""Seeded random streams.

Every stream is a numpy ``Generator`` over the Philox-4x64 counter-based
bit generator keyed by a 64-bit seed. Substreams are derived by hashing:

    child_seed = first 8 bytes (little-endian) of sha256(f"{seed}/{label}")

so a labelled child is reproducible from its parent seed alone and distinct
labels give unrelated keys.
"""
from __future__ import annotations

import hashlib

import numpy as np

ALGORITHM = "philox4x64-10"
_MASK = (1 << 64) - 1


def derive_seed(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{int(seed) & _MASK}/{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


class SeededRng:
    """A reproducible random stream plus a way to split off named substreams."""

    algorithm = ALGORITHM

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self.generator = np.random.Generator(np.random.Philox(key=self.seed))

    def child(self, label: str) -> "SeededRng":
        return SeededRng(derive_seed(self.seed, label))

    @property
    def counter(self) -> int:
        return int(self.generator.bit_generator.state["state"]["counter"][0])

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed})"
