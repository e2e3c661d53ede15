"""Deterministic seed derivation for replications and sweep cells."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


def _label_key(label) -> int:
    digest = hashlib.blake2b(str(label).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class SeedSpec:
    """Master seed plus a path of stream labels.

    Two specs with the same master seed and labels produce bit-identical
    generators; distinct label paths give statistically independent streams
    (via ``numpy.random.SeedSequence`` spawn keys).
    """

    master_seed: int
    labels: tuple = field(default_factory=tuple)

    def child(self, *labels) -> "SeedSpec":
        return SeedSpec(self.master_seed, self.labels + tuple(labels))

    def sequence(self) -> np.random.SeedSequence:
        key = tuple(_label_key(lab) for lab in self.labels)
        return np.random.SeedSequence(int(self.master_seed) & (2**64 - 1), spawn_key=key)

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.sequence())

    def entropy_id(self) -> str:
        """Stable hex fingerprint of the stream, used by run manifests."""
        state = self.sequence().generate_state(4, np.uint64)
        return "".join(f"{int(w):016x}" for w in state)


def as_rng(seed) -> np.random.Generator:
    """Accept a SeedSpec, an int, a Generator or None."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, SeedSpec):
        return seed.rng()
    return np.random.default_rng(seed)
