"""Reproducible random streams.

Every random draw in the package comes from numpy's Philox counter-based
generator keyed by a SeedSequence built from (seed, stream...). Streams are
independent of iteration order, so a cloud sampled for file ``a/train/x.off``
is the same whether it is processed first, last, or in a worker thread.
"""

from __future__ import annotations

import hashlib
from typing import Sequence

import numpy as np

_MASK64 = (1 << 64) - 1


def stable_hash64(text: str) -> int:
    """64-bit BLAKE2b digest of ``text`` (UTF-8), little endian."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _entropy(seed: int, streams: Sequence[int]) -> list:
    return [int(seed) & _MASK64] + [int(s) & _MASK64 for s in streams]


def make_rng(seed: int, *streams: int) -> np.random.Generator:
    """Philox generator for ``seed`` split by any number of stream ids."""
    seq = np.random.SeedSequence(_entropy(seed, streams))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed: int, *streams: int) -> int:
    """Collapse (seed, streams) into a single 64-bit seed."""
    words = np.random.SeedSequence(_entropy(seed, streams)).generate_state(2, dtype=np.uint32)
    return int(words[0]) | (int(words[1]) << 32)
