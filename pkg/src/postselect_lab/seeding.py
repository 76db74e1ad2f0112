"""Counter-based seed derivation.

Every random stream in the package comes from one master seed plus a key
path (operation name and integer indices). Derivation goes through
``numpy.random.SeedSequence`` so the mapping is stable across platforms and
independent of the order in which work units execute.
"""

from __future__ import annotations

import hashlib
import zlib

import numpy as np

SEED_MASK = (1 << 64) - 1


def _key_word(key: int | str) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    if key < 0:
        raise ValueError(f"seed keys must be non-negative, got {key}")
    return int(key)


def derive_seed(master_seed: int, *keys: int | str) -> int:
    """Return a 64-bit seed for the stream addressed by ``keys``."""
    seq = np.random.SeedSequence(
        entropy=int(master_seed) & SEED_MASK,
        spawn_key=tuple(_key_word(k) for k in keys),
    )
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def rng_for(master_seed: int, *keys: int | str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, *keys))


def rng_for_bytes(seed: int, payload: bytes) -> np.random.Generator:
    """Generator keyed by a seed and an arbitrary byte string (e.g. a query vector)."""
    digest = hashlib.blake2b(payload, digest_size=16).digest()
    words = np.frombuffer(digest, dtype=np.uint32).tolist()
    return np.random.default_rng(np.random.SeedSequence([int(seed) & SEED_MASK, *words]))
