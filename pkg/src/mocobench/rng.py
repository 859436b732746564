"""Named RNG substreams derived from a single master seed.

Every random draw in the package comes from a generator built here, keyed by
(component name, indices). Streams are independent of each other, so adding
draws in one component never shifts another component's randomness.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_int(key: object) -> int:
    digest = hashlib.blake2b(repr(key).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def substream(master_seed: int, *keys: object) -> np.random.Generator:
    """Generator for the named stream (master_seed, *keys).

    Stable across runs, platforms and processes; keys may be strings, ints or
    tuples thereof.
    """
    entropy = [int(master_seed) & 0xFFFFFFFFFFFFFFFF]
    entropy.extend(_key_int(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(entropy))
