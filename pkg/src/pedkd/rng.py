"""Named, splittable random streams derived from one 64-bit seed.

``stream(seed, "scene", 17)`` always yields the same generator, independent of
how many other streams were drawn before it.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def seed_sequence(seed: int, *names) -> np.random.SeedSequence:
    spawn_key = []
    for n in names:
        if isinstance(n, (int, np.integer)):
            v = int(n)
            spawn_key.extend([v & 0xFFFFFFFF, (v >> 32) & 0xFFFFFFFF])
        else:
            spawn_key.append(_key(n))
    return np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(spawn_key))


def stream(seed: int, *names) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *names)))


def derive_seed(seed: int, *names) -> int:
    """A child 64-bit seed for the named sub-stream."""
    return int(seed_sequence(seed, *names).generate_state(1, dtype=np.uint64)[0])
