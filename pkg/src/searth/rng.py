"""Named, counter-based random streams.

All randomness is drawn from Philox generators keyed by ``(seed, name,
*counters)``. Asking for the same key always yields the same stream, so a
run resumed from a checkpoint draws exactly what an uninterrupted run
would have drawn without saving any generator state.
"""

import zlib

import numpy as np


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, name: str, *counters: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = (_name_key(name),) + tuple(int(c) for c in counters)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))
