"""Counter-based random streams.

A stream is identified by a tuple of integer keys, e.g. ``(seed, step, sample)``.
The keys are hashed into a 128-bit Philox key, so a stream never depends on
how many numbers other streams consumed; parallel schedules reproduce bit for bit.
"""

from __future__ import annotations

import numpy as np


def stream_key(*keys: int) -> int:
    words = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, np.uint64)
    return (int(words[0]) << 64) | int(words[1])


def keyed_rng(*keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(*keys)))


def keyed_normal(shape, *keys: int) -> np.ndarray:
    return keyed_rng(*keys).standard_normal(shape)
