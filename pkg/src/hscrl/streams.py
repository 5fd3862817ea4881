"""Seeded random streams.

Every consumer gets its own ``numpy.random.Generator`` built from a seed plus
a tuple of integer keys, so streams for different purposes (topology, demand
point ``p``, environment noise, policy sampling) never overlap and do not
depend on how many other streams exist.
"""

from __future__ import annotations

import numpy as np

RandomStream = np.random.Generator

# stream tags
NETWORK = 1
DEMAND = 2
ENV = 3
POLICY = 4
SHUFFLE = 5
INIT = 6
GA = 7
PSO = 8


def make_stream(seed: int, *keys: int) -> RandomStream:
    """Return an independent generator for ``(seed, *keys)``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(k) for k in keys)]
    return np.random.default_rng(np.random.SeedSequence(entropy))
