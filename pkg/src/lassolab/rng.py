"""Deterministic random streams keyed by (seed, purpose label).

Every random draw in the package flows through substream(), so a run is fully
reproducible from the seeds recorded in its config. Distinct labels give
statistically independent PCG64 streams for the same seed.
"""

import zlib

import numpy as np


def substream(seed, label):
    """Generator for one purpose. (seed, label) fully determine the stream."""
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool):
        raise TypeError("seed must be an integer")
    if not isinstance(label, str):
        raise TypeError("label must be a string")
    if seed < 0 or seed > 2**64 - 1:
        raise ValueError("seed must fit in u64")
    key = zlib.crc32(label.encode("ascii"))
    ss = np.random.SeedSequence(entropy=[int(seed), key])
    return np.random.Generator(np.random.PCG64(ss))
