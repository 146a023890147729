"""Deterministic per-sample random streams.

Every sample gets independent named streams derived from the master seed
and its id, so dataset generation is reproducible and order-independent:
workers can process samples in any order without changing a single draw.
"""

from __future__ import annotations

import numpy as np

STREAM_DISKS = 0
STREAM_FIELD_NOISE = 1
STREAM_MEASUREMENT_NOISE = 2


def derive_stream(master_seed: int, *key: int) -> np.random.Generator:
    """Generator for a named stream, e.g. derive_stream(seed, sample_id, purpose)."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=tuple(key)))
