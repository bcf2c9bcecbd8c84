"""Deterministic random streams.

Every stochastic stage of the pipeline draws from a named sub-stream of a
single root seed, so that runs are reproducible end to end and stages can
be re-run independently without perturbing each other.
"""

from __future__ import annotations

import zlib

import numpy as np


def named_seed_sequence(root_seed: int, stream: str) -> np.random.SeedSequence:
    """Derive a child SeedSequence for a named pipeline stage."""
    return np.random.SeedSequence(entropy=[int(root_seed) & (2**64 - 1), zlib.crc32(stream.encode("utf-8"))])


def named_rng(root_seed: int, stream: str) -> np.random.Generator:
    """Generator seeded from ``root_seed`` and a stream name."""
    return np.random.default_rng(named_seed_sequence(root_seed, stream))
