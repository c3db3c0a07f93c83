"""Deterministic derived random streams.

Every internal stream is keyed by (master seed, purpose label, index), so the
numbers a replica or ensemble member sees do not depend on how many other
streams exist or on the order in which workers run.
"""
from __future__ import annotations

import zlib

import numpy as np


def label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def derive_rng(seed: int, label: str, index: int = 0) -> np.random.Generator:
    if seed is None:
        raise ValueError("a master seed is required for derived streams")
    return np.random.default_rng(np.random.SeedSequence([int(seed), label_key(label), int(index)]))


def as_generator(rng, label: str = "default") -> np.random.Generator:
    """Accept a Generator, an int seed (derived with ``label``) or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return np.random.default_rng()
    return derive_rng(int(rng), label)
