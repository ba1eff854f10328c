"""Deterministic RNG derivation.

Every stochastic step in the pipeline draws from a generator derived from
(master seed, purpose keys...).  Results therefore depend only on the seed
and the logical position of the call site, never on execution order or
worker scheduling.
"""
from __future__ import annotations

import zlib

import numpy as np


def seed_material(*parts: int | str) -> list[int]:
    """Map a mixed key path to SeedSequence entropy words."""
    words: list[int] = []
    for part in parts:
        if isinstance(part, str):
            words.append(zlib.crc32(part.encode("utf-8")))
        elif isinstance(part, (int, np.integer)):
            words.append(int(part) & 0xFFFFFFFF)
            words.append((int(part) >> 32) & 0xFFFFFFFF)
        else:
            raise TypeError(f"seed part must be int or str, got {type(part)!r}")
    return words


def derive_rng(*parts: int | str) -> np.random.Generator:
    """Generator keyed by an arbitrary (seed, label, ...) path."""
    return np.random.default_rng(np.random.SeedSequence(seed_material(*parts)))
