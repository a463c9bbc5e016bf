"""Deterministic random-stream derivation.

All randomness in the package flows from a single root seed. Named
sub-streams are derived by hashing the stream name into a SeedSequence,
so concurrent stages and replications never share or race a generator,
and results are independent of execution order and worker count.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["substream", "spawn_streams"]


def _name_key(name: str | int) -> int:
    if isinstance(name, int):
        return name
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, *names: str | int) -> np.random.Generator:
    """Generator for the sub-stream identified by ``names`` under ``seed``."""
    entropy = (int(seed),) + tuple(_name_key(n) for n in names)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def spawn_streams(seed: int, name: str | int, n: int) -> list[np.random.Generator]:
    """n independent generators, one per index, under a named sub-stream."""
    return [substream(seed, name, i) for i in range(n)]
