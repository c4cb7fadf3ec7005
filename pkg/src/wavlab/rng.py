"""Deterministic random-stream derivation.

Every experiment derives independent substreams from a single global seed
and a structured path, e.g. ``substream(7, "explore", "oracle", 2, "round", 1)``.
The path components are mapped to fixed 32-bit words (ints pass through,
strings via SHA-256) and used as the ``spawn_key`` of a ``SeedSequence``,
which is a counter-based scheme: the same (seed, path) always yields the
same stream, and distinct paths yield independent streams. No module ever
shares a mutable generator across logical units of work.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK32 = 0xFFFFFFFF


def _word(component: int | str) -> int:
    if isinstance(component, bool):  # bool is an int subclass; reject to avoid surprises
        raise TypeError("substream path components must be int or str, not bool")
    if isinstance(component, int):
        return component & _MASK32
    if isinstance(component, str):
        digest = hashlib.sha256(component.encode("utf-8")).digest()
        return int.from_bytes(digest[:4], "big")
    raise TypeError(f"substream path components must be int or str, got {type(component)!r}")


def substream(seed: int, *path: int | str) -> np.random.Generator:
    """Derive an independent generator for (seed, path)."""
    key = tuple(_word(p) for p in path)
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))
