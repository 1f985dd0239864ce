"""Deterministic RNG derivation: one root seed, one named stream per component.

Every source of randomness in a run (synthetic data, scorer init, the
random Fourier map, bank draws, aggregator init, per-bag evaluation
draws) pulls from its own child stream of a single root seed, so any two
runs with the same root seed replay identically while the streams stay
statistically independent of each other.
"""

from __future__ import annotations

import hashlib

import numpy as np

_STREAMS = {
    "data": 0,
    "distiller": 1,
    "rff": 2,
    "bank": 3,
    "aggregator": 4,
    "eval": 5,
}


def stable_id_hash(text: str) -> int:
    """64-bit hash of a string, stable across processes and platforms."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def component_rng(root_seed: int, component: str, extra: tuple = ()) -> np.random.Generator:
    """Generator for a named component stream of ``root_seed``.

    ``extra`` appends further non-negative integers to the stream key,
    e.g. a per-bag hash for evaluation-time draws.
    """
    if component not in _STREAMS:
        raise ValueError(f"unknown rng component {component!r}")
    root_seed = int(root_seed)
    if root_seed < 0:
        raise ValueError("root seed must be non-negative")
    key = (root_seed, _STREAMS[component]) + tuple(int(e) for e in extra)
    return np.random.default_rng(np.random.SeedSequence(key))
