"""Deterministic derivation of named RNG streams from a master seed.

Every source of randomness in the toolkit (patient sampling, per-arm
transitions, intervention coin flips, policy init, baseline tie-breaking)
gets its own stream derived from ``(master_seed, *keys)``. Two methods
evaluated under the same master seed therefore share environment
randomness while keeping their own decision randomness, and results are
reproducible regardless of execution order or parallelism.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def child_seed(seed: int, *keys) -> int:
    """Derive a 63-bit sub-seed from a seed and a tuple of str/int keys.

    Stable across platforms and processes (sha256, not the salted builtin
    hash), so the derivation itself is part of the reproducibility
    contract.
    """
    h = hashlib.sha256()
    h.update(int(seed).to_bytes(16, "little", signed=True))
    for key in keys:
        h.update(b"\x1f")
        h.update(_key_to_int(key).to_bytes(8, "little"))
        h.update(str(key).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little") >> 1


def rng_for(seed: int, *keys) -> np.random.Generator:
    """A fresh Generator for the named stream ``(seed, *keys)``."""
    return np.random.default_rng(child_seed(seed, *keys))
