"""Deterministic seed derivation.

Every random draw in a scenario run flows from an explicit integer seed
derived by hashing a structured key. Hash-derived schedules keep evaluation
cells comparable across interface modes (the same cell gets the same episode
randomness regardless of mode) without any shared RNG state.
"""

from __future__ import annotations

import hashlib


def stable_seed(*parts) -> int:
    """63-bit seed from a tuple of strings/ints; stable across runs and platforms."""
    key = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFFFFFFFFFFFFFF
