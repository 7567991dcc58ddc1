"""Seed governance: every source of randomness derives from one run seed
through named substreams, so reordering work cannot change results."""

from __future__ import annotations

import hashlib


def substream_seed(seed: int, *names: object) -> int:
    """Derive a deterministic child seed for a named purpose.

    Names are free-form (strings, ints); the same (seed, names) always maps
    to the same child seed, and distinct names give independent streams.
    """
    key = "|".join([str(int(seed))] + [str(n) for n in names])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)
