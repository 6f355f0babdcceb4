"""Hierarchical seed derivation.

All randomness in the toolkit flows from a single root seed. Sub-streams are
derived from (root seed, *string-or-int tokens) so partial re-runs of the
pipeline stay stable no matter which stages are executed.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _token_hash(token) -> int:
    data = repr(token).encode("utf-8")
    return int.from_bytes(hashlib.sha256(data).digest()[:8], "little")


def derive_rng(seed: int, *tokens) -> np.random.Generator:
    """Return a Generator for the sub-stream named by ``tokens``."""
    entropy = [int(seed)] + [_token_hash(t) for t in tokens]
    return np.random.default_rng(np.random.SeedSequence(entropy))
