"""Deterministic per-item random streams.

Every stochastic operation draws from a stream keyed by (master seed,
item identity, purpose), so results do not depend on iteration or
worker order and are stable across runs and platforms.
"""

import hashlib
import random


def stream(master_seed: int, *key) -> random.Random:
    """Return a ``random.Random`` seeded from a stable hash of the key."""
    material = "|".join([str(master_seed), *(str(k) for k in key)])
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "little"))
