"""Deterministic derivation of per-task sub-seeds from one master seed.

Every stochastic step (holdout shuffle, party shuffle, reallocation draws)
pulls its seed through :func:`derive_seed` so any single grid cell can be
re-run in isolation and still see the exact same random stream.
"""

import hashlib


def derive_seed(master: int, *labels) -> int:
    """Hash a master seed and a label path into a stable 64-bit sub-seed."""
    digest = hashlib.sha256()
    digest.update(str(int(master)).encode())
    for label in labels:
        digest.update(b"/")
        digest.update(str(label).encode())
    return int.from_bytes(digest.digest()[:8], "big")
