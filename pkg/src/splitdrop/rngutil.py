"""Labeled seed derivation so every random stream hangs off one root seed."""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(root: int, *labels) -> int:
    """Mix a root seed and a label path into a new 64-bit seed.

    Stable across platforms and processes (independent of PYTHONHASHSEED),
    so a given (root, labels) pair always names the same stream.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(root) & _MASK64).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return int.from_bytes(h.digest(), "little")


def derive_rng(root: int, *labels) -> np.random.Generator:
    """Generator seeded with derive_seed(root, *labels)."""
    return np.random.default_rng(derive_seed(root, *labels))
