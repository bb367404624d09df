"""Deterministic seed derivation.

Every random stream in the package is keyed off a root seed plus a tuple of
labels (strings or integers). The labels are hashed with SHA-256 into a
64-bit child seed, so a child stream depends only on its own key and can be
reproduced in isolation (a single sweep row, a single trial).
"""

from __future__ import annotations

import hashlib


def derive_seed(root: int, *keys) -> int:
    h = hashlib.sha256(str(int(root)).encode())
    for k in keys:
        h.update(b"\x1f")
        h.update(repr(k).encode())
    return int.from_bytes(h.digest()[:8], "little")
