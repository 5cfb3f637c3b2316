"""Deterministic seed derivation for independent RNG streams.

Every stochastic stage draws from its own ``torch.Generator`` seeded by
hashing (run seed, stream labels).  Python's builtin ``hash`` is salted
for strings, so we go through sha256 for cross-process stability.
"""

from __future__ import annotations

import hashlib

import torch


def derive_seed(*parts) -> int:
    """Mix integer/string parts into a stable 63-bit seed."""
    h = hashlib.sha256()
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest()[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def make_generator(*parts) -> torch.Generator:
    """CPU generator seeded from the mixed parts."""
    g = torch.Generator(device="cpu")
    g.manual_seed(derive_seed(*parts))
    return g
