"""Deterministic, purpose-keyed random streams.

Every stochastic object in the package (teacher weights, data matrices,
label noise, chain proposals, spectral-ensemble seeds) draws from its own
counter-based stream keyed by (master_seed, purpose, index).  Streams are
independent by construction, so any piece of an experiment can be
regenerated bit-exactly on its own.
"""

import hashlib

import numpy as np


def stream(master_seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Return the Generator for a (master_seed, purpose, index) triple.

    The 128-bit Philox key is the truncated SHA-256 of the triple, which
    makes collisions between purposes practically impossible and keeps the
    mapping stable across platforms and numpy versions.
    """
    msg = f"{int(master_seed)}|{purpose}|{int(index)}".encode()
    key = np.frombuffer(hashlib.sha256(msg).digest()[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
