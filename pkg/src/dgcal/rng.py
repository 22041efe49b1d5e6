"""Seed derivation.

All randomness is drawn from numpy's PCG64 bit generator, whose output stream
is fixed by numpy across platforms. One user-facing seed fans out into
independent sub-seeds by hashing ``(seed, component, index...)`` with
BLAKE2b, so adding a new consumer never perturbs existing streams.
"""

import hashlib

import numpy as np


def derive_seed(seed, *keys):
    """Return a 64-bit sub-seed for ``seed`` and a path of string/int keys."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    for key in keys:
        h.update(b"\x1f")
        h.update(str(key).encode())
    return int.from_bytes(h.digest(), "little")


def make_rng(seed, *keys):
    """A ``numpy.random.Generator`` (PCG64) for the given seed path."""
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *keys)))
