"""
Reproducible random streams.

Every stream is a Philox-4x64 counter-based generator keyed by a 64-bit
integer. Keys are derived from a master seed and any number of labels
(table id, replicate index, ...) as the first 8 bytes, little endian, of
``blake2b(repr((master, *labels)).encode(), digest_size=8)``. Any
implementation of Philox-4x64-10 with the same key reproduces the
streams.
"""
from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_seed", "make_rng", "rademacher"]


def derive_seed(master: int, *labels) -> int:
    payload = repr((int(master),) + tuple(labels)).encode()
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def make_rng(master: int, *labels) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=derive_seed(master, *labels)))


def rademacher(rng: np.random.Generator, shape) -> np.ndarray:
    """Random signs, one raw bit per draw (least significant bit first)."""
    shape = tuple(np.atleast_1d(shape))
    size = int(np.prod(shape))
    words = rng.bit_generator.random_raw((size + 63) // 64).astype("<u8")
    bits = np.unpackbits(words.view(np.uint8), bitorder="little")[:size]
    return (2.0 * bits - 1.0).reshape(shape)
