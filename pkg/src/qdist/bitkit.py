"""Bit manipulation of unsigned amplitude indices.

Every function accepts either a Python ``int`` or a numpy ``uint64`` array
for the index argument ``n``, so the same code serves scalar bookkeeping and
vectorised index generation inside the kernels.  Bit positions are always
plain Python ints.  The usable width is 62 bits (a 31-qubit Choi-vector).
"""

from __future__ import annotations

from typing import Iterable, Sequence, TypeVar, Union

import numpy as np

MAX_WIDTH = 62

Index = TypeVar("Index", int, np.ndarray)
IndexLike = Union[int, np.ndarray]


def get_bit(n: Index, t: int) -> Index:
    return (n >> t) & 1


def flip_bit(n: Index, t: int) -> Index:
    return n ^ (1 << t)


def flip_bits(n: Index, ts: Iterable[int]) -> Index:
    return n ^ bit_mask(ts)


def insert_bit(n: Index, t: int, b: int) -> Index:
    """Shift the bits of ``n`` at positions >= t up by one and place ``b`` at ``t``."""
    low = n & ((1 << t) - 1)
    high = (n >> t) << (t + 1)
    return high | (b << t) | low


def insert_bits(n: Index, ts: Sequence[int], b: int) -> Index:
    # positions must be strictly increasing, otherwise later insertions
    # would displace the bits placed by earlier ones
    assert all(ts[q] < ts[q + 1] for q in range(len(ts) - 1)), "ts must be sorted"
    for t in ts:
        n = insert_bit(n, t, b)
    return n


def set_bits(n: Index, ts: Sequence[int], v: int) -> Index:
    """Overwrite bit ``ts[q]`` of ``n`` with bit ``q`` of ``v``."""
    mask = 0
    vals = 0
    for q, t in enumerate(ts):
        mask |= 1 << t
        vals |= ((v >> q) & 1) << t
    # (n | mask) ^ mask clears the targeted bits without a negative literal,
    # which keeps the expression valid for uint64 arrays
    return ((n | mask) ^ mask) | vals


def all_bits_one(n: Index, ts: Iterable[int]):
    mask = bit_mask(ts)
    return (n & mask) == mask


def bit_mask(ts: Iterable[int]) -> int:
    mask = 0
    for t in ts:
        mask |= 1 << t
    return mask


def mask_parity(n: Index) -> Index:
    """Parity of the population count, by xor-folding the 64-bit word."""
    for s in (32, 16, 8, 4, 2, 1):
        n = n ^ (n >> s)
    return n & 1


def index_range(start: int, stop: int) -> np.ndarray:
    """Contiguous run of indices as a uint64 array, ready for the functions above."""
    return np.arange(start, stop, dtype=np.uint64)
