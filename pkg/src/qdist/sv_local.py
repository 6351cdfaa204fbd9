"""Single-rank statevector kernels.

Each kernel enumerates exactly the amplitudes it touches by interleaving
fixed bits into a counter (see :mod:`qdist.bitkit`), so no amplitude is ever
tested and skipped.  Loops run over contiguous blocks of the iteration
space; with ``threads > 1`` each thread takes one static block whose length
is a multiple of the cache-line stride, and every amplitude receives the same
floating-point operations in the same order regardless of the thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .bitkit import bit_mask, index_range, insert_bit, insert_bits, set_bits
from .errors import ArgumentError
from .transport import Counters

CACHE_LINE_BYTES = 64
AMP_BYTES = 16
# inner chunk bounding the size of temporary index arrays within a block
CHUNK = 1 << 16


def num_qubits(psi: np.ndarray) -> int:
    n = len(psi).bit_length() - 1
    if len(psi) != 1 << n:
        raise ArgumentError(f"amplitude array length {len(psi)} is not a power of 2")
    return n


def static_blocks(total: int, threads: int, stride: int | None = None) -> list[tuple[int, int]]:
    """Split ``range(total)`` into at most ``threads`` contiguous blocks.

    Every block boundary is a multiple of ``stride`` (cache-line bytes over
    amplitude bytes), so two threads never write into the same cache line of
    a contiguously written array.
    """
    if stride is None:
        stride = max(1, CACHE_LINE_BYTES // AMP_BYTES)
    if total <= 0:
        return []
    lines = -(-total // stride)
    per = -(-lines // max(1, threads))
    blocks = []
    for start in range(0, total, per * stride):
        blocks.append((start, min(total, start + per * stride)))
    return blocks


@lru_cache(maxsize=None)
def _pool(threads: int) -> ThreadPoolExecutor:
    return ThreadPoolExecutor(max_workers=threads, thread_name_prefix="qdist-amp")


def parallel_for(total: int, body: Callable[[np.ndarray], None], threads: int = 1) -> None:
    """Call ``body`` on uint64 index runs covering ``range(total)``."""

    def run(block: tuple[int, int]) -> None:
        start, stop = block
        for s in range(start, stop, CHUNK):
            body(index_range(s, min(stop, s + CHUNK)))

    blocks = static_blocks(total, threads)
    if threads <= 1 or len(blocks) <= 1:
        for block in blocks:
            run(block)
    else:
        list(_pool(threads).map(run, blocks))


def _check_targets(n_qubits: int, ts: Sequence[int], what: str = "target") -> None:
    if n_qubits == 0:
        raise ArgumentError("a 0-qubit register admits no targets")
    for t in ts:
        if not isinstance(t, (int, np.integer)) or not 0 <= t < n_qubits:
            raise ArgumentError(f"{what} {t} out of range for {n_qubits} qubits")
    if len(set(ts)) != len(ts):
        raise ArgumentError(f"repeated {what}s {list(ts)}")


def _as_matrix(m, dim: int) -> np.ndarray:
    arr = np.asarray(m, dtype=np.complex128)
    if arr.shape != (dim, dim):
        raise ArgumentError(f"matrix must have shape {(dim, dim)}, got {arr.shape}")
    return arr


def local_one_target(
    psi: np.ndarray, m, t: int, threads: int = 1, counters: Counters | None = None
) -> None:
    """Apply the 2x2 matrix ``m`` to qubit ``t`` of ``psi`` in place."""
    n = num_qubits(psi)
    _check_targets(n, [t])
    m = _as_matrix(m, 2)
    m00, m01, m10, m11 = (complex(x) for x in m.ravel())
    bit = np.uint64(1 << t)

    def body(k: np.ndarray) -> None:
        i0 = insert_bit(k, t, 0)
        i1 = i0 | bit
        b = psi[i0]
        g = psi[i1]
        psi[i0] = m00 * b + m01 * g
        psi[i1] = m10 * b + m11 * g

    parallel_for(len(psi) >> 1, body, threads)
    if counters is not None:
        counters.flops += 3 * len(psi)
        counters.writes += len(psi)


def local_many_ctrl_one_target(
    psi: np.ndarray,
    ctrls: Sequence[int],
    m,
    t: int,
    threads: int = 1,
    counters: Counters | None = None,
) -> None:
    """Apply ``m`` to qubit ``t`` on the amplitudes whose control bits are all 1."""
    n = num_qubits(psi)
    _check_targets(n, list(ctrls) + [t], "qubit")
    m = _as_matrix(m, 2)
    m00, m01, m10, m11 = (complex(x) for x in m.ravel())
    qs = sorted(list(ctrls) + [t])
    bit = np.uint64(1 << t)

    def body(k: np.ndarray) -> None:
        i1 = insert_bits(k, qs, 1)
        i0 = i1 ^ bit
        b = psi[i0]
        g = psi[i1]
        psi[i0] = m00 * b + m01 * g
        psi[i1] = m10 * b + m11 * g

    touched = len(psi) >> len(ctrls)
    parallel_for(touched >> 1, body, threads)
    if counters is not None:
        counters.flops += 3 * touched
        counters.writes += touched


def local_many_target(
    psi: np.ndarray,
    m,
    ts: Sequence[int],
    ctrls: Sequence[int] = (),
    threads: int = 1,
    counters: Counters | None = None,
) -> None:
    """Apply the ``2**n x 2**n`` matrix ``m`` to qubits ``ts`` (bit q of a row index is ts[q])."""
    n_q = num_qubits(psi)
    ts = list(ts)
    ctrls = list(ctrls)
    if not ts:
        raise ArgumentError("at least one target is required")
    _check_targets(n_q, ts + ctrls, "qubit")
    n = len(ts)
    dim = 1 << n
    m = _as_matrix(m, dim)
    fixed = sorted(ts + ctrls)
    ctrl_bits = np.uint64(bit_mask(ctrls))
    offsets = np.array([set_bits(0, ts, v) for v in range(dim)], dtype=np.uint64)
    rows = [[complex(x) for x in m[j]] for j in range(dim)]

    def body(k: np.ndarray) -> None:
        base = insert_bits(k, fixed, 0) | ctrl_bits
        idx = base[:, None] | offsets[None, :]
        v = psi[idx]  # this block's scratch: one row of 2**n amplitudes per k
        for j in range(dim):
            row = rows[j]
            acc = row[0] * v[:, 0]
            for l in range(1, dim):
                acc = acc + row[l] * v[:, l]
            psi[idx[:, j]] = acc

    touched = len(psi) >> len(ctrls)
    parallel_for(touched >> n, body, threads)
    if counters is not None:
        counters.flops += (2 * dim - 1) * touched
        counters.writes += touched


def local_swap(
    psi: np.ndarray, t1: int, t2: int, threads: int = 1, counters: Counters | None = None
) -> None:
    """Exchange the |01> and |10> amplitudes of qubits (t1, t2); pure data movement."""
    n = num_qubits(psi)
    _check_targets(n, [t1, t2], "qubit")
    lo, hi = sorted((t1, t2))
    b_lo = np.uint64(1 << lo)
    b_hi = np.uint64(1 << hi)

    def body(k: np.ndarray) -> None:
        base = insert_bits(k, [lo, hi], 0)
        i01 = base | b_lo
        i10 = base | b_hi
        tmp = psi[i01]
        psi[i01] = psi[i10]
        psi[i10] = tmp

    parallel_for(len(psi) >> 2, body, threads)
    if counters is not None:
        counters.writes += len(psi) >> 1


def log2_exact(x: int) -> int:
    n = int(math.log2(x))
    if 1 << n != x:
        raise ArgumentError(f"{x} is not a power of 2")
    return n
