"""Distributed statevector operators.

Global amplitude ``i`` of an N-qubit register split over ``W = 2**w`` ranks
lives on rank ``i >> (N - w)`` at local offset ``i mod 2**(N - w)``.  The
low ``N - w`` qubits are the *suffix* (addressed by the local offset) and the
high ``w`` qubits are the *prefix* (addressed by the rank).  Operators acting
only on suffix qubits run locally on every rank; operators touching prefix
qubits pair each rank with the rank whose id differs in the relevant bits and
exchange amplitudes through the equal-sized buffer.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Sequence

import numpy as np

from . import sv_local
from .bitkit import (
    all_bits_one,
    bit_mask,
    flip_bit,
    flip_bits,
    get_bit,
    insert_bit,
    insert_bits,
    mask_parity,
)
from .errors import ArgumentError, CapacityError
from .sv_local import parallel_for
from .transport import RankContext, WorldConfig, WorldResult, exchange, run_world


class PauliCode(IntEnum):
    I = 0
    X = 1
    Y = 2
    Z = 3


@dataclass
class DistributedRegister:
    """One rank's share of an N-qubit statevector plus its exchange buffer."""

    n_qubits: int
    world: WorldConfig
    ctx: RankContext
    local: np.ndarray
    buffer: np.ndarray

    @classmethod
    def create(cls, n_qubits: int, ctx: RankContext) -> "DistributedRegister":
        w = ctx.config.w
        if n_qubits < w:
            raise CapacityError(
                f"{n_qubits} qubits cannot be split over 2**{w} ranks (need at least {w})"
            )
        size = 1 << (n_qubits - w)
        return cls(
            n_qubits,
            ctx.config,
            ctx,
            np.zeros(size, dtype=np.complex128),
            np.zeros(size, dtype=np.complex128),
        )

    @property
    def rank(self) -> int:
        return self.ctx.rank

    @property
    def n_suffix(self) -> int:
        return self.n_qubits - self.world.w

    @property
    def threads(self) -> int:
        return self.world.threads

    @property
    def counters(self):
        return self.ctx.counters

    def global_indices(self, j: np.ndarray) -> np.ndarray:
        return j | np.uint64(self.rank << self.n_suffix)

    def load_global(self, state: np.ndarray) -> None:
        """Copy this rank's slice out of a full global vector."""
        state = np.asarray(state, dtype=np.complex128)
        if len(state) != 1 << self.n_qubits:
            raise ArgumentError(f"expected {1 << self.n_qubits} amplitudes, got {len(state)}")
        size = len(self.local)
        self.local[:] = state[self.rank * size : (self.rank + 1) * size]


def _check_qubits(reg: DistributedRegister, qs: Sequence[int], what: str = "qubit") -> None:
    if reg.n_qubits == 0:
        raise ArgumentError("a 0-qubit register admits no targets")
    for q in qs:
        if not isinstance(q, (int, np.integer)) or not 0 <= q < reg.n_qubits:
            raise ArgumentError(f"{what} {q} out of range for {reg.n_qubits} qubits")
    if len(set(qs)) != len(qs):
        raise ArgumentError(f"repeated {what}s in {list(qs)}")


def _matrix2(m) -> np.ndarray:
    arr = np.asarray(m, dtype=np.complex128)
    if arr.shape != (2, 2):
        raise ArgumentError(f"expected a 2x2 matrix, got shape {arr.shape}")
    return arr


def init_basis_state(reg: DistributedRegister, i: int) -> None:
    if not 0 <= i < 1 << reg.n_qubits:
        raise ArgumentError(f"basis index {i} out of range for {reg.n_qubits} qubits")
    reg.local[:] = 0
    if i >> reg.n_suffix == reg.rank:
        reg.local[i & ((1 << reg.n_suffix) - 1)] = 1


def _combine_with_pair(reg: DistributedRegister, m: np.ndarray, b: int, src: np.ndarray, off: int,
                       index: Callable[[np.ndarray], np.ndarray], count: int) -> None:
    """local[index(k)] = row b of m applied to (amp0, amp1), the pair's amp read from src[off+k]."""
    c0 = complex(m[b, 0])
    c1 = complex(m[b, 1])
    loc = reg.local
    off_u = np.uint64(off)

    def body(k: np.ndarray) -> None:
        j = index(k)
        mine = loc[j]
        theirs = src[k + off_u]
        if b == 0:
            loc[j] = c0 * mine + c1 * theirs
        else:
            loc[j] = c0 * theirs + c1 * mine

    parallel_for(count, body, reg.threads)
    reg.counters.flops += 3 * count
    reg.counters.writes += count


def _dist_one_target_prefix(reg: DistributedRegister, m: np.ndarray, t: int) -> None:
    p = t - reg.n_suffix
    pair = flip_bit(reg.rank, p)
    size = len(reg.local)
    exchange(reg.ctx, reg.local, 0, reg.buffer, 0, size, pair, "a")
    b = get_bit(reg.rank, p)
    _combine_with_pair(reg, m, b, reg.buffer, 0, lambda k: k, size)


def dist_one_target(reg: DistributedRegister, m, t: int) -> None:
    """Apply a general 2x2 matrix to qubit ``t``."""
    _check_qubits(reg, [t], "target")
    m = _matrix2(m)
    if t < reg.n_suffix:
        sv_local.local_one_target(reg.local, m, t, reg.threads, reg.counters)
    else:
        _dist_one_target_prefix(reg, m, t)


def dist_many_ctrl_one_target(reg: DistributedRegister, ctrls: Sequence[int], m, t: int) -> None:
    """Apply ``m`` to qubit ``t`` conditioned on every control qubit being 1."""
    ctrls = list(ctrls)
    _check_qubits(reg, ctrls + [t])
    m = _matrix2(m)
    lam = reg.n_suffix
    prefix = [c - lam for c in ctrls if c >= lam]
    suffix = sorted(c for c in ctrls if c < lam)
    if not all_bits_one(reg.rank, prefix):
        return
    if t < lam:
        sv_local.local_many_ctrl_one_target(reg.local, suffix, m, t, reg.threads, reg.counters)
        return
    if not suffix:
        _dist_one_target_prefix(reg, m, t)
        return
    # pack only the amplitudes satisfying the suffix controls, land the pair's at offset l
    p = t - lam
    pair = flip_bit(reg.rank, p)
    count = len(reg.local) >> len(suffix)
    loc, buf = reg.local, reg.buffer

    def pack(k: np.ndarray) -> None:
        buf[k] = loc[insert_bits(k, suffix, 1)]

    parallel_for(count, pack, reg.threads)
    exchange(reg.ctx, buf, 0, buf, count, count, pair, "b")
    b = get_bit(reg.rank, p)
    _combine_with_pair(reg, m, b, buf, count, lambda k: insert_bits(k, suffix, 1), count)


def dist_swap(reg: DistributedRegister, t1: int, t2: int) -> None:
    """Swap qubits ``t1`` and ``t2``. Moves amplitudes only; no arithmetic."""
    _check_qubits(reg, [t1, t2])
    t1, t2 = sorted((t1, t2))
    lam = reg.n_suffix
    loc, buf = reg.local, reg.buffer
    if t2 < lam:
        sv_local.local_swap(loc, t1, t2, reg.threads, reg.counters)
        return
    size = len(loc)
    if t1 >= lam:
        p1, p2 = t1 - lam, t2 - lam
        if get_bit(reg.rank, p1) == get_bit(reg.rank, p2):
            return
        pair = flip_bits(reg.rank, [p1, p2])
        exchange(reg.ctx, loc, 0, buf, 0, size, pair, "d")
        loc[:] = buf
        reg.counters.writes += size
        return
    # t1 in the suffix, t2 in the prefix: trade the half whose t1 bit differs from our t2 bit
    p2 = t2 - lam
    b = 1 - get_bit(reg.rank, p2)
    pair = flip_bit(reg.rank, p2)
    half = size >> 1

    def pack(k: np.ndarray) -> None:
        buf[k] = loc[insert_bit(k, t1, b)]

    def unpack(k: np.ndarray) -> None:
        loc[insert_bit(k, t1, b)] = buf[k + np.uint64(half)]

    parallel_for(half, pack, reg.threads)
    exchange(reg.ctx, buf, 0, buf, half, half, pair, "e")
    parallel_for(half, unpack, reg.threads)
    reg.counters.writes += half


def _swap_plan(reg: DistributedRegister, ts: Sequence[int], ctrls: Sequence[int]) -> list:
    """Pairs (suffix slot, prefix target) moving every prefix target into the suffix."""
    lam = reg.n_suffix
    prefix = sorted(t for t in ts if t >= lam)
    busy = set(ts) | set(ctrls)
    free = [q for q in range(lam) if q not in busy]
    if len(prefix) > len(free):
        raise CapacityError(
            f"{len(ts)} targets with {len([c for c in ctrls if c < lam])} suffix controls "
            f"need more than the {lam} suffix qubits available"
        )
    return list(zip(free, prefix))


def dist_many_target(reg: DistributedRegister, m, ts: Sequence[int], ctrls: Sequence[int] = ()) -> None:
    """Apply a ``2**n x 2**n`` matrix to targets ``ts`` (optionally controlled).

    Prefix targets are first swapped into the lowest free suffix qubits, the
    gate is applied locally, and the swaps are undone.  Controls are never
    moved; free slots skip them.
    """
    ts = list(ts)
    ctrls = list(ctrls)
    if not ts:
        raise ArgumentError("at least one target is required")
    _check_qubits(reg, ts + ctrls)
    lam = reg.n_suffix
    if len(ts) > lam:
        raise CapacityError(f"{len(ts)} targets exceed the {lam} suffix qubits of each rank")
    dim = 1 << len(ts)
    m = np.asarray(m, dtype=np.complex128)
    if m.shape != (dim, dim):
        raise ArgumentError(f"matrix must have shape {(dim, dim)}, got {m.shape}")
    plan = _swap_plan(reg, ts, ctrls)
    for q, t in plan:
        dist_swap(reg, q, t)
    moved = {t: q for q, t in plan}
    local_ts = [moved.get(t, t) for t in ts]
    prefix_ctrls = [c - lam for c in ctrls if c >= lam]
    suffix_ctrls = [c for c in ctrls if c < lam]
    if all_bits_one(reg.rank, prefix_ctrls):
        sv_local.local_many_target(reg.local, m, local_ts, suffix_ctrls, reg.threads, reg.counters)
    for q, t in reversed(plan):
        dist_swap(reg, q, t)


def _check_paulis(reg: DistributedRegister, sigmas: Sequence[int], ts: Sequence[int]) -> list:
    sigmas = [int(s) for s in sigmas]
    if len(sigmas) != len(ts):
        raise ArgumentError(f"{len(sigmas)} Pauli codes for {len(ts)} targets")
    if not ts:
        raise ArgumentError("at least one target is required")
    for s in sigmas:
        if s not in (1, 2, 3):
            raise ArgumentError(f"Pauli code {s} not in X=1, Y=2, Z=3 (omit identity targets)")
    _check_qubits(reg, list(ts), "target")
    return sigmas


class _PauliAction:
    """Index and phase bookkeeping shared by the Pauli tensor and Pauli gadget."""

    def __init__(self, reg: DistributedRegister, sigmas: Sequence[int], ts: Sequence[int]):
        lam = reg.n_suffix
        xy = [t for s, t in zip(sigmas, ts) if s in (1, 2)]
        yz = [t for s, t in zip(sigmas, ts) if s in (2, 3)]
        n_y = sum(1 for s in sigmas if s == 2)
        self.eta = (1j) ** (n_y % 4)
        self.suffix_xy = np.uint64(bit_mask(t for t in xy if t < lam))
        self.pair = flip_bits(reg.rank, [t - lam for t in xy if t >= lam])
        self.yz = np.uint64(bit_mask(yz))
        self.pair_base = np.uint64(self.pair << lam)
        eta = complex(self.eta)
        self.phases = np.array([eta, -eta], dtype=np.complex128)

    def source(self, j: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Local offset in the source array and the phase beta of the source amplitude."""
        src = j ^ self.suffix_xy
        beta = self.phases[mask_parity((src | self.pair_base) & self.yz).astype(np.intp)]
        return src, beta


def _pauli_source(reg: DistributedRegister, action: _PauliAction) -> np.ndarray:
    """The array holding the pre-image amplitudes: the pair's (exchanged) or a copy of ours."""
    size = len(reg.local)
    if action.pair != reg.rank:
        exchange(reg.ctx, reg.local, 0, reg.buffer, 0, size, action.pair, "a")
    else:
        reg.buffer[:] = reg.local
    return reg.buffer


def dist_pauli_tensor(reg: DistributedRegister, sigmas: Sequence[int], ts: Sequence[int]) -> None:
    """Apply the tensor product of X/Y/Z codes ``sigmas`` on targets ``ts``."""
    sigmas = _check_paulis(reg, sigmas, ts)
    action = _PauliAction(reg, sigmas, ts)
    if action.pair == reg.rank and action.suffix_xy == 0:
        # diagonal on this rank: every amplitude stays put and only picks up a phase
        loc = reg.local

        def diag(j: np.ndarray) -> None:
            _, beta = action.source(j)
            loc[j] = beta * loc[j]

        parallel_for(len(loc), diag, reg.threads)
    else:
        src_arr = _pauli_source(reg, action)
        loc = reg.local

        def body(j: np.ndarray) -> None:
            src, beta = action.source(j)
            loc[j] = beta * src_arr[src]

        parallel_for(len(loc), body, reg.threads)
    reg.counters.flops += len(reg.local)
    reg.counters.writes += len(reg.local)


def dist_phase_gadget(reg: DistributedRegister, ts: Sequence[int], theta: float) -> None:
    """exp(i theta Z...Z) on ``ts``: e^{+i theta} on even parity, e^{-i theta} on odd."""
    ts = list(ts)
    if not ts:
        raise ArgumentError("at least one target is required")
    _check_qubits(reg, ts, "target")
    mask = np.uint64(bit_mask(ts))
    factors = np.array([np.exp(1j * theta), np.exp(-1j * theta)], dtype=np.complex128)
    loc = reg.local

    def body(j: np.ndarray) -> None:
        par = mask_parity(reg.global_indices(j) & mask).astype(np.intp)
        loc[j] = loc[j] * factors[par]

    parallel_for(len(loc), body, reg.threads)
    reg.counters.flops += len(loc)
    reg.counters.writes += len(loc)


def dist_pauli_gadget(reg: DistributedRegister, sigmas: Sequence[int], ts: Sequence[int], theta: float) -> None:
    """exp(i theta P) = cos(theta) + i sin(theta) P for the Pauli string P."""
    sigmas = _check_paulis(reg, sigmas, ts)
    action = _PauliAction(reg, sigmas, ts)
    a = float(np.cos(theta))
    ib = 1j * float(np.sin(theta))
    src_arr = _pauli_source(reg, action)
    loc = reg.local

    def body(j: np.ndarray) -> None:
        src, beta = action.source(j)
        loc[j] = a * loc[j] + (ib * beta) * src_arr[src]

    parallel_for(len(loc), body, reg.threads)
    reg.counters.flops += 4 * len(loc)
    reg.counters.writes += len(loc)


def gather(parts: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate per-rank local arrays in ascending rank order."""
    return np.concatenate([np.asarray(p) for p in parts])


def simulate(
    n_qubits: int,
    config: WorldConfig,
    body: Callable[[DistributedRegister], object],
    initial: np.ndarray | int = 0,
) -> tuple[np.ndarray, WorldResult]:
    """Run ``body`` on a distributed register initialised from ``initial`` and gather it."""

    def program(ctx: RankContext) -> np.ndarray:
        reg = DistributedRegister.create(n_qubits, ctx)
        if isinstance(initial, (int, np.integer)):
            init_basis_state(reg, int(initial))
        else:
            reg.load_global(initial)
        body(reg)
        return reg.local.copy()

    result = run_world(config, program)
    return gather(result.results), result
