"""Distributed density matrices stored as Choi-vectors.

An N-qubit density matrix ``rho`` is held as the 2N-qubit vector whose
amplitude ``i = k + l * 2**N`` is ``rho[k, l]`` (column-major
vectorisation).  Qubit ``t`` of the density matrix therefore appears twice in
the vector: as bit ``t`` (the row, or ket, index) and as bit ``t + N`` (the
column, or bra, index).  Because ``N >= w`` every bit ``t < N`` is a suffix
bit, and bit ``t + N`` is a prefix bit exactly when ``t >= N - w``.

Unitaries are applied twice (``U`` on ``t`` and ``U*`` on ``t + N``); the
decoherence channels use bespoke kernels which combine amplitudes whose
``t`` and ``t + N`` bits agree ("diagonal-equal" amplitudes) and scale the
rest.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import sv_dist
from .bitkit import bit_mask, flip_bit, get_bit, insert_bit, insert_bits, set_bits
from .errors import ArgumentError, CapacityError
from .sv_dist import DistributedRegister, PauliCode
from .sv_local import parallel_for
from .transport import RankContext, WorldConfig, WorldResult, exchange, receive, reduce_sum, run_world, send_async


class PhysicalityWarning(UserWarning):
    """A channel probability lies outside the range giving a physical channel."""


@dataclass
class ChoiRegister:
    """One rank's share of an N-qubit density matrix, as a 2N-qubit register."""

    n_qubits: int
    inner: DistributedRegister
    consumed: bool = field(default=False)

    @classmethod
    def create(cls, n_qubits: int, ctx: RankContext, allow_narrow: bool = False) -> "ChoiRegister":
        w = ctx.config.w
        if n_qubits < w and not allow_narrow:
            raise CapacityError(
                f"a {n_qubits}-qubit density matrix needs at least {w} qubits to span 2**{w} ranks"
            )
        return cls(n_qubits, DistributedRegister.create(2 * n_qubits, ctx))

    @property
    def ctx(self) -> RankContext:
        return self.inner.ctx

    @property
    def rank(self) -> int:
        return self.inner.rank

    @property
    def local(self) -> np.ndarray:
        return self.inner.local

    @property
    def buffer(self) -> np.ndarray:
        return self.inner.buffer

    @property
    def threads(self) -> int:
        return self.inner.threads

    @property
    def counters(self):
        return self.inner.counters

    @property
    def n_split(self) -> int:
        """Qubits ``t >= n_split`` have their column bit ``t + N`` in the rank prefix."""
        return self.n_qubits - self.inner.world.w

    def load_global(self, choi: np.ndarray) -> None:
        self.inner.load_global(choi)


@dataclass
class KrausSet:
    """Kraus operators of a channel; completeness is not required."""

    ops: list

    def __post_init__(self):
        self.ops = [np.asarray(k, dtype=np.complex128) for k in self.ops]
        if not self.ops:
            raise ArgumentError("a Kraus set needs at least one operator")
        shape = self.ops[0].shape
        if len(shape) != 2 or shape[0] != shape[1] or shape[0] & (shape[0] - 1):
            raise ArgumentError(f"Kraus operators must be square with power-of-2 size, got {shape}")
        for k in self.ops:
            if k.shape != shape:
                raise ArgumentError(f"Kraus operators disagree in shape: {k.shape} vs {shape}")

    @property
    def n_targets(self) -> int:
        return self.ops[0].shape[0].bit_length() - 1

    def is_trace_preserving(self, atol: float = 1e-12) -> bool:
        total = sum(k.conj().T @ k for k in self.ops)
        return bool(np.allclose(total, np.eye(total.shape[0]), atol=atol, rtol=0))

    def superoperator(self) -> np.ndarray:
        """sum_m conj(K_m) (x) K_m, indexed [i*2^n + k, j*2^n + l] = conj(K[i,j]) K[k,l]."""
        return sum(np.kron(k.conj(), k) for k in self.ops)


@dataclass
class PauliString:
    """Weighted sum of Pauli strings: ``codes[n*N + q]`` acts on qubit q in term n."""

    coeffs: list
    codes: list

    def __post_init__(self):
        self.coeffs = [float(c) for c in self.coeffs]
        self.codes = [int(c) for c in self.codes]
        for c in self.codes:
            if c not in (0, 1, 2, 3):
                raise ArgumentError(f"Pauli code {c} not in I=0, X=1, Y=2, Z=3")

    def n_qubits(self) -> int:
        if not self.coeffs:
            raise ArgumentError("a Pauli string needs at least one term")
        n, rem = divmod(len(self.codes), len(self.coeffs))
        if rem:
            raise ArgumentError(f"{len(self.codes)} codes do not split into {len(self.coeffs)} terms")
        return n


def _live(rho: ChoiRegister) -> None:
    if rho.consumed:
        raise ArgumentError("this register was consumed by a partial trace")


def _check_qubits(rho: ChoiRegister, ts: Sequence[int], what: str = "target") -> None:
    _live(rho)
    for t in ts:
        if not isinstance(t, (int, np.integer)) or not 0 <= t < rho.n_qubits:
            raise ArgumentError(f"{what} {t} out of range for {rho.n_qubits} qubits")
    if len(set(ts)) != len(ts):
        raise ArgumentError(f"repeated {what}s in {list(ts)}")


def _warn_probability(name: str, p: float, upper: float) -> None:
    if not 0 <= p <= upper:
        warnings.warn(
            f"{name} probability {p} lies outside [0, {upper}]; the map is not a physical channel",
            PhysicalityWarning,
            stacklevel=3,
        )


def init_pure(rho: ChoiRegister, psi: np.ndarray | int) -> None:
    """Set ``rho = |psi><psi|`` from a full amplitude list or a basis index."""
    _live(rho)
    n = rho.n_qubits
    if isinstance(psi, (int, np.integer)):
        if not 0 <= psi < 1 << n:
            raise ArgumentError(f"basis index {psi} out of range for {n} qubits")
        sv_dist.init_basis_state(rho.inner, int(psi) * ((1 << n) + 1))
        return
    psi = np.asarray(psi, dtype=np.complex128)
    if psi.shape != (1 << n,):
        raise ArgumentError(f"expected {1 << n} amplitudes, got shape {psi.shape}")
    low = np.uint64((1 << n) - 1)
    conj = psi.conj()
    loc = rho.local
    reg = rho.inner

    def body(j: np.ndarray) -> None:
        i = reg.global_indices(j)
        loc[j] = psi[i & low] * conj[i >> np.uint64(n)]

    parallel_for(len(loc), body, rho.threads)


# unitaries


def dm_many_target_unitary(rho: ChoiRegister, m, ts: Sequence[int]) -> None:
    ts = list(ts)
    _check_qubits(rho, ts)
    m = np.asarray(m, dtype=np.complex128)
    n = rho.n_qubits
    sv_dist.dist_many_target(rho.inner, m, ts)
    sv_dist.dist_many_target(rho.inner, m.conj(), [t + n for t in ts])


def dm_one_target(rho: ChoiRegister, m, t: int, ctrls: Sequence[int] = ()) -> None:
    """Controlled (or plain) one-target gate: U on (ctrls, t) then U* on the shifted copy."""
    ctrls = list(ctrls)
    _check_qubits(rho, ctrls + [t], "qubit")
    m = np.asarray(m, dtype=np.complex128)
    n = rho.n_qubits
    sv_dist.dist_many_ctrl_one_target(rho.inner, ctrls, m, t)
    sv_dist.dist_many_ctrl_one_target(rho.inner, [c + n for c in ctrls], m.conj(), t + n)


def dm_swap(rho: ChoiRegister, t1: int, t2: int) -> None:
    _check_qubits(rho, [t1, t2], "qubit")
    n = rho.n_qubits
    sv_dist.dist_swap(rho.inner, t1, t2)
    sv_dist.dist_swap(rho.inner, t1 + n, t2 + n)


def dm_pauli_tensor(rho: ChoiRegister, sigmas: Sequence[int], ts: Sequence[int]) -> None:
    ts = list(ts)
    _check_qubits(rho, ts)
    n = rho.n_qubits
    sv_dist.dist_pauli_tensor(rho.inner, sigmas, ts)
    sv_dist.dist_pauli_tensor(rho.inner, sigmas, [t + n for t in ts])
    # conj(Y) = -Y, so the conjugated string carries (-1)^{#Y}
    if sum(1 for s in sigmas if int(s) == PauliCode.Y) % 2:
        np.negative(rho.local, out=rho.local)
        rho.counters.flops += len(rho.local)
        rho.counters.writes += len(rho.local)


def dm_phase_gadget(rho: ChoiRegister, ts: Sequence[int], theta: float) -> None:
    ts = list(ts)
    _check_qubits(rho, ts)
    n = rho.n_qubits
    sv_dist.dist_phase_gadget(rho.inner, ts, theta)
    sv_dist.dist_phase_gadget(rho.inner, [t + n for t in ts], -theta)


def dm_pauli_gadget(rho: ChoiRegister, sigmas: Sequence[int], ts: Sequence[int], theta: float) -> None:
    ts = list(ts)
    _check_qubits(rho, ts)
    n = rho.n_qubits
    n_y = sum(1 for s in sigmas if int(s) == PauliCode.Y)
    sv_dist.dist_pauli_gadget(rho.inner, sigmas, ts, theta)
    sv_dist.dist_pauli_gadget(rho.inner, sigmas, [t + n for t in ts], theta * (-1) ** (n_y + 1))


# general channels


def kraus_map(rho: ChoiRegister, ks: KrausSet | Sequence, ts: Sequence[int]) -> None:
    """Apply sum_m K_m rho K_m^dagger through its 2n-qubit superoperator."""
    if not isinstance(ks, KrausSet):
        ks = KrausSet(list(ks))
    ts = list(ts)
    if not ts:
        raise ArgumentError("at least one target is required")
    _check_qubits(rho, ts)
    if ks.n_targets != len(ts):
        raise ArgumentError(f"Kraus operators act on {ks.n_targets} qubits but {len(ts)} targets given")
    w = rho.inner.world.w
    limit = rho.n_qubits - math.ceil(w / 2)
    if len(ts) > limit:
        raise CapacityError(
            f"Kraus map on {len(ts)} qubits exceeds the bound N - ceil(w/2) = {limit}"
        )
    n = rho.n_qubits
    sv_dist.dist_many_target(rho.inner, ks.superoperator(), ts + [t + n for t in ts])


# dephasing


def dephase_one(rho: ChoiRegister, t: int, p: float) -> None:
    _check_qubits(rho, [t])
    _warn_probability("one-qubit dephasing", p, 0.5)
    c = 1 - 2 * p
    n = rho.n_qubits
    loc = rho.local
    if t >= rho.n_split:
        b = get_bit(rho.rank, t - rho.n_split)

        def body(k: np.ndarray) -> None:
            j = insert_bit(k, t, 1 - b)
            loc[j] = c * loc[j]

        parallel_for(len(loc) >> 1, body, rho.threads)
    else:
        bt = np.uint64(1 << t)
        btn = np.uint64(1 << (t + n))

        def body(k: np.ndarray) -> None:
            j = insert_bits(k, [t, t + n], 0)
            loc[j | bt] = c * loc[j | bt]
            loc[j | btn] = c * loc[j | btn]

        parallel_for(len(loc) >> 2, body, rho.threads)
    rho.counters.flops += len(loc) >> 1
    rho.counters.writes += len(loc) >> 1


def dephase_two(rho: ChoiRegister, t1: int, t2: int, p: float) -> None:
    _check_qubits(rho, [t1, t2])
    _warn_probability("two-qubit dephasing", p, 0.75)
    n = rho.n_qubits
    factors = np.array([1.0, 1 - 4 * p / 3], dtype=np.complex128)
    loc = rho.local
    reg = rho.inner

    def body(j: np.ndarray) -> None:
        i = reg.global_indices(j)
        differ = (get_bit(i, t1) ^ get_bit(i, t1 + n)) | (get_bit(i, t2) ^ get_bit(i, t2 + n))
        loc[j] = loc[j] * factors[differ.astype(np.intp)]

    parallel_for(len(loc), body, rho.threads)
    rho.counters.flops += len(loc)
    rho.counters.writes += len(loc)


# depolarising


def depolarise_one(rho: ChoiRegister, t: int, p: float) -> None:
    _check_qubits(rho, [t])
    _warn_probability("one-qubit depolarising", p, 0.75)
    mix = 2 * p / 3
    keep = 1 - 2 * p / 3
    off = 1 - 4 * p / 3
    n = rho.n_qubits
    loc, buf = rho.local, rho.buffer
    size = len(loc)
    if t < rho.n_split:
        bt = np.uint64(1 << t)
        btn = np.uint64(1 << (t + n))

        def body(k: np.ndarray) -> None:
            j00 = insert_bits(k, [t, t + n], 0)
            j11 = j00 | bt | btn
            a = loc[j00]
            d = loc[j11]
            loc[j00] = keep * a + mix * d
            loc[j11] = keep * d + mix * a
            loc[j00 | bt] = off * loc[j00 | bt]
            loc[j00 | btn] = off * loc[j00 | btn]

        parallel_for(size >> 2, body, rho.threads)
    else:
        p_bit = t - rho.n_split
        b = get_bit(rho.rank, p_bit)
        half = size >> 1
        half_u = np.uint64(half)

        def pack(k: np.ndarray) -> None:
            buf[k] = loc[insert_bit(k, t, b)]

        parallel_for(half, pack, rho.threads)
        exchange(rho.ctx, buf, 0, buf, half, half, flip_bit(rho.rank, p_bit), "b")

        def body(k: np.ndarray) -> None:
            jo = insert_bit(k, t, 1 - b)
            loc[jo] = off * loc[jo]
            jd = insert_bit(k, t, b)
            loc[jd] = keep * loc[jd] + mix * buf[k + half_u]

        parallel_for(half, body, rho.threads)
    rho.counters.flops += 2 * size
    rho.counters.writes += size


def depolarise_two(rho: ChoiRegister, t1: int, t2: int, p: float) -> None:
    """Two-qubit depolarising; p must lie in [0, 15/16]."""
    _check_qubits(rho, [t1, t2])
    if not 0 <= p <= 15 / 16:
        raise ArgumentError(f"two-qubit depolarising probability {p} outside [0, 15/16]")
    t1, t2 = sorted((t1, t2))
    c1 = 1 - 4 * p / 5
    c2 = 4 * p / 15
    off = 1 - 16 * p / 15
    n = rho.n_qubits
    split = rho.n_split
    loc, buf = rho.local, rho.buffer
    size = len(loc)
    reg = rho.inner
    if t2 < split:
        _depolarise_two_local(rho, t1, t2, c1, c2, off)
    elif t1 < split:
        # the column bit of t2 is in the prefix; pre-sum the two local diagonal-equal
        # amplitudes of each group and trade one eighth of the buffer
        b = get_bit(rho.rank, t2 - split)
        _scale_off_diagonal(rho, [(t1, t1 + n)], [(t2, b)], off)
        eighth = size >> 3
        eighth_u = np.uint64(eighth)
        bt1 = np.uint64((1 << t1) | (1 << (t1 + n)))
        fix = np.uint64(b << t2)
        fixed = [t1, t2, t1 + n]

        def pack(k: np.ndarray) -> None:
            j00 = insert_bits(k, fixed, 0) | fix
            buf[k] = loc[j00] + loc[j00 | bt1]

        parallel_for(eighth, pack, rho.threads)
        exchange(rho.ctx, buf, 0, buf, eighth, eighth, flip_bit(rho.rank, t2 - split), "b")

        def body(k: np.ndarray) -> None:
            j00 = insert_bits(k, fixed, 0) | fix
            j11 = j00 | bt1
            a = loc[j00]
            d = loc[j11]
            far = buf[k + eighth_u]
            loc[j00] = c1 * a + c2 * (d + far)
            loc[j11] = c1 * d + c2 * (a + far)

        parallel_for(eighth, body, rho.threads)
    else:
        # both column bits in the prefix: two pairwise rounds of a quarter buffer each
        b1 = get_bit(rho.rank, t1 - split)
        b2 = get_bit(rho.rank, t2 - split)
        _scale_off_diagonal(rho, [], [(t1, b1), (t2, b2)], off)
        quarter = size >> 2
        quarter_u = np.uint64(quarter)
        fix = np.uint64((b1 << t1) | (b2 << t2))

        def diag(k: np.ndarray) -> np.ndarray:
            return insert_bits(k, [t1, t2], 0) | fix

        def pack(k: np.ndarray) -> None:
            buf[k] = loc[diag(k)]

        def first(k: np.ndarray) -> None:
            j = diag(k)
            mine = loc[j]
            far = buf[k + quarter_u]
            loc[j] = c1 * mine + c2 * far
            buf[k] = mine + far

        def second(k: np.ndarray) -> None:
            j = diag(k)
            loc[j] = loc[j] + c2 * buf[k + quarter_u]

        parallel_for(quarter, pack, rho.threads)
        exchange(rho.ctx, buf, 0, buf, quarter, quarter, flip_bit(rho.rank, t1 - split), "b")
        parallel_for(quarter, first, rho.threads)
        exchange(rho.ctx, buf, 0, buf, quarter, quarter, flip_bit(rho.rank, t2 - split), "b")
        parallel_for(quarter, second, rho.threads)
    rho.counters.flops += 2 * size
    rho.counters.writes += size


def _scale_off_diagonal(rho: ChoiRegister, pairs, fixed, factor: float) -> None:
    """Multiply by ``factor`` every amplitude that is not diagonal-equal.

    ``pairs`` lists local (row, column) bit pairs that must agree and ``fixed``
    lists (row bit, value) pairs whose column bit is the given rank bit.
    """
    loc = rho.local
    pair_masks = [(np.uint64(1 << a), np.uint64(1 << b)) for a, b in pairs]
    fix_mask = np.uint64(bit_mask(t for t, _ in fixed))
    fix_val = np.uint64(sum(v << t for t, v in fixed))
    factors = np.array([factor, 1.0], dtype=np.complex128)

    def body(j: np.ndarray) -> None:
        ok = (j & fix_mask) == fix_val
        for ma, mb in pair_masks:
            ok &= ((j & ma) == 0) == ((j & mb) == 0)
        loc[j] = loc[j] * factors[ok.astype(np.intp)]

    parallel_for(len(loc), body, rho.threads)


def _depolarise_two_local(rho: ChoiRegister, t1: int, t2: int, c1: float, c2: float, off: float) -> None:
    n = rho.n_qubits
    loc = rho.local
    fixed = sorted([t1, t2, t1 + n, t2 + n])
    m1 = np.uint64((1 << t1) | (1 << (t1 + n)))
    m2 = np.uint64((1 << t2) | (1 << (t2 + n)))
    # the 12 other members of each group of 16 differ in some (t, t+N) pair
    others = []
    for v in range(16):
        bits = [(v >> q) & 1 for q in range(4)]
        pos = dict(zip([t1, t2, t1 + n, t2 + n], bits))
        if pos[t1] != pos[t1 + n] or pos[t2] != pos[t2 + n]:
            others.append(np.uint64(set_bits(0, [t1, t2, t1 + n, t2 + n], v)))

    def body(k: np.ndarray) -> None:
        j = insert_bits(k, fixed, 0)
        a, b_, c_, d = loc[j], loc[j | m1], loc[j | m2], loc[j | m1 | m2]
        loc[j] = c1 * a + c2 * (b_ + c_ + d)
        loc[j | m1] = c1 * b_ + c2 * (a + c_ + d)
        loc[j | m2] = c1 * c_ + c2 * (a + b_ + d)
        loc[j | m1 | m2] = c1 * d + c2 * (a + b_ + c_)
        for o in others:
            loc[j | o] = off * loc[j | o]

    parallel_for(len(loc) >> 4, body, rho.threads)


# amplitude damping


def damping(rho: ChoiRegister, t: int, p: float) -> None:
    _check_qubits(rho, [t])
    _warn_probability("amplitude damping", p, 1.0)
    c1 = math.sqrt(1 - p) if p <= 1 else float("nan")
    c2 = 1 - p
    n = rho.n_qubits
    loc, buf = rho.local, rho.buffer
    size = len(loc)
    if t < rho.n_split:
        bt = np.uint64(1 << t)
        btn = np.uint64(1 << (t + n))

        def body(k: np.ndarray) -> None:
            j00 = insert_bits(k, [t, t + n], 0)
            j11 = j00 | bt | btn
            d = loc[j11]
            loc[j00] = loc[j00] + p * d
            loc[j11] = c2 * d
            loc[j00 | bt] = c1 * loc[j00 | bt]
            loc[j00 | btn] = c1 * loc[j00 | btn]

        parallel_for(size >> 2, body, rho.threads)
        rho.counters.flops += size + (size >> 2)
        rho.counters.writes += size
        return
    p_bit = t - rho.n_split
    b = get_bit(rho.rank, p_bit)
    pair = flip_bit(rho.rank, p_bit)
    half = size >> 1
    if b == 1:
        # our |1><1| block decays into the pair's |0><0| block: ship it one way
        def pack(k: np.ndarray) -> None:
            j = insert_bit(k, t, 1)
            buf[k] = loc[j]
            loc[j] = c2 * loc[j]

        parallel_for(half, pack, rho.threads)
        send_async(rho.ctx, buf, half, pair, "c")

    def coherences(k: np.ndarray) -> None:
        j = insert_bit(k, t, 1 - b)
        loc[j] = c1 * loc[j]

    parallel_for(half, coherences, rho.threads)
    if b == 0:
        receive(rho.ctx, buf, half, pair)

        def absorb(k: np.ndarray) -> None:
            j = insert_bit(k, t, 0)
            loc[j] = loc[j] + p * buf[k]

        parallel_for(half, absorb, rho.threads)
    rho.counters.flops += size
    rho.counters.writes += size


# expectation values

# matrix elements <row|sigma|col> of I, X, Y, Z indexed [code, row, col]
_PAULI_ELEMS = np.array(
    [
        [[1, 0], [0, 1]],
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=np.complex128,
)


def pauli_string_expectation(rho: ChoiRegister, h: PauliString) -> complex:
    """Tr(H rho) = sum_i H_i beta_i, followed by a single reduction across ranks."""
    _live(rho)
    n = rho.n_qubits
    if h.n_qubits() != n:
        raise ArgumentError(f"Pauli string is over {h.n_qubits()} qubits, register has {n}")
    reg = rho.inner
    loc = rho.local
    partials = []

    def body(j: np.ndarray) -> None:
        i = reg.global_indices(j)
        rows = [get_bit(i, q + n).astype(np.intp) for q in range(n)]
        cols = [get_bit(i, q).astype(np.intp) for q in range(n)]
        hi = np.zeros(len(j), dtype=np.complex128)
        for term, coeff in enumerate(h.coeffs):
            codes = h.codes[term * n : (term + 1) * n]
            elem = np.ones(len(j), dtype=np.complex128)
            for q, code in enumerate(codes):
                elem = elem * _PAULI_ELEMS[code, rows[q], cols[q]]
            hi = hi + coeff * elem
        partials.append(complex(np.sum(hi * loc[j])))

    # summed serially so the partials combine in a fixed order
    parallel_for(len(loc), body, 1)
    local_total = 0j
    for x in partials:
        local_total += x
    rho.counters.flops += len(loc) * len(h.coeffs) * (n + 2)
    return reduce_sum(rho.ctx, local_total)


# partial trace


def _next_zero_below(mask: int, i: int) -> int:
    i -= 1
    while get_bit(mask, i) == 1:
        i -= 1
    return i


def _reordered_targets(s: Sequence[int], lam: int) -> list:
    """New suffix positions for sorted targets ``s``: prefix ones move to the leftmost free slots."""
    mask = bit_mask(s)
    tau = lam
    out = []
    for q in range(len(s) - 1, -1, -1):
        if s[q] < lam:
            out.append(s[q])
        else:
            tau = _next_zero_below(mask, tau)
            out.append(tau)
    return out[::-1]


def _remaining_qubit_order(n: int, s: Sequence[int], s_new: Sequence[int]) -> list:
    """Original (compressed) label of each qubit of the reduced register, by position."""
    q = list(range(2 * n))
    for a, b in zip(s, s_new):
        if a != b:
            q[a], q[b] = q[b], q[a]
    gone = bit_mask(s_new)
    order = [q[i] for i in range(2 * n) if not get_bit(gone, i)]
    present = bit_mask(order)
    return [v - sum(1 for j in range(v) if not get_bit(present, j)) for v in order]


def _local_partial_trace(src: np.ndarray, out: np.ndarray, ts: Sequence[int], ts_col: Sequence[int], threads: int) -> None:
    n = len(ts)
    fixed = sorted(list(ts) + list(ts_col))
    offsets = [np.uint64(set_bits(set_bits(0, ts, v), ts_col, v)) for v in range(1 << n)]

    def body(i: np.ndarray) -> None:
        g0 = insert_bits(i, fixed, 0)
        acc = src[g0 | offsets[0]]
        for off in offsets[1:]:
            acc = acc + src[g0 | off]
        out[i] = acc

    parallel_for(len(out), body, threads)


def partial_trace(rho: ChoiRegister, ts: Sequence[int], allow_loose: bool = False) -> ChoiRegister:
    """Trace out qubits ``ts`` and return the reduced register; ``rho`` is consumed.

    By default ``len(ts) <= N - w`` so the result is again a valid register
    for every other operation.  ``allow_loose=True`` accepts up to
    ``N - ceil(w/2)`` traced qubits; the result is then only fit for gathering.
    """
    ts = sorted(ts)
    if not ts:
        raise ArgumentError("partial trace needs at least one qubit to trace out")
    _check_qubits(rho, ts)
    n = rho.n_qubits
    w = rho.inner.world.w
    strict = n - w
    loose = n - math.ceil(w / 2)
    if len(ts) > (loose if allow_loose else strict):
        bound = f"N - ceil(w/2) = {loose}" if allow_loose else f"N - w = {strict}"
        raise CapacityError(f"cannot trace out {len(ts)} qubits: the bound is {bound}")
    m = n - len(ts)
    lam = rho.inner.n_suffix
    s = ts + [t + n for t in ts]
    s_new = _reordered_targets(s, lam)
    for q in range(len(s) - 1, -1, -1):
        if s_new[q] != s[q]:
            sv_dist.dist_swap(rho.inner, s[q], s_new[q])

    out = ChoiRegister.create(m, rho.ctx, allow_narrow=allow_loose)
    _local_partial_trace(rho.local, out.local, ts, s_new[len(ts):], rho.threads)
    rho.consumed = True
    out.counters.flops += len(out.local) * ((1 << len(ts)) - 1)
    out.counters.writes += len(out.local)

    order = _remaining_qubit_order(n, s, s_new)
    for q in range(len(order) - 1, -1, -1):
        if order[q] != q:
            p = order.index(q)
            sv_dist.dist_swap(out.inner, q, p)
            order[q], order[p] = order[p], order[q]
    return out


# harness helpers


def simulate_density(
    n_qubits: int,
    config: WorldConfig,
    body: Callable[[ChoiRegister], object],
    initial: np.ndarray | int = 0,
) -> tuple[np.ndarray, list, WorldResult]:
    """Run ``body`` on a distributed density matrix and gather the final Choi-vector.

    ``initial`` is a basis index, a full Choi-vector (length ``4**N``) or a
    pure state (length ``2**N``).  If ``body`` returns a :class:`ChoiRegister`
    (as after a partial trace) that register is gathered; any other return
    value is collected per rank in the second element of the result.
    """

    def program(ctx: RankContext):
        rho = ChoiRegister.create(n_qubits, ctx)
        if isinstance(initial, (int, np.integer)):
            init_pure(rho, int(initial))
        elif len(initial) == 1 << n_qubits:
            init_pure(rho, initial)
        else:
            rho.load_global(initial)
        value = body(rho)
        if isinstance(value, ChoiRegister):
            return value.local.copy(), None
        return rho.local.copy(), value

    result = run_world(config, program)
    vec = sv_dist.gather([r[0] for r in result.results])
    return vec, [r[1] for r in result.results], result
