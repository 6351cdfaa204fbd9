"""Pairwise amplitude exchange between ranks, and the in-process harness running them.

A world of ``W = 2**w`` ranks is simulated by one thread per rank.  Ranks
share nothing except a synchronised message fabric.  Every communication call
appends a :class:`CommRecord` to the calling rank's log, and
:func:`run_world` merges the per-rank logs ordered by ``(round, sender)``.

Round numbers are logical clocks: a pair of ranks agree that their exchange
happens at the larger of their two clocks, and both clocks then advance past
it.  Ranks that sit out a communication step therefore never break the
pairwise structure of later rounds.
"""

from __future__ import annotations

import json
import threading
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import IO, Any, Callable, Iterable, Sequence

import numpy as np

from .errors import ArgumentError, DeadlockError, ProtocolError

PARADIGMS = ("a", "b", "c", "d", "e", "one-way", "reduce")

TRACE_FORMAT = 1

TRACE_HEADER_SCHEMA = {
    "type": "object",
    "required": ["format", "kind", "world"],
    "properties": {
        "format": {"const": TRACE_FORMAT},
        "kind": {"const": "comm-trace"},
        "world": {"type": "integer", "minimum": 1},
    },
}

TRACE_RECORD_SCHEMA = {
    "type": "object",
    "required": ["round", "sender", "receiver", "count", "paradigm"],
    "additionalProperties": False,
    "properties": {
        "round": {"type": "integer", "minimum": 0},
        "sender": {"type": "integer", "minimum": 0},
        "receiver": {"type": ["integer", "null"], "minimum": 0},
        "count": {"type": "integer", "minimum": 0},
        "paradigm": {"enum": list(PARADIGMS)},
    },
}


@dataclass(frozen=True)
class WorldConfig:
    """Shape of a simulated world.

    ``threads`` is the number of worker threads each rank may use for its
    local amplitude loops; it never changes results.
    """

    w: int = 0
    max_message: int = 1 << 20
    threads: int = 1

    def __post_init__(self):
        if self.w < 0:
            raise ArgumentError(f"world exponent must be non-negative, got {self.w}")
        if self.max_message < 1:
            raise ArgumentError(f"max_message must be at least 1, got {self.max_message}")
        if self.threads < 1:
            raise ArgumentError(f"threads must be at least 1, got {self.threads}")

    @property
    def size(self) -> int:
        return 1 << self.w


@dataclass(frozen=True)
class CommRecord:
    round: int
    sender: int
    receiver: int | None
    count: int
    paradigm: str

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Counters:
    """Per-rank instrumentation mirroring the cost columns of the algorithms."""

    flops: int = 0
    writes: int = 0
    rounds: int = 0
    exchanged: int = 0
    messages: int = 0

    def add(self, other: "Counters") -> "Counters":
        return Counters(
            self.flops + other.flops,
            self.writes + other.writes,
            self.rounds + other.rounds,
            self.exchanged + other.exchanged,
            self.messages + other.messages,
        )


@dataclass
class _Message:
    kind: str  # "x" for a symmetric exchange, "o" for a one-way send
    clock: int
    count: int
    chunks: list


class _Fabric:
    def __init__(self, size: int):
        self.size = size
        self.cond = threading.Condition()
        self.mail: dict[tuple[int, int], deque] = {}
        self.blocked: dict[int, tuple[str, Callable[[], bool]]] = {}
        self.finished: set[int] = set()
        self.failure: str | None = None
        self.reductions: dict[int, dict[int, tuple[complex, int]]] = {}

    def box(self, src: int, dst: int) -> deque:
        return self.mail.setdefault((src, dst), deque())

    def post(self, src: int, dst: int, msg: _Message) -> None:
        with self.cond:
            self.box(src, dst).append(msg)
            self.cond.notify_all()

    def wait(self, rank: int, ready: Callable[[], bool], what: str) -> None:
        # caller must hold self.cond
        while True:
            if self.failure is not None:
                raise DeadlockError(self.failure)
            if ready():
                return
            self.blocked[rank] = (what, ready)
            self._detect()
            if self.failure is not None:
                del self.blocked[rank]
                raise DeadlockError(self.failure)
            self.cond.wait(timeout=0.5)
            del self.blocked[rank]

    def finish(self, rank: int) -> None:
        with self.cond:
            self.finished.add(rank)
            self._detect()
            self.cond.notify_all()

    def _detect(self) -> None:
        live = [r for r in range(self.size) if r not in self.finished]
        if not live or any(r not in self.blocked for r in live):
            return
        if any(self.blocked[r][1]() for r in live):
            return
        waits = "; ".join(f"rank {r} {self.blocked[r][0]}" for r in live)
        self.failure = f"deadlock: {waits}"
        self.cond.notify_all()


@dataclass
class RankContext:
    """One rank's handle on the world. Confined to its controlling thread."""

    rank: int
    config: WorldConfig
    _fabric: _Fabric = field(repr=False)
    comm_log: list = field(default_factory=list)
    counters: Counters = field(default_factory=Counters)
    clock: int = 0
    _reduce_seq: int = 0

    @property
    def size(self) -> int:
        return self.config.size

    def _log(self, round_: int, receiver: int | None, count: int, paradigm: str) -> None:
        if paradigm not in PARADIGMS:
            raise ArgumentError(f"unknown paradigm {paradigm!r}")
        self.comm_log.append(CommRecord(round_, self.rank, receiver, count, paradigm))

    def _check_pair(self, pair: int) -> None:
        if not 0 <= pair < self.size or pair == self.rank:
            raise ProtocolError(f"rank {self.rank}: invalid pair rank {pair}")

    def _chunks(self, send: np.ndarray, off: int, count: int) -> list:
        step = self.config.max_message
        return [send[s : min(s + step, off + count)].copy() for s in range(off, off + count, step)]


def exchange(
    ctx: RankContext,
    send: np.ndarray,
    send_off: int,
    recv: np.ndarray,
    recv_off: int,
    count: int,
    pair: int,
    paradigm: str = "a",
) -> None:
    """Swap ``count`` amplitudes with ``pair``, which must make the mirrored call.

    ``recv[recv_off:recv_off+count]`` receives what the pair sent from its own
    ``send[send_off:...]``.  The data travels as ceil(count / max_message)
    chunks but is logged as a single record.
    """
    if count == 0:
        return
    ctx._check_pair(pair)
    if send_off + count > len(send) or recv_off + count > len(recv):
        raise ArgumentError(f"rank {ctx.rank}: exchange of {count} overruns the buffers")
    fab = ctx._fabric
    chunks = ctx._chunks(send, send_off, count)
    fab.post(ctx.rank, pair, _Message("x", ctx.clock, count, chunks))
    with fab.cond:
        box = fab.box(pair, ctx.rank)
        fab.wait(ctx.rank, lambda: len(box) > 0, f"waits for an exchange from rank {pair}")
        msg = box.popleft()
    if msg.kind != "x":
        raise ProtocolError(f"rank {ctx.rank}: expected an exchange from rank {pair}, got a one-way send")
    if msg.count != count:
        raise ProtocolError(
            f"rank {ctx.rank}: exchange count mismatch with rank {pair} ({count} vs {msg.count})"
        )
    pos = recv_off
    for chunk in msg.chunks:
        recv[pos : pos + len(chunk)] = chunk
        pos += len(chunk)
    round_ = max(ctx.clock, msg.clock)
    ctx.clock = round_ + 1
    ctx._log(round_, pair, count, paradigm)
    c = ctx.counters
    c.rounds += 1
    c.exchanged += count
    c.messages += len(chunks)


def send_async(
    ctx: RankContext, buf: np.ndarray, count: int, pair: int, paradigm: str = "one-way"
) -> None:
    """Post ``buf[:count]`` to ``pair`` without waiting for it to be received."""
    ctx._check_pair(pair)
    fab = ctx._fabric
    chunks = ctx._chunks(buf, 0, count)
    with fab.cond:
        if any(m.kind == "o" for m in fab.box(ctx.rank, pair)):
            raise ProtocolError(f"rank {ctx.rank}: second one-way send to rank {pair} before receipt")
    fab.post(ctx.rank, pair, _Message("o", ctx.clock, count, chunks))
    ctx._log(ctx.clock, pair, count, paradigm)
    ctx.clock += 1
    c = ctx.counters
    c.rounds += 1
    c.exchanged += count
    c.messages += len(chunks)


def receive(ctx: RankContext, buf: np.ndarray, count: int, pair: int, offset: int = 0) -> None:
    """Block until the one-way message from ``pair`` arrives, then copy it into ``buf``."""
    ctx._check_pair(pair)
    fab = ctx._fabric
    with fab.cond:
        box = fab.box(pair, ctx.rank)
        fab.wait(ctx.rank, lambda: len(box) > 0, f"waits for a one-way send from rank {pair}")
        msg = box.popleft()
    if msg.kind != "o":
        raise ProtocolError(f"rank {ctx.rank}: expected a one-way send from rank {pair}, got an exchange")
    if msg.count != count:
        raise ProtocolError(
            f"rank {ctx.rank}: receive count mismatch with rank {pair} ({count} vs {msg.count})"
        )
    pos = offset
    for chunk in msg.chunks:
        buf[pos : pos + len(chunk)] = chunk
        pos += len(chunk)
    ctx.clock = max(ctx.clock, msg.clock) + 1


def reduce_sum(ctx: RankContext, local: complex) -> complex:
    """Sum one scalar per rank; every rank gets the same total, added in rank order."""
    fab = ctx._fabric
    seq = ctx._reduce_seq
    ctx._reduce_seq += 1
    with fab.cond:
        slot = fab.reductions.setdefault(seq, {})
        slot[ctx.rank] = (local, ctx.clock)
        fab.cond.notify_all()
        fab.wait(ctx.rank, lambda: len(slot) == fab.size, f"waits in reduction #{seq}")
        entries = [slot[r] for r in range(fab.size)]
    total = entries[0][0]
    for value, _ in entries[1:]:
        total = total + value
    round_ = max(clock for _, clock in entries)
    ctx.clock = round_ + 1
    if ctx.rank == 0:
        ctx._log(round_, None, fab.size, "reduce")
    ctx.counters.rounds += 1
    return total


@dataclass
class WorldResult:
    results: list
    log: list
    counters: list

    @property
    def total_counters(self) -> Counters:
        total = Counters()
        for c in self.counters:
            total = total.add(c)
        return total


def run_world(config: WorldConfig, program: Callable[..., Any], *args: Any) -> WorldResult:
    """Run ``program(ctx, *args)`` once per rank and collect the results in rank order."""
    fab = _Fabric(config.size)
    ctxs = [RankContext(r, config, fab) for r in range(config.size)]
    results: list = [None] * config.size
    errors: list = [None] * config.size

    def body(r: int) -> None:
        try:
            results[r] = program(ctxs[r], *args)
        except BaseException as exc:  # re-raised in the calling thread
            errors[r] = exc
        finally:
            fab.finish(r)

    if config.size == 1:
        body(0)
    else:
        threads = [threading.Thread(target=body, args=(r,), daemon=True) for r in range(config.size)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

    raised = [e for e in errors if e is not None]
    if raised:
        primary = [e for e in raised if not isinstance(e, DeadlockError)]
        raise (primary or raised)[0]
    log = merge_logs(c.comm_log for c in ctxs)
    return WorldResult(results, log, [c.counters for c in ctxs])


def merge_logs(logs: Iterable[Sequence[CommRecord]]) -> list:
    merged = [rec for log in logs for rec in log]
    merged.sort(key=lambda rec: (rec.round, rec.sender))
    return merged


def write_trace(records: Iterable[CommRecord], out: IO[str], world: int) -> None:
    """JSON-lines export: a format header, then one record per line."""
    out.write(json.dumps({"format": TRACE_FORMAT, "kind": "comm-trace", "world": world}) + "\n")
    for rec in records:
        out.write(json.dumps(rec.to_dict()) + "\n")


def read_trace(lines: Iterable[str]) -> tuple[dict, list]:
    rows = [json.loads(line) for line in lines if line.strip()]
    if not rows:
        raise ValueError("empty trace")
    return rows[0], [CommRecord(**row) for row in rows[1:]]
