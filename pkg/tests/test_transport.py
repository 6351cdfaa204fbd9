import io
import json
import time
from collections import defaultdict

import jsonschema
import numpy as np
import pytest

from qdist.errors import ArgumentError, DeadlockError, ProtocolError
from qdist.transport import (
    TRACE_HEADER_SCHEMA,
    TRACE_RECORD_SCHEMA,
    WorldConfig,
    exchange,
    read_trace,
    receive,
    reduce_sum,
    run_world,
    send_async,
    write_trace,
)
from qdist import sv_dist as sv
from qdist import dm_dist as dm


def test_single_rank_trivial_program():
    result = run_world(WorldConfig(0), lambda ctx: ctx.rank * 10)
    assert result.results == [0]
    assert result.log == []


@pytest.mark.parametrize("bad", [dict(w=-1), dict(max_message=0), dict(threads=0)])
def test_config_validation(bad):
    with pytest.raises(ArgumentError):
        WorldConfig(**bad)


def _mirror(ctx):
    send = np.arange(4, dtype=complex) + 100 * ctx.rank
    recv = np.zeros(4, dtype=complex)
    exchange(ctx, send, 0, recv, 0, 4, ctx.rank ^ 1)
    return recv


def test_pairwise_exchange_mirrors_buffers():
    result = run_world(WorldConfig(2), _mirror)
    for r, recv in enumerate(result.results):
        np.testing.assert_array_equal(recv, np.arange(4) + 100 * (r ^ 1))
    assert len(result.log) == 4
    assert {rec.round for rec in result.log} == {0}
    assert {(rec.sender, rec.receiver) for rec in result.log} == {(0, 1), (1, 0), (2, 3), (3, 2)}


def test_zero_count_exchange_is_silent():
    def program(ctx):
        buf = np.zeros(2, dtype=complex)
        exchange(ctx, buf, 0, buf, 0, 0, ctx.rank ^ 1)
        return ctx.counters.rounds

    result = run_world(WorldConfig(1), program)
    assert result.log == [] and result.results == [0, 0]


def test_chunking_keeps_one_record():
    def program(ctx):
        send = np.arange(12, dtype=complex) * (ctx.rank + 1)
        recv = np.zeros(12, dtype=complex)
        exchange(ctx, send, 1, recv, 2, 10, ctx.rank ^ 1)
        return recv, ctx.counters.messages

    result = run_world(WorldConfig(1, max_message=3), program)
    recv, messages = result.results[0]
    assert messages == 4
    np.testing.assert_array_equal(recv[2:], np.arange(1, 11) * 2)
    assert [rec.count for rec in result.log] == [10, 10]


def test_count_mismatch_is_a_protocol_error():
    def program(ctx):
        buf = np.zeros(4, dtype=complex)
        exchange(ctx, buf, 0, buf, 0, 2 + ctx.rank, ctx.rank ^ 1)

    with pytest.raises(ProtocolError):
        run_world(WorldConfig(1), program)


def test_invalid_pair_rejected():
    def program(ctx):
        buf = np.zeros(1, dtype=complex)
        exchange(ctx, buf, 0, buf, 0, 1, ctx.rank)

    with pytest.raises(ProtocolError):
        run_world(WorldConfig(1), program)


def test_unmatched_exchange_reports_deadlock_quickly():
    def program(ctx):
        if ctx.rank == 0:
            buf = np.zeros(1, dtype=complex)
            exchange(ctx, buf, 0, buf, 0, 1, 1)

    start = time.perf_counter()
    with pytest.raises(DeadlockError, match="rank 0"):
        run_world(WorldConfig(1), program)
    assert time.perf_counter() - start < 5


def test_one_way_send_and_receive():
    def program(ctx):
        buf = np.zeros(4, dtype=complex)
        if ctx.rank == 1:
            send_async(ctx, np.full(2, 7 + 1j), 2, 0)
        else:
            receive(ctx, buf, 2, 1, offset=2)
        return buf

    result = run_world(WorldConfig(1), program)
    np.testing.assert_array_equal(result.results[0], [0, 0, 7 + 1j, 7 + 1j])
    assert [(rec.sender, rec.receiver, rec.count, rec.paradigm) for rec in result.log] == [(1, 0, 2, "one-way")]


def test_zero_count_one_way_is_logged():
    def program(ctx):
        buf = np.zeros(1, dtype=complex)
        if ctx.rank == 0:
            send_async(ctx, buf, 0, 1)
        else:
            receive(ctx, buf, 0, 0)

    result = run_world(WorldConfig(1), program)
    assert [(rec.sender, rec.count) for rec in result.log] == [(0, 0)]


def test_double_one_way_send_is_rejected():
    def program(ctx):
        buf = np.zeros(1, dtype=complex)
        if ctx.rank == 0:
            send_async(ctx, buf, 1, 1)
            send_async(ctx, buf, 1, 1)

    with pytest.raises(ProtocolError, match="second one-way"):
        run_world(WorldConfig(1), program)


@pytest.mark.parametrize(
    "w, contribution, expected",
    [(2, lambda r: 1 + 0j, 4 + 0j), (0, lambda r: 2.5 - 1j, 2.5 - 1j), (2, lambda r: r + r * 1j, 6 + 6j)],
)
def test_reduce_sum(w, contribution, expected):
    result = run_world(WorldConfig(w), lambda ctx: reduce_sum(ctx, contribution(ctx.rank)))
    assert result.results == [expected] * (1 << w)
    assert [(rec.sender, rec.receiver, rec.count, rec.paradigm) for rec in result.log] == [(0, None, 1 << w, "reduce")]


def test_partial_reduce_is_a_deadlock():
    def program(ctx):
        if ctx.rank != 2:
            reduce_sum(ctx, 1.0)

    with pytest.raises(DeadlockError):
        run_world(WorldConfig(2), program)


def test_one_target_prefix_exchanges_lambda():
    n, w = 6, 3
    _, result = sv.simulate(n, WorldConfig(w), lambda reg: sv.dist_one_target(reg, np.eye(2)[::-1], n - 1))
    lam = 2 ** (n - w)
    assert len(result.log) == 2**w
    assert all(rec.count == lam for rec in result.log)
    assert {rec.sender for rec in result.log} == set(range(2**w))


def test_damping_pattern_half_the_ranks_send():
    _, _, result = dm.simulate_density(2, WorldConfig(1), lambda x: dm.damping(x, 1, 0.3), 3)
    senders = {rec.sender for rec in result.log}
    assert len(senders) == 1 and all(rec.receiver not in senders for rec in result.log)


def _mixed_circuit(reg):
    sv.dist_one_target(reg, np.array([[0.6, 0.8], [0.8, -0.6]]), 4)
    sv.dist_swap(reg, 0, 3)
    sv.dist_many_ctrl_one_target(reg, [1], np.eye(2)[::-1], 4)
    sv.dist_pauli_tensor(reg, [1, 2], [3, 4])
    sv.dist_many_target(reg, np.eye(4)[[1, 0, 3, 2]], [3, 4])


def test_rounds_form_perfect_matchings():
    _, result = sv.simulate(5, WorldConfig(2), _mixed_circuit, 7)
    by_round = defaultdict(list)
    for rec in result.log:
        by_round[rec.round].append((rec.sender, rec.receiver))
    for edges in by_round.values():
        senders = [s for s, _ in edges]
        assert len(senders) == len(set(senders))
        assert {(r, s) for s, r in edges} == set(edges)


def test_results_are_deterministic_and_chunk_invariant():
    runs = [sv.simulate(5, WorldConfig(2, max_message=m), _mixed_circuit, 7) for m in (1, 3, 1 << 20, 1 << 20)]
    for out, result in runs[1:]:
        np.testing.assert_array_equal(out, runs[0][0])
        assert result.log == runs[0][1].log


def test_trace_roundtrip_and_schema():
    _, result = sv.simulate(5, WorldConfig(2), _mixed_circuit, 7)
    stream = io.StringIO()
    write_trace(result.log, stream, 4)
    lines = stream.getvalue().splitlines()
    header, records = read_trace(lines)
    jsonschema.validate(header, TRACE_HEADER_SCHEMA)
    assert records == result.log
    for line in lines[1:]:
        jsonschema.validate(json.loads(line), TRACE_RECORD_SCHEMA)
    rounds = [rec.round for rec in records]
    assert rounds == sorted(rounds)
