import numpy as np
import pytest

from _cases import random_matrix, random_state
from qdist import oracle as O
from qdist.errors import ArgumentError
from qdist.sv_local import (
    local_many_ctrl_one_target,
    local_many_target,
    local_one_target,
    local_swap,
    static_blocks,
)
from qdist.transport import Counters

X = O.PAULI[1]


def basis(n, i):
    psi = np.zeros(2**n, dtype=complex)
    psi[i] = 1
    return psi


def test_identity_leaves_state_unchanged():
    rng = np.random.default_rng(1)
    psi = random_state(rng, 4)
    out = psi.copy()
    local_one_target(out, np.eye(2), 2)
    np.testing.assert_array_equal(out, psi)


def test_x_flips_single_qubit():
    psi = basis(1, 0)
    local_one_target(psi, X, 0)
    np.testing.assert_array_equal(psi, basis(1, 1))


@pytest.mark.parametrize("t", range(4))
def test_one_target_matches_oracle(t):
    rng = np.random.default_rng(10 + t)
    psi, m = random_state(rng, 4), random_matrix(rng, 2)
    out = psi.copy()
    counters = Counters()
    local_one_target(out, m, t, counters=counters)
    np.testing.assert_allclose(out, O.dense_apply(psi, m, [t]), atol=1e-12)
    assert counters.writes == 16


@pytest.mark.parametrize("start, expected", [(0b10, 0b11), (0b00, 0b00), (0b01, 0b01)])
def test_cnot_truth_table(start, expected):
    psi = basis(2, start)
    local_many_ctrl_one_target(psi, [1], X, 0)
    np.testing.assert_array_equal(psi, basis(2, expected))


def test_controlled_matches_oracle():
    rng = np.random.default_rng(3)
    psi, m = random_state(rng, 5), random_matrix(rng, 2)
    out = psi.copy()
    local_many_ctrl_one_target(out, [0, 3], m, 2)
    np.testing.assert_allclose(out, O.dense_apply(psi, m, [2], [0, 3]), atol=1e-12)


def test_overlapping_control_and_target_rejected():
    with pytest.raises(ArgumentError):
        local_many_ctrl_one_target(basis(3, 0), [1], X, 1)


@pytest.mark.parametrize("ts", [[0, 1], [3, 1], [5, 0, 2], [4, 2, 1, 3]])
def test_many_target_matches_oracle(ts):
    rng = np.random.default_rng(len(ts))
    psi, m = random_state(rng, 6), random_matrix(rng, 2 ** len(ts))
    out = psi.copy()
    local_many_target(out, m, ts)
    np.testing.assert_allclose(out, O.dense_apply(psi, m, ts), atol=1e-12)


def test_many_target_with_controls_matches_oracle():
    rng = np.random.default_rng(8)
    psi, m = random_state(rng, 6), random_matrix(rng, 4)
    out = psi.copy()
    local_many_target(out, m, [4, 1], ctrls=[0, 5])
    np.testing.assert_allclose(out, O.dense_apply(psi, m, [4, 1], [0, 5]), atol=1e-12)


def test_target_order_is_a_relabeling():
    rng = np.random.default_rng(4)
    psi, m = random_state(rng, 4), random_matrix(rng, 4)
    perm = [0, 2, 1, 3]  # swap the roles of the two matrix bits
    a, b = psi.copy(), psi.copy()
    local_many_target(a, m, [0, 1])
    local_many_target(b, m[np.ix_(perm, perm)], [1, 0])
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_identity_many_target():
    rng = np.random.default_rng(5)
    psi = random_state(rng, 3)
    out = psi.copy()
    local_many_target(out, np.eye(4), [2, 0])
    np.testing.assert_array_equal(out, psi)


def test_too_many_targets_rejected():
    with pytest.raises(ArgumentError):
        local_many_target(basis(2, 0), np.eye(8), [0, 1, 2])


def test_swap_is_pure_data_movement():
    psi = basis(2, 0b01)
    counters = Counters()
    local_swap(psi, 0, 1, counters=counters)
    np.testing.assert_array_equal(psi, basis(2, 0b10))
    assert counters.flops == 0


@pytest.mark.parametrize("bad", [lambda: local_swap(basis(2, 0), 1, 1), lambda: local_one_target(basis(2, 0), X, 2),
                                 lambda: local_one_target(basis(2, 0), np.eye(3), 0)])
def test_argument_errors(bad):
    with pytest.raises(ArgumentError):
        bad()


@pytest.mark.parametrize("total, threads", [(0, 4), (3, 4), (64, 3), (1000, 7), (2**18, 8)])
def test_static_blocks_cover_range_on_cache_lines(total, threads):
    blocks = static_blocks(total, threads)
    assert len(blocks) <= threads
    covered = [i for start, stop in blocks for i in range(start, stop)] if total < 5000 else None
    if covered is not None:
        assert covered == list(range(total))
    for start, stop in blocks[:-1]:
        assert start % 4 == 0 and stop % 4 == 0
    if blocks:
        assert blocks[-1][1] == total


def test_thread_count_does_not_change_results():
    # 18 qubits crosses the inner chunk size, so several blocks and chunks run
    rng = np.random.default_rng(6)
    psi = random_state(rng, 18)
    m1, m3 = random_matrix(rng, 2), random_matrix(rng, 8)
    outs = []
    for threads in (1, 3, 8):
        out = psi.copy()
        local_one_target(out, m1, 17, threads=threads)
        local_many_ctrl_one_target(out, [2, 9], m1, 0, threads=threads)
        local_many_target(out, m3, [16, 1, 8], threads=threads)
        local_swap(out, 3, 15, threads=threads)
        outs.append(out)
    for out in outs[1:]:
        np.testing.assert_array_equal(out, outs[0])
