"""Dense brute-force reference used to verify the distributed kernels.

Operators act through tensor contractions over one axis per qubit, Pauli
strings and partial-trace bras are explicit Kronecker products, and density
matrices evolve by ordinary matrix products.  Nothing is shared with the
production index arithmetic: the point of this module is to be obviously
right rather than fast.

Qubit ``q`` of an N-qubit operator is the ``q``-th factor counted from the
right of the Kronecker product, matching the little-endian amplitude order.
"""

from __future__ import annotations

from functools import reduce
from typing import Sequence

import numpy as np

MAX_VECTOR_QUBITS = 12
MAX_MATRIX_QUBITS = 6

I2 = np.eye(2, dtype=complex)
PAULI = {
    0: I2,
    1: np.array([[0, 1], [1, 0]], dtype=complex),
    2: np.array([[0, -1j], [1j, 0]], dtype=complex),
    3: np.array([[1, 0], [0, -1]], dtype=complex),
}


def _kron_qubits(factors: dict, n_qubits: int) -> np.ndarray:
    """Kronecker product with ``factors[q]`` on qubit q and identity elsewhere."""
    ops = [factors.get(q, I2) for q in reversed(range(n_qubits))]
    return reduce(np.kron, ops, np.eye(1, dtype=complex))


def _digits(x: int, n: int) -> list:
    # digit q of x in base 2, written out without bit operators
    return [int(c) for c in reversed(format(x, f"0{n}b"))] if n else []


def _contract(vecs: np.ndarray, m: np.ndarray, ts: Sequence[int], n_qubits: int,
              ctrls: Sequence[int]) -> np.ndarray:
    """Apply ``m`` to each column of ``vecs`` by tensor contraction over qubit axes.

    The column is reshaped to one axis per qubit; the big-endian reshape puts
    qubit q on axis ``N - 1 - q``.  Controls keep the input wherever any
    control axis is 0.
    """
    n = len(ts)
    batch = vecs.shape[1]
    tensor = vecs.reshape([2] * n_qubits + [batch])
    axes = [n_qubits - 1 - ts[n - 1 - j] for j in range(n)]
    out = np.tensordot(m.reshape([2] * (2 * n)), tensor, axes=(list(range(n, 2 * n)), axes))
    out = np.moveaxis(out, list(range(n)), axes)
    if ctrls:
        where = [slice(None)] * (n_qubits + 1)
        for c in ctrls:
            where[n_qubits - 1 - c] = 1
        full = tensor.copy()
        full[tuple(where)] = out[tuple(where)]
        out = full
    return out.reshape(2**n_qubits, batch)


def lift(m, ts: Sequence[int], n_qubits: int, ctrls: Sequence[int] = ()) -> np.ndarray:
    """Full ``2**N x 2**N`` operator of ``m`` on ``ts`` with optional controls.

    Bit q of the row and column index of ``m`` acts on qubit ``ts[q]``.  The
    operator is built column by column by contracting ``m`` into the identity.
    """
    m = np.asarray(m, dtype=complex)
    ts = list(ts)
    assert m.shape == (2 ** len(ts),) * 2
    return _contract(np.eye(2**n_qubits, dtype=complex), m, ts, n_qubits, list(ctrls))


def _n_from_vector(state: np.ndarray) -> int:
    n = int(round(np.log2(len(state))))
    if n > MAX_VECTOR_QUBITS:
        raise ValueError(f"oracle vectors are limited to {MAX_VECTOR_QUBITS} qubits")
    return n


def _n_from_matrix(rho: np.ndarray) -> int:
    n = int(round(np.log2(rho.shape[0])))
    if n > MAX_MATRIX_QUBITS:
        raise ValueError(f"oracle matrices are limited to {MAX_MATRIX_QUBITS} qubits")
    return n


def dense_apply(state: np.ndarray, m, ts: Sequence[int], ctrls: Sequence[int] = ()) -> np.ndarray:
    """``U psi`` for a vector, or ``U rho U^dagger`` for a square matrix."""
    state = np.asarray(state, dtype=complex)
    if state.ndim == 1:
        n = _n_from_vector(state)
        m = np.asarray(m, dtype=complex)
        return _contract(state.reshape(-1, 1), m, list(ts), n, list(ctrls))[:, 0]
    u = lift(m, ts, _n_from_matrix(state), ctrls)
    return u @ state @ u.conj().T


def dense_channel(rho: np.ndarray, ks: Sequence, ts: Sequence[int]) -> np.ndarray:
    n = _n_from_matrix(rho)
    out = np.zeros_like(rho, dtype=complex)
    for k in ks:
        big = lift(k, ts, n)
        out = out + big @ rho @ big.conj().T
    return out


def dense_partial_trace(rho: np.ndarray, ts: Sequence[int]) -> np.ndarray:
    """Sum over v of <1,v| rho |1,v>, the bra built as an explicit Kronecker product."""
    n = _n_from_matrix(rho)
    ts = list(ts)
    out = 0
    for v in range(2 ** len(ts)):
        dv = _digits(v, len(ts))
        ops = []
        for q in reversed(range(n)):
            if q in ts:
                ops.append(np.eye(2, dtype=complex)[[dv[ts.index(q)]], :])
            else:
                ops.append(I2)
        bra = reduce(np.kron, ops, np.eye(1, dtype=complex))
        out = out + bra @ rho @ bra.conj().T
    return out


def pauli_matrix(codes: Sequence[int]) -> np.ndarray:
    """Dense Kronecker product of one Pauli code per qubit, ``codes[q]`` on qubit q."""
    return _kron_qubits({q: PAULI[c] for q, c in enumerate(codes)}, len(codes))


def hamiltonian_matrix(coeffs: Sequence[float], codes: Sequence[int], n_qubits: int) -> np.ndarray:
    h = np.zeros((2**n_qubits,) * 2, dtype=complex)
    for n, c in enumerate(coeffs):
        h = h + c * pauli_matrix(codes[n * n_qubits : (n + 1) * n_qubits])
    return h


def dense_expectation(rho: np.ndarray, coeffs: Sequence[float], codes: Sequence[int]) -> complex:
    n = _n_from_matrix(rho)
    return complex(np.trace(hamiltonian_matrix(coeffs, codes, n) @ rho))


def dense_pauli_tensor(codes: Sequence[int], ts: Sequence[int]) -> np.ndarray:
    """The ``2**n`` matrix of a Pauli string on targets ``ts`` (code q on ts[q])."""
    return _kron_qubits({q: PAULI[c] for q, c in enumerate(codes)}, len(codes))


def dense_phase_gadget(n: int, theta: float) -> np.ndarray:
    """exp(i theta Z (x) ... (x) Z) on n qubits, from its diagonal."""
    zz = reduce(np.kron, [PAULI[3]] * n, np.eye(1, dtype=complex))
    return np.diag(np.exp(1j * theta * np.diag(zz)))


def dense_pauli_gadget(codes: Sequence[int], theta: float) -> np.ndarray:
    p = dense_pauli_tensor(codes, range(len(codes)))
    return np.cos(theta) * np.eye(len(p)) + 1j * np.sin(theta) * p


# Choi-vector conversions: rho[k, l] sits at index k + l * 2**N


def matrix_to_choi(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho, dtype=complex).T.reshape(-1).copy()


def choi_to_matrix(vec: np.ndarray) -> np.ndarray:
    dim = int(round(np.sqrt(len(vec))))
    return np.asarray(vec, dtype=complex).reshape(dim, dim).T.copy()


# standard Kraus sets for the built-in channels


def kraus_dephase_one(p: float) -> list:
    return [np.sqrt(1 - p) * I2, np.sqrt(p) * PAULI[3]]


def kraus_dephase_two(p: float) -> list:
    z = PAULI[3]
    return [np.sqrt(1 - p) * np.eye(4)] + [
        np.sqrt(p / 3) * np.kron(a, b) for a, b in ((I2, z), (z, I2), (z, z))
    ]


def kraus_depolarise_one(p: float) -> list:
    return [np.sqrt(1 - p) * I2] + [np.sqrt(p / 3) * PAULI[c] for c in (1, 2, 3)]


def kraus_depolarise_two(p: float) -> list:
    ks = []
    for a in range(4):
        for b in range(4):
            scale = np.sqrt(1 - p) if a == b == 0 else np.sqrt(p / 15)
            ks.append(scale * np.kron(PAULI[a], PAULI[b]))
    return ks


def kraus_damping(p: float) -> list:
    return [
        np.array([[1, 0], [0, np.sqrt(1 - p)]], dtype=complex),
        np.array([[0, np.sqrt(p)], [0, 0]], dtype=complex),
    ]
