"""Randomized operation cases shared by the unit and acceptance suites.

Each generator returns a ``Case`` holding the register width, a body to run
on every rank and the dense reference built from :mod:`qdist.oracle`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from qdist import dm_dist as dm
from qdist import oracle as O
from qdist import sv_dist as sv

SWAP4 = np.eye(4)[[0, 2, 1, 3]]

SV_KINDS = ("one_target", "ctrl_one_target", "swap", "many_target", "pauli_tensor", "phase_gadget", "pauli_gadget")
DM_KINDS = (
    "unitary",
    "one_target",
    "swap",
    "pauli_tensor",
    "phase_gadget",
    "pauli_gadget",
    "kraus_map",
    "dephase_one",
    "dephase_two",
    "depolarise_one",
    "depolarise_two",
    "damping",
    "expectation",
    "partial_trace",
)


@dataclass
class Case:
    kind: str
    n_qubits: int
    body: Callable[[Any], Any]
    initial: np.ndarray
    reference: Any


def random_state(rng, n: int) -> np.ndarray:
    psi = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return psi / np.linalg.norm(psi)


def random_matrix(rng, dim: int) -> np.ndarray:
    return rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))


def random_unitary(rng, dim: int) -> np.ndarray:
    q, r = np.linalg.qr(random_matrix(rng, dim))
    return q * (np.diag(r) / abs(np.diag(r)))


def random_density(rng, n: int) -> np.ndarray:
    a = random_matrix(rng, 2**n)
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def _codes(rng, n: int) -> list:
    return [int(x) for x in rng.integers(1, 4, n)]


def sv_case(rng, kind: str, n: int, w: int) -> Case:
    """A statevector case; ``n >= w + 1`` so a suffix qubit always exists."""
    psi = random_state(rng, n)
    qs = [int(x) for x in rng.permutation(n)]
    # unitary and non-unitary matrices alternate at random
    mat = (lambda d: random_unitary(rng, d)) if rng.random() < 0.5 else (lambda d: random_matrix(rng, d))
    if kind == "one_target":
        m, t = mat(2), qs[0]
        return Case(kind, n, lambda r: sv.dist_one_target(r, m, t), psi, O.dense_apply(psi, m, [t]))
    if kind == "ctrl_one_target":
        m, t = mat(2), qs[0]
        c = qs[1 : 1 + int(rng.integers(0, n))]
        return Case(kind, n, lambda r: sv.dist_many_ctrl_one_target(r, c, m, t), psi, O.dense_apply(psi, m, [t], c))
    if kind == "swap":
        a, b = qs[:2]
        return Case(kind, n, lambda r: sv.dist_swap(r, a, b), psi, O.dense_apply(psi, SWAP4, [a, b]))
    if kind == "many_target":
        k = int(rng.integers(1, n - w + 1))
        ts, m = qs[:k], mat(2**k)
        c = qs[k : k + int(rng.integers(0, n - k + 1))] if rng.random() < 0.3 else []
        lam = n - w
        busy = sum(1 for q in ts + c if q < lam)
        if sum(1 for t in ts if t >= lam) > lam - busy:
            c = []  # not enough free suffix slots to stage the prefix targets
        return Case(kind, n, lambda r: sv.dist_many_target(r, m, ts, c), psi, O.dense_apply(psi, m, ts, c))
    k = int(rng.integers(1, n + 1))
    ts = qs[:k]
    if kind == "pauli_tensor":
        codes = _codes(rng, k)
        return Case(kind, n, lambda r: sv.dist_pauli_tensor(r, codes, ts), psi,
                    O.dense_apply(psi, O.dense_pauli_tensor(codes, ts), ts))
    theta = float(rng.normal())
    if kind == "phase_gadget":
        return Case(kind, n, lambda r: sv.dist_phase_gadget(r, ts, theta), psi,
                    O.dense_apply(psi, O.dense_phase_gadget(k, theta), ts))
    if kind == "pauli_gadget":
        codes = _codes(rng, k)
        return Case(kind, n, lambda r: sv.dist_pauli_gadget(r, codes, ts, theta), psi,
                    O.dense_apply(psi, O.dense_pauli_gadget(codes, theta), ts))
    raise ValueError(kind)


def dm_case(rng, kind: str, n: int, w: int) -> Case:
    """A density-matrix case.  The reference is a dense matrix, or a scalar for expectations."""
    rho = random_density(rng, n)
    choi = O.matrix_to_choi(rho)
    qs = [int(x) for x in rng.permutation(n)]
    p = float(rng.uniform(0, 0.6))
    k = int(rng.integers(1, n + 1))
    ts = qs[:k]
    if kind == "unitary":
        u = random_unitary(rng, 2**k)
        return Case(kind, n, lambda x: dm.dm_many_target_unitary(x, u, ts), choi, O.dense_apply(rho, u, ts))
    if kind == "one_target":
        u, t, c = random_unitary(rng, 2), qs[0], qs[1 : 1 + int(rng.integers(0, n))]
        return Case(kind, n, lambda x: dm.dm_one_target(x, u, t, c), choi, O.dense_apply(rho, u, [t], c))
    if kind == "swap":
        a, b = qs[:2]
        return Case(kind, n, lambda x: dm.dm_swap(x, a, b), choi, O.dense_apply(rho, SWAP4, [a, b]))
    if kind == "pauli_tensor":
        codes = _codes(rng, k)
        return Case(kind, n, lambda x: dm.dm_pauli_tensor(x, codes, ts), choi,
                    O.dense_apply(rho, O.dense_pauli_tensor(codes, ts), ts))
    theta = float(rng.normal())
    if kind == "phase_gadget":
        return Case(kind, n, lambda x: dm.dm_phase_gadget(x, ts, theta), choi,
                    O.dense_apply(rho, O.dense_phase_gadget(k, theta), ts))
    if kind == "pauli_gadget":
        codes = _codes(rng, k)
        return Case(kind, n, lambda x: dm.dm_pauli_gadget(x, codes, ts, theta), choi,
                    O.dense_apply(rho, O.dense_pauli_gadget(codes, theta), ts))
    if kind == "kraus_map":
        limit = n - (w + 1) // 2
        k = int(rng.integers(1, limit + 1))
        ts, dim = qs[:k], 2**k
        # two blocks of one unitary column-slice form a complete Kraus pair
        u = random_unitary(rng, 2 * dim)
        ks = [u[:dim, :dim], u[dim:, :dim]]
        return Case(kind, n, lambda x: dm.kraus_map(x, ks, ts), choi, O.dense_channel(rho, ks, ts))
    if kind == "dephase_one":
        t = qs[0]
        p = p * 5 / 6
        return Case(kind, n, lambda x: dm.dephase_one(x, t, p), choi, O.dense_channel(rho, O.kraus_dephase_one(p), [t]))
    if kind == "dephase_two":
        a, b = qs[:2]
        return Case(kind, n, lambda x: dm.dephase_two(x, a, b, p), choi,
                    O.dense_channel(rho, O.kraus_dephase_two(p), [a, b]))
    if kind == "depolarise_one":
        t = qs[0]
        return Case(kind, n, lambda x: dm.depolarise_one(x, t, p), choi,
                    O.dense_channel(rho, O.kraus_depolarise_one(p), [t]))
    if kind == "depolarise_two":
        a, b = qs[:2]
        return Case(kind, n, lambda x: dm.depolarise_two(x, a, b, p), choi,
                    O.dense_channel(rho, O.kraus_depolarise_two(p), [a, b]))
    if kind == "damping":
        t = qs[0]
        return Case(kind, n, lambda x: dm.damping(x, t, p), choi, O.dense_channel(rho, O.kraus_damping(p), [t]))
    if kind == "expectation":
        terms = int(rng.integers(1, 5))
        coeffs = [float(c) for c in rng.normal(size=terms)]
        codes = [int(c) for c in rng.integers(0, 4, n * terms)]
        h = dm.PauliString(coeffs, codes)
        return Case(kind, n, lambda x: dm.pauli_string_expectation(x, h), choi, O.dense_expectation(rho, coeffs, codes))
    if kind == "partial_trace":
        k = int(rng.integers(1, n - w + 1))
        ts = qs[:k]
        return Case(kind, n, lambda x: dm.partial_trace(x, ts), choi, O.dense_partial_trace(rho, ts))
    raise ValueError(kind)


def run_sv(case: Case, config) -> np.ndarray:
    out, _ = sv.simulate(case.n_qubits, config, case.body, case.initial)
    return out


def run_dm(case: Case, config):
    """Gathered Choi-vector (or the rank-0 scalar for expectations) and the world result."""
    vec, values, result = dm.simulate_density(case.n_qubits, config, case.body, case.initial)
    if case.kind == "expectation":
        return values, result
    return vec, result


def dm_error(case: Case, got) -> float:
    if case.kind == "expectation":
        return max(abs(v - case.reference) for v in got)
    return float(abs(got - O.matrix_to_choi(case.reference)).max())
