"""Distributed statevector and density-matrix simulation on an in-process rank harness."""

from .errors import ArgumentError, CapacityError, DeadlockError, ProtocolError, SimulatorError
from .transport import CommRecord, Counters, WorldConfig, WorldResult, run_world
from .sv_dist import (
    DistributedRegister,
    PauliCode,
    dist_many_ctrl_one_target,
    dist_many_target,
    dist_one_target,
    dist_pauli_gadget,
    dist_pauli_tensor,
    dist_phase_gadget,
    dist_swap,
    init_basis_state,
    simulate,
)
from .dm_dist import (
    ChoiRegister,
    KrausSet,
    PauliString,
    PhysicalityWarning,
    damping,
    dephase_one,
    dephase_two,
    depolarise_one,
    depolarise_two,
    dm_many_target_unitary,
    dm_one_target,
    dm_pauli_gadget,
    dm_pauli_tensor,
    dm_phase_gadget,
    dm_swap,
    init_pure,
    kraus_map,
    partial_trace,
    pauli_string_expectation,
    simulate_density,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
