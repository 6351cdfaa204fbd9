"""Exception hierarchy shared by every layer of the simulator."""


class SimulatorError(Exception):
    """Base class for all errors raised by qdist."""


class ArgumentError(SimulatorError, ValueError):
    """A target, control, probability or matrix argument is malformed."""


class CapacityError(SimulatorError):
    """An operation needs more suffix qubits than the distribution provides."""


class ProtocolError(SimulatorError):
    """Ranks disagreed about a communication step (counts, kinds, double sends)."""


class DeadlockError(ProtocolError):
    """Every live rank is blocked on communication that can never complete."""
