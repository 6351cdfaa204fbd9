"""Command-line circuit runner.

A circuit file is line oriented::

    format 1
    mode sv            # or: density
    qubits 3
    world 1            # 2**1 ranks
    seed 7             # optional, default seed for randstate
    H 0
    CX 1 0             # target first, then control
    depol1 2 0.05      # density mode only
    dump

Blank lines and ``#`` comments are ignored.  Header lines come first, then
gates and channels, then final directives (``dump``, ``expect``, ``trace``).
See the README for the full instruction table.
"""

from __future__ import annotations

import argparse
import cmath
import json
import math
import re
import sys
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import dm_dist, sv_dist
from .errors import ArgumentError, CapacityError, ProtocolError, SimulatorError
from .transport import Counters, RankContext, WorldConfig, run_world, write_trace

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_CAPACITY = 3
EXIT_PROTOCOL = 4

SQ2 = 1 / math.sqrt(2)
FIXED_GATES = {
    "H": np.array([[SQ2, SQ2], [SQ2, -SQ2]], dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
    "S": np.array([[1, 0], [0, 1j]], dtype=complex),
    "T": np.array([[1, 0], [0, cmath.exp(1j * math.pi / 4)]], dtype=complex),
}
CHANNELS = {"dephase1": 1, "dephase2": 2, "depol1": 1, "depol2": 2, "damp": 1}
PAULI_LETTERS = {"I": 0, "X": 1, "Y": 2, "Z": 3}


class ParseError(SimulatorError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class Instruction:
    line: int
    op: str
    targets: list
    ctrls: list = field(default_factory=list)
    params: list = field(default_factory=list)
    matrix: np.ndarray | None = None
    codes: list = field(default_factory=list)


@dataclass
class CircuitProgram:
    mode: str
    n_qubits: int
    w: int = 0
    seed: int = 0
    instructions: list = field(default_factory=list)
    directives: list = field(default_factory=list)


def _int(tok: str, line: int, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(line, f"{what} must be an integer, got {tok!r}") from None


def _float(tok: str, line: int, what: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ParseError(line, f"{what} must be a number, got {tok!r}") from None


def _complex(tok: str, line: int) -> complex:
    try:
        return complex(tok.replace("i", "j"))
    except ValueError:
        raise ParseError(line, f"bad matrix entry {tok!r}") from None


def _codes(tok: str, line: int, allow_identity: bool) -> list:
    codes = []
    for ch in tok.upper():
        if ch not in PAULI_LETTERS or (ch == "I" and not allow_identity):
            raise ParseError(line, f"bad Pauli letter {ch!r} in {tok!r}")
        codes.append(PAULI_LETTERS[ch])
    return codes


def _pauli_term(tok: str, n: int, line: int) -> list:
    """Parse ``Z0*X2`` (or ``I``) into one code per qubit."""
    codes = [0] * n
    if tok.upper() == "I":
        return codes
    for part in tok.split("*"):
        match = re.fullmatch(r"([IXYZixyz])(\d+)", part)
        if not match:
            raise ParseError(line, f"bad Pauli term {tok!r}")
        q = int(match.group(2))
        if q >= n:
            raise ParseError(line, f"qubit {q} out of range in {tok!r}")
        codes[q] = PAULI_LETTERS[match.group(1).upper()]
    return codes


def parse(text: str) -> CircuitProgram:
    """Parse and validate a circuit, reporting the first error with its line number."""
    header: dict = {}
    instructions: list = []
    directives: list = []
    seen_body = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        head = toks[0]
        key = head.lower()
        if key in ("format", "mode", "qubits", "world", "seed"):
            if seen_body:
                raise ParseError(lineno, f"header line {head!r} after the circuit body")
            if len(toks) != 2:
                raise ParseError(lineno, f"{head} takes exactly one value")
            if key == "format":
                if toks[1] != "1":
                    raise ParseError(lineno, f"unsupported format {toks[1]!r}")
            elif key == "mode":
                mode = toks[1].lower()
                if mode in ("sv", "statevector"):
                    header["mode"] = "sv"
                elif mode in ("density", "dm"):
                    header["mode"] = "density"
                else:
                    raise ParseError(lineno, f"unknown mode {toks[1]!r}")
            else:
                header[key] = _int(toks[1], lineno, key)
            continue
        if not seen_body:
            for req in ("mode", "qubits"):
                if req not in header:
                    raise ParseError(lineno, f"missing '{req}' header before the circuit body")
            seen_body = True
        if key in ("dump", "expect", "trace"):
            directives.append(_parse_directive(key, toks, lineno, header))
            continue
        if directives:
            raise ParseError(lineno, "gates and channels must precede the final directives")
        instructions.append(_parse_instruction(head, toks, lineno, header))
    if not seen_body:
        if "mode" not in header or "qubits" not in header:
            raise ParseError(0, "missing 'mode' or 'qubits' header")
    program = CircuitProgram(
        header["mode"], header["qubits"], header.get("world", 0), header.get("seed", 0),
        instructions, directives,
    )
    validate(program)
    return program


def _parse_directive(key: str, toks: list, line: int, header: dict) -> Instruction:
    if key == "dump":
        if len(toks) != 1:
            raise ParseError(line, "dump takes no arguments")
        return Instruction(line, "dump", [])
    if key == "trace":
        if header["mode"] != "density":
            raise ParseError(line, "trace requires density mode")
        if len(toks) < 2:
            raise ParseError(line, "trace needs at least one qubit")
        return Instruction(line, "trace", [_int(t, line, "qubit") for t in toks[1:]])
    # expect <coeff> <term> [<coeff> <term> ...]
    if header["mode"] != "density":
        raise ParseError(line, "expect requires density mode")
    args = toks[1:]
    if not args or len(args) % 2:
        raise ParseError(line, "expect takes <coeff> <term> pairs")
    return Instruction(line, "expect", [], params=args)


def _parse_instruction(head: str, toks: list, line: int, header: dict) -> Instruction:
    n_args = len(toks) - 1
    upper = head.upper()
    lower = head.lower()

    def qubits(items: Sequence[str]) -> list:
        return [_int(t, line, "qubit") for t in items]

    def arity(k: int) -> None:
        if n_args != k:
            raise ParseError(line, f"{head} takes {k} arguments, got {n_args}")

    if upper in FIXED_GATES:
        arity(1)
        return Instruction(line, "gate1", qubits(toks[1:]), matrix=FIXED_GATES[upper])
    if upper in ("CX", "CNOT"):
        arity(2)
        t, c = qubits(toks[1:])
        return Instruction(line, "gate1", [t], ctrls=[c], matrix=FIXED_GATES["X"])
    if upper == "CZ":
        arity(2)
        t, c = qubits(toks[1:])
        return Instruction(line, "gate1", [t], ctrls=[c], matrix=FIXED_GATES["Z"])
    if upper == "SWAP":
        arity(2)
        return Instruction(line, "swap", qubits(toks[1:]))
    match = re.fullmatch(r"RZ(?:\((.+)\))?", upper)
    if match:
        if match.group(1) is not None:
            arity(1)
            theta = _float(match.group(1), line, "angle")
            t = qubits(toks[1:])
        else:
            arity(2)
            theta = _float(toks[1], line, "angle")
            t = qubits(toks[2:])
        m = np.diag([cmath.exp(-0.5j * theta), cmath.exp(0.5j * theta)])
        return Instruction(line, "gate1", t, params=[theta], matrix=m)
    if lower == "u":
        return _parse_matrix_gate(toks, line)
    if lower == "paulis":
        if n_args < 2:
            raise ParseError(line, "paulis takes <codes> <targets...>")
        codes = _codes(toks[1], line, allow_identity=False)
        ts = qubits(toks[2:])
        if len(codes) != len(ts):
            raise ParseError(line, f"{len(codes)} Pauli letters for {len(ts)} targets")
        return Instruction(line, "paulis", ts, codes=codes)
    if lower == "phase":
        if n_args < 2:
            raise ParseError(line, "phase takes <theta> <targets...>")
        return Instruction(line, "phase", qubits(toks[2:]), params=[_float(toks[1], line, "angle")])
    if lower == "gadget":
        if n_args < 3:
            raise ParseError(line, "gadget takes <theta> <codes> <targets...>")
        codes = _codes(toks[2], line, allow_identity=False)
        ts = qubits(toks[3:])
        if len(codes) != len(ts):
            raise ParseError(line, f"{len(codes)} Pauli letters for {len(ts)} targets")
        return Instruction(line, "gadget", ts, codes=codes, params=[_float(toks[1], line, "angle")])
    if lower == "randstate":
        if n_args > 1:
            raise ParseError(line, "randstate takes at most one seed")
        seed = _int(toks[1], line, "seed") if n_args else header.get("seed", 0)
        return Instruction(line, "randstate", [], params=[seed])
    if lower in CHANNELS:
        if header["mode"] != "density":
            raise ParseError(line, f"channel {head} requires density mode")
        k = CHANNELS[lower]
        arity(k + 1)
        return Instruction(line, lower, qubits(toks[1 : k + 1]), params=[_float(toks[-1], line, "probability")])
    raise ParseError(line, f"unknown instruction {head!r}")


def _parse_matrix_gate(toks: list, line: int) -> Instruction:
    # u <n> <t_0> ... <t_{n-1}> <row 0> ; <row 1> ; ...
    if len(toks) < 3:
        raise ParseError(line, "u takes <n> <targets> <rows separated by ;>")
    n = _int(toks[1], line, "target count")
    if n < 1 or len(toks) < 2 + n:
        raise ParseError(line, f"u needs {n} targets")
    ts = [_int(t, line, "qubit") for t in toks[2 : 2 + n]]
    body = " ".join(toks[2 + n :])
    rows = [r.split() for r in body.split(";")]
    dim = 1 << n
    if len(rows) != dim:
        raise ParseError(line, f"a {n}-target matrix needs {dim} rows, got {len(rows)}")
    for r in rows:
        if len(r) != dim:
            raise ParseError(line, f"a {n}-target matrix needs {dim} entries per row, got {len(r)}")
    m = np.array([[_complex(x, line) for x in r] for r in rows], dtype=complex)
    return Instruction(line, "matrix", ts, matrix=m)


def padding(program: CircuitProgram) -> int:
    """Idle ancilla qubits added on top so that every rank holds at least one amplitude.

    A circuit narrower than the world exponent (two qubits on eight ranks, say)
    is run on ``w`` qubits with the extra high qubits left in ``|0>``.  Gates
    never touch them, so the dump restricted to the original qubits is the
    circuit's own state.
    """
    return max(0, program.w - program.n_qubits)


def _embed(state: np.ndarray, mode: str, n: int, pad: int) -> np.ndarray:
    if not pad:
        return state
    dim, big = 1 << n, 1 << (n + pad)
    if mode == "sv":
        out = np.zeros(big, dtype=complex)
        out[:dim] = state
        return out
    out = np.zeros((big, big), dtype=complex)
    out[:dim, :dim] = state.reshape(dim, dim)
    return out.reshape(-1)


def _restrict(vec: np.ndarray, mode: str, n: int, pad: int) -> np.ndarray:
    if not pad:
        return vec
    dim, big = 1 << n, 1 << (n + pad)
    if mode == "sv":
        return vec[:dim].copy()
    # Choi index k + l * big: keep k, l < dim and re-pack with stride dim
    return vec.reshape(big, big)[:dim, :dim].reshape(-1).copy()


def validate(program: CircuitProgram) -> None:
    """Range and capacity checks that can be made before anything runs."""
    n, w = program.n_qubits, program.w
    if n < 1:
        raise ParseError(0, "qubits must be at least 1")
    if w < 0:
        raise ParseError(0, "world must be non-negative")
    pad = padding(program)
    suffix = n + pad - w if program.mode == "sv" else 2 * (n + pad) - w
    for ins in program.instructions:
        qs = ins.targets + ins.ctrls
        for q in qs:
            if not 0 <= q < n:
                raise ParseError(ins.line, f"qubit {q} out of range for {n} qubits")
        if len(set(qs)) != len(qs):
            raise ParseError(ins.line, f"repeated qubits {qs}")
        if ins.op in ("phase", "paulis", "gadget") and not ins.targets:
            raise ParseError(ins.line, f"{ins.op} needs at least one target")
        if ins.op == "matrix" and len(ins.targets) > suffix:
            raise CapacityError(
                f"line {ins.line}: {len(ins.targets)} targets exceed the {suffix} suffix qubits per rank"
            )
        if ins.op == "depol2" and not 0 <= ins.params[0] <= 15 / 16:
            raise ParseError(ins.line, "depol2 probability must lie in [0, 15/16]")
    current = n
    for d in program.directives:
        if d.op == "trace":
            for q in d.targets:
                if not 0 <= q < current:
                    raise ParseError(d.line, f"qubit {q} out of range for {current} qubits")
            if len(set(d.targets)) != len(d.targets):
                raise ParseError(d.line, "repeated qubits in trace")
            bound = current + pad - w
            if len(d.targets) > bound:
                raise CapacityError(
                    f"line {d.line}: tracing {len(d.targets)} of {current} qubits violates the bound N - w = {bound}"
                )
            current -= len(d.targets)
        elif d.op == "expect":
            for k in range(0, len(d.params), 2):
                _float(d.params[k], d.line, "coefficient")
                _pauli_term(d.params[k + 1], current, d.line)


def _random_state(mode: str, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    dim = 1 << n
    if mode == "sv":
        psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
        return psi / np.linalg.norm(psi)
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = g @ g.conj().T
    rho /= np.trace(rho).real
    return rho.T.reshape(-1).copy()


@dataclass
class Report:
    mode: str
    n_qubits: int
    world: int
    dumps: list
    expectations: list
    comm_log: list
    per_rank_counters: list
    operations: list

    def to_dict(self) -> dict:
        return {
            "format": 1,
            "mode": self.mode,
            "qubits": self.n_qubits,
            "world": self.world,
            "expectations": [[e.real, e.imag] for e in self.expectations],
            "per_rank_counters": [vars(c) for c in self.per_rank_counters],
            "operations": self.operations,
            "comm_records": len(self.comm_log),
        }


def _snapshot(c: Counters) -> Counters:
    return Counters(c.flops, c.writes, c.rounds, c.exchanged, c.messages)


def _delta(after: Counters, before: Counters) -> dict:
    return {k: getattr(after, k) - getattr(before, k) for k in ("flops", "writes", "rounds", "exchanged")}


def _apply(reg, ins: Instruction, mode: str) -> None:
    if mode == "sv":
        if ins.op == "gate1":
            sv_dist.dist_many_ctrl_one_target(reg, ins.ctrls, ins.matrix, ins.targets[0])
        elif ins.op == "swap":
            sv_dist.dist_swap(reg, *ins.targets)
        elif ins.op == "matrix":
            sv_dist.dist_many_target(reg, ins.matrix, ins.targets)
        elif ins.op == "paulis":
            sv_dist.dist_pauli_tensor(reg, ins.codes, ins.targets)
        elif ins.op == "phase":
            sv_dist.dist_phase_gadget(reg, ins.targets, ins.params[0])
        elif ins.op == "gadget":
            sv_dist.dist_pauli_gadget(reg, ins.codes, ins.targets, ins.params[0])
        else:
            raise ArgumentError(f"line {ins.line}: {ins.op} is not available in sv mode")
        return
    if ins.op == "gate1":
        dm_dist.dm_one_target(reg, ins.matrix, ins.targets[0], ins.ctrls)
    elif ins.op == "swap":
        dm_dist.dm_swap(reg, *ins.targets)
    elif ins.op == "matrix":
        dm_dist.dm_many_target_unitary(reg, ins.matrix, ins.targets)
    elif ins.op == "paulis":
        dm_dist.dm_pauli_tensor(reg, ins.codes, ins.targets)
    elif ins.op == "phase":
        dm_dist.dm_phase_gadget(reg, ins.targets, ins.params[0])
    elif ins.op == "gadget":
        dm_dist.dm_pauli_gadget(reg, ins.codes, ins.targets, ins.params[0])
    elif ins.op == "dephase1":
        dm_dist.dephase_one(reg, ins.targets[0], ins.params[0])
    elif ins.op == "dephase2":
        dm_dist.dephase_two(reg, *ins.targets, ins.params[0])
    elif ins.op == "depol1":
        dm_dist.depolarise_one(reg, ins.targets[0], ins.params[0])
    elif ins.op == "depol2":
        dm_dist.depolarise_two(reg, *ins.targets, ins.params[0])
    elif ins.op == "damp":
        dm_dist.damping(reg, ins.targets[0], ins.params[0])
    else:
        raise ArgumentError(f"line {ins.line}: unknown operation {ins.op}")


def run(program: CircuitProgram, max_message: int = 1 << 20, threads: int = 1) -> Report:
    """Execute a parsed program on the in-process harness and gather its outputs."""
    config = WorldConfig(program.w, max_message=max_message, threads=threads)
    mode = program.mode
    pad = padding(program)
    n_run = program.n_qubits + pad

    def rank_program(ctx: RankContext):
        if mode == "sv":
            reg = sv_dist.DistributedRegister.create(n_run, ctx)
            sv_dist.init_basis_state(reg, 0)
        else:
            reg = dm_dist.ChoiRegister.create(n_run, ctx)
            dm_dist.init_pure(reg, 0)
        ops = []
        for ins in program.instructions:
            before = _snapshot(ctx.counters)
            if ins.op == "randstate":
                state = _random_state(mode, program.n_qubits, ins.params[0])
                reg.load_global(_embed(state, mode, program.n_qubits, pad))
            else:
                _apply(reg, ins, mode)
            ops.append(_delta(ctx.counters, before))
        dumps, values = [], []
        current = program.n_qubits
        for d in program.directives:
            if d.op == "dump":
                dumps.append((current, reg.local.copy()))
            elif d.op == "trace":
                reg = dm_dist.partial_trace(reg, d.targets)
                current -= len(d.targets)
            elif d.op == "expect":
                coeffs, codes = [], []
                for k in range(0, len(d.params), 2):
                    coeffs.append(float(d.params[k]))
                    codes.extend(_pauli_term(d.params[k + 1], current, d.line) + [0] * pad)
                values.append(dm_dist.pauli_string_expectation(reg, dm_dist.PauliString(coeffs, codes)))
        return dumps, values, ops

    result = run_world(config, rank_program)
    per_rank = result.results
    dumps = []
    for k, (current, _) in enumerate(per_rank[0][0]):
        vec = sv_dist.gather([r[0][k][1] for r in per_rank])
        dumps.append(_restrict(vec, mode, current, pad))
    operations = []
    for idx, ins in enumerate(program.instructions):
        deltas = [r[2][idx] for r in per_rank]
        operations.append({
            "index": idx,
            "line": ins.line,
            "op": ins.op,
            "rounds": max(d["rounds"] for d in deltas),
            "exchanged": sum(d["exchanged"] for d in deltas),
            "flops": sum(d["flops"] for d in deltas),
            "writes": sum(d["writes"] for d in deltas),
        })
    return Report(mode, program.n_qubits, program.w, dumps, per_rank[0][1], result.log,
                  result.counters, operations)


def format_amplitude(value: complex) -> str:
    # adding 0.0 turns a negative zero into a positive one
    return f"{value.real + 0.0:.17g} {value.imag + 0.0:.17g}"


def format_dump(amps: np.ndarray) -> str:
    return "".join(f"{i} {format_amplitude(complex(a))}\n" for i, a in enumerate(amps))


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="qdist", description="Run a circuit on the in-process multi-rank simulator.")
    parser.add_argument("--circuit", required=True, help="circuit file ('-' for stdin)")
    parser.add_argument("--trace", help="write the communication log as JSON lines")
    parser.add_argument("--dump", help="write amplitude dumps here instead of stdout")
    parser.add_argument("--report", help="write counters and per-operation costs as JSON")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--max-message", type=int, default=1 << 20)
    args = parser.parse_args(argv)

    try:
        text = sys.stdin.read() if args.circuit == "-" else open(args.circuit, encoding="utf-8").read()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    try:
        program = parse(text)
        report = run(program, max_message=args.max_message, threads=args.threads)
    except (ParseError, ArgumentError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL

    dump_text = "\n".join(format_dump(d) for d in report.dumps)
    if args.dump:
        with open(args.dump, "w", encoding="utf-8") as f:
            f.write(dump_text)
    else:
        sys.stdout.write(dump_text)
    for k, e in enumerate(report.expectations):
        print(f"expectation {k} {format_amplitude(e)}")
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as f:
            write_trace(report.comm_log, f, 1 << program.w)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            json.dump(report.to_dict(), f, indent=2)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
