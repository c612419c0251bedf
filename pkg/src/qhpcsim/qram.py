"""QPU abstract machine: register, ISA tables, decode, timed execution, sampling."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .sim_core import Bernoulli, ConfigurationError, RngStream, draw

STATEVECTOR_QUBIT_CAP = 16
NORM_TOL = 1e-9
MEASURE_OPCODE = "MEASURE"


class DecodeError(ValueError):
    pass


class CapacityError(ValueError):
    def __init__(self, required: int, available: int, what: str = "register"):
        super().__init__(f"{what} too small: requires {required} qubits, {available} available")
        self.required = required
        self.available = available


@dataclass(frozen=True)
class GateSpec:
    name: str
    arity: int
    duration: int
    error_prob: float = 0.0
    unitary: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.arity not in (1, 2):
            raise ConfigurationError(f"gate {self.name}: arity must be 1 or 2")
        if int(self.duration) <= 0:
            raise ConfigurationError(f"gate {self.name}: duration must be > 0 ns")
        if not 0.0 <= self.error_prob <= 1.0:
            raise ConfigurationError(f"gate {self.name}: error_prob outside [0, 1]")
        if self.unitary is not None:
            u = np.asarray(self.unitary, dtype=complex)
            dim = 2**self.arity
            if u.shape != (dim, dim):
                raise ConfigurationError(f"gate {self.name}: unitary must be {dim}x{dim}")
            if not np.allclose(u.conj().T @ u, np.eye(dim), atol=NORM_TOL, rtol=0):
                raise ConfigurationError(f"gate {self.name}: matrix is not unitary")
            object.__setattr__(self, "unitary", u)


@dataclass(frozen=True)
class ExpansionStep:
    """One primitive gate of an expansion.

    ``on`` indexes the logical instruction's operands; negative values
    ``-1, -2, ...`` address ancilla 0, 1, ... of the instruction.
    """

    gate: str
    on: tuple[int, ...]


@dataclass(frozen=True)
class LogicalInstruction:
    opcode: str
    arity: int
    expansion: tuple[ExpansionStep, ...]
    ancilla: int = 0


@dataclass
class IsaDefinition:
    name: str
    primitive_gates: dict[str, GateSpec]
    instructions: dict[str, LogicalInstruction]
    measurement: GateSpec | None = None

    def __post_init__(self):
        for op, ins in self.instructions.items():
            if not ins.expansion:
                raise ConfigurationError(f"ISA {self.name}: opcode {op} has an empty expansion")
            if ins.ancilla < 0:
                raise ConfigurationError(f"ISA {self.name}: opcode {op} has negative ancilla")
            for step in ins.expansion:
                g = self.primitive_gates.get(step.gate)
                if g is None:
                    raise ConfigurationError(f"ISA {self.name}: opcode {op} uses unknown gate {step.gate}")
                if len(step.on) != g.arity:
                    raise ConfigurationError(
                        f"ISA {self.name}: opcode {op} step {step.gate} addresses {len(step.on)} qubits"
                    )
                for k in step.on:
                    if k >= ins.arity or -k > ins.ancilla:
                        raise ConfigurationError(
                            f"ISA {self.name}: opcode {op} step {step.gate} operand {k} out of range"
                        )

    @property
    def measure_duration(self) -> int:
        return self.measurement.duration if self.measurement else 0

    def instruction_duration(self, opcode: str) -> int:
        return sum(self.primitive_gates[s.gate].duration for s in self.instructions[opcode].expansion)

    @classmethod
    def identity(cls, gates: Iterable[GateSpec], name: str = "identity") -> "IsaDefinition":
        """An ISA where each primitive gate is also a logical instruction of its own."""
        prims = {g.name: g for g in gates}
        instrs = {
            g.name: LogicalInstruction(g.name, g.arity, (ExpansionStep(g.name, tuple(range(g.arity))),))
            for g in prims.values()
        }
        return cls(name, prims, instrs)


# --- ISA file format ---------------------------------------------------------


def _parse_matrix(rows) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in rows], dtype=complex)


def isa_from_dict(data: Mapping) -> IsaDefinition:
    try:
        gates = {}
        for gname, g in data["gates"].items():
            gates[gname] = GateSpec(
                gname,
                int(g.get("arity", 1)),
                int(g["duration_ns"]),
                float(g.get("error_prob", 0.0)),
                _parse_matrix(g["unitary"]) if "unitary" in g else None,
            )
        instrs = {}
        for op, spec in data["instructions"].items():
            arity = int(spec.get("arity", 1))
            steps = []
            for st in spec["expansion"]:
                if isinstance(st, str):
                    steps.append(ExpansionStep(st, tuple(range(gates[st].arity if st in gates else arity))))
                else:
                    steps.append(ExpansionStep(st["gate"], tuple(int(k) for k in st["on"])))
            instrs[op] = LogicalInstruction(op, arity, tuple(steps), int(spec.get("ancilla", 0)))
        meas = None
        if "measure" in data:
            m = data["measure"]
            meas = GateSpec(MEASURE_OPCODE, 1, int(m["duration_ns"]), float(m.get("error_prob", 0.0)))
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"malformed ISA definition: missing or bad field {exc}") from exc
    return IsaDefinition(str(data.get("name", "isa")), gates, instrs, meas)


def isa_to_dict(isa: IsaDefinition) -> dict:
    gates = {}
    for g in isa.primitive_gates.values():
        d = {"arity": g.arity, "duration_ns": g.duration, "error_prob": g.error_prob}
        if g.unitary is not None:
            d["unitary"] = [[[float(z.real), float(z.imag)] for z in row] for row in g.unitary]
        gates[g.name] = d
    out = {
        "name": isa.name,
        "gates": gates,
        "instructions": {
            op: {
                "arity": ins.arity,
                "ancilla": ins.ancilla,
                "expansion": [{"gate": s.gate, "on": list(s.on)} for s in ins.expansion],
            }
            for op, ins in isa.instructions.items()
        },
    }
    if isa.measurement is not None:
        out["measure"] = {"duration_ns": isa.measurement.duration, "error_prob": isa.measurement.error_prob}
    return out


def load_isa(path: str | Path) -> IsaDefinition:
    with open(path, encoding="utf-8") as fh:
        return isa_from_dict(json.load(fh))


# --- programs --------------------------------------------------------------


@dataclass(frozen=True)
class Instruction:
    opcode: str
    operands: tuple[int, ...]
    partner: int | None = None  # set on inter-QPU transfer instructions


TRANSFER_OPCODE = "TELEPORT"


@dataclass(frozen=True)
class Program:
    """Logical instruction list followed by one terminal measurement.

    ``measure`` lists the measured register elements; an empty tuple
    measures every program qubit.
    """

    instructions: tuple[Instruction, ...]
    measure: tuple[int, ...] = ()
    shots: int | None = 1
    confidence: float | None = None
    p_success: float | None = None
    sampling: str = "at_least_one"
    epsilon: float | None = None
    num_qubits: int | None = None

    def __post_init__(self):
        if self.shots is None and self.confidence is None:
            raise ConfigurationError("program needs shots or a confidence target")
        if self.shots is not None and self.shots < 1:
            raise ConfigurationError("shots must be >= 1")
        if self.confidence is not None and not 0.0 < self.confidence < 1.0:
            raise ConfigurationError("confidence must lie in (0, 1)")

    @property
    def qubits(self) -> int:
        used = [q for ins in self.instructions for q in ins.operands] + list(self.measure)
        n = max(used) + 1 if used else 1
        return max(n, self.num_qubits or 0)

    @property
    def measured(self) -> tuple[int, ...]:
        return self.measure or tuple(range(self.qubits))

    @property
    def logical(self) -> tuple[Instruction, ...]:
        return tuple(i for i in self.instructions if i.opcode != TRANSFER_OPCODE)

    @property
    def is_distributed(self) -> bool:
        return any(i.opcode == TRANSFER_OPCODE for i in self.instructions)

    @property
    def partners(self) -> int:
        ps = [i.partner for i in self.instructions if i.partner is not None]
        return max(ps) + 1 if ps else 0

    def resolved_shots(self) -> int:
        if self.shots is not None:
            return self.shots
        from .workload import estimation_shots, required_shots

        if self.sampling == "estimate":
            return estimation_shots(self.epsilon or 0.05, 1.0 - self.confidence)
        return required_shots(self.confidence, self.p_success if self.p_success is not None else 1.0)


@dataclass(frozen=True)
class PrimitiveOp:
    gate: GateSpec
    targets: tuple[int, ...]
    source: int  # index of the logical instruction that produced it


@dataclass(frozen=True)
class DecodedProgram:
    gates: tuple[PrimitiveOp, ...]
    measured: tuple[int, ...]
    measurement: GateSpec | None
    logical_count: int
    ancilla: int
    program_qubits: int

    @property
    def shot_duration(self) -> int:
        return sum(op.gate.duration for op in self.gates) + (self.measurement.duration if self.measurement else 0)

    @property
    def required_qubits(self) -> int:
        return self.program_qubits + self.ancilla

    @property
    def shot_success_prob(self) -> float:
        p = 1.0
        for op in self.gates:
            p *= 1.0 - op.gate.error_prob
        if self.measurement is not None:
            p *= 1.0 - self.measurement.error_prob
        return p


def decode(program: Program, isa: IsaDefinition) -> DecodedProgram:
    """Expand logical instructions into the ISA's primitive gate sequence.

    Ancilla of an instruction are placed after the program's qubits; the
    recorded requirement is the largest per-instruction ancilla count since
    ancilla are returned between instructions.
    """
    nq = program.qubits
    gates: list[PrimitiveOp] = []
    max_anc = 0
    logical = 0
    for idx, ins in enumerate(program.instructions):
        if ins.opcode == TRANSFER_OPCODE:
            continue
        spec = isa.instructions.get(ins.opcode)
        if spec is None:
            raise DecodeError(f"unknown opcode {ins.opcode!r} at instruction {idx}")
        if len(ins.operands) != spec.arity:
            raise DecodeError(
                f"opcode {ins.opcode!r} at instruction {idx} takes {spec.arity} operands, got {len(ins.operands)}"
            )
        if len(set(ins.operands)) != len(ins.operands):
            raise DecodeError(f"opcode {ins.opcode!r} at instruction {idx} repeats an operand")
        logical += 1
        max_anc = max(max_anc, spec.ancilla)
        for step in spec.expansion:
            targets = tuple(ins.operands[k] if k >= 0 else nq + (-k - 1) for k in step.on)
            gates.append(PrimitiveOp(isa.primitive_gates[step.gate], targets, idx))
    return DecodedProgram(tuple(gates), program.measured, isa.measurement, logical, max_anc, nq)


def hilbert_dim(n: int) -> int:
    """Number of computational basis states of an n-qubit register (exact int)."""
    if n < 0:
        raise ValueError("qubit count must be >= 0")
    return 1 << n


def log2_dim(n: int) -> float:
    return float(n)


# --- register --------------------------------------------------------------


class QuantumRegister:
    """n-element register; amplitudes are kept only for the state-vector backend.

    Basis index convention: element 0 is the most significant bit, so the
    bitstring ``b0 b1 ... b(n-1)`` is the binary form of the index.
    """

    def __init__(self, n: int, backend: str = "statevector", cap: int = STATEVECTOR_QUBIT_CAP,
                 placeholder: Sequence[float] | None = None):
        if n < 1:
            raise ConfigurationError("register needs at least one element")
        if backend not in ("statevector", "timing"):
            raise ConfigurationError(f"unknown backend {backend!r}")
        if backend == "statevector" and n > cap:
            raise ConfigurationError(f"state-vector backend limited to {cap} qubits, got {n}")
        self.n = n
        self.backend = backend
        self.placeholder = tuple(placeholder) if placeholder is not None else None
        self.elapsed = 0
        self.state: np.ndarray | None = None
        self.reset()

    def reset(self) -> None:
        if self.backend == "statevector":
            self.state = np.zeros(2**self.n, dtype=complex)
            self.state[0] = 1.0

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.state)) if self.state is not None else 1.0

    def set_state(self, amplitudes) -> None:
        a = np.asarray(amplitudes, dtype=complex)
        if a.shape != (2**self.n,):
            raise ValueError("amplitude vector has wrong length")
        if abs(np.linalg.norm(a) - 1.0) > NORM_TOL:
            raise ValueError("amplitude vector is not normalised")
        self.state = a.copy()

    def probabilities(self) -> np.ndarray:
        return np.abs(self.state) ** 2

    def apply_matrix(self, u: np.ndarray, targets: Sequence[int]) -> None:
        k = len(targets)
        psi = self.state.reshape([2] * self.n)
        psi = np.moveaxis(psi, list(targets), list(range(k)))
        shape = psi.shape
        psi = (u @ psi.reshape(2**k, -1)).reshape(shape)
        self.state = np.moveaxis(psi, list(range(k)), list(targets)).reshape(-1)

    def measure_elements(self, elements: Sequence[int], rng: RngStream) -> str:
        """Projectively measure some elements, collapsing the rest (one draw)."""
        flat = _marginal(self.probabilities(), self.n, elements)
        outcome = _sample_index(flat, rng.uniform())
        bits = format(outcome, f"0{len(elements)}b")
        psi = self.state.reshape([2] * self.n)
        sel = [slice(None)] * self.n
        for e, b in zip(elements, bits):
            sel[e] = int(b)
        mask = np.zeros_like(psi)
        mask[tuple(sel)] = 1.0
        psi = psi * mask
        self.state = (psi / np.linalg.norm(psi)).reshape(-1)
        return bits


def _marginal(probs: np.ndarray, n: int, elements: Sequence[int]) -> np.ndarray:
    """Outcome distribution of ``elements`` (in the given order), flattened."""
    k = len(elements)
    p = np.moveaxis(probs.reshape([2] * n), list(elements), list(range(k)))
    if k < n:
        p = p.sum(axis=tuple(range(k, n)))
    return p.reshape(-1)


def _sample_index(probs: np.ndarray, u: float) -> int:
    cdf = np.cumsum(probs)
    cdf /= cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(cdf) - 1))


def apply_gate(register: QuantumRegister, gate: GateSpec, targets: Sequence[int]) -> QuantumRegister:
    targets = tuple(int(t) for t in targets)
    if len(targets) != gate.arity:
        raise ValueError(f"gate {gate.name} takes {gate.arity} targets, got {len(targets)}")
    if any(t < 0 or t >= register.n for t in targets) or len(set(targets)) != len(targets):
        raise ValueError(f"invalid targets {targets} for a {register.n}-element register")
    register.elapsed += gate.duration
    if register.backend == "statevector":
        if gate.unitary is None:
            raise ConfigurationError(f"gate {gate.name} has no unitary; required by the state-vector backend")
        register.apply_matrix(gate.unitary, targets)
        if abs(register.norm - 1.0) > NORM_TOL:
            raise ArithmeticError(f"norm drift after {gate.name}: {register.norm}")
    return register


def measure(register: QuantumRegister, rng: RngStream, elements: Sequence[int] | None = None) -> str:
    """Sample a bitstring with Born-rule probabilities, then reset to |0...0>."""
    elements = tuple(range(register.n)) if elements is None else tuple(elements)
    if register.backend == "statevector":
        marg = _marginal(register.probabilities(), register.n, elements)
        idx = _sample_index(marg.reshape(-1), rng.uniform())
        bits = format(idx, f"0{len(elements)}b")
    else:
        weights = register.placeholder or (1.0,) + (0.0,) * (2 ** len(elements) - 1)
        idx = _sample_index(np.asarray(weights, dtype=float), rng.uniform())
        bits = format(idx, f"0{len(elements)}b")
    register.reset()
    return bits


@dataclass
class GateRecord:
    name: str
    start: int
    duration: int


@dataclass
class ExecutionRecord:
    gates: list[GateRecord]
    samples: list[str]
    logical_instruction_count: int
    primitive_gate_count: int
    ancilla_used: int
    program_qubits: int
    shots: int
    attempts: int
    shot_duration: int
    quantum_time: int
    gate_counts: dict[str, int] = field(default_factory=dict)

    @property
    def invalid_shots(self) -> int:
        return self.attempts - self.shots


MAX_ATTEMPT_FACTOR = 1000


def execute(program: Program, register: QuantumRegister, isa: IsaDefinition, rng: RngStream,
            start: int = 0, keep_gate_log: bool = True, decoded: DecodedProgram | None = None,
            error_override: float | None = None) -> ExecutionRecord:
    """Run all shots of a program serially on one register.

    A shot touched by a gate error is discarded and re-run; the wasted
    time still counts toward ``quantum_time``.
    """
    dec = decoded or decode(program, isa)
    if dec.required_qubits > register.n:
        raise CapacityError(dec.required_qubits, register.n)
    shots = program.resolved_shots()
    p_ok = dec.shot_success_prob if error_override is None else (1.0 - error_override) ** (
        len(dec.gates) + (1 if dec.measurement else 0))
    if p_ok <= 0.0:
        raise ConfigurationError("every shot fails: gate error probability of 1")
    log: list[GateRecord] = []
    samples: list[str] = []
    counts: dict[str, int] = {}
    t = start
    attempts = 0
    check_errors = p_ok < 1.0
    while len(samples) < shots:
        attempts += 1
        if attempts > shots * MAX_ATTEMPT_FACTOR:
            raise ConfigurationError("shot error rate too high to collect the requested samples")
        register.reset()
        for op in dec.gates:
            if keep_gate_log:
                log.append(GateRecord(op.gate.name, t, op.gate.duration))
            counts[op.gate.name] = counts.get(op.gate.name, 0) + 1
            if register.backend == "statevector":
                apply_gate(register, op.gate, op.targets)
            else:
                register.elapsed += op.gate.duration
            t += op.gate.duration
        if dec.measurement is not None:
            if keep_gate_log:
                log.append(GateRecord(dec.measurement.name, t, dec.measurement.duration))
            t += dec.measurement.duration
        ok = True if not check_errors else draw(rng, Bernoulli(p_ok))
        bits = measure(register, rng, dec.measured)
        if ok:
            samples.append(bits)
    return ExecutionRecord(
        gates=log,
        samples=samples,
        logical_instruction_count=dec.logical_count,
        primitive_gate_count=len(dec.gates),
        ancilla_used=dec.ancilla,
        program_qubits=dec.program_qubits,
        shots=shots,
        attempts=attempts,
        shot_duration=dec.shot_duration,
        quantum_time=t - start,
        gate_counts=counts,
    )


def run_timing(decoded: DecodedProgram, shots: int, rng: RngStream, error_override: float | None = None
               ) -> tuple[int, int]:
    """Timing-only fast path: returns (attempts, quantum_time) without sampling bits."""
    if error_override is None:
        p_ok = decoded.shot_success_prob
    else:
        p_ok = (1.0 - error_override) ** (len(decoded.gates) + (1 if decoded.measurement else 0))
    if p_ok <= 0.0:
        raise ConfigurationError("every shot fails: gate error probability of 1")
    attempts = shots
    if p_ok < 1.0:
        attempts = 0
        good = 0
        while good < shots:
            attempts += 1
            if attempts > shots * MAX_ATTEMPT_FACTOR:
                raise ConfigurationError("shot error rate too high to collect the requested samples")
            if draw(rng, Bernoulli(p_ok)):
                good += 1
    return attempts, attempts * decoded.shot_duration
