import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import CX_U, H_U, X_U, basic_gates
from qhpcsim.qram import (
    CapacityError,
    DecodeError,
    ExpansionStep,
    GateSpec,
    Instruction,
    IsaDefinition,
    LogicalInstruction,
    Program,
    QuantumRegister,
    apply_gate,
    decode,
    execute,
    hilbert_dim,
    isa_from_dict,
    isa_to_dict,
    log2_dim,
    measure,
    run_timing,
)
from qhpcsim.sim_core import ConfigurationError, RngStream


def prog(*ops, measure=(), shots=1):
    return Program(tuple(Instruction(o, tuple(q)) for o, q in ops), tuple(measure), shots)


def embed(u, targets, n):
    """Full 2^n matrix of ``u`` on ``targets`` built bit by bit (element 0 = MSB)."""
    dim = 2**n
    k = len(targets)
    full = np.zeros((dim, dim), dtype=complex)
    for col in range(dim):
        bits = [(col >> (n - 1 - q)) & 1 for q in range(n)]
        sub = 0
        for t in targets:
            sub = sub * 2 + bits[t]
        for out in range(2**k):
            row_bits = list(bits)
            for pos, t in enumerate(targets):
                row_bits[t] = (out >> (k - 1 - pos)) & 1
            row = int("".join(map(str, row_bits)), 2)
            full[row, col] += u[out, sub]
    return full


def oracle_state(ops, n, gates):
    psi = np.zeros(2**n, dtype=complex)
    psi[0] = 1
    for name, targets in ops:
        psi = embed(gates[name].unitary, targets, n) @ psi
    return psi


def five_step_isa():
    g = GateSpec("P", 1, 10, 0.0, np.eye(2))
    ins = LogicalInstruction("OP", 1, tuple(ExpansionStep("P", (0,)) for _ in range(5)))
    return IsaDefinition("five", {"P": g}, {"OP": ins})


def test_decode_concatenates_expansions():
    dec = decode(prog(("OP", [0]), ("OP", [0]), ("OP", [0])), five_step_isa())
    assert len(dec.gates) == 15
    assert dec.logical_count == 3


def test_decode_measurement_only(ident_isa):
    dec = decode(Program((), (0,), 1), ident_isa)
    assert dec.gates == ()
    assert dec.measured == (0,)


def test_decode_unknown_opcode(ident_isa):
    with pytest.raises(DecodeError, match="FOO"):
        decode(prog(("FOO", [0])), ident_isa)


def test_decode_arity_mismatch(ident_isa):
    with pytest.raises(DecodeError):
        decode(prog(("CNOT", [0])), ident_isa)


def test_ancilla_addressing_and_requirement():
    gates = {g.name: g for g in basic_gates()}
    isa = IsaDefinition("anc", gates, {
        "A": LogicalInstruction("A", 1, (ExpansionStep("CNOT", (0, -1)), ExpansionStep("CNOT", (0, -2))), 2),
        "B": LogicalInstruction("B", 1, (ExpansionStep("X", (0,)),), 1),
    })
    dec = decode(prog(("A", [1]), ("B", [0])), isa)
    assert dec.program_qubits == 2
    assert dec.ancilla == 2
    assert dec.required_qubits == 4
    assert [op.targets for op in dec.gates] == [(1, 2), (1, 3), (0,)]


def test_x_on_zero():
    reg = QuantumRegister(1)
    apply_gate(reg, GateSpec("X", 1, 1, 0, X_U), [0])
    assert np.allclose(reg.state, [0, 1])


def test_identity_gate_leaves_state():
    reg = QuantumRegister(2)
    apply_gate(reg, GateSpec("H", 1, 1, 0, H_U), [1])
    before = reg.state.copy()
    apply_gate(reg, GateSpec("I", 1, 1, 0, np.eye(2)), [0])
    assert np.allclose(reg.state, before)


def test_hadamard_amplitudes():
    reg = QuantumRegister(1)
    apply_gate(reg, GateSpec("H", 1, 1, 0, H_U), [0])
    assert np.allclose(reg.state, [1 / math.sqrt(2)] * 2, atol=1e-12)


def test_missing_unitary_is_configuration_error():
    with pytest.raises(ConfigurationError):
        apply_gate(QuantumRegister(1), GateSpec("Y", 1, 1), [0])


def test_gate_spec_validation():
    with pytest.raises(ConfigurationError):
        GateSpec("bad", 1, 0)
    with pytest.raises(ConfigurationError):
        GateSpec("bad", 1, 5, 1.5)
    with pytest.raises(ConfigurationError):
        GateSpec("bad", 1, 5, 0, np.array([[1, 1], [0, 1]]))
    with pytest.raises(ConfigurationError):
        GateSpec("bad", 3, 5)


def test_statevector_cap():
    with pytest.raises(ConfigurationError):
        QuantumRegister(17)
    QuantumRegister(40, backend="timing")


def test_measure_basis_state_is_certain():
    rng = RngStream(0, "m")
    reg = QuantumRegister(1)
    for _ in range(200):
        reg.set_state([0, 1])
        assert measure(reg, rng) == "1"
    # register resets after measurement
    assert np.allclose(reg.state, [1, 0])


GATE_MAP = {g.name: g for g in basic_gates()}
_OPS = st.one_of(
    st.tuples(st.sampled_from(["H", "X"]), st.integers(0, 2).map(lambda q: (q,))),
    st.tuples(st.just("CNOT"), st.permutations([0, 1, 2]).map(lambda p: (p[0], p[1]))),
)


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 3), st.lists(_OPS, max_size=12))
def test_amplitudes_match_matrix_product_oracle(n, ops):
    ops = [(name, t) for name, t in ops if max(t) < n]
    reg = QuantumRegister(n)
    for name, t in ops:
        apply_gate(reg, GATE_MAP[name], t)
        assert abs(reg.norm - 1) < 1e-9
    assert np.allclose(reg.state, oracle_state(ops, n, GATE_MAP), atol=1e-9, rtol=0)


def test_execute_timing_and_samples(ident_isa):
    p = prog(("H", [0]), ("CNOT", [0, 1]), measure=(0, 1), shots=3)
    rec = execute(p, QuantumRegister(2), ident_isa, RngStream(1, "q"))
    assert len(rec.samples) == 3
    assert rec.quantum_time == 3 * 70
    assert [g.start for g in rec.gates[:2]] == [0, 20]
    assert all(s in ("00", "11") for s in rec.samples)


def test_execute_serial_sum():
    p = prog(*[("OP", [0])] * 3, shots=1)
    rec = execute(p, QuantumRegister(1), five_step_isa(), RngStream(1, "q"))
    assert rec.quantum_time == 150
    assert rec.primitive_gate_count / rec.logical_instruction_count == 5.0


def test_execute_capacity_error():
    gates = {g.name: g for g in basic_gates()}
    isa = IsaDefinition("anc", gates, {"A": LogicalInstruction("A", 1, (ExpansionStep("CNOT", (0, -1)),), 1)})
    with pytest.raises(CapacityError) as ei:
        execute(prog(("A", [0])), QuantumRegister(1), isa, RngStream(0, "q"))
    assert (ei.value.required, ei.value.available) == (2, 1)


def test_sampling_is_reproducible(ident_isa):
    p = prog(("H", [0]), ("H", [1]), shots=50)
    a = execute(p, QuantumRegister(2), ident_isa, RngStream(5, "q")).samples
    b = execute(p, QuantumRegister(2), ident_isa, RngStream(5, "q")).samples
    assert a == b


def test_gate_errors_resample_shots():
    isa = IsaDefinition.identity(basic_gates(err=0.2))
    p = prog(("H", [0]), ("X", [0]), shots=200)
    rec = execute(p, QuantumRegister(1), isa, RngStream(2, "q"), keep_gate_log=False)
    assert len(rec.samples) == 200
    assert rec.attempts > 200
    assert rec.quantum_time == rec.attempts * 30
    # expected attempts = shots / 0.64
    assert abs(rec.attempts - 200 / 0.64) < 3 * math.sqrt(200 * 0.36) / 0.64
    att, qt = run_timing(decode(p, isa), 200, RngStream(2, "t"))
    assert qt == att * 30


def test_hilbert_dim():
    assert [hilbert_dim(n) for n in (0, 3, 10)] == [1, 8, 1024]
    assert hilbert_dim(200) == 2**200
    assert log2_dim(200) == 200.0


def test_isa_json_round_trip(tmp_path):
    isa = IsaDefinition.identity(basic_gates(0.01))
    d = isa_to_dict(isa)
    back = isa_from_dict(json.loads(json.dumps(d)))
    assert back.primitive_gates.keys() == isa.primitive_gates.keys()
    assert np.allclose(back.primitive_gates["CNOT"].unitary, CX_U)
    assert back.instructions == isa.instructions


def test_isa_rejects_empty_expansion():
    with pytest.raises(ConfigurationError):
        isa_from_dict({"gates": {"X": {"duration_ns": 1}}, "instructions": {"A": {"expansion": []}}})
