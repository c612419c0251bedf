import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import basic_gates
from qhpcsim.qram import Instruction, IsaDefinition, Program
from qhpcsim.sim_core import ConfigurationError, StreamFactory
from qhpcsim.workload import (
    Fragment,
    Job,
    TraceError,
    WorkloadSpec,
    classical_runtime,
    estimation_shots,
    generate,
    load_trace,
    required_shots,
    save_trace,
)

ISA = IsaDefinition.identity(basic_gates())


def brute_force_shots(c, p):
    n = 1
    while 1 - (1 - p) ** n < c:
        n += 1
    return n


def test_required_shots_examples():
    assert required_shots(0.99, 0.5) == 7
    assert 1 - 0.5**7 == 0.9921875 >= 0.99 > 1 - 0.5**6
    assert required_shots(0.99, 1.0) == 1
    assert required_shots(0.3, 1.0) == 1


def test_required_shots_unsatisfiable():
    with pytest.raises(ValueError, match="unsatisfiable"):
        required_shots(0.9, 0.0)


@settings(max_examples=300, deadline=None)
@given(st.floats(0.01, 0.999), st.floats(0.01, 1.0))
def test_required_shots_matches_brute_force(c, p):
    assert required_shots(c, p) == brute_force_shots(c, p)


def test_required_shots_boundary_settles_exactly():
    # 1 - 0.5**2 == 0.75 exactly: two shots suffice
    assert required_shots(0.75, 0.5) == 2
    assert required_shots(0.875, 0.5) == 3


def test_estimation_shots():
    assert estimation_shots(0.05, 0.05) == math.ceil(math.log(40) / 0.005)
    assert estimation_shots(0.1, 0.01) == 265


def test_poisson_count_over_seeds():
    spec = WorkloadSpec(rate_per_s=1000)
    counts = [len(generate(spec, 10**9, StreamFactory(s), ISA)) for s in range(20)]
    assert all(abs(c - 1000) <= 3 * math.sqrt(1000) for c in counts)
    mean = sum(counts) / len(counts)
    assert abs(mean - 1000) <= 3 * math.sqrt(1000 / len(counts))


def test_fixed_jobs_verbatim():
    jobs = [Job(f"j{i}", 10 * i, "cpu0", Program((Instruction("H", (0,)),)), 5) for i in range(3)]
    assert generate(WorkloadSpec(jobs=jobs), 100, StreamFactory(0), ISA) == jobs


def test_horizon_zero_is_empty():
    assert generate(WorkloadSpec(rate_per_s=1e6), 0, StreamFactory(0), ISA) == []


def test_generated_jobs_sorted_deterministic_and_valid():
    spec = WorkloadSpec(rate_per_s=5e5, origins=["cpu0", "cpu1"], qubits=(2, 4), instructions=(1, 8),
                        opcodes={"H": 1, "CNOT": 1}, distributed_fraction=0.3, fragment_fraction=0.5,
                        fragment_delay_ns=100)
    a = generate(spec, 10**6, StreamFactory(3), ISA)
    b = generate(spec, 10**6, StreamFactory(3), ISA)
    assert a == b and a
    times = [j.arrival_time for j in a]
    assert times == sorted(times)
    for j in a:
        for ins in j.program.logical:
            assert len(ins.operands) == ISA.instructions[ins.opcode].arity
            assert all(q < j.program.qubits for q in ins.operands)
            assert len(set(ins.operands)) == len(ins.operands)
    assert any(j.program.is_distributed for j in a)
    assert any(j.fragments for j in a)


def test_classical_runtime_models():
    assert classical_runtime({"model": "exponential", "scale_ns": 1000, "base": 2}, 3) == 8000
    assert classical_runtime({"model": "polynomial", "coeffs": [10, 0, 5]}, 4) == 90
    assert classical_runtime({"model": "fixed", "ns": 77}, 9) == 77
    with pytest.raises(ConfigurationError):
        classical_runtime({"model": "bogus"}, 1)


def test_trace_round_trip(tmp_path):
    spec = WorkloadSpec(rate_per_s=2e5, origins=["cpu0", "cpu1"], qubits=(1, 3),
                        shots={"confidence": 0.95, "p_success": 0.3}, fragment_fraction=0.5,
                        fragment_delay_ns=50, distributed_fraction=0.5)
    jobs = generate(spec, 10**6, StreamFactory(8), ISA)
    p = tmp_path / "t.jsonl"
    save_trace(p, jobs)
    assert load_trace(p) == jobs
    save_trace(tmp_path / "u.jsonl", load_trace(p))
    assert (tmp_path / "u.jsonl").read_bytes() == p.read_bytes()


def test_trace_keeps_never_sent_fragment(tmp_path):
    job = Job("a", 0, "cpu0", Program((Instruction("X", (0,)),)), 9, fragments=(Fragment("cpu1", None),))
    save_trace(tmp_path / "t.jsonl", [job])
    assert load_trace(tmp_path / "t.jsonl") == [job]


def test_empty_trace(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    assert load_trace(tmp_path / "e.jsonl") == []


def test_malformed_numeric_field_names_field_and_line(tmp_path):
    good = {"id": "a", "arrival_ns": 0, "origin": "cpu0", "t_classical_ns": 10,
            "program": {"instructions": [{"op": "H", "operands": [0]}]}}
    bad = dict(good, id="b", arrival_ns="soon")
    (tmp_path / "t.jsonl").write_text(json.dumps(good) + "\n" + json.dumps(bad) + "\n")
    with pytest.raises(TraceError) as ei:
        load_trace(tmp_path / "t.jsonl")
    assert ei.value.line == 2
    assert ei.value.field == "arrival_ns"
    assert "arrival_ns" in str(ei.value)


def test_invalid_json_line(tmp_path):
    (tmp_path / "t.jsonl").write_text("{nope\n")
    with pytest.raises(TraceError) as ei:
        load_trace(tmp_path / "t.jsonl")
    assert ei.value.line == 1


def test_workload_spec_validation():
    with pytest.raises(ConfigurationError):
        WorkloadSpec(rate_per_s=0)
    with pytest.raises(ConfigurationError):
        WorkloadSpec(rate_per_s=1, qubits=(0, 2))
    with pytest.raises(ConfigurationError):
        Job("x", 0, "cpu0", Program(()), 0)
