import csv
import io
import json
import math

import numpy as np
import pytest

from conftest import basic_gates
from qhpcsim.metrics import (
    Accumulator,
    MetricsCollector,
    export,
    flatten,
    ft_overhead,
    gate_timing,
    to_csv,
    to_json,
)
from qhpcsim.qram import (
    ExpansionStep,
    GateSpec,
    Instruction,
    IsaDefinition,
    LogicalInstruction,
    Program,
    QuantumRegister,
    execute,
)
from qhpcsim.sim_core import RngStream
from qhpcsim.simulation import simulate


def test_gate_timing_spread():
    t = gate_timing({"a": 10, "b": 30, "c": 20})
    assert (t.best, t.worst, t.spread) == (10, 30, 20)
    assert t.weighted_std == pytest.approx(np.std([10, 30, 20]))


def test_gate_timing_weighted():
    t = gate_timing({"a": 10, "b": 30}, {"a": 3, "b": 1})
    assert t.spread == 20
    assert t.weighted_std == pytest.approx(np.std([10, 10, 10, 30]))


def test_gate_timing_absent():
    t = gate_timing({})
    assert (t.best, t.worst, t.spread, t.weighted_std) == (None, None, None, None)


def test_accumulator_against_numpy():
    vals = [3, 1, 4, 1, 5, 9, 2, 6]
    acc = Accumulator()
    for v in vals:
        acc.add(v)
    assert acc.mean == pytest.approx(np.mean(vals))
    assert acc.std == pytest.approx(np.std(vals))
    assert (acc.lo, acc.hi, acc.count) == (1, 9, 8)


def _anc_isa(steps):
    p = GateSpec("P", 2, 10, 0.0, np.eye(4))
    ins = {
        f"OP{i}": LogicalInstruction(f"OP{i}", 1, tuple(ExpansionStep("P", (0, -1)) for _ in range(n)), 1)
        for i, n in enumerate(steps)
    }
    return IsaDefinition("anc", {"P": p}, ins)


def _record(isa, ops, qubits):
    prog = Program(tuple(Instruction(o, (0,)) for o in ops), (), 1)
    return execute(prog, QuantumRegister(qubits), isa, RngStream(0, "m"))


def test_ft_overhead_five_gates_one_ancilla():
    assert ft_overhead(_record(_anc_isa([5]), ["OP0"] * 3, 2)) == (5.0, 2.0)


def test_ft_overhead_identity():
    isa = IsaDefinition.identity(basic_gates())
    prog = Program((Instruction("H", (0,)), Instruction("X", (0,))), (), 1)
    assert ft_overhead(execute(prog, QuantumRegister(1), isa, RngStream(0, "m"))) == (1.0, 1.0)


def test_ft_overhead_mixed_expansion():
    assert ft_overhead(_record(_anc_isa([2, 6]), ["OP0", "OP1"], 2))[0] == 4.0


def test_ft_overhead_empty_program():
    isa = IsaDefinition.identity(basic_gates())
    rec = execute(Program((), (0,), 1), QuantumRegister(1), isa, RngStream(0, "m"))
    assert ft_overhead(rec) is None


def test_empty_report_has_system_only():
    rep = MetricsCollector().report(0)
    assert set(rep) == {"schema", "system"}
    rows = list(csv.reader(io.StringIO(to_csv(rep))))
    assert rows[0] == ["section", "entity", "metric", "value"]
    assert {r[0] for r in rows[1:]} == {"schema", "system"}
    assert rep["system"]["jobs_arrived"] == 0 and rep["system"]["makespan_ns"] is None


def _json_leaves(obj):
    if isinstance(obj, dict):
        return sum(_json_leaves(v) for v in obj.values())
    return 1


@pytest.fixture(scope="module")
def report():
    from conftest import SCENARIO_DIR
    from qhpcsim import load_scenario
    return simulate(load_scenario(SCENARIO_DIR / "shared_qpu.json"))


def test_export_leaf_and_row_counts_agree(report):
    rows = list(csv.reader(io.StringIO(to_csv(report))))
    assert len(rows) - 1 == _json_leaves(json.loads(to_json(report))) == len(flatten(report))


def test_csv_values_round_trip(report):
    rows = list(csv.reader(io.StringIO(to_csv(report))))
    by_key = {(r[0], r[1], r[2]): r[3] for r in rows[1:]}
    assert by_key[("system", "", "jobs_arrived")] == str(report["system"]["jobs_arrived"])
    u = report["qpus"]["qpu0"]["utilization"]
    assert math.isclose(float(by_key[("qpus", "qpu0", "utilization")]), u, abs_tol=1e-6)


def test_export_is_byte_identical(report, tmp_path):
    for fmt in ("json", "csv"):
        a = export(report, tmp_path / "a", fmt).read_bytes()
        b = export(json.loads(to_json(report)), tmp_path / "b", fmt).read_bytes()
        assert a == b


def test_export_rejects_unknown_format(report, tmp_path):
    with pytest.raises(ValueError):
        export(report, tmp_path, "xml")
