import pytest

from conftest import basic_gates
from qhpcsim.dispatch import (
    Choice,
    MessageSizes,
    OffloadPolicy,
    SchedulingError,
    SwitchState,
    aggregate_inputs,
    crossover_latency,
    decide_offload,
    estimate_remote,
    partners_for,
    route,
)
from qhpcsim.qram import Instruction, IsaDefinition, Program, TRANSFER_OPCODE
from qhpcsim.topology import RoutingPolicy, build_architecture
from qhpcsim.workload import Job

ISA = IsaDefinition.identity(basic_gates())


def h_job(t_classical, shots=10, origin="cpu0", distributed=False):
    ins = [Instruction("H", (0,))]
    if distributed:
        ins.append(Instruction(TRANSFER_OPCODE, (0,), 0))
    return Job("j", 0, origin, Program(tuple(ins), (0,), shots), t_classical)


def shared(latency, ctl=18):
    return build_architecture("shared_qpu", 1, 1, qubits=2, isa=ISA, link_latency=latency,
                              link_bandwidth=1e9, controller_latency=ctl)


def hand_total(latency):
    # submit: 64 + 8 bytes -> 72 ns, result: 10 shots x 1 byte -> 10 ns, 10 x H(20 ns), controller 18 ns
    return 2 * latency + 72 + 10 + 18 + 200


def test_estimate_matches_hand_sum():
    est = estimate_remote(h_job(1), shared(1000), "qpu0", MessageSizes())
    assert est.total == hand_total(1000)
    assert (est.submit, est.result, est.quantum, est.controller) == (1072, 1010, 200, 18)


def test_offload_when_faster():
    arch = shared(3850)  # total = 8000
    d = decide_offload(h_job(10_000), arch)
    assert d.choice is Choice.QPU and d.qpu == "qpu0" and d.predicted_remote_time == 8000


def test_tie_goes_classical():
    arch = shared(4850)  # total = 10000
    d = decide_offload(h_job(10_000), arch)
    assert d.predicted_remote_time == 10_000
    assert d.choice is Choice.CLASSICAL


def test_crossover_flips_exactly():
    job = h_job(10_300)
    l_star = (10_300 - 300) / 2
    assert crossover_latency(job, shared(0), "qpu0") == l_star == 5000
    for lat in range(4990, 5011):
        d = decide_offload(job, shared(lat))
        assert (d.choice is Choice.QPU) == (lat < l_star)


def test_decision_monotone_in_latency():
    job = h_job(7777)
    seen_classical = False
    for lat in range(0, 10_000, 250):
        c = decide_offload(job, shared(lat)).choice
        if seen_classical:
            assert c is Choice.CLASSICAL
        seen_classical |= c is Choice.CLASSICAL


def test_queue_wait_enters_prediction():
    d = decide_offload(h_job(10_000), shared(1000), queue_wait=lambda q: 500)
    assert d.predicted_remote_time == hand_total(1000) + 500


def test_no_reachable_qpu_forces_classical():
    arch = build_architecture("shared_qpu", 1, 1, qubits=1, isa=ISA)
    job = Job("j", 0, "cpu0", Program((Instruction("CNOT", (0, 1)),)), 10**9)
    d = decide_offload(job, arch)
    assert d.choice is Choice.CLASSICAL and d.warning == "no reachable QPU"


def test_policies():
    arch = shared(10**6)
    assert decide_offload(h_job(10), arch, policy=OffloadPolicy.ALWAYS_QPU).choice is Choice.QPU
    assert decide_offload(h_job(10**12), arch, policy="always_classical").choice is Choice.CLASSICAL


def test_client_server_counts_switch_service():
    arch = build_architecture("client_server", 1, 1, qubits=2, isa=ISA, link_latency=1000, link_bandwidth=1e9,
                              server_latency=100, server_bandwidth=1e9, switch_service_time=700)
    est = estimate_remote(h_job(1), arch, "qpu0", MessageSizes())
    assert est.switch == 700
    assert est.submit == (1000 + 72) + (100 + 72)
    assert est.result == (1000 + 10) + (100 + 10)


def test_round_robin():
    sw = SwitchState(10, RoutingPolicy.ROUND_ROBIN)
    assert [sw.choose(["q0", "q1"]) for _ in "ABC"] == ["q0", "q1", "q0"]


def test_least_loaded():
    sw = SwitchState(10, RoutingPolicy.LEAST_LOADED)
    assert sw.choose(["q0", "q1"], {"q0": 10_000, "q1": 0}) == "q1"
    assert sw.choose(["q0", "q1"], {"q0": 0, "q1": 0}) == "q0"


def test_route_patterns():
    ded = build_architecture("dedicated", 3, 3, isa=ISA)
    assert route(h_job(1, origin="cpu2"), ded)[0] == "qpu2"
    with pytest.raises(SchedulingError):
        route(h_job(1, distributed=True), ded)
    inter = build_architecture("interconnected", 3, 3, isa=ISA)
    assert route(h_job(1, origin="cpu1", distributed=True), inter) == ("qpu1", ["qpu2"])
    sh = build_architecture("shared_qpu", 2, 1, isa=ISA)
    assert route(h_job(1, origin="cpu1"), sh)[0] == "qpu0"


def test_partners_need_links():
    inter = build_architecture("interconnected", 2, 2, isa=ISA)
    assert partners_for(inter, "qpu1", 1) == ["qpu0"]
    with pytest.raises(SchedulingError):
        partners_for(inter, "qpu0", 2)


def test_aggregate_inputs():
    assert aggregate_inputs([5000, 9000, 7000], 0, 10**6).start == 9000
    assert aggregate_inputs([4000], 0, 10**6).start == 4000
    agg = aggregate_inputs([100, None], 0, 10**6)
    assert agg.start is None and agg.failed_at == 10**6
    assert aggregate_inputs([10**6], 0, 10**6).start == 10**6


def test_switch_throughput_property():
    sw = SwitchState(100)
    sw.served, sw.first_arrival, sw.last_departure = 11, 0, 1100
    assert sw.throughput() == pytest.approx(1e7)
