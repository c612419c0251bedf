import pytest

from qhpcsim.sim_core import ConfigurationError
from qhpcsim.topology import (
    SWITCH_ID,
    ArchKind,
    Architecture,
    ClassicalLink,
    CpuNode,
    QpuNode,
    QuantumLink,
    build_architecture,
    server_capacity,
    validate,
)


def test_client_server_shape():
    a = build_architecture("client_server", 4, 2)
    to_switch = [ln for ln in a.classical_links if SWITCH_ID in ln.endpoints and ln.other(SWITCH_ID).startswith("cpu")]
    to_qpu = [ln for ln in a.classical_links if SWITCH_ID in ln.endpoints and ln.other(SWITCH_ID).startswith("qpu")]
    assert len(to_switch) == 4 and len(to_qpu) == 2
    assert a.switch is not None
    assert not a.quantum_links
    assert validate(a) == []
    assert [ln.b for ln in a.submit_path("cpu1", "qpu1")] == [SWITCH_ID, "qpu1"]


def test_client_server_optional_quantum_mesh():
    a = build_architecture("client_server", 2, 3, server_quantum_links=True)
    assert len(a.quantum_links) == 3


def test_dedicated_shape():
    a = build_architecture("dedicated", 3, 3)
    assert len(a.quantum_links) == 0
    cpu_links = [ln for ln in a.classical_links if ln.a.startswith("cpu") and ln.b.startswith("cpu")]
    assert len(cpu_links) == 3
    assert a.pairing == {"cpu0": "qpu0", "cpu1": "qpu1", "cpu2": "qpu2"}
    assert a.reachable_qpus("cpu1") == ["qpu1"]
    assert validate(a) == []


def test_dedicated_count_mismatch():
    with pytest.raises(ConfigurationError):
        build_architecture("dedicated", 3, 2)


def test_shared_needs_one_qpu():
    a = build_architecture("shared_qpu", 3, 1)
    assert a.reachable_qpus("cpu2") == ["qpu0"]
    with pytest.raises(ConfigurationError):
        build_architecture("shared_qpu", 3, 2)


@pytest.mark.parametrize("q", [1, 2, 3, 5, 8])
def test_interconnected_full_mesh(q):
    a = build_architecture("interconnected", q, q)
    assert len(a.quantum_links) == q * (q - 1) // 2
    assert validate(a) == []


@pytest.mark.parametrize("kind,c,q", [("client_server", 3, 2), ("shared_qpu", 4, 1), ("dedicated", 2, 2),
                                      ("interconnected", 4, 4), ("dedicated", 1, 1)])
def test_builds_are_valid(kind, c, q):
    assert validate(build_architecture(kind, c, q)) == []


def test_capacity_examples():
    assert server_capacity(4, 3, False)[0] == 32
    assert server_capacity(4, 3, True)[0] == 4096
    assert server_capacity(1, 5, False)[0] == server_capacity(1, 5, True)[0] == 32


def test_capacity_ordering():
    for q in range(1, 9):
        for n in range(1, 11):
            iso, ent = server_capacity(q, n, False)[0], server_capacity(q, n, True)[0]
            assert ent >= iso
            # q = 1 is the general equality case; q = 2, n = 1 coincides too (2 * 2 == 2**2)
            assert (ent == iso) == (q == 1 or (q, n) == (2, 1))


def _custom(cpus, qpus, links, qlinks=()):
    return Architecture(ArchKind.CUSTOM, [CpuNode(c, 1e9) for c in cpus], [QpuNode(q, 2) for q in qpus],
                        list(links), list(qlinks))


def test_quantum_link_to_cpu_is_violation():
    a = _custom(["c0"], ["q0"], [ClassicalLink("c0", "q0", 1, 1e9)], [QuantumLink("c0", "q0", 100, 1.0, 1000)])
    v = validate(a)
    assert len(v) == 1 and "non-QPU" in v[0]


def test_disconnected_cpu_is_violation():
    a = _custom(["c0", "c1"], ["q0"], [ClassicalLink("c0", "q0", 1, 1e9)])
    v = validate(a)
    assert len(v) == 1 and "c1" in v[0]


def test_missing_switch_and_bad_pairing():
    a = build_architecture("client_server", 2, 1)
    a.switch = None
    assert any("switch" in v for v in validate(a))
    d = build_architecture("dedicated", 2, 2)
    d.pairing = {"cpu0": "qpu0", "cpu1": "qpu0"}
    assert any("bijection" in v for v in validate(d))
    d2 = build_architecture("dedicated", 2, 2)
    d2.quantum_links = [QuantumLink("qpu0", "qpu1", 10, 1.0, 100)]
    assert any("quantum links" in v for v in validate(d2))


def test_link_parameter_checks():
    with pytest.raises(ConfigurationError):
        ClassicalLink("a", "b", -1, 1e9)
    with pytest.raises(ConfigurationError):
        ClassicalLink("a", "b", 1, 0)
    with pytest.raises(ConfigurationError):
        QuantumLink("a", "b", 0, 0.5, 100)
    with pytest.raises(ConfigurationError):
        CpuNode("c", 0)
    with pytest.raises(ConfigurationError):
        QpuNode("q", 0)
