"""Node/link graphs for the CPU-QPU integration patterns and server capacity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations

from .qram import IsaDefinition
from .sim_core import ConfigurationError


class ArchKind(str, Enum):
    CLIENT_SERVER = "client_server"
    SHARED_QPU = "shared_qpu"
    DEDICATED = "dedicated"
    INTERCONNECTED = "interconnected"
    CUSTOM = "custom"


class RoutingPolicy(str, Enum):
    ROUND_ROBIN = "round_robin"
    LEAST_LOADED = "least_loaded"


SWITCH_ID = "switch"


@dataclass(frozen=True)
class CpuNode:
    id: str
    instruction_rate: float = 1e9  # classical ops per second

    def __post_init__(self):
        if not self.instruction_rate > 0:
            raise ConfigurationError(f"{self.id}: instruction_rate must be > 0")

    def ops_time(self, ops: float) -> int:
        if ops <= 0:
            return 0
        return int(math.ceil(ops * 1e9 / self.instruction_rate - 1e-9))


@dataclass(frozen=True)
class QpuNode:
    id: str
    register_size: int
    isa: IsaDefinition | None = field(default=None, compare=False, repr=False)
    controller_latency: int = 0

    def __post_init__(self):
        if self.register_size < 1:
            raise ConfigurationError(f"{self.id}: register_size must be >= 1")
        if self.controller_latency < 0:
            raise ConfigurationError(f"{self.id}: controller_latency must be >= 0")


@dataclass(frozen=True)
class ClassicalLink:
    a: str
    b: str
    latency: int
    bandwidth: float  # bytes per second

    def __post_init__(self):
        if self.latency < 0:
            raise ConfigurationError(f"link {self.a}-{self.b}: latency must be >= 0")
        if not self.bandwidth > 0:
            raise ConfigurationError(f"link {self.a}-{self.b}: bandwidth must be > 0")

    @property
    def endpoints(self) -> tuple[str, str]:
        return (self.a, self.b)

    def other(self, node: str) -> str:
        return self.b if node == self.a else self.a


@dataclass(frozen=True)
class QuantumLink:
    a: str
    b: str
    attempt_period: int
    p_gen: float
    pair_lifetime: int
    side_channel_latency: int = 0
    side_channel_bandwidth: float = 1e9

    def __post_init__(self):
        if self.attempt_period <= 0:
            raise ConfigurationError(f"quantum link {self.a}-{self.b}: attempt_period must be > 0")
        if not 0.0 <= self.p_gen <= 1.0:
            raise ConfigurationError(f"quantum link {self.a}-{self.b}: p_gen outside [0, 1]")
        if self.pair_lifetime <= 0:
            raise ConfigurationError(f"quantum link {self.a}-{self.b}: pair_lifetime must be > 0")

    @property
    def key(self) -> tuple[str, str]:
        return link_key(self.a, self.b)

    def side_channel(self) -> ClassicalLink:
        """The classical channel that accompanies the quantum one."""
        return ClassicalLink(self.a, self.b, self.side_channel_latency, self.side_channel_bandwidth)


def link_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class EntrySwitch:
    service_time: int
    policy: RoutingPolicy = RoutingPolicy.ROUND_ROBIN

    def __post_init__(self):
        if self.service_time < 0:
            raise ConfigurationError("switch service_time must be >= 0")


@dataclass
class Architecture:
    kind: ArchKind
    cpus: list[CpuNode]
    qpus: list[QpuNode]
    classical_links: list[ClassicalLink]
    quantum_links: list[QuantumLink] = field(default_factory=list)
    switch: EntrySwitch | None = None
    pairing: dict[str, str] = field(default_factory=dict)  # cpu id -> qpu id

    def node_ids(self) -> list[str]:
        ids = [c.id for c in self.cpus] + [q.id for q in self.qpus]
        if self.switch is not None:
            ids.append(SWITCH_ID)
        return ids

    def cpu(self, cid: str) -> CpuNode:
        for c in self.cpus:
            if c.id == cid:
                return c
        raise KeyError(cid)

    def qpu(self, qid: str) -> QpuNode:
        for q in self.qpus:
            if q.id == qid:
                return q
        raise KeyError(qid)

    def classical_link(self, a: str, b: str) -> ClassicalLink | None:
        for ln in self.classical_links:
            if {ln.a, ln.b} == {a, b}:
                return ln
        return None

    def quantum_link(self, a: str, b: str) -> QuantumLink | None:
        k = link_key(a, b)
        for ln in self.quantum_links:
            if ln.key == k:
                return ln
        return None

    def quantum_neighbors(self, qid: str) -> list[str]:
        out = []
        for ln in self.quantum_links:
            if qid in (ln.a, ln.b):
                out.append(ln.b if ln.a == qid else ln.a)
        return sorted(out, key=self.qpu_index)

    def qpu_index(self, qid: str) -> int:
        return [q.id for q in self.qpus].index(qid)

    def submit_path(self, cpu_id: str, qpu_id: str) -> list[ClassicalLink]:
        """Classical links a submission crosses from a CPU to a QPU."""
        if self.kind is ArchKind.CLIENT_SERVER or (self.switch is not None and
                                                   self.classical_link(cpu_id, qpu_id) is None):
            first = self.classical_link(cpu_id, SWITCH_ID)
            second = self.classical_link(SWITCH_ID, qpu_id)
            if first is None or second is None:
                raise ConfigurationError(f"no route {cpu_id} -> {SWITCH_ID} -> {qpu_id}")
            return [first, second]
        ln = self.classical_link(cpu_id, qpu_id)
        if ln is None:
            raise ConfigurationError(f"no classical link {cpu_id} -> {qpu_id}")
        return [ln]

    def reachable_qpus(self, cpu_id: str) -> list[str]:
        if self.kind is ArchKind.DEDICATED or self.kind is ArchKind.INTERCONNECTED:
            q = self.pairing.get(cpu_id)
            return [q] if q else []
        out = []
        for q in self.qpus:
            try:
                self.submit_path(cpu_id, q.id)
            except ConfigurationError:
                continue
            out.append(q.id)
        return out

    @property
    def max_register(self) -> int:
        return max((q.register_size for q in self.qpus), default=0)


def build_architecture(
    kind: ArchKind | str,
    cpus: int,
    qpus: int,
    *,
    qubits: int = 4,
    isa: IsaDefinition | None = None,
    instruction_rate: float = 1e9,
    controller_latency: int = 0,
    link_latency: int = 1000,
    link_bandwidth: float = 1e9,
    server_latency: int = 0,
    server_bandwidth: float = 1e10,
    cpu_latency: int = 500,
    cpu_bandwidth: float = 1e10,
    quantum: dict | None = None,
    server_quantum_links: bool = False,
    switch_service_time: int = 0,
    switch_policy: RoutingPolicy | str = RoutingPolicy.ROUND_ROBIN,
) -> Architecture:
    """Canonical graph for one integration pattern.

    ``link_latency``/``link_bandwidth`` describe the CPU-to-QPU path (for the
    client-server pattern, the client-to-switch network); ``server_*``
    the switch-to-QPU links inside the server; ``cpu_*`` the classical
    interconnect among CPU nodes in the accelerator patterns.
    """
    kind = ArchKind(kind)
    if cpus < 1 or qpus < 1:
        raise ConfigurationError("cpu and qpu counts must be >= 1")
    cnodes = [CpuNode(f"cpu{i}", instruction_rate) for i in range(cpus)]
    qnodes = [QpuNode(f"qpu{j}", qubits, isa, controller_latency) for j in range(qpus)]
    q = dict(quantum or {})
    qkw = dict(
        attempt_period=int(q.get("attempt_period_ns", 1000)),
        p_gen=float(q.get("p_gen", 1.0)),
        pair_lifetime=int(q.get("pair_lifetime_ns", 1_000_000)),
        side_channel_latency=int(q.get("side_channel_latency_ns", 0)),
        side_channel_bandwidth=float(q.get("side_channel_bandwidth", 1e9)),
    )

    def mesh() -> list[QuantumLink]:
        return [QuantumLink(x.id, y.id, **qkw) for x, y in combinations(qnodes, 2)]

    links: list[ClassicalLink] = []
    qlinks: list[QuantumLink] = []
    switch = None
    pairing: dict[str, str] = {}
    if kind is ArchKind.CLIENT_SERVER:
        switch = EntrySwitch(int(switch_service_time), RoutingPolicy(switch_policy))
        links += [ClassicalLink(c.id, SWITCH_ID, link_latency, link_bandwidth) for c in cnodes]
        links += [ClassicalLink(SWITCH_ID, x.id, server_latency, server_bandwidth) for x in qnodes]
        if server_quantum_links:
            qlinks = mesh()
    elif kind is ArchKind.SHARED_QPU:
        if qpus != 1:
            raise ConfigurationError("shared_qpu pattern has exactly one QPU")
        links += [ClassicalLink(c.id, qnodes[0].id, link_latency, link_bandwidth) for c in cnodes]
    elif kind in (ArchKind.DEDICATED, ArchKind.INTERCONNECTED):
        if cpus != qpus:
            raise ConfigurationError(f"{kind.value} pattern needs one QPU per CPU (got {cpus} CPUs, {qpus} QPUs)")
        for c, x in zip(cnodes, qnodes):
            links.append(ClassicalLink(c.id, x.id, link_latency, link_bandwidth))
            pairing[c.id] = x.id
        links += _cpu_interconnect(cnodes, cpu_latency, cpu_bandwidth)
        if kind is ArchKind.INTERCONNECTED:
            qlinks = mesh()
    else:
        raise ConfigurationError("custom architectures are assembled directly, not built")
    return Architecture(kind, cnodes, qnodes, links, qlinks, switch, pairing)


def _cpu_interconnect(cnodes: list[CpuNode], latency: int, bandwidth: float) -> list[ClassicalLink]:
    """Ring over the CPU nodes (a single link for two, none for one)."""
    n = len(cnodes)
    if n == 1:
        return []
    if n == 2:
        return [ClassicalLink(cnodes[0].id, cnodes[1].id, latency, bandwidth)]
    return [ClassicalLink(cnodes[i].id, cnodes[(i + 1) % n].id, latency, bandwidth) for i in range(n)]


def server_capacity(q: int, n: int, interconnected: bool) -> tuple[int, float]:
    """Hilbert-space dimension of a q-QPU server with n-qubit registers.

    Isolated QPUs add their spaces (q * 2**n); a quantum interconnect
    multiplies them (2**(n*q)). Returned as (exact, log2).
    """
    if q < 1 or n < 1:
        raise ValueError("q and n must be >= 1")
    if interconnected:
        return 1 << (n * q), float(n * q)
    return q << n, n + math.log2(q)


def validate(arch: Architecture) -> list[str]:
    violations: list[str] = []
    cpu_ids = {c.id for c in arch.cpus}
    qpu_ids = {x.id for x in arch.qpus}
    ids = set(arch.node_ids())
    if len(ids) != len(arch.node_ids()):
        violations.append("duplicate node ids")
    for ln in arch.classical_links:
        for e in ln.endpoints:
            if e not in ids:
                violations.append(f"classical link {ln.a}-{ln.b} touches unknown node {e}")
    for ln in arch.quantum_links:
        for e in (ln.a, ln.b):
            if e not in qpu_ids:
                violations.append(f"quantum link {ln.a}-{ln.b} touches non-QPU node {e}")
    if arch.kind is ArchKind.CLIENT_SERVER and arch.switch is None:
        violations.append("client_server architecture has no entry switch")
    if arch.kind is ArchKind.DEDICATED and arch.quantum_links:
        violations.append("dedicated architecture must not have quantum links")
    if arch.kind in (ArchKind.DEDICATED, ArchKind.INTERCONNECTED):
        if len(arch.cpus) != len(arch.qpus):
            violations.append("accelerator pattern needs |cpus| == |qpus|")
        targets = list(arch.pairing.values())
        if set(arch.pairing) != cpu_ids or len(set(targets)) != len(targets) or set(targets) != qpu_ids:
            violations.append("CPU-QPU pairing is not a bijection")
    # connectivity over classical and quantum links
    adj: dict[str, set[str]] = {i: set() for i in ids}
    for ln in arch.classical_links + [ClassicalLink(x.a, x.b, 0, 1.0) for x in arch.quantum_links]:
        if ln.a in adj and ln.b in adj:
            adj[ln.a].add(ln.b)
            adj[ln.b].add(ln.a)
    components: list[set[str]] = []
    unseen = set(ids)
    while unseen:
        start = min(unseen)
        comp = {start}
        stack = [start]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in comp:
                    comp.add(nb)
                    stack.append(nb)
        components.append(comp)
        unseen -= comp
    if len(components) > 1:
        main = max(components, key=len)
        for node in sorted(ids - main):
            violations.append(f"node {node} is disconnected")
    return violations
