"""CPU-vs-QPU offload decisions, entry-switch routing, and input aggregation."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Sequence

from .comm import message_delay
from .qram import DecodedProgram, decode
from .sim_core import ConfigurationError
from .topology import ArchKind, Architecture, RoutingPolicy
from .workload import Job


class SchedulingError(ValueError):
    pass


class OffloadPolicy(str, Enum):
    COST_THRESHOLD = "cost_threshold"
    ALWAYS_QPU = "always_qpu"
    ALWAYS_CLASSICAL = "always_classical"


class Choice(str, Enum):
    CLASSICAL = "run_classical"
    QPU = "run_on_qpu"


@dataclass(frozen=True)
class MessageSizes:
    header_bytes: int = 64
    bytes_per_instruction: int = 8

    def submit(self, job: Job) -> int:
        return self.header_bytes + self.bytes_per_instruction * len(job.program.instructions)

    def result(self, job: Job) -> int:
        bits = len(job.program.measured)
        return max(1, job.program.resolved_shots() * math.ceil(bits / 8))


@dataclass(frozen=True)
class RemoteEstimate:
    qpu: str
    submit: int
    switch: int
    controller: int
    queue_wait: int
    quantum: int
    result: int

    @property
    def total(self) -> int:
        return self.submit + self.switch + self.controller + self.queue_wait + self.quantum + self.result


@dataclass(frozen=True)
class OffloadDecision:
    choice: Choice
    qpu: str | None
    predicted_remote_time: int | None
    predicted_classical_time: int
    warning: str | None = None
    estimate: RemoteEstimate | None = None


def path_delay(links, size: int) -> int:
    return sum(message_delay(ln, size) for ln in links)


def estimate_remote(job: Job, arch: Architecture, qpu_id: str, sizes: MessageSizes,
                    queue_wait: int = 0, decoded: DecodedProgram | None = None) -> RemoteEstimate:
    """Queueing-aware prediction of a QPU round trip for ``job``."""
    qpu = arch.qpu(qpu_id)
    dec = decoded or decode(job.program, qpu.isa)
    path = arch.submit_path(job.origin, qpu_id)
    switch = arch.switch.service_time if (arch.switch is not None and len(path) == 2) else 0
    return RemoteEstimate(
        qpu=qpu_id,
        submit=path_delay(path, sizes.submit(job)),
        switch=switch,
        controller=qpu.controller_latency,
        queue_wait=int(queue_wait),
        quantum=job.program.resolved_shots() * dec.shot_duration,
        result=path_delay(reversed(path), sizes.result(job)),
    )


def eligible_qpus(job: Job, arch: Architecture) -> list[str]:
    out = []
    for qid in arch.reachable_qpus(job.origin):
        q = arch.qpu(qid)
        try:
            dec = decode(job.program, q.isa)
        except ValueError:
            continue
        if dec.required_qubits <= q.register_size:
            out.append(qid)
    return out


def decide_offload(job: Job, arch: Architecture, *, sizes: MessageSizes | None = None,
                   queue_wait: Callable[[str], int] | None = None,
                   policy: OffloadPolicy | str = OffloadPolicy.COST_THRESHOLD) -> OffloadDecision:
    """Offload when the predicted round trip beats the classical runtime.

    Ties go to the CPU. With no reachable QPU the job is forced to run
    classically and the decision carries a warning.
    """
    policy = OffloadPolicy(policy)
    sizes = sizes or MessageSizes()
    wait = queue_wait or (lambda q: 0)
    if policy is OffloadPolicy.ALWAYS_CLASSICAL:
        return OffloadDecision(Choice.CLASSICAL, None, None, job.t_classical)
    candidates = eligible_qpus(job, arch)
    if not candidates:
        return OffloadDecision(Choice.CLASSICAL, None, None, job.t_classical, warning="no reachable QPU")
    ests = [estimate_remote(job, arch, q, sizes, wait(q)) for q in candidates]
    best = min(ests, key=lambda e: (e.total, arch.qpu_index(e.qpu)))
    if policy is OffloadPolicy.ALWAYS_QPU or best.total < job.t_classical:
        return OffloadDecision(Choice.QPU, best.qpu, best.total, job.t_classical, estimate=best)
    return OffloadDecision(Choice.CLASSICAL, None, best.total, job.t_classical, estimate=best)


def crossover_latency(job: Job, arch: Architecture, qpu_id: str, sizes: MessageSizes | None = None) -> float:
    """Per-hop link latency at which the prediction equals t_classical.

    Assumes every hop of the round trip carries the swept latency; the
    offload flips to classical for latencies at or above this value.
    """
    sizes = sizes or MessageSizes()
    est = estimate_remote(job, arch, qpu_id, sizes)
    hops = 2 * len(arch.submit_path(job.origin, qpu_id))
    latency_part = sum(ln.latency for ln in arch.submit_path(job.origin, qpu_id)) * 2
    fixed = est.total - latency_part
    return (job.t_classical - fixed) / hops


def partners_for(arch: Architecture, primary: str, count: int) -> list[str]:
    """Partner QPUs for a distributed program: quantum neighbours in index order after the primary."""
    if count == 0:
        return []
    n = len(arch.qpus)
    start = arch.qpu_index(primary)
    nbrs = set(arch.quantum_neighbors(primary))
    ordered = [arch.qpus[(start + k) % n].id for k in range(1, n)]
    chosen = [q for q in ordered if q in nbrs][:count]
    if len(chosen) < count:
        raise SchedulingError(
            f"program needs {count} entangled partner QPU(s) of {primary}; {len(chosen)} linked")
    return chosen


def check_routable(job: Job, arch: Architecture) -> None:
    if job.program.is_distributed:
        if not arch.quantum_links:
            raise SchedulingError(f"job {job.id}: distributed program on {arch.kind.value} "
                                  "architecture without quantum links")
    if job.fragments and arch.kind not in (ArchKind.SHARED_QPU, ArchKind.CLIENT_SERVER, ArchKind.CUSTOM):
        raise SchedulingError(f"job {job.id}: input aggregation needs a shared or client-server QPU")


@dataclass
class SwitchState:
    """Single FIFO server in front of the QPUs of a client-server system."""

    service_time: int
    policy: RoutingPolicy = RoutingPolicy.ROUND_ROBIN
    queue: deque = field(default_factory=deque)
    busy: bool = False
    served: int = 0
    first_arrival: int | None = None
    last_departure: int | None = None
    _rr: int = 0

    def choose(self, qpus: Sequence[str], load: Mapping[str, int] | None = None) -> str:
        if not qpus:
            raise SchedulingError("switch has no eligible QPU")
        if self.policy is RoutingPolicy.ROUND_ROBIN:
            q = qpus[self._rr % len(qpus)]
            self._rr += 1
            return q
        load = load or {}
        return min(qpus, key=lambda q: (load.get(q, 0), list(qpus).index(q)))

    @property
    def backlog(self) -> int:
        return len(self.queue) + (1 if self.busy else 0)

    def throughput(self) -> float | None:
        if not self.served or self.first_arrival is None or self.last_departure is None:
            return None
        span = self.last_departure - self.first_arrival
        return self.served / (span / 1e9) if span > 0 else None


def route(job: Job, arch: Architecture, switch: SwitchState | None = None,
          load: Mapping[str, int] | None = None, primary: str | None = None) -> tuple[str, list[str]]:
    """Pick the QPU that runs ``job`` and any entangled partners it needs."""
    check_routable(job, arch)
    kind = arch.kind
    if kind in (ArchKind.DEDICATED, ArchKind.INTERCONNECTED):
        qpu = arch.pairing[job.origin]
    elif kind is ArchKind.SHARED_QPU:
        qpu = arch.qpus[0].id
    elif primary is not None:
        qpu = primary
    elif switch is not None:
        qpu = switch.choose(eligible_qpus(job, arch), load)
    else:
        cands = eligible_qpus(job, arch)
        if not cands:
            raise SchedulingError(f"job {job.id}: no eligible QPU")
        qpu = min(cands, key=lambda q: ((load or {}).get(q, 0), arch.qpu_index(q)))
    return qpu, partners_for(arch, qpu, job.program.partners)


@dataclass(frozen=True)
class Aggregation:
    start: int | None
    failed_at: int | None


def aggregate_inputs(arrivals: Sequence[int | None], sent_at: int, timeout: int) -> Aggregation:
    """Start once the last fragment lands; fail at ``sent_at + timeout`` otherwise."""
    if timeout < 0:
        raise ConfigurationError("fragment timeout must be >= 0")
    if not arrivals:
        raise ValueError("no fragments")
    deadline = sent_at + timeout
    if any(a is None or a > deadline for a in arrivals):
        return Aggregation(None, deadline)
    return Aggregation(max(arrivals), None)
