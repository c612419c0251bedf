"""Scenario files: parsing, cross-reference validation, and object construction."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .dispatch import MessageSizes, OffloadPolicy
from .entmgr import PolicyMode, RefreshPolicy, Starvation
from .faults import FaultModel
from .qram import TRANSFER_OPCODE, IsaDefinition, decode, isa_from_dict, load_isa
from .sim_core import ConfigurationError
from .topology import (
    ArchKind,
    Architecture,
    ClassicalLink,
    CpuNode,
    EntrySwitch,
    QpuNode,
    QuantumLink,
    RoutingPolicy,
    build_architecture,
    validate,
)
from .workload import Job, TraceError, WorkloadSpec, load_trace


class ScenarioError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass
class CommConfig:
    mode: str = "teleport"
    correction_ns: int = 100
    swap_ns: int = 100
    on_loss: str = "fail_job"
    max_shot_restarts: int = 10

    def __post_init__(self):
        if self.mode not in ("teleport", "direct"):
            raise ConfigurationError(f"comm.mode must be teleport or direct, got {self.mode!r}")
        if self.on_loss not in ("fail_job", "restart_shot"):
            raise ConfigurationError(f"comm.on_loss must be fail_job or restart_shot, got {self.on_loss!r}")
        if self.correction_ns < 0 or self.swap_ns < 0:
            raise ConfigurationError("comm gate durations must be >= 0")


@dataclass
class DispatchConfig:
    offload_policy: OffloadPolicy = OffloadPolicy.COST_THRESHOLD
    queue_estimate: str = "queue_length"
    fragment_timeout_ns: int = 1_000_000
    sizes: MessageSizes = field(default_factory=MessageSizes)

    def __post_init__(self):
        if self.queue_estimate not in ("queue_length", "oracle"):
            raise ConfigurationError(f"dispatch.queue_estimate must be queue_length or oracle")
        if self.fragment_timeout_ns < 0:
            raise ConfigurationError("dispatch.fragment_timeout_ns must be >= 0")


@dataclass
class EntanglementConfig:
    policy: RefreshPolicy = field(default_factory=RefreshPolicy)
    ec_duty_cycle: float = 0.0
    on_starvation: Starvation = Starvation.RETRY_UNTIL_DEADLINE
    pair_timeout_ns: int | None = None


@dataclass
class Scenario:
    name: str
    seed: int
    horizon: int
    architecture: Architecture
    isa: IsaDefinition
    jobs: list[Job] | None
    workload: WorkloadSpec | None
    entanglement: EntanglementConfig
    comm: CommConfig
    faults: FaultModel
    dispatch: DispatchConfig
    backend: str = "timing"
    raw: dict = field(default_factory=dict, repr=False)
    base_dir: Path = field(default_factory=Path.cwd, repr=False)


def _link(d: Mapping, default_latency: int, default_bw: float) -> tuple[int, float]:
    d = d or {}
    return int(d.get("latency_ns", default_latency)), float(d.get("bandwidth", default_bw))


def _resolve_isa(ref: Any, base: Path) -> IsaDefinition:
    if isinstance(ref, str):
        return load_isa(base / ref)
    if isinstance(ref, Mapping) and "file" in ref:
        return load_isa(base / ref["file"])
    if isinstance(ref, Mapping):
        return isa_from_dict(ref)
    raise ConfigurationError("isa must be a file name, {'file': ...}, or an inline definition")


def build_arch(a: Mapping, isa: IsaDefinition, qpu_isas: Mapping[str, IsaDefinition]) -> Architecture:
    kind = ArchKind(a.get("kind", "dedicated"))
    if kind is ArchKind.CUSTOM:
        return _custom_arch(a, isa, qpu_isas)
    lat, bw = _link(a.get("link"), 1000, 1e9)
    slat, sbw = _link(a.get("server_link"), 0, 1e10)
    clat, cbw = _link(a.get("cpu_link"), 500, 1e10)
    sw = a.get("switch", {}) or {}
    arch = build_architecture(
        kind,
        int(a.get("cpus", 1)),
        int(a.get("qpus", 1)),
        qubits=int(a.get("qubits", 4)),
        isa=isa,
        instruction_rate=float(a.get("instruction_rate", 1e9)),
        controller_latency=int(a.get("controller_latency_ns", 0)),
        link_latency=lat,
        link_bandwidth=bw,
        server_latency=slat,
        server_bandwidth=sbw,
        cpu_latency=clat,
        cpu_bandwidth=cbw,
        quantum=a.get("quantum_link"),
        server_quantum_links=bool(a.get("server_quantum_links", False)),
        switch_service_time=int(sw.get("service_time_ns", 0)),
        switch_policy=sw.get("policy", "round_robin"),
    )
    if qpu_isas:
        arch.qpus = [QpuNode(q.id, q.register_size, qpu_isas.get(q.id, isa), q.controller_latency) for q in arch.qpus]
    return arch


def _custom_arch(a: Mapping, isa: IsaDefinition, qpu_isas: Mapping[str, IsaDefinition]) -> Architecture:
    cpus = [CpuNode(c["id"], float(c.get("instruction_rate", 1e9))) for c in a.get("cpus", [])]
    qpus = [QpuNode(q["id"], int(q.get("qubits", 4)), qpu_isas.get(q["id"], isa), int(q.get("controller_latency_ns", 0)))
            for q in a.get("qpus", [])]
    links = [ClassicalLink(ln["a"], ln["b"], int(ln.get("latency_ns", 0)), float(ln.get("bandwidth", 1e9)))
             for ln in a.get("classical_links", [])]
    qlinks = [QuantumLink(ln["a"], ln["b"], int(ln.get("attempt_period_ns", 1000)), float(ln.get("p_gen", 1.0)),
                          int(ln.get("pair_lifetime_ns", 1_000_000)), int(ln.get("side_channel_latency_ns", 0)),
                          float(ln.get("side_channel_bandwidth", 1e9)))
              for ln in a.get("quantum_links", [])]
    sw = a.get("switch")
    switch = EntrySwitch(int(sw.get("service_time_ns", 0)), RoutingPolicy(sw.get("policy", "round_robin"))) if sw else None
    return Architecture(ArchKind.CUSTOM, cpus, qpus, links, qlinks, switch, dict(a.get("pairing", {})))


def parse_scenario(data: Mapping, base_dir: str | Path = ".") -> Scenario:
    """Build a Scenario; raises ConfigurationError/ValueError on bad parameters."""
    base = Path(base_dir)
    if "isa" not in data:
        raise ConfigurationError("scenario has no 'isa' section")
    isa = _resolve_isa(data["isa"], base)
    qpu_isas = {k: _resolve_isa(v, base) for k, v in (data.get("qpu_isas") or {}).items()}
    if "architecture" not in data:
        raise ConfigurationError("scenario has no 'architecture' section")
    arch = build_arch(data["architecture"], isa, qpu_isas)

    w = data.get("workload", {}) or {}
    jobs = None
    spec = None
    if "trace" in w:
        jobs = load_trace(base / w["trace"])
    else:
        w = dict(w)
        w.setdefault("origins", [c.id for c in arch.cpus])
        spec = WorkloadSpec.from_dict(w)
        if spec.jobs is not None:
            jobs = spec.jobs

    e = data.get("entanglement", {}) or {}
    ent = EntanglementConfig(
        policy=RefreshPolicy(PolicyMode(e.get("policy", "on_demand")), int(e.get("target_pool_size", 1)),
                             int(e.get("lookahead_ns", 0))),
        ec_duty_cycle=float(e.get("ec_duty_cycle", 0.0)),
        on_starvation=Starvation(e.get("on_starvation", "retry_until_deadline")),
        pair_timeout_ns=int(e["pair_timeout_ns"]) if e.get("pair_timeout_ns") is not None else None,
    )
    if not 0.0 <= ent.ec_duty_cycle <= 1.0:
        raise ConfigurationError("entanglement.ec_duty_cycle outside [0, 1]")
    c = data.get("comm", {}) or {}
    comm = CommConfig(c.get("mode", "teleport"), int(c.get("correction_ns", 100)), int(c.get("swap_ns", 100)),
                      c.get("on_loss", "fail_job"), int(c.get("max_shot_restarts", 10)))
    f = data.get("faults", {}) or {}
    faults = FaultModel(
        gate_error_prob=f.get("gate_error_prob"),
        qpu_failure_rate=float(f.get("qpu_failure_rate", 0.0)),
        p_cascade=float(f.get("p_cascade", 0.0)),
        repair_time=int(f.get("repair_time_ns", 0)),
    )
    d = data.get("dispatch", {}) or {}
    disp = DispatchConfig(
        OffloadPolicy(d.get("offload_policy", "cost_threshold")),
        d.get("queue_estimate", "queue_length"),
        int(d.get("fragment_timeout_ns", 1_000_000)),
        MessageSizes(int(d.get("submit_header_bytes", 64)), int(d.get("bytes_per_instruction", 8))),
    )
    backend = (data.get("execution", {}) or {}).get("backend", "timing")
    if backend not in ("timing", "statevector"):
        raise ConfigurationError(f"execution.backend must be timing or statevector, got {backend!r}")
    horizon = int(data.get("horizon_ns", 0))
    if horizon < 0:
        raise ConfigurationError("horizon_ns must be >= 0")
    return Scenario(
        name=str(data.get("name", "scenario")),
        seed=int(data.get("seed", 0)),
        horizon=horizon,
        architecture=arch,
        isa=isa,
        jobs=jobs,
        workload=spec,
        entanglement=ent,
        comm=comm,
        faults=faults,
        dispatch=disp,
        backend=backend,
        raw=copy.deepcopy(dict(data)),
        base_dir=base,
    )


def read_json(path: str | Path) -> dict:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"{path.name}: line {exc.lineno} column {exc.colno}: {exc.msg}"]) from exc


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    data = read_json(path)
    problems = check(data, path.parent)
    if problems:
        raise ScenarioError(problems)
    return parse_scenario(data, path.parent)


def check(data: Mapping, base_dir: str | Path = ".") -> list[str]:
    """All violations found in a scenario document (empty when it is runnable)."""
    try:
        sc = parse_scenario(data, base_dir)
    except TraceError as exc:
        return [f"workload trace: {exc}"]
    except (ConfigurationError, ValueError, KeyError, TypeError, OSError) as exc:
        return [f"{type(exc).__name__}: {exc}"]
    return cross_check(sc)


def cross_check(sc: Scenario) -> list[str]:
    arch = sc.architecture
    out = [f"architecture: {v}" for v in validate(arch)]
    cpu_ids = {c.id for c in arch.cpus}
    isas = {q.id: q.isa for q in arch.qpus}
    if sc.backend == "statevector":
        for q in arch.qpus:
            if q.register_size > 16:
                out.append(f"execution: state-vector backend limited to 16 qubits ({q.id} has {q.register_size})")
    if sc.workload is not None and sc.jobs is None:
        for op in sc.workload.opcodes:
            for qid, isa in isas.items():
                if op not in isa.instructions:
                    out.append(f"workload: opcode {op!r} missing from ISA {isa.name} of {qid}")
        for o in sc.workload.origins:
            if o not in cpu_ids:
                out.append(f"workload: origin {o!r} is not a CPU of the architecture")
        if sc.workload.distributed_fraction > 0 and not arch.quantum_links:
            out.append(f"workload: distributed (entangling) programs on {arch.kind.value} architecture "
                       "without quantum links")
        if sc.workload.fragment_fraction > 0 and arch.kind in (ArchKind.DEDICATED, ArchKind.INTERCONNECTED):
            out.append("workload: input aggregation needs a shared or client-server QPU")
    for job in sc.jobs or []:
        if job.origin not in cpu_ids:
            out.append(f"job {job.id}: origin {job.origin!r} is not a CPU of the architecture")
        for fr in job.fragments:
            if fr.cpu not in cpu_ids:
                out.append(f"job {job.id}: fragment origin {fr.cpu!r} is not a CPU")
        if job.fragments and arch.kind in (ArchKind.DEDICATED, ArchKind.INTERCONNECTED):
            out.append(f"job {job.id}: input aggregation needs a shared or client-server QPU")
        for ins in job.program.instructions:
            if ins.opcode == TRANSFER_OPCODE:
                continue
            for qid, isa in isas.items():
                if ins.opcode not in isa.instructions:
                    out.append(f"job {job.id}: opcode {ins.opcode!r} missing from ISA {isa.name} of {qid}")
                    break
        if job.program.is_distributed and not arch.quantum_links:
            out.append(f"job {job.id}: distributed (entangling) program on {arch.kind.value} "
                       "architecture without quantum links")
        if job.program.confidence is not None and job.program.sampling != "estimate" \
                and (job.program.p_success or 0) <= 0:
            out.append(f"job {job.id}: unsatisfiable confidence (p_success = 0)")
    # de-duplicate, keep order
    seen = set()
    return [v for v in out if not (v in seen or seen.add(v))]


def get_path(data: Mapping, dotted: str) -> Any:
    cur: Any = data
    for part in dotted.split("."):
        if isinstance(cur, list):
            cur = cur[int(part)]
        elif isinstance(cur, Mapping) and part in cur:
            cur = cur[part]
        else:
            raise KeyError(dotted)
    return cur


def set_path(data: dict, dotted: str, value: Any) -> dict:
    out = copy.deepcopy(data)
    parts = dotted.split(".")
    cur: Any = out
    for part in parts[:-1]:
        cur = cur[int(part)] if isinstance(cur, list) else cur[part]
    last = parts[-1]
    if isinstance(cur, list):
        cur[int(last)] = value
    else:
        if last not in cur:
            raise KeyError(dotted)
        cur[last] = value
    return out
