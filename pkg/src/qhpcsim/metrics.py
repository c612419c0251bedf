"""Streaming metric accumulators, the run report, and JSON/CSV export."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from .qram import ExecutionRecord, IsaDefinition

SCHEMA = "qhpcsim.report/1"
RATIO_DIGITS = 6


class Accumulator:
    """count / sum / min / max / sum of squares, with optional weights."""

    __slots__ = ("count", "total", "lo", "hi", "sumsq")

    def __init__(self):
        self.count = 0
        self.total = 0.0
        self.lo: float | None = None
        self.hi: float | None = None
        self.sumsq = 0.0

    def add(self, value: float, weight: int = 1) -> None:
        if weight <= 0:
            return
        self.count += weight
        self.total += value * weight
        self.sumsq += value * value * weight
        self.lo = value if self.lo is None or value < self.lo else self.lo
        self.hi = value if self.hi is None or value > self.hi else self.hi

    @property
    def mean(self) -> float | None:
        return self.total / self.count if self.count else None

    @property
    def std(self) -> float | None:
        if not self.count:
            return None
        var = self.sumsq / self.count - (self.total / self.count) ** 2
        return math.sqrt(max(0.0, var))


@dataclass
class GateTiming:
    best: int | None
    worst: int | None
    spread: int | None
    weighted_std: float | None


def gate_timing(durations: Mapping[str, int], counts: Mapping[str, int] | None = None) -> GateTiming:
    """Best/worst gate duration and spread; ``counts`` adds a frequency-weighted spread."""
    acc = Accumulator()
    for name, d in durations.items():
        acc.add(d, (counts or {}).get(name, 1) if counts is not None else 1)
    if acc.count == 0:
        return GateTiming(None, None, None, None)
    lo, hi = int(acc.lo), int(acc.hi)
    return GateTiming(lo, hi, hi - lo, acc.std)


def ft_overhead(record: ExecutionRecord) -> tuple[float, float] | None:
    """(primitive gates per logical instruction, (logical + ancilla) / logical qubits)."""
    if record.logical_instruction_count < 1 or record.program_qubits < 1:
        return None
    gate_ratio = record.primitive_gate_count / record.logical_instruction_count
    qubit_ratio = (record.program_qubits + record.ancilla_used) / record.program_qubits
    return gate_ratio, qubit_ratio


@dataclass
class QpuMetrics:
    isa: IsaDefinition | None = None
    gate_durations: dict[str, int] = field(default_factory=dict)
    gate_counts: Counter = field(default_factory=Counter)
    logical_instructions: int = 0
    primitive_gates: int = 0
    program_qubits: int = 0
    ancilla_qubits: int = 0
    quantum_time: int = 0
    busy_time: int = 0
    ec_time: int = 0
    programs: int = 0
    shots: int = 0
    attempts: int = 0
    aborted: int = 0
    failures: int = 0
    downtime: int = 0
    queue_wait: Accumulator = field(default_factory=Accumulator)
    exec_time: Accumulator = field(default_factory=Accumulator)

    def record_gates(self, gates: Mapping[str, tuple[int, int]]) -> None:
        for name, (duration, count) in gates.items():
            self.gate_durations[name] = duration
            self.gate_counts[name] += count


@dataclass
class LinkMetrics:
    attempts: int = 0
    created: int = 0
    requests: int = 0
    immediate: int = 0
    expired: int = 0
    consumed: int = 0
    comm_failures: int = 0
    transfer_failures: int = 0
    gaps: Accumulator = field(default_factory=Accumulator)


@dataclass
class JobMetrics:
    arrival: int
    origin: str
    t_classical: int
    status: str = "pending"
    choice: str | None = None
    qpu: str | None = None
    completion: int | None = None
    predicted_remote: int | None = None
    shots: int | None = None
    attempts: int | None = None
    reason: str | None = None

    @property
    def latency(self) -> int | None:
        return None if self.completion is None else self.completion - self.arrival


class MetricsCollector:
    def __init__(self):
        self.qpus: dict[str, QpuMetrics] = {}
        self.links: dict[str, LinkMetrics] = {}
        self.jobs: dict[str, JobMetrics] = {}
        self.cascades: Counter = Counter()
        self.warnings: Counter = Counter()
        self.switch_served = 0
        self.switch_throughput: float | None = None
        self.capacity: dict[str, Any] = {}
        self.meta: dict[str, Any] = {}

    def qpu(self, qid: str) -> QpuMetrics:
        return self.qpus.setdefault(qid, QpuMetrics())

    def link(self, key: str) -> LinkMetrics:
        return self.links.setdefault(key, LinkMetrics())

    def job(self, jid: str) -> JobMetrics:
        return self.jobs[jid]

    def record_execution(self, qid: str, record: ExecutionRecord, durations: Mapping[str, int]) -> None:
        q = self.qpu(qid)
        q.record_gates({n: (durations[n], c) for n, c in record.gate_counts.items()})
        q.logical_instructions += record.logical_instruction_count * record.attempts
        q.primitive_gates += record.primitive_gate_count * record.attempts
        q.program_qubits += record.program_qubits
        q.ancilla_qubits += record.ancilla_used
        q.quantum_time += record.quantum_time
        q.programs += 1
        q.shots += record.shots
        q.attempts += record.attempts
        q.exec_time.add(record.quantum_time)

    # --- report -----------------------------------------------------------

    def report(self, elapsed: int) -> dict:
        elapsed = max(1, int(elapsed))
        return {
            "schema": SCHEMA,
            **({"meta": dict(self.meta)} if self.meta else {}),
            "system": self._system(),
            **({"qpus": {k: self._qpu_section(k, v, elapsed) for k, v in sorted(self.qpus.items())}}
               if self.qpus else {}),
            **({"links": {k: self._link_section(v, elapsed) for k, v in sorted(self.links.items())}}
               if self.links else {}),
            **({"jobs": {k: self._job_section(v) for k, v in _natural(self.jobs.items())}}
               if self.jobs else {}),
        }

    def _system(self) -> dict:
        done = [j for j in self.jobs.values() if j.status == "completed"]
        first = min((j.arrival for j in self.jobs.values()), default=None)
        makespan = max(j.completion for j in done) - first if done else None
        lat = Accumulator()
        for j in done:
            lat.add(j.latency)
        decided = [j for j in self.jobs.values() if j.choice is not None]
        offload = sum(1 for j in decided if j.choice == "run_on_qpu")
        status = Counter(j.status for j in self.jobs.values())
        sizes = sorted(self.cascades.elements())
        return {
            "jobs_arrived": len(self.jobs),
            "jobs_completed": status.get("completed", 0),
            "jobs_failed": status.get("failed", 0),
            "jobs_unschedulable": status.get("unschedulable", 0),
            "jobs_incomplete": len(self.jobs) - sum(status.get(s, 0) for s in ("completed", "failed", "unschedulable")),
            "makespan_ns": makespan,
            "throughput_jobs_per_s": _ratio(len(done) / (makespan / 1e9)) if makespan else None,
            "mean_latency_ns": _ratio(lat.mean),
            "max_latency_ns": _int(lat.hi),
            "offload_fraction": _ratio(offload / len(decided)) if decided else None,
            "switch_submissions": self.switch_served,
            "switch_throughput_per_s": _ratio(self.switch_throughput),
            "no_qpu_warnings": self.warnings.get("no reachable QPU", 0),
            "cascade_count": len(sizes),
            "cascade_mean_size": _ratio(sum(sizes) / len(sizes)) if sizes else None,
            "cascade_size_histogram": {str(k): v for k, v in sorted(self.cascades.items())},
            **({"capacity": dict(self.capacity)} if self.capacity else {}),
        }

    def _qpu_section(self, qid: str, q: QpuMetrics, elapsed: int) -> dict:
        timing = gate_timing(q.gate_durations, q.gate_counts)
        instr = _instruction_timing(q.isa)
        logical = q.logical_instructions
        util = min(1.0, (q.busy_time + q.ec_time) / elapsed)
        return {
            "best_gate_duration_ns": timing.best,
            "worst_gate_duration_ns": timing.worst,
            "gate_spread_ns": timing.spread,
            "gate_spread_weighted_ns": _ratio(timing.weighted_std),
            "best_instruction_duration_ns": instr.best,
            "worst_instruction_duration_ns": instr.worst,
            "instruction_spread_ns": instr.spread,
            "wall_time_per_instruction_ns": _ratio(q.quantum_time / logical) if logical else None,
            "primitive_gates_per_instruction": _ratio(q.primitive_gates / logical) if logical else None,
            "ft_gate_overhead_ratio": _ratio(q.primitive_gates / logical) if logical else None,
            "ft_qubit_overhead_ratio": _ratio((q.program_qubits + q.ancilla_qubits) / q.program_qubits)
            if q.program_qubits else None,
            "utilization": _ratio(util),
            "busy_time_ns": q.busy_time,
            "idle_ec_time_ns": q.ec_time,
            "programs_completed": q.programs,
            "programs_aborted": q.aborted,
            "shots": q.shots,
            "invalid_shots": q.attempts - q.shots,
            "failures": q.failures,
            "queue_wait_mean_ns": _ratio(q.queue_wait.mean),
            "queue_wait_max_ns": _int(q.queue_wait.hi),
            "queue_wait_count": q.queue_wait.count,
        }

    @staticmethod
    def _link_section(ln: LinkMetrics, elapsed: int) -> dict:
        return {
            "attempts": ln.attempts,
            "pairs_created": ln.created,
            "generation_rate_per_s": _ratio(ln.created / (elapsed / 1e9)),
            "mean_inter_creation_ns": _ratio(ln.gaps.mean),
            "requests": ln.requests,
            "availability_ratio": _ratio(ln.immediate / ln.requests) if ln.requests else None,
            "pairs_consumed": ln.consumed,
            "pairs_expired": ln.expired,
            "expiry_fraction": _ratio(ln.expired / ln.created) if ln.created else None,
            "communication_failures": ln.comm_failures,
            "transfer_failures": ln.transfer_failures,
        }

    @staticmethod
    def _job_section(j: JobMetrics) -> dict:
        lat = j.latency
        return {
            "status": j.status,
            "origin": j.origin,
            "arrival_ns": j.arrival,
            "completion_ns": j.completion,
            "latency_ns": lat,
            "offload_choice": j.choice,
            "qpu": j.qpu,
            "predicted_remote_ns": j.predicted_remote,
            "t_classical_ns": j.t_classical,
            "speedup": _ratio(j.t_classical / lat) if lat else None,
            "shots": j.shots,
            "reason": j.reason,
        }


def _instruction_timing(isa: IsaDefinition | None) -> GateTiming:
    if isa is None or not isa.instructions:
        return GateTiming(None, None, None, None)
    return gate_timing({op: isa.instruction_duration(op) for op in isa.instructions})


def _natural(items: Iterable[tuple[str, Any]]):
    def key(kv):
        k = kv[0]
        head = k.rstrip("0123456789")
        tail = k[len(head):]
        return (head, int(tail) if tail else -1, k)

    return sorted(items, key=key)


def _ratio(x: float | None) -> float | None:
    return None if x is None else round(float(x), RATIO_DIGITS)


def _int(x: float | None) -> int | None:
    return None if x is None else int(x)


# --- export ----------------------------------------------------------------


def flatten(report: Mapping, prefix: tuple[str, ...] = ()) -> list[tuple[tuple[str, ...], Any]]:
    rows = []
    for k, v in report.items():
        path = prefix + (str(k),)
        if isinstance(v, Mapping) and v:
            rows.extend(flatten(v, path))
        elif isinstance(v, Mapping):
            continue
        else:
            rows.append((path, v))
    return rows


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return f"{v:.{RATIO_DIGITS}f}"
    return str(v)


def to_json(report: Mapping) -> str:
    return json.dumps(report, indent=2, sort_keys=False) + "\n"


def to_csv(report: Mapping) -> str:
    """One row per (section, entity, metric); nested histograms keep a dotted metric name."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["section", "entity", "metric", "value"])
    for path, v in flatten(report):
        if path[0] in ("qpus", "links", "jobs"):
            section, entity, metric = path[0], path[1], ".".join(path[2:])
        else:
            section, entity, metric = path[0], "", ".".join(path[1:])
        w.writerow([section, entity, metric, _fmt(v)])
    return buf.getvalue()


def export(report: Mapping, out_dir: str | Path, fmt: str = "json", stem: str = "report") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path = out_dir / f"{stem}.json"
        text = to_json(report)
    elif fmt == "csv":
        path = out_dir / f"{stem}.csv"
        text = to_csv(report)
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path
