"""Jobs, synthetic workload generation, JSONL traces, and shot-count planning."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from .qram import TRANSFER_OPCODE, Instruction, IsaDefinition, Program
from .sim_core import ConfigurationError, Discrete, Exponential, RngStream, StreamFactory, draw


class TraceError(ValueError):
    def __init__(self, message: str, line: int | None = None, field_name: str | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")
        self.line = line
        self.field = field_name


def required_shots(confidence: float, p_success: float) -> int:
    """Fewest shots giving at least one success with probability >= confidence."""
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    if p_success <= 0.0:
        raise ValueError("unsatisfiable confidence: per-shot success probability is 0")
    if p_success > 1.0:
        raise ValueError("p_success must be <= 1")
    if p_success == 1.0:
        return 1
    n = max(1, math.ceil(math.log1p(-confidence) / math.log1p(-p_success) - 1e-12))
    # settle float rounding at the boundary against the exact criterion
    while n > 1 and 1.0 - (1.0 - p_success) ** (n - 1) >= confidence:
        n -= 1
    while 1.0 - (1.0 - p_success) ** n < confidence:
        n += 1
    return n


def estimation_shots(epsilon: float, delta: float) -> int:
    """Hoeffding bound: shots for additive error epsilon with probability 1 - delta."""
    if not epsilon > 0 or not 0.0 < delta < 1.0:
        raise ValueError("need epsilon > 0 and delta in (0, 1)")
    return math.ceil(math.log(2.0 / delta) / (2.0 * epsilon**2))


@dataclass(frozen=True)
class Fragment:
    cpu: str
    delay: int | None  # ns after the primary submission; None = never sent


@dataclass
class Job:
    id: str
    arrival_time: int
    origin: str
    program: Program
    t_classical: int
    preprocess_ops: float = 0
    postprocess_ops: float = 0
    fragments: tuple[Fragment, ...] = ()

    def __post_init__(self):
        if self.t_classical <= 0:
            raise ConfigurationError(f"job {self.id}: t_classical must be > 0")
        if self.arrival_time < 0:
            raise ConfigurationError(f"job {self.id}: negative arrival time")

    @property
    def qubits_required(self) -> int:
        return self.program.qubits


# --- (de)serialisation ---------------------------------------------------

_PROGRAM_KEYS = ("shots", "confidence", "p_success", "sampling", "epsilon", "num_qubits")


def program_to_dict(p: Program) -> dict:
    ins = []
    for i in p.instructions:
        d: dict[str, Any] = {"op": i.opcode, "operands": list(i.operands)}
        if i.partner is not None:
            d["partner"] = i.partner
        ins.append(d)
    out: dict[str, Any] = {"instructions": ins, "measure": list(p.measure)}
    for k in _PROGRAM_KEYS:
        v = getattr(p, k)
        if v is not None and not (k == "sampling" and v == "at_least_one"):
            out[k] = v
    return out


def _req(d: Mapping, key: str, kind, ctx: str):
    if key not in d:
        raise TraceError(f"missing field '{ctx}{key}'", field_name=ctx + key)
    v = d[key]
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise TraceError(f"field '{ctx}{key}' must be an integer, got {v!r}", field_name=ctx + key)
    elif kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise TraceError(f"field '{ctx}{key}' must be a number, got {v!r}", field_name=ctx + key)
    elif kind is str:
        if not isinstance(v, str):
            raise TraceError(f"field '{ctx}{key}' must be a string, got {v!r}", field_name=ctx + key)
    return v


def program_from_dict(d: Mapping) -> Program:
    ins = []
    raw = d.get("instructions", [])
    if not isinstance(raw, list):
        raise TraceError("field 'program.instructions' must be a list", field_name="program.instructions")
    for k, i in enumerate(raw):
        if isinstance(i, (list, tuple)):
            i = {"op": i[0], "operands": i[1]}
        ctx = f"program.instructions[{k}]."
        op = _req(i, "op", str, ctx)
        operands = i.get("operands", [])
        if not isinstance(operands, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in operands):
            raise TraceError(f"field '{ctx}operands' must be a list of integers", field_name=ctx + "operands")
        partner = i.get("partner")
        if partner is not None and (not isinstance(partner, int) or isinstance(partner, bool)):
            raise TraceError(f"field '{ctx}partner' must be an integer", field_name=ctx + "partner")
        ins.append(Instruction(op, tuple(operands), partner))
    kw = {}
    for key, kind in (("shots", int), ("confidence", float), ("p_success", float), ("epsilon", float),
                      ("num_qubits", int), ("sampling", str)):
        if key in d and d[key] is not None:
            kw[key] = _req(d, key, kind, "program.")
    if "shots" not in kw:
        kw["shots"] = None if "confidence" in kw else 1
    try:
        return Program(tuple(ins), tuple(d.get("measure", [])), **kw)
    except ConfigurationError as exc:
        raise TraceError(str(exc), field_name="program") from exc


def job_to_dict(job: Job) -> dict:
    out = {
        "id": job.id,
        "arrival_ns": job.arrival_time,
        "origin": job.origin,
        "program": program_to_dict(job.program),
        "t_classical_ns": job.t_classical,
        "preprocess_ops": job.preprocess_ops,
        "postprocess_ops": job.postprocess_ops,
    }
    if job.fragments:
        out["fragments"] = [{"cpu": f.cpu, "delay_ns": f.delay} for f in job.fragments]
    return out


def job_from_dict(d: Mapping) -> Job:
    if not isinstance(d, Mapping):
        raise TraceError("job record must be an object")
    prog = d.get("program")
    if not isinstance(prog, Mapping):
        raise TraceError("missing field 'program'", field_name="program")
    frags = []
    for k, f in enumerate(d.get("fragments", [])):
        cpu = _req(f, "cpu", str, f"fragments[{k}].")
        delay = f.get("delay_ns")
        if delay is not None:
            delay = _req(f, "delay_ns", int, f"fragments[{k}].")
        frags.append(Fragment(cpu, delay))
    try:
        return Job(
            id=str(_req(d, "id", str, "")),
            arrival_time=_req(d, "arrival_ns", int, ""),
            origin=_req(d, "origin", str, ""),
            program=program_from_dict(prog),
            t_classical=_req(d, "t_classical_ns", int, ""),
            preprocess_ops=_req(d, "preprocess_ops", float, "") if "preprocess_ops" in d else 0,
            postprocess_ops=_req(d, "postprocess_ops", float, "") if "postprocess_ops" in d else 0,
            fragments=tuple(frags),
        )
    except ConfigurationError as exc:
        raise TraceError(str(exc)) from exc


def save_trace(path: str | Path, jobs: Sequence[Job]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for job in jobs:
            fh.write(json.dumps(job_to_dict(job), sort_keys=True, separators=(",", ":")) + "\n")


def load_trace(path: str | Path) -> list[Job]:
    jobs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            try:
                jobs.append(job_from_dict(rec))
            except TraceError as exc:
                raise TraceError(str(exc), line=lineno, field_name=exc.field) from exc
    return jobs


# --- synthetic generation --------------------------------------------------


@dataclass
class WorkloadSpec:
    """Parameters of a synthetic workload.

    ``t_classical`` maps a program's qubit count q to the classical
    runtime in ns: ``{"model": "exponential", "scale_ns": a, "base": b}``
    gives a * b**q; ``{"model": "polynomial", "coeffs": [c0, c1, ...]}``
    gives sum(c_i * q**i).
    """

    rate_per_s: float | None = None
    arrival_times: list[int] | None = None
    jobs: list[Job] | None = None
    origins: list[str] = field(default_factory=lambda: ["cpu0"])
    instructions: tuple[int, int] = (4, 16)
    qubits: tuple[int, int] = (1, 4)
    opcodes: dict[str, float] = field(default_factory=dict)
    shots: Mapping[str, Any] = field(default_factory=lambda: {"fixed": 100})
    t_classical: Mapping[str, Any] = field(default_factory=lambda: {"model": "exponential", "scale_ns": 1000, "base": 2.0})
    preprocess_ops: float = 0
    postprocess_ops: float = 0
    distributed_fraction: float = 0.0
    teleports: int = 1
    fragment_fraction: float = 0.0
    fragment_delay_ns: int = 0

    def __post_init__(self):
        if self.jobs is None and self.arrival_times is None:
            if self.rate_per_s is None or not self.rate_per_s > 0:
                raise ConfigurationError("poisson workload needs rate_per_s > 0")
        lo, hi = self.instructions
        if lo < 0 or hi < lo:
            raise ConfigurationError("instructions range invalid")
        lo, hi = self.qubits
        if lo < 1 or hi < lo:
            raise ConfigurationError("qubits range invalid")
        for f in (self.distributed_fraction, self.fragment_fraction):
            if not 0.0 <= f <= 1.0:
                raise ConfigurationError("fractions must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: Mapping) -> "WorkloadSpec":
        arrival = d.get("arrival", {})
        kw: dict[str, Any] = {}
        if "jobs" in d:
            kw["jobs"] = [job_from_dict(j) for j in d["jobs"]]
        elif arrival.get("process", "poisson") == "fixed":
            kw["arrival_times"] = [int(t) for t in arrival["times_ns"]]
        else:
            kw["rate_per_s"] = float(arrival.get("rate_per_s", 0))
        for key in ("origins", "opcodes", "shots", "t_classical", "preprocess_ops", "postprocess_ops"):
            if key in d:
                kw[key] = d[key]
        if "instructions" in d:
            kw["instructions"] = tuple(int(x) for x in d["instructions"])
        if "qubits" in d:
            kw["qubits"] = tuple(int(x) for x in d["qubits"])
        dist = d.get("distributed", {})
        kw["distributed_fraction"] = float(dist.get("fraction", 0.0))
        kw["teleports"] = int(dist.get("teleports", 1))
        frag = d.get("fragments", {})
        kw["fragment_fraction"] = float(frag.get("fraction", 0.0))
        kw["fragment_delay_ns"] = int(frag.get("max_delay_ns", 0))
        return cls(**kw)


def classical_runtime(model: Mapping[str, Any], qubits: int, instructions: int = 0) -> int:
    kind = model.get("model", "exponential")
    if kind == "exponential":
        t = float(model.get("scale_ns", 1000)) * float(model.get("base", 2.0)) ** qubits
    elif kind == "polynomial":
        t = sum(float(c) * qubits**i for i, c in enumerate(model.get("coeffs", [1000])))
    elif kind == "fixed":
        t = float(model["ns"])
    else:
        raise ConfigurationError(f"unknown t_classical model {kind!r}")
    t += float(model.get("per_instruction_ns", 0)) * instructions
    return max(1, int(round(t)))


def _uniform_int(rng: RngStream, lo: int, hi: int) -> int:
    return min(hi, lo + int(rng.uniform() * (hi - lo + 1)))


def _shot_fields(spec: Mapping[str, Any], rng: RngStream) -> dict:
    if "fixed" in spec:
        return {"shots": int(spec["fixed"])}
    if "choices" in spec:
        ch = list(spec["choices"])
        return {"shots": int(ch[_uniform_int(rng, 0, len(ch) - 1)])}
    if "confidence" in spec:
        out = {"shots": None, "confidence": float(spec["confidence"]), "p_success": float(spec.get("p_success", 1.0))}
        if spec.get("sampling") == "estimate":
            out["sampling"] = "estimate"
            out["epsilon"] = float(spec.get("epsilon", 0.05))
        return out
    raise ConfigurationError(f"unknown shots specification {dict(spec)!r}")


def _random_program(spec: WorkloadSpec, isa: IsaDefinition | None, rng: RngStream, distributed: bool) -> Program:
    nq = _uniform_int(rng, *spec.qubits)
    ni = _uniform_int(rng, *spec.instructions)
    if isa is not None:
        ops = {op: w for op, w in (spec.opcodes or {o: 1.0 for o in sorted(isa.instructions)}).items()
               if isa.instructions[op].arity <= nq}
        arity = {op: isa.instructions[op].arity for op in ops}
    else:
        ops = dict(spec.opcodes) or {"H": 1.0}
        arity = {op: 1 for op in ops}
    names = sorted(ops)
    weights = tuple(float(ops[o]) for o in names)
    ins: list[Instruction] = []
    for _ in range(ni if names else 0):
        op = names[draw(rng, Discrete(weights))]
        first = _uniform_int(rng, 0, nq - 1)
        operands = [first]
        if arity[op] == 2:
            second = _uniform_int(rng, 0, nq - 2)
            operands.append(second + (1 if second >= first else 0))
        ins.append(Instruction(op, tuple(operands)))
    if distributed:
        for _ in range(max(1, spec.teleports)):
            pos = _uniform_int(rng, 0, len(ins))
            ins.insert(pos, Instruction(TRANSFER_OPCODE, (_uniform_int(rng, 0, nq - 1),), 0))
    return Program(tuple(ins), num_qubits=nq, **_shot_fields(spec.shots, rng))


def generate(spec: WorkloadSpec, horizon: int, streams: StreamFactory | RngStream,
             isa: IsaDefinition | None = None) -> list[Job]:
    """Jobs arriving in [0, horizon), sorted by arrival time."""
    if spec.jobs is not None:
        return sorted((j for j in spec.jobs), key=lambda j: j.arrival_time)
    if isinstance(streams, RngStream):
        arr_rng = prog_rng = streams
    else:
        arr_rng = streams("workload:arrivals")
        prog_rng = streams("workload:programs")
    if spec.arrival_times is not None:
        times = sorted(t for t in spec.arrival_times if 0 <= t < horizon)
    else:
        times = []
        t = 0.0
        dist = Exponential(spec.rate_per_s)
        while True:
            t += draw(arr_rng, dist)
            ns = int(t * 1e9)
            if ns >= horizon:
                break
            times.append(ns)
    jobs = []
    origins = list(spec.origins)
    for k, at in enumerate(times):
        origin = origins[_uniform_int(prog_rng, 0, len(origins) - 1)]
        distributed = spec.distributed_fraction > 0 and draw(prog_rng, Discrete((1 - spec.distributed_fraction,
                                                                                 spec.distributed_fraction))) == 1
        prog = _random_program(spec, isa, prog_rng, distributed)
        frags: tuple[Fragment, ...] = ()
        if spec.fragment_fraction > 0 and len(origins) > 1:
            if draw(prog_rng, Discrete((1 - spec.fragment_fraction, spec.fragment_fraction))) == 1:
                others = [o for o in origins if o != origin]
                frags = tuple(Fragment(o, _uniform_int(prog_rng, 0, spec.fragment_delay_ns)) for o in others)
        jobs.append(Job(
            id=f"job{k}",
            arrival_time=at,
            origin=origin,
            program=prog,
            t_classical=classical_runtime(spec.t_classical, prog.qubits, len(prog.instructions)),
            preprocess_ops=spec.preprocess_ops,
            postprocess_ops=spec.postprocess_ops,
            fragments=frags,
        ))
    return jobs
