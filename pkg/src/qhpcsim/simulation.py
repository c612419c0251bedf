"""Event-driven execution of a scenario: CPUs, entry switch, QPUs, interconnect, faults."""

from __future__ import annotations

import logging
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Callable, TextIO

from . import comm
from .dispatch import (
    Choice,
    SchedulingError,
    SwitchState,
    check_routable,
    decide_offload,
    partners_for,
    route,
)
from .entmgr import EntanglementManager, PairRequest, PairStatus, Ticket
from .faults import cascade, entanglement_graph, inject_failures
from .metrics import JobMetrics, MetricsCollector
from .qram import (
    TRANSFER_OPCODE,
    CapacityError,
    DecodedProgram,
    DecodeError,
    ExecutionRecord,
    QuantumRegister,
    decode,
    execute,
    run_timing,
)
from .scenario import Scenario
from .sim_core import Bernoulli, ConfigurationError, Engine, Event, StreamFactory, draw
from .topology import SWITCH_ID, ArchKind, server_capacity
from .workload import Job, generate

log = logging.getLogger(__name__)


@dataclass(eq=False)
class _Run:
    job: Job
    qpus: list[str]
    decoded: DecodedProgram
    shots: int
    enqueued_at: int
    predicted: int
    alive: bool = True
    started_at: int | None = None
    events: list[Event] = field(default_factory=list)
    tickets: list[Ticket] = field(default_factory=list)
    # distributed execution state
    steps: list = field(default_factory=list)
    step: int = 0
    good: int = 0
    attempts: int = 0
    restarts: int = 0
    gate_counts: Counter = field(default_factory=Counter)
    quantum_time: int = 0
    transfers_done: int = 0
    plan: list = field(default_factory=list)
    hinted: int = 0

    @property
    def primary(self) -> str:
        return self.qpus[0]

    @property
    def distributed(self) -> bool:
        return len(self.qpus) > 1


@dataclass(eq=False)
class _Pending:
    """A submission waiting for all of its input fragments at the QPU."""

    job: Job
    expected: int
    sent_at: int
    qpu: str | None
    arrivals: list[int] = field(default_factory=list)
    timeout: Event | None = None
    failed: bool = False


class _Cpu:
    def __init__(self, node):
        self.node = node
        self.queue: deque = deque()
        self.busy = False


class _Qpu:
    def __init__(self, node):
        self.node = node
        self.isa = node.isa
        self.durations = {g.name: g.duration for g in node.isa.primitive_gates.values()}
        if node.isa.measurement is not None:
            self.durations[node.isa.measurement.name] = node.isa.measurement.duration
        self.queue: deque[_Run] = deque()
        self.running: _Run | None = None
        self.up = True
        self.busy_since = 0
        self.ec_mark = 0
        self.inbound = 0
        self.inbound_work = 0


def gate_summary(counts, durations) -> str:
    if not counts:
        return "gates=-"
    return "gates=" + ",".join(f"{n}:{durations[n]}*{c}" for n, c in sorted(counts.items()))


class Simulation:
    """One scenario on one engine instance; build, ``run()``, read the report."""

    def __init__(self, scenario: Scenario, event_log: TextIO | None = None, seed: int | None = None):
        self.sc = scenario
        self.seed = scenario.seed if seed is None else int(seed)
        self.engine = Engine(event_log)
        self.streams = StreamFactory(self.seed)
        self.arch = scenario.architecture
        self.metrics = MetricsCollector()
        self.cpus = {c.id: _Cpu(c) for c in self.arch.cpus}
        self.qpus = {q.id: _Qpu(q) for q in self.arch.qpus}
        self.switch = SwitchState(self.arch.switch.service_time, self.arch.switch.policy) if self.arch.switch else None
        ent = scenario.entanglement
        self.entmgr = EntanglementManager(self.engine, self.arch.quantum_links, ent.policy, self.streams,
                                          ent.ec_duty_cycle, ent.on_starvation, live_listener=self._ec_tick)
        self.ownership = comm.Ownership()
        self.runs_by_qpu: dict[str, _Run] = {}
        if scenario.jobs is not None:
            self.jobs = sorted(scenario.jobs, key=lambda j: j.arrival_time)
        else:
            self.jobs = generate(scenario.workload, scenario.horizon, self.streams, scenario.isa)
        for q in self.arch.qpus:
            self.metrics.qpu(q.id).isa = q.isa
        for ln in self.arch.quantum_links:
            self.metrics.link(f"{ln.key[0]}-{ln.key[1]}")
        qn = len(self.arch.qpus)
        n = self.arch.max_register
        iso, iso_log = server_capacity(qn, n, False)
        ent_cap, ent_log = server_capacity(qn, n, True)
        self.metrics.capacity = {
            "qpus": qn,
            "qubits_per_qpu": n,
            "isolated_dim": iso,
            "isolated_log2": round(iso_log, 6),
            "interconnected_dim": ent_cap,
            "interconnected_log2": round(ent_log, 6),
            "has_quantum_interconnect": bool(self.arch.quantum_links),
        }
        self.metrics.meta = {"scenario": scenario.name, "seed": self.seed, "horizon_ns": scenario.horizon,
                             "architecture": self.arch.kind.value}
        self._ran = False

    # --- driver -----------------------------------------------------------

    def run(self) -> dict:
        if self._ran:
            raise RuntimeError("a Simulation instance runs once")
        self._ran = True
        for job in self.jobs:
            self.metrics.jobs[job.id] = JobMetrics(job.arrival_time, job.origin, job.t_classical)
            if job.arrival_time <= self.sc.horizon:
                self.engine.schedule(job.arrival_time, job.origin, "job_arrive", lambda ev, j=job: self._arrive(j))
        for t, q in inject_failures(self.sc.faults, self.sc.horizon, [q.id for q in self.arch.qpus], self.streams):
            self.engine.schedule(t, q, "qpu_fail", lambda ev, q=q: self._qpu_fail(q))
        self.entmgr.start()
        self.engine.run_until(self.sc.horizon)
        return self._finalize()

    def _finalize(self) -> dict:
        end = max(self.engine.now, self.sc.horizon)
        self.engine.now = end
        for qid, st in self.qpus.items():
            self._ec_tick(qid)
            if st.running is not None:
                self.metrics.qpu(qid).busy_time += end - st.busy_since
        for key, ls in self.entmgr.links.items():
            lm = self.metrics.link(f"{key[0]}-{key[1]}")
            s = ls.stats
            lm.attempts, lm.created, lm.requests, lm.immediate = s.attempts, s.created, s.requests, s.immediate
            lm.expired, lm.consumed, lm.comm_failures = s.expired, s.consumed, s.failures
            for g in s.creation_gaps:
                lm.gaps.add(g)
        if self.switch is not None:
            self.metrics.switch_served = self.switch.served
            self.metrics.switch_throughput = self.switch.throughput()
        return self.metrics.report(end)

    # --- CPU side ----------------------------------------------------------

    def _cpu_task(self, cpu: str, duration: int, kind: str, then: Callable[[], None]) -> None:
        st = self.cpus[cpu]
        st.queue.append((duration, kind, then))
        if not st.busy:
            self._cpu_next(cpu)

    def _cpu_next(self, cpu: str) -> None:
        st = self.cpus[cpu]
        if not st.queue:
            st.busy = False
            return
        duration, kind, then = st.queue.popleft()
        st.busy = True

        def done(ev):
            then()
            self._cpu_next(cpu)

        self.engine.schedule_in(duration, cpu, kind, done)

    def _arrive(self, job: Job) -> None:
        cpu = self.cpus[job.origin].node
        self._cpu_task(job.origin, cpu.ops_time(job.preprocess_ops), "preprocess", lambda: self._decide(job))

    def _complete(self, job: Job) -> None:
        jm = self.metrics.job(job.id)
        jm.status = "completed"
        jm.completion = self.engine.now

    def _fail(self, job: Job, reason: str, status: str = "failed") -> None:
        jm = self.metrics.job(job.id)
        if jm.status in ("completed", "failed", "unschedulable"):
            return
        jm.status = status
        jm.reason = reason

    def _finish_on_cpu(self, job: Job) -> None:
        cpu = self.cpus[job.origin].node
        self._cpu_task(job.origin, cpu.ops_time(job.postprocess_ops), "postprocess", lambda: self._complete(job))

    # --- offload decision -------------------------------------------------

    def _decide(self, job: Job) -> None:
        jm = self.metrics.job(job.id)
        try:
            check_routable(job, self.arch)
        except SchedulingError as exc:
            self._fail(job, str(exc))
            return
        need = 0
        for q in self.arch.qpus:
            try:
                need = max(need, decode(job.program, q.isa).required_qubits)
            except DecodeError as exc:
                self._fail(job, f"decode error: {exc}")
                return
        if not any(decode(job.program, q.isa).required_qubits <= q.register_size for q in self.arch.qpus):
            self._fail(job, f"needs {need} qubits; largest register has {self.arch.max_register}", "unschedulable")
            return
        d = decide_offload(job, self.arch, sizes=self.sc.dispatch.sizes, queue_wait=self._queue_wait,
                           policy=self.sc.dispatch.offload_policy)
        jm.choice = d.choice.value
        jm.predicted_remote = d.predicted_remote_time
        if d.warning:
            self.metrics.warnings[d.warning] += 1
        if d.choice is Choice.CLASSICAL:
            self._cpu_task(job.origin, job.t_classical, "classical_run", lambda: self._finish_on_cpu(job))
        else:
            self._submit(job, d.qpu)

    def _predicted_exec(self, job: Job, qid: str) -> int:
        return job.program.resolved_shots() * decode(job.program, self.qpus[qid].isa).shot_duration

    def _queue_wait(self, qid: str) -> int:
        st = self.qpus[qid]
        wait = 0
        if self.switch is not None:
            wait += self.switch.backlog * self.switch.service_time
        if self.sc.dispatch.queue_estimate == "oracle":
            if st.running is not None:
                wait += max(0, st.running.started_at + st.running.predicted - self.engine.now)
            wait += sum(r.predicted for r in st.queue) + st.inbound_work
            return wait
        n = len(st.queue) + (1 if st.running is not None else 0) + st.inbound
        if n == 0:
            return wait
        mean = self.metrics.qpu(qid).exec_time.mean
        if mean is None:
            pending = [r.predicted for r in st.queue] + ([st.running.predicted] if st.running else [])
            mean = sum(pending) / len(pending) if pending else 0
        return wait + int(round(n * mean))

    def _load(self, qid: str) -> int:
        st = self.qpus[qid]
        load = st.inbound_work + sum(r.predicted for r in st.queue)
        if st.running is not None:
            load += max(0, st.running.started_at + st.running.predicted - self.engine.now)
        return load

    # --- submission path --------------------------------------------------

    def _submit(self, job: Job, qpu: str) -> None:
        via_switch = self.switch is not None and len(self.arch.submit_path(job.origin, qpu)) == 2
        pend = _Pending(job, 1 + len(job.fragments), self.engine.now, None if via_switch else qpu)
        if not via_switch:
            self._note_inbound(pend, qpu)
        size = self.sc.dispatch.sizes.submit(job)
        self._send_submission(pend, job.origin, size)
        for fr in job.fragments:
            if fr.delay is None:
                continue
            self.engine.schedule_in(fr.delay, fr.cpu, "fragment_send",
                                    lambda ev, c=fr.cpu: self._send_submission(pend, c, size))
        if job.fragments:
            # an input landing exactly on the deadline still counts
            pend.timeout = self.engine.schedule_in(self.sc.dispatch.fragment_timeout_ns + 1,
                                                   qpu if not via_switch else SWITCH_ID, "fragment_timeout",
                                                   lambda ev: self._fragment_timeout(pend))

    def _note_inbound(self, pend: _Pending, qpu: str) -> None:
        st = self.qpus[qpu]
        st.inbound += 1
        st.inbound_work += self._predicted_exec(pend.job, qpu)

    def _send_submission(self, pend: _Pending, cpu: str, size: int) -> None:
        if pend.failed:
            return
        if self.switch is not None and (pend.qpu is None or self.arch.classical_link(cpu, pend.qpu) is None):
            link = self.arch.classical_link(cpu, SWITCH_ID)
            msg = comm.ClassicalMessage(cpu, SWITCH_ID, size, comm.MessageKind.PROGRAM_SUBMIT)
            comm.send_classical(self.engine, link, msg, lambda t: self._switch_arrive(pend, size))
        else:
            link = self.arch.classical_link(cpu, pend.qpu)
            msg = comm.ClassicalMessage(cpu, pend.qpu, size, comm.MessageKind.PROGRAM_SUBMIT)
            comm.send_classical(self.engine, link, msg, lambda t: self._fragment_landed(pend))

    def _switch_arrive(self, pend: _Pending, size: int) -> None:
        sw = self.switch
        if sw.first_arrival is None:
            sw.first_arrival = self.engine.now
        sw.queue.append((pend, size))
        if not sw.busy:
            self._switch_next()

    def _switch_next(self) -> None:
        sw = self.switch
        if not sw.queue:
            sw.busy = False
            return
        sw.busy = True
        pend, size = sw.queue.popleft()

        def forwarded(ev):
            sw.served += 1
            sw.last_departure = self.engine.now
            if not pend.failed:
                if pend.qpu is None:
                    try:
                        qpu, _ = route(pend.job, self.arch, sw, {q: self._load(q) for q in self.qpus})
                    except SchedulingError as exc:
                        pend.failed = True
                        self._fail(pend.job, str(exc))
                        self._switch_next()
                        return
                    pend.qpu = qpu
                    self._note_inbound(pend, qpu)
                link = self.arch.classical_link(SWITCH_ID, pend.qpu)
                msg = comm.ClassicalMessage(SWITCH_ID, pend.qpu, size, comm.MessageKind.PROGRAM_SUBMIT)
                comm.send_classical(self.engine, link, msg, lambda t: self._fragment_landed(pend))
            self._switch_next()

        self.engine.schedule_in(sw.service_time, SWITCH_ID, "switch_forward", forwarded)

    def _fragment_landed(self, pend: _Pending) -> None:
        if pend.failed:
            return
        pend.arrivals.append(self.engine.now)
        if len(pend.arrivals) < pend.expected:
            return
        if pend.timeout is not None:
            pend.timeout.cancel()
        qpu = pend.qpu
        st = self.qpus[qpu]
        ctl = self.arch.qpu(qpu).controller_latency
        self.engine.schedule_in(ctl, qpu, "controller_accept", lambda ev: self._enqueue(pend.job, qpu, st))

    def _fragment_timeout(self, pend: _Pending) -> None:
        if pend.failed or len(pend.arrivals) >= pend.expected:
            return
        pend.failed = True
        if pend.qpu is not None:
            st = self.qpus[pend.qpu]
            st.inbound -= 1
            st.inbound_work -= self._predicted_exec(pend.job, pend.qpu)
        self._fail(pend.job, "input fragment timeout")

    # --- QPU execution ----------------------------------------------------

    def _enqueue(self, job: Job, qpu: str, st: _Qpu) -> None:
        st.inbound -= 1
        st.inbound_work -= self._predicted_exec(job, qpu)
        try:
            partners = partners_for(self.arch, qpu, job.program.partners)
            dec = decode(job.program, st.isa)
            if dec.required_qubits > st.node.register_size:
                raise CapacityError(dec.required_qubits, st.node.register_size)
        except (SchedulingError, CapacityError) as exc:
            self._fail(job, str(exc))
            return
        shots = job.program.resolved_shots()
        run = _Run(job, [qpu] + partners, dec, shots, self.engine.now, shots * dec.shot_duration)
        self.metrics.job(job.id).qpu = qpu
        for q in run.qpus:
            self.qpus[q].queue.append(run)
        for q in run.qpus:
            self._try_start(q)

    def _try_start(self, qid: str) -> None:
        st = self.qpus[qid]
        if st.running is not None or not st.up or not st.queue:
            return
        run = st.queue[0]
        for q in run.qpus:
            other = self.qpus[q]
            if other.running is not None or not other.up or not other.queue or other.queue[0] is not run:
                return
        now = self.engine.now
        for q in run.qpus:
            self._ec_tick(q)
            other = self.qpus[q]
            other.queue.popleft()
            other.running = run
            other.busy_since = now
        run.started_at = now
        self.metrics.qpu(run.primary).queue_wait.add(now - run.enqueued_at)
        if run.distributed:
            self._start_distributed(run)
        else:
            self._start_single(run)

    def _start_single(self, run: _Run) -> None:
        qid = run.primary
        st = self.qpus[qid]
        rng = self.streams(f"qpu:{qid}")
        override = self.sc.faults.gate_error_prob
        if self.sc.backend == "statevector":
            reg = QuantumRegister(st.node.register_size)
            rec = execute(run.job.program, reg, st.isa, rng, start=self.engine.now, keep_gate_log=False,
                          decoded=run.decoded, error_override=override)
        else:
            attempts, qtime = run_timing(run.decoded, run.shots, rng, override)
            rec = self._timing_record(run, attempts, qtime)
        counts = Counter(rec.gate_counts)
        if run.decoded.measurement is not None:
            counts[run.decoded.measurement.name] += rec.attempts
        ev = self.engine.schedule_in(rec.quantum_time, qid, f"exec_done {gate_summary(counts, st.durations)}",
                                     lambda ev: self._finish_run(run, rec, counts))
        run.events.append(ev)

    @staticmethod
    def _timing_record(run: _Run, attempts: int, qtime: int, counts: Counter | None = None) -> ExecutionRecord:
        if counts is None:
            counts = Counter()
            for op in run.decoded.gates:
                counts[op.gate.name] += attempts
        return ExecutionRecord(
            gates=[], samples=[], logical_instruction_count=run.decoded.logical_count,
            primitive_gate_count=len(run.decoded.gates), ancilla_used=run.decoded.ancilla,
            program_qubits=run.decoded.program_qubits, shots=run.shots, attempts=attempts,
            shot_duration=run.decoded.shot_duration, quantum_time=qtime, gate_counts=dict(counts),
        )

    def _release(self, run: _Run) -> None:
        now = self.engine.now
        for q in run.qpus:
            st = self.qpus[q]
            if st.running is run:
                self.metrics.qpu(q).busy_time += now - st.busy_since
                st.running = None
                st.ec_mark = now

    def _finish_run(self, run: _Run, rec: ExecutionRecord, counts: Counter) -> None:
        if not run.alive:
            return
        run.alive = False
        st = self.qpus[run.primary]
        self.metrics.record_execution(run.primary, rec, st.durations)
        qm = self.metrics.qpu(run.primary)
        if run.decoded.measurement is not None:
            qm.record_gates({run.decoded.measurement.name: (run.decoded.measurement.duration, rec.attempts)})
        jm = self.metrics.job(run.job.id)
        jm.shots, jm.attempts = rec.shots, rec.attempts
        self._release(run)
        self._return_result(run)
        for q in run.qpus:
            self._try_start(q)

    def _return_result(self, run: _Run) -> None:
        job = run.job
        path = list(reversed(self.arch.submit_path(job.origin, run.primary)))
        size = self.sc.dispatch.sizes.result(job)
        hops = [run.primary]
        for ln in path:
            hops.append(ln.other(hops[-1]))

        def hop(i: int):
            if i == len(path):
                self._finish_on_cpu(job)
                return
            msg = comm.ClassicalMessage(hops[i], hops[i + 1], size, comm.MessageKind.RESULT_RETURN)
            comm.send_classical(self.engine, path[i], msg, lambda t: hop(i + 1))

        hop(0)

    def _abort(self, run: _Run, reason: str) -> None:
        if not run.alive:
            return
        run.alive = False
        for ev in run.events:
            ev.cancel()
        for t in run.tickets:
            self.entmgr.cancel(t)
        self.metrics.qpu(run.primary).aborted += 1
        self._release(run)
        self._fail(run.job, reason)
        for q in run.qpus:
            self._try_start(q)

    # --- distributed programs --------------------------------------------

    def _start_distributed(self, run: _Run) -> None:
        steps: list = []
        seg: list = []
        by_source: dict[int, list] = {}
        for op in run.decoded.gates:
            by_source.setdefault(op.source, []).append(op)
        for idx, ins in enumerate(run.job.program.instructions):
            if ins.opcode == TRANSFER_OPCODE:
                if seg:
                    steps.append(("gates", seg))
                    seg = []
                steps.append(("transfer", run.qpus[1 + ins.partner], max(1, len(ins.operands))))
            else:
                seg.extend(by_source.get(idx, []))
        if seg:
            steps.append(("gates", seg))
        run.steps = steps
        # nominal per-shot offsets of each transfer, used for just-in-time hints
        qlinks = {q: self.arch.quantum_link(run.primary, q) for q in run.qpus[1:]}
        t = 0
        for _ in range(run.shots):
            for st in steps:
                if st[0] == "gates":
                    t += sum(op.gate.duration for op in st[1])
                else:
                    run.plan.append((t, st[1], st[2]))
                    ln = qlinks[st[1]]
                    t += comm.message_delay(ln.side_channel(), comm.side_channel_bytes(st[2])) + self.sc.comm.correction_ns
            t += run.decoded.measurement.duration if run.decoded.measurement else 0
        self._hint(run, 0)
        self._advance(run)

    def _hint(self, run: _Run, base: int) -> None:
        if self.sc.entanglement.policy.mode.value != "just_in_time" or self.sc.comm.mode != "teleport":
            return
        horizon = self.sc.entanglement.policy.lookahead
        now = self.engine.now
        while run.hinted < len(run.plan) and run.plan[run.hinted][0] - base <= horizon:
            offset, partner, k = run.plan[run.hinted]
            self.entmgr.expect(run.primary, partner, k, now + max(0, offset - base))
            run.hinted += 1

    def _advance(self, run: _Run) -> None:
        if not run.alive:
            return
        if run.step < len(run.steps):
            st = run.steps[run.step]
            if st[0] == "gates":
                counts = Counter(op.gate.name for op in st[1])
                dur = sum(op.gate.duration for op in st[1])

                def seg_done(ev, counts=counts, dur=dur):
                    run.gate_counts.update(counts)
                    run.quantum_time += dur
                    run.step += 1
                    self._advance(run)

                run.events.append(self.engine.schedule_in(
                    dur, run.primary, f"segment_done {gate_summary(counts, self.qpus[run.primary].durations)}",
                    seg_done))
            else:
                self._transfer(run, st[1], st[2])
            return
        meas = run.decoded.measurement
        mdur = meas.duration if meas else 0
        kind = f"shot_done {gate_summary({meas.name: 1}, self.qpus[run.primary].durations)}" if meas else "shot_done"

        def shot_done(ev):
            run.quantum_time += mdur
            if meas:
                run.gate_counts[meas.name] += 1
            run.attempts += 1
            p_ok = self._shot_ok_prob(run)
            ok = True if p_ok >= 1.0 else draw(self.streams(f"qpu:{run.primary}"), Bernoulli(p_ok))
            run.good += 1 if ok else 0
            run.step = 0
            if run.good >= run.shots:
                self._finish_distributed(run)
            else:
                self._advance(run)

        run.events.append(self.engine.schedule_in(mdur, run.primary, kind, shot_done))

    def _shot_ok_prob(self, run: _Run) -> float:
        override = self.sc.faults.gate_error_prob
        if override is None:
            return run.decoded.shot_success_prob
        return (1.0 - override) ** (len(run.decoded.gates) + (1 if run.decoded.measurement else 0))

    def _finish_distributed(self, run: _Run) -> None:
        rec = self._timing_record(run, run.attempts, run.quantum_time, counts=Counter(
            {k: v for k, v in run.gate_counts.items()
             if run.decoded.measurement is None or k != run.decoded.measurement.name}))
        counts = Counter(run.gate_counts)
        self._finish_run(run, rec, counts)

    def _transfer(self, run: _Run, partner: str, k: int) -> None:
        token = self.ownership.create(run.primary)
        qlink = self.arch.quantum_link(run.primary, partner)
        cfg = self.sc.comm
        if cfg.mode == "direct":
            tr = comm.QuantumTransfer(comm.TransferMode.DIRECT, k, run.primary, partner, token)
            try:
                comm.direct_transmit(self.engine, tr, qlink, self.streams(f"comm:{qlink.a}-{qlink.b}"), cfg.swap_ns,
                                     self.qpus[partner].node.register_size, self.ownership,
                                     lambda tr: self._transfer_done(run, tr))
            except CapacityError as exc:
                self.ownership.release(token)
                self._abort(run, str(exc))
            return
        timeout = self.sc.entanglement.pair_timeout_ns
        deadline = self.engine.now + timeout if timeout else None
        req = PairRequest(run.job.id, (run.primary, partner), k, deadline)

        def got(pairs):
            if not run.alive:
                for p in pairs:
                    self.entmgr.release(p)
                return
            tr = comm.QuantumTransfer(comm.TransferMode.TELEPORT, k, run.primary, partner, token)
            comm.teleport(self.engine, tr, pairs, qlink.side_channel(), cfg.correction_ns,
                          consume=self.entmgr.consume, ownership=self.ownership,
                          on_done=lambda tr: self._transfer_done(run, tr))

        def starved(ticket):
            self.ownership.release(token)
            self._abort(run, f"communication failure: no entangled pair {run.primary}-{partner} before deadline")

        res = self.entmgr.request_pairs(req, got, starved)
        if isinstance(res, Ticket):
            run.tickets.append(res)
        else:
            got(res)

    def _transfer_done(self, run: _Run, tr: comm.QuantumTransfer) -> None:
        if tr.status is comm.TransferStatus.DELIVERED:
            if self.ownership.holders(tr.token) != 1:
                raise AssertionError(f"payload {tr.token} held by {self.ownership.holders(tr.token)} registers")
        else:
            if self.ownership.holders(tr.token) != 0:
                raise AssertionError(f"lost payload {tr.token} still held")
        self.ownership.release(tr.token)
        if not run.alive:
            return
        if tr.status is comm.TransferStatus.FAILED:
            key = "-".join(sorted((tr.src_qpu, tr.dst_qpu)))
            self.metrics.link(key).transfer_failures += 1
            if self.sc.comm.on_loss == "restart_shot" and run.restarts < self.sc.comm.max_shot_restarts:
                run.restarts += 1
                run.attempts += 1
                run.step = 0
                self._advance(run)
            else:
                self._abort(run, "payload lost in direct transmission")
            return
        run.transfers_done += 1
        run.step += 1
        if run.transfers_done < len(run.plan):
            self._hint(run, run.plan[run.transfers_done - 1][0])
        self._advance(run)

    # --- faults -------------------------------------------------------------

    def _qpu_fail(self, qid: str) -> None:
        if not self.qpus[qid].up:
            return
        up = [q.id for q in self.arch.qpus if self.qpus[q.id].up]
        live = [k for k in self.entmgr.live_edges() if k[0] in up and k[1] in up]
        groups = {id(st.running): st.running.qpus for st in self.qpus.values()
                  if st.running is not None and st.running.distributed}
        graph = entanglement_graph(up, live, groups.values())
        failed = cascade(qid, graph, self.sc.faults.p_cascade, self.streams("faults:cascade"))
        self.metrics.cascades[len(failed)] += 1
        for q in sorted(failed, key=self.arch.qpu_index):
            self._take_down(q)

    def _take_down(self, qid: str) -> None:
        st = self.qpus[qid]
        self.metrics.qpu(qid).failures += 1
        if st.running is not None:
            self._abort(st.running, f"QPU {qid} failed")
        self._ec_tick(qid)
        st.up = False
        self.entmgr.set_qpu_up(qid, False)
        self.engine.schedule_in(self.sc.faults.repair_time, qid, "qpu_repair", lambda ev: self._repair(qid))

    def _repair(self, qid: str) -> None:
        st = self.qpus[qid]
        st.up = True
        st.ec_mark = self.engine.now
        self.entmgr.set_qpu_up(qid, True)
        for q in self.qpus:
            self._try_start(q)

    # --- idle error correction -------------------------------------------

    def _ec_tick(self, qid: str) -> None:
        st = self.qpus[qid]
        now = self.engine.now
        if now > st.ec_mark and st.up and st.running is None:
            self.metrics.qpu(qid).ec_time += self.entmgr.idle_ec_cost(qid, now - st.ec_mark)
        st.ec_mark = now


def simulate(scenario: Scenario, event_log: TextIO | None = None, seed: int | None = None) -> dict:
    return Simulation(scenario, event_log, seed).run()
