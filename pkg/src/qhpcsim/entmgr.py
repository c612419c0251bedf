"""Entangled-pair lifecycle and provisioning across quantum links."""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable

from .sim_core import Bernoulli, ConfigurationError, Engine, Event, SimulationError, StreamFactory, draw
from .topology import QuantumLink, link_key


class TopologyError(ValueError):
    pass


class RequestRejected(ValueError):
    pass


class PairStatus(str, Enum):
    AVAILABLE = "available"
    RESERVED = "reserved"
    CONSUMED = "consumed"
    EXPIRED = "expired"


_LEGAL = {
    PairStatus.AVAILABLE: {PairStatus.RESERVED, PairStatus.EXPIRED},
    PairStatus.RESERVED: {PairStatus.CONSUMED, PairStatus.EXPIRED, PairStatus.AVAILABLE},
    PairStatus.CONSUMED: set(),
    PairStatus.EXPIRED: set(),
}

LIVE = (PairStatus.AVAILABLE, PairStatus.RESERVED)


@dataclass(eq=False)
class EntangledPair:
    id: int
    endpoints: tuple[str, str]
    created_at: int
    expires_at: int
    status: PairStatus = PairStatus.AVAILABLE
    holder: object = None
    _hook: Callable[["EntangledPair", PairStatus, PairStatus], None] | None = field(default=None, repr=False)

    def transition(self, new: PairStatus) -> None:
        if new not in _LEGAL[self.status]:
            raise SimulationError(f"pair {self.id}: illegal transition {self.status.value} -> {new.value}")
        old = self.status
        if self._hook is not None:
            self._hook(self, old, new)
        self.status = new

    @property
    def live(self) -> bool:
        return self.status in LIVE

    def usable(self, now: int) -> bool:
        return self.status is PairStatus.RESERVED and self.expires_at > now

    def consume(self, now: int) -> None:
        if not self.usable(now):
            raise SimulationError(f"pair {self.id} consumed while {self.status.value} (expires {self.expires_at})")
        self.transition(PairStatus.CONSUMED)


class PolicyMode(str, Enum):
    ON_DEMAND = "on_demand"
    POOLED = "pooled"
    JUST_IN_TIME = "just_in_time"


class Starvation(str, Enum):
    RETRY_UNTIL_DEADLINE = "retry_until_deadline"
    ABORT_JOB = "abort_job"


@dataclass(frozen=True)
class RefreshPolicy:
    mode: PolicyMode = PolicyMode.ON_DEMAND
    target_pool_size: int = 1
    lookahead: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", PolicyMode(self.mode))
        if self.mode is PolicyMode.POOLED and self.target_pool_size < 1:
            raise ConfigurationError("pooled policy needs target_pool_size >= 1")
        if self.lookahead < 0:
            raise ConfigurationError("lookahead must be >= 0")


@dataclass(frozen=True)
class PairRequest:
    requester: str
    endpoints: tuple[str, str]
    count: int = 1
    deadline: int | None = None

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("pair request count must be >= 1")


class TicketStatus(str, Enum):
    PENDING = "pending"
    FULFILLED = "fulfilled"
    FAILED = "failed"
    CANCELLED = "cancelled"


@dataclass(eq=False)
class Ticket:
    request: PairRequest
    created_at: int
    seq: int
    on_fulfilled: Callable[[list[EntangledPair]], None] | None = None
    on_failed: Callable[["Ticket"], None] | None = None
    status: TicketStatus = TicketStatus.PENDING
    pairs: list[EntangledPair] = field(default_factory=list)
    deadline_event: Event | None = None


@dataclass
class LinkStats:
    attempts: int = 0
    created: int = 0
    requests: int = 0
    immediate: int = 0
    consumed: int = 0
    expired: int = 0
    failures: int = 0
    first_created: int | None = None
    last_created: int | None = None
    creation_gaps: list[int] = field(default_factory=list)


class LinkState:
    def __init__(self, link: QuantumLink):
        self.link = link
        self.available: list[EntangledPair] = []
        self.tickets: deque[Ticket] = deque()
        self.counts = {s: 0 for s in PairStatus}
        self.stats = LinkStats()
        self.next_attempt: Event | None = None
        self.prefetch = 0
        self.up = True

    @property
    def created(self) -> int:
        return self.stats.created

    def pending_need(self) -> int:
        return sum(t.request.count for t in self.tickets)


class EntanglementManager:
    """Network management controller for the quantum interconnect.

    Pairs are generated per link by periodic heralded attempts. Requests
    are served freshest-first; unmet requests queue FIFO per link.
    """

    def __init__(self, engine: Engine, links: Iterable[QuantumLink], policy: RefreshPolicy | None = None,
                 streams: StreamFactory | None = None, ec_duty_cycle: float = 0.0,
                 on_starvation: Starvation | str = Starvation.RETRY_UNTIL_DEADLINE,
                 live_listener: Callable[[str], None] | None = None):
        if not 0.0 <= ec_duty_cycle <= 1.0:
            raise ConfigurationError("ec_duty_cycle must lie in [0, 1]")
        self.engine = engine
        self.policy = policy or RefreshPolicy()
        self.streams = streams or StreamFactory(0)
        self.ec_duty_cycle = ec_duty_cycle
        self.on_starvation = Starvation(on_starvation)
        self.links: dict[tuple[str, str], LinkState] = {ln.key: LinkState(ln) for ln in links}
        self.pairs: dict[int, EntangledPair] = {}
        self.live_listener = live_listener
        self._ids = itertools.count()
        self._ticket_seq = itertools.count()
        self.served_pair_ids: set[int] = set()
        self.consumed_ids: set[int] = set()
        self.violations: list[str] = []
        self.down: set[str] = set()

    # --- bookkeeping ------------------------------------------------------

    def _hook(self, pair: EntangledPair, old: PairStatus, new: PairStatus) -> None:
        ls = self.links[pair.endpoints]
        if self.live_listener is not None and (old in LIVE) != (new in LIVE):
            for q in pair.endpoints:
                self.live_listener(q)
        ls.counts[old] -= 1
        ls.counts[new] += 1
        if new is PairStatus.CONSUMED:
            if pair.id in self.consumed_ids:
                raise SimulationError(f"pair {pair.id} consumed twice")
            self.consumed_ids.add(pair.id)
            ls.stats.consumed += 1
        elif new is PairStatus.EXPIRED:
            ls.stats.expired += 1
        if old is PairStatus.AVAILABLE:
            ls.available.remove(pair)
        if new is PairStatus.AVAILABLE:
            ls.available.append(pair)

    def conservation_holds(self, key: tuple[str, str] | None = None) -> bool:
        states = [self.links[key]] if key else self.links.values()
        return all(ls.stats.created == sum(ls.counts.values()) for ls in states)

    def totals(self) -> dict[str, int]:
        out = {"created": 0, **{s.value: 0 for s in PairStatus}}
        for ls in self.links.values():
            out["created"] += ls.stats.created
            for s, c in ls.counts.items():
                out[s.value] += c
        return out

    def link_state(self, a: str, b: str) -> LinkState:
        ls = self.links.get(link_key(a, b))
        if ls is None:
            raise TopologyError(f"no quantum link between {a} and {b}")
        return ls

    def live_halves(self, qpu: str) -> int:
        return sum(ls.counts[PairStatus.AVAILABLE] + ls.counts[PairStatus.RESERVED]
                   for k, ls in self.links.items() if qpu in k)

    def live_edges(self) -> set[tuple[str, str]]:
        return {k for k, ls in self.links.items()
                if ls.counts[PairStatus.AVAILABLE] + ls.counts[PairStatus.RESERVED] > 0}

    # --- generation -------------------------------------------------------

    def _wants_pairs(self, ls: LinkState) -> bool:
        if not ls.up:
            return False
        have = len(ls.available)
        need = ls.pending_need()
        if self.policy.mode is PolicyMode.POOLED:
            return have < max(self.policy.target_pool_size, need)
        if self.policy.mode is PolicyMode.JUST_IN_TIME:
            return have < need + ls.prefetch
        return have < need

    def _kick(self, ls: LinkState) -> None:
        if ls.next_attempt is None and self._wants_pairs(ls):
            ls.next_attempt = self.engine.schedule_in(
                ls.link.attempt_period, f"qlink:{ls.link.a}-{ls.link.b}", "gen_attempt",
                lambda ev, ls=ls: self._attempt_event(ls))

    def start(self) -> None:
        for key in sorted(self.links):
            self._kick(self.links[key])

    def _attempt_event(self, ls: LinkState) -> None:
        ls.next_attempt = None
        self.generation_attempt(ls.link)
        self._kick(ls)

    def generation_attempt(self, link: QuantumLink) -> EntangledPair | None:
        """One heralded attempt on ``link``; None if it failed or was suppressed."""
        ls = self.links[link.key]
        if not self._wants_pairs(ls):
            return None
        ls.stats.attempts += 1
        rng = self.streams(f"entmgr:{link.a}-{link.b}")
        if not draw(rng, Bernoulli(link.p_gen)):
            if self.on_starvation is Starvation.ABORT_JOB:
                self._abort_hopeless(ls)
            return None
        now = self.engine.now
        pair = EntangledPair(next(self._ids), link.key, now, now + link.pair_lifetime)
        pair._hook = self._hook
        self.pairs[pair.id] = pair
        st = ls.stats
        if st.last_created is not None:
            st.creation_gaps.append(now - st.last_created)
        else:
            st.first_created = now
        st.last_created = now
        st.created += 1
        if self.live_listener is not None:
            for q in pair.endpoints:
                self.live_listener(q)
        ls.counts[PairStatus.AVAILABLE] += 1
        ls.available.append(pair)
        self.engine.schedule(pair.expires_at, f"pair:{pair.id}", "pair_expire",
                             lambda ev, p=pair: self._expire_one(p))
        self._serve(ls)
        return pair

    def _expected_gen_time(self, ls: LinkState, pairs: int) -> float:
        if ls.link.p_gen <= 0:
            return math.inf
        return pairs * ls.link.attempt_period / ls.link.p_gen

    def _abort_hopeless(self, ls: LinkState) -> None:
        ahead = 0
        have = len(ls.available)
        for t in list(ls.tickets):
            ahead += t.request.count
            if t.request.deadline is None:
                continue
            short = max(0, ahead - have)
            if self.engine.now + self._expected_gen_time(ls, short) > t.request.deadline:
                self._fail(ls, t)
                ahead -= t.request.count

    # --- requests ---------------------------------------------------------

    def _fresh(self, ls: LinkState) -> list[EntangledPair]:
        now = self.engine.now
        for p in [p for p in ls.available if p.expires_at <= now]:
            p.transition(PairStatus.EXPIRED)
        return sorted(ls.available, key=lambda p: (-p.expires_at, p.id))

    def _reserve(self, ls: LinkState, count: int, holder) -> list[EntangledPair]:
        chosen = self._fresh(ls)[:count]
        for p in chosen:
            p.holder = holder
            p.transition(PairStatus.RESERVED)
            self.served_pair_ids.add(p.id)
        if self.policy.mode is PolicyMode.JUST_IN_TIME:
            ls.prefetch = max(0, ls.prefetch - count)
        return chosen

    def request_pairs(self, req: PairRequest, on_fulfilled=None, on_failed=None) -> list[EntangledPair] | Ticket:
        ls = self.link_state(*req.endpoints)
        now = self.engine.now
        if req.deadline is not None and req.deadline <= now:
            raise RequestRejected(f"request from {req.requester}: deadline {req.deadline} already passed")
        ls.stats.requests += 1
        if not ls.tickets and len(self._fresh(ls)) >= req.count:
            ls.stats.immediate += 1
            return self._reserve(ls, req.count, req.requester)
        t = Ticket(req, now, next(self._ticket_seq), on_fulfilled, on_failed)
        ls.tickets.append(t)
        if req.deadline is not None:
            t.deadline_event = self.engine.schedule(req.deadline, f"ticket:{req.requester}", "pair_deadline",
                                                    lambda ev, t=t, ls=ls: self._deadline(ls, t))
        self._kick(ls)
        return t

    def _serve(self, ls: LinkState) -> None:
        while ls.tickets:
            head = ls.tickets[0]
            if len(self._fresh(ls)) < head.request.count:
                break
            ls.tickets.popleft()
            head.pairs = self._reserve(ls, head.request.count, head.request.requester)
            head.status = TicketStatus.FULFILLED
            if head.deadline_event is not None:
                head.deadline_event.cancel()
            if head.on_fulfilled:
                head.on_fulfilled(head.pairs)

    def _fail(self, ls: LinkState, t: Ticket) -> None:
        if t.status is not TicketStatus.PENDING:
            return
        ls.tickets.remove(t)
        t.status = TicketStatus.FAILED
        ls.stats.failures += 1
        if t.deadline_event is not None:
            t.deadline_event.cancel()
        if t.on_failed:
            t.on_failed(t)
        self._serve(ls)

    def _deadline(self, ls: LinkState, t: Ticket) -> None:
        self._fail(ls, t)

    def cancel(self, t: Ticket) -> None:
        ls = self.links[link_key(*t.request.endpoints)]
        if t.status is TicketStatus.PENDING:
            ls.tickets.remove(t)
            t.status = TicketStatus.CANCELLED
            if t.deadline_event is not None:
                t.deadline_event.cancel()
            self._serve(ls)

    def release(self, pair: EntangledPair) -> None:
        """Return a reserved pair to the pool (reservation dropped)."""
        pair.holder = None
        pair.transition(PairStatus.AVAILABLE)
        ls = self.links[pair.endpoints]
        self._serve(ls)

    def consume(self, pair: EntangledPair) -> None:
        pair.consume(self.engine.now)

    def expect(self, a: str, b: str, count: int, at_time: int) -> None:
        """Just-in-time hint: ``count`` pairs will be needed around ``at_time``."""
        ls = self.link_state(a, b)
        lead = math.ceil(self._expected_gen_time(ls, count)) if ls.link.p_gen > 0 else 0
        start = max(self.engine.now, at_time - lead)

        def arm(ev):
            ls.prefetch += count
            self._kick(ls)

        self.engine.schedule(start, f"qlink:{a}-{b}", "jit_prefetch", arm)

    # --- expiry -----------------------------------------------------------

    def _expire_one(self, pair: EntangledPair) -> None:
        if pair.live:
            pair.transition(PairStatus.EXPIRED)
            self._kick(self.links[pair.endpoints])

    def expire_sweep(self, now: int) -> list[int]:
        out = []
        for key in sorted(self.links):
            for p in sorted((p for p in self.pairs.values() if p.endpoints == key), key=lambda p: p.id):
                if p.live and p.expires_at <= now:
                    p.transition(PairStatus.EXPIRED)
                    out.append(p.id)
        return out

    def set_qpu_up(self, qpu: str, up: bool) -> list[int]:
        """Take a QPU down (dropping its live pairs) or bring it back."""
        dropped = []
        if up:
            self.down.discard(qpu)
        else:
            self.down.add(qpu)
        for key, ls in sorted(self.links.items()):
            if qpu not in key:
                continue
            if not up:
                for p in sorted((p for p in self.pairs.values() if p.endpoints == key and p.live),
                                key=lambda p: p.id):
                    p.transition(PairStatus.EXPIRED)
                    dropped.append(p.id)
                if ls.next_attempt is not None:
                    ls.next_attempt.cancel()
                    ls.next_attempt = None
            ls.up = not (set(key) & self.down)
            self._kick(ls)
        return dropped

    # --- idle error correction -------------------------------------------

    def idle_ec_cost(self, qpu: str, interval: int, holds_live_state: bool | None = None) -> int:
        if interval < 0:
            raise ValueError("interval must be >= 0")
        live = self.live_halves(qpu) > 0 if holds_live_state is None else holds_live_state
        if not live:
            return 0
        return int(round(self.ec_duty_cycle * interval))


def idle_ec_cost(duty_cycle: float, interval: int, holds_live_state: bool) -> int:
    if interval < 0:
        raise ValueError("interval must be >= 0")
    return int(round(duty_cycle * interval)) if holds_live_state else 0
