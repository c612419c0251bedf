"""Deterministic discrete-event engine and named random streams."""

from __future__ import annotations

import hashlib
import heapq
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, TextIO

import numpy as np

__all__ = [
    "SimulationError",
    "ConfigurationError",
    "Event",
    "RunSummary",
    "Engine",
    "RngStream",
    "StreamFactory",
    "Uniform01",
    "Bernoulli",
    "Exponential",
    "Geometric",
    "Discrete",
    "draw",
    "seconds_to_ns",
]

NS_PER_S = 1_000_000_000


class SimulationError(RuntimeError):
    """An internal inconsistency; the run cannot continue."""


class ConfigurationError(ValueError):
    """Invalid user-supplied parameter."""


def seconds_to_ns(seconds: float) -> int:
    return int(math.ceil(seconds * NS_PER_S - 1e-9))


@dataclass(eq=False)
class Event:
    fire_at: int
    seq: int
    target: str
    kind: str
    payload: Any = None
    action: Callable[["Event"], None] | None = None
    cancelled: bool = False

    def cancel(self) -> None:
        self.cancelled = True

    @property
    def key(self) -> tuple[int, int]:
        return (self.fire_at, self.seq)


@dataclass(frozen=True)
class RunSummary:
    processed: int
    clock: int


class Engine:
    """Single-threaded event loop with an integer nanosecond clock.

    Events are ordered by ``(fire_at, seq)`` where ``seq`` is a global
    insertion counter, so simultaneous events run in scheduling order.
    Cancelled events are dropped lazily and never reach the log.
    """

    def __init__(self, log: TextIO | None = None):
        self.now = 0
        self._seq = 0
        self._queue: list[tuple[int, int, Event]] = []
        self._log = log
        self.processed = 0
        self._last_key: tuple[int, int] = (-1, -1)

    def __len__(self) -> int:
        return sum(1 for _, _, e in self._queue if not e.cancelled)

    def schedule(
        self,
        fire_at: int,
        target: str,
        kind: str,
        action: Callable[[Event], None] | None = None,
        payload: Any = None,
    ) -> Event:
        fire_at = int(fire_at)
        if fire_at < self.now:
            raise SimulationError(
                f"event in past: {kind}@{target} at t={fire_at} < clock {self.now}"
            )
        ev = Event(fire_at, self._seq, target, kind, payload, action)
        self._seq += 1
        heapq.heappush(self._queue, (ev.fire_at, ev.seq, ev))
        return ev

    def schedule_in(self, delay: int, target: str, kind: str, action=None, payload=None) -> Event:
        if delay < 0:
            raise SimulationError(f"negative delay {delay} for {kind}@{target}")
        return self.schedule(self.now + delay, target, kind, action, payload)

    def peek_time(self) -> int | None:
        while self._queue and self._queue[0][2].cancelled:
            heapq.heappop(self._queue)
        return self._queue[0][0] if self._queue else None

    def step(self) -> Event | None:
        while self._queue:
            _, _, ev = heapq.heappop(self._queue)
            if ev.cancelled:
                continue
            self._fire(ev)
            return ev
        return None

    def _fire(self, ev: Event) -> None:
        if ev.key <= self._last_key:
            raise SimulationError(f"event order violated at {ev.key}")
        self._last_key = ev.key
        self.now = ev.fire_at
        self.processed += 1
        if self._log is not None:
            self._log.write(f"{ev.fire_at}\t{ev.seq}\t{ev.target}\t{ev.kind}\n")
        if ev.action is not None:
            ev.action(ev)

    def run_until(self, limit: int) -> RunSummary:
        start = self.processed
        while True:
            t = self.peek_time()
            if t is None or t > limit:
                break
            self.step()
        return RunSummary(self.processed - start, self.now)


# --- random streams --------------------------------------------------------


@dataclass(frozen=True)
class Uniform01:
    pass


@dataclass(frozen=True)
class Bernoulli:
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ConfigurationError(f"bernoulli p={self.p} outside [0, 1]")


@dataclass(frozen=True)
class Exponential:
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ConfigurationError(f"exponential rate={self.rate} must be > 0")


@dataclass(frozen=True)
class Geometric:
    """Number of trials up to and including the first success (support 1, 2, ...)."""

    p: float

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ConfigurationError(f"geometric p={self.p} outside (0, 1]")


@dataclass(frozen=True)
class Discrete:
    weights: tuple[float, ...]

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if not w or any(x < 0 for x in w) or sum(w) <= 0:
            raise ConfigurationError(f"discrete weights {self.weights} invalid")
        object.__setattr__(self, "weights", w)


Distribution = Uniform01 | Bernoulli | Exponential | Geometric | Discrete


def _stream_words(label: str) -> list[int]:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


@dataclass
class RngStream:
    """A generator keyed by (seed, stream_id).

    Every ``draw`` consumes exactly one uniform variate, so the position of
    a stream is simply the number of draws made from it.
    """

    seed: int
    stream_id: str
    draws: int = 0
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        ss = np.random.SeedSequence([int(self.seed) & 0xFFFFFFFFFFFFFFFF, *_stream_words(self.stream_id)])
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def uniform(self) -> float:
        self.draws += 1
        return float(self._gen.random())

    def draw(self, dist: Distribution):
        return draw(self, dist)


def draw(stream: RngStream, dist: Distribution):
    u = stream.uniform()
    if isinstance(dist, Uniform01):
        return u
    if isinstance(dist, Bernoulli):
        return u < dist.p
    if isinstance(dist, Exponential):
        return -math.log1p(-u) / dist.rate
    if isinstance(dist, Geometric):
        if dist.p == 1.0:
            return 1
        return max(1, int(math.ceil(math.log1p(-u) / math.log1p(-dist.p))))
    if isinstance(dist, Discrete):
        total = sum(dist.weights)
        acc = 0.0
        target = u * total
        for i, w in enumerate(dist.weights):
            acc += w
            if target < acc:
                return i
        return len(dist.weights) - 1
    raise ConfigurationError(f"unknown distribution {dist!r}")


class StreamFactory:
    """Hands out one independent stream per component label."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, RngStream] = {}

    def __call__(self, stream_id: str) -> RngStream:
        s = self._streams.get(stream_id)
        if s is None:
            s = self._streams[stream_id] = RngStream(self.seed, stream_id)
        return s

    def labels(self) -> Iterable[str]:
        return sorted(self._streams)
