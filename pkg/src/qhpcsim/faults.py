"""QPU failure injection and correlated cascades over live entanglement."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .sim_core import ConfigurationError, Exponential, RngStream, StreamFactory, draw


@dataclass(frozen=True)
class FaultModel:
    gate_error_prob: float | None = None
    qpu_failure_rate: float = 0.0  # failures per second per QPU
    p_cascade: float = 0.0
    repair_time: int = 0

    def __post_init__(self):
        if self.gate_error_prob is not None and not 0.0 <= self.gate_error_prob <= 1.0:
            raise ConfigurationError("gate_error_prob outside [0, 1]")
        if self.qpu_failure_rate < 0:
            raise ConfigurationError("qpu_failure_rate must be >= 0")
        if not 0.0 <= self.p_cascade <= 1.0:
            raise ConfigurationError("p_cascade outside [0, 1]")
        if self.repair_time < 0:
            raise ConfigurationError("repair_time must be >= 0")


@dataclass
class EntanglementGraph:
    vertices: list[str]
    edges: set[frozenset[str]] = field(default_factory=set)

    def __post_init__(self):
        vs = set(self.vertices)
        for e in self.edges:
            if len(e) != 2 or not e <= vs:
                raise ValueError(f"edge {sorted(e)} is not between two known QPUs")

    def neighbors(self, v: str) -> list[str]:
        order = {x: i for i, x in enumerate(self.vertices)}
        return sorted((next(iter(e - {v})) for e in self.edges if v in e), key=order.__getitem__)

    def component(self, v: str) -> set[str]:
        seen = {v}
        stack = [v]
        while stack:
            for nb in self.neighbors(stack.pop()):
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return seen


def entanglement_graph(qpus: Iterable[str], live_links: Iterable[tuple[str, str]],
                       coentangled: Iterable[Iterable[str]] = ()) -> EntanglementGraph:
    """Edges from live pairs plus every pair of QPUs sharing an in-flight program."""
    verts = list(qpus)
    edges = {frozenset(k) for k in live_links}
    for group in coentangled:
        g = list(group)
        for i in range(len(g)):
            for j in range(i + 1, len(g)):
                edges.add(frozenset((g[i], g[j])))
    return EntanglementGraph(verts, edges)


def inject_failures(model: FaultModel, horizon: int, qpus: Iterable[str],
                    streams: StreamFactory) -> list[tuple[int, str]]:
    """Poisson failure instants per QPU in [0, horizon), one named stream each."""
    out: list[tuple[int, str]] = []
    if model.qpu_failure_rate <= 0:
        return out
    dist = Exponential(model.qpu_failure_rate)
    for k, q in enumerate(qpus):
        rng = streams(f"faults:{q}")
        t = 0.0
        while True:
            t += draw(rng, dist)
            ns = int(t * 1e9)
            if ns >= horizon:
                break
            out.append((ns, k, q))
    out.sort()
    return [(t, q) for t, _, q in out]


def cascade(seed_qpu: str, graph: EntanglementGraph, p_cascade: float, rng: RngStream | None = None,
            edge_draws: Mapping[frozenset[str], float] | None = None) -> set[str]:
    """Breadth-first percolation from ``seed_qpu``.

    Each edge leaving a newly failed QPU toward a healthy one is tried once
    and fires when its uniform draw falls below ``p_cascade``. Supplying
    ``edge_draws`` fixes those uniforms (for coupling runs at different p).
    """
    if seed_qpu not in graph.vertices:
        raise ValueError(f"{seed_qpu} is not in the entanglement graph")
    failed = {seed_qpu}
    tried: set[frozenset[str]] = set()
    frontier = deque([seed_qpu])
    while frontier:
        v = frontier.popleft()
        for nb in graph.neighbors(v):
            e = frozenset((v, nb))
            if e in tried or nb in failed:
                continue
            tried.add(e)
            if edge_draws is not None:
                u = edge_draws[e]
            elif p_cascade <= 0.0:
                continue
            elif p_cascade >= 1.0:
                u = 0.0
            else:
                u = rng.uniform()
            if u < p_cascade:
                failed.add(nb)
                frontier.append(nb)
    return failed


def expected_cascade_size(seed_qpu: str, graph: EntanglementGraph, p_cascade: float) -> float:
    """Exact mean cascade size by enumerating every edge outcome in the seed's component.

    Exponential in the number of edges; meant as a test oracle for small graphs.
    """
    comp = graph.component(seed_qpu)
    edges = sorted((e for e in graph.edges if e <= comp), key=lambda e: sorted(e))
    total = 0.0
    for mask in range(1 << len(edges)):
        prob = 1.0
        open_edges = []
        for i, e in enumerate(edges):
            if mask >> i & 1:
                prob *= p_cascade
                open_edges.append(e)
            else:
                prob *= 1.0 - p_cascade
        if prob == 0.0:
            continue
        reached = EntanglementGraph(graph.vertices, set(open_edges)).component(seed_qpu)
        total += prob * len(reached)
    return total
