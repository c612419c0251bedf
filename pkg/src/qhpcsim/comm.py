"""Classical messaging and quantum state transfer between QPUs."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable

import numpy as np

from .qram import CapacityError, GateSpec, QuantumRegister, apply_gate
from .sim_core import Bernoulli, Engine, RngStream, SimulationError, draw
from .topology import ClassicalLink, QuantumLink

SIDE_CHANNEL_BITS_PER_QUBIT = 2


class RoutingError(ValueError):
    pass


class TransferError(RuntimeError):
    pass


class MessageKind(str, Enum):
    PROGRAM_SUBMIT = "program_submit"
    RESULT_RETURN = "result_return"
    SIDE_CHANNEL = "side_channel"
    CONTROL = "control"


@dataclass(frozen=True)
class ClassicalMessage:
    src: str
    dst: str
    size: int
    kind: MessageKind = MessageKind.CONTROL

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("message size must be >= 1 byte")


def serialization_ns(size: int, bandwidth: float) -> int:
    """ceil(size / bandwidth) expressed in whole nanoseconds."""
    return math.ceil(Fraction(size * 1_000_000_000) / Fraction(bandwidth))


def message_delay(link: ClassicalLink, size: int) -> int:
    return link.latency + serialization_ns(size, link.bandwidth)


def send_classical(engine: Engine, link: ClassicalLink, msg: ClassicalMessage,
                   on_delivery: Callable[[int], None] | None = None) -> int:
    if {msg.src, msg.dst} != {link.a, link.b}:
        raise RoutingError(f"message {msg.src}->{msg.dst} cannot use link {link.a}-{link.b}")
    at = engine.now + message_delay(link, msg.size)
    engine.schedule(at, msg.dst, f"msg_{msg.kind.value}",
                    (lambda ev: on_delivery(ev.fire_at)) if on_delivery else None, msg)
    return at


def side_channel_bytes(payload_qubits: int) -> int:
    return max(1, math.ceil(SIDE_CHANNEL_BITS_PER_QUBIT * payload_qubits / 8))


def classical_description_bytes(payload_qubits: int) -> int:
    """Bytes to write down a k-qubit state: 2**k complex doubles."""
    return 16 * 2**payload_qubits


# --- ownership (no-cloning bookkeeping) ------------------------------------


class Ownership:
    """Tracks where each transferred payload lives.

    A payload is held by exactly one QPU, is in flight, or is lost; it is
    never held by two registers at once.
    """

    IN_FLIGHT = "<in-flight>"
    LOST = "<lost>"

    def __init__(self):
        self.holder: dict[int, str] = {}
        self._ids = itertools.count()

    def create(self, qpu: str) -> int:
        t = next(self._ids)
        self.holder[t] = qpu
        return t

    def launch(self, token: int, src: str) -> None:
        if self.holder.get(token) != src:
            raise SimulationError(f"payload {token} not held by {src} (held by {self.holder.get(token)})")
        self.holder[token] = self.IN_FLIGHT

    def land(self, token: int, dst: str) -> None:
        if self.holder.get(token) != self.IN_FLIGHT:
            raise SimulationError(f"payload {token} delivered but not in flight")
        self.holder[token] = dst

    def lose(self, token: int) -> None:
        if self.holder.get(token) != self.IN_FLIGHT:
            raise SimulationError(f"payload {token} lost but not in flight")
        self.holder[token] = self.LOST

    def release(self, token: int) -> None:
        self.holder.pop(token, None)

    def holders(self, token: int) -> int:
        """Number of registers holding the payload (0 or 1)."""
        h = self.holder.get(token, self.LOST)
        return 0 if h in (self.IN_FLIGHT, self.LOST) else 1


class TransferMode(str, Enum):
    DIRECT = "direct"
    TELEPORT = "teleport"


class TransferStatus(str, Enum):
    IN_FLIGHT = "in_flight"
    DELIVERED = "delivered"
    FAILED = "failed"


_transfer_ids = itertools.count()


@dataclass
class QuantumTransfer:
    mode: TransferMode
    payload_qubits: int
    src_qpu: str
    dst_qpu: str
    token: int | None = None
    status: TransferStatus = TransferStatus.IN_FLIGHT
    launched_at: int | None = None
    completed_at: int | None = None
    side_channel_at: int | None = None
    pair_ids: list[int] = field(default_factory=list)
    id: int = field(default_factory=lambda: next(_transfer_ids))

    def __post_init__(self):
        if self.payload_qubits < 1:
            raise ValueError("transfer needs at least one payload qubit")


def direct_transmit(engine: Engine, transfer: QuantumTransfer, qlink: QuantumLink, rng: RngStream,
                    swap_duration: int, free_elements: int, ownership: Ownership | None = None,
                    on_done: Callable[[QuantumTransfer], None] | None = None) -> int:
    """Ship the payload on a mobile carrier, then swap it into the destination.

    Each qubit survives transit with probability ``qlink.p_gen``. A loss
    destroys the state: there is no copy to resend. Returns the time at
    which the outcome is known.
    """
    if transfer.mode is not TransferMode.DIRECT:
        raise TransferError("direct_transmit called on a teleport transfer")
    if {transfer.src_qpu, transfer.dst_qpu} != {qlink.a, qlink.b}:
        raise RoutingError(f"transfer {transfer.src_qpu}->{transfer.dst_qpu} not on link {qlink.a}-{qlink.b}")
    if transfer.payload_qubits > free_elements:
        raise CapacityError(transfer.payload_qubits, free_elements, what=f"{transfer.dst_qpu} free space")
    survived = all([draw(rng, Bernoulli(qlink.p_gen)) for _ in range(transfer.payload_qubits)])
    transit = qlink.attempt_period * transfer.payload_qubits
    transfer.launched_at = engine.now
    if ownership is not None and transfer.token is not None:
        ownership.launch(transfer.token, transfer.src_qpu)

    def finish(ev):
        if survived:
            transfer.status = TransferStatus.DELIVERED
            if ownership is not None and transfer.token is not None:
                ownership.land(transfer.token, transfer.dst_qpu)
        else:
            transfer.status = TransferStatus.FAILED
            if ownership is not None and transfer.token is not None:
                ownership.lose(transfer.token)
        transfer.completed_at = ev.fire_at
        if on_done:
            on_done(transfer)

    done_at = engine.now + transit + (swap_duration if survived else 0)
    kind = "direct_delivered" if survived else "direct_failed"
    engine.schedule(done_at, transfer.dst_qpu, kind, finish, transfer.id)
    return done_at


def teleport(engine: Engine, transfer: QuantumTransfer, pairs, clink: ClassicalLink,
             correction_duration: int, consume: Callable | None = None, ownership: Ownership | None = None,
             on_done: Callable[[QuantumTransfer], None] | None = None) -> int:
    """Teleport the payload using one reserved pair per qubit.

    The pairs are consumed at launch (Bell measurement at the source); the
    destination applies its correction after the side-channel message
    carrying two bits per qubit arrives. Returns the completion time.
    """
    if transfer.mode is not TransferMode.TELEPORT:
        raise TransferError("teleport called on a direct transfer")
    pairs = list(pairs)
    if len(pairs) != transfer.payload_qubits:
        raise TransferError(f"teleporting {transfer.payload_qubits} qubits needs as many pairs, got {len(pairs)}")
    want = {transfer.src_qpu, transfer.dst_qpu}
    for p in pairs:
        if not p.usable(engine.now):
            raise TransferError(f"pair {p.id} is {p.status.value}, not a live reservation")
        if set(p.endpoints) != want:
            raise TransferError(f"pair {p.id} endpoints {p.endpoints} do not match transfer")
    if {clink.a, clink.b} != want:
        raise RoutingError(f"side channel {clink.a}-{clink.b} does not join {transfer.src_qpu} and {transfer.dst_qpu}")
    for p in pairs:
        if consume is not None:
            consume(p)
        else:
            p.consume(engine.now)
        transfer.pair_ids.append(p.id)
    if ownership is not None and transfer.token is not None:
        ownership.launch(transfer.token, transfer.src_qpu)
    transfer.launched_at = engine.now
    msg = ClassicalMessage(transfer.src_qpu, transfer.dst_qpu, side_channel_bytes(transfer.payload_qubits),
                           MessageKind.SIDE_CHANNEL)

    def corrected(ev):
        transfer.status = TransferStatus.DELIVERED
        transfer.completed_at = ev.fire_at
        if ownership is not None and transfer.token is not None:
            ownership.land(transfer.token, transfer.dst_qpu)
        if on_done:
            on_done(transfer)

    def side_channel_arrived(at: int):
        transfer.side_channel_at = at
        engine.schedule(at + correction_duration, transfer.dst_qpu, "teleport_delivered", corrected, transfer.id)

    arrive = send_classical(engine, clink, msg, side_channel_arrived)
    return arrive + correction_duration


# --- state-vector co-simulation of the teleportation circuit ---------------

_H = GateSpec("H", 1, 1, unitary=np.array([[1, 1], [1, -1]]) / np.sqrt(2))
_X = GateSpec("X", 1, 1, unitary=np.array([[0, 1], [1, 0]]))
_Z = GateSpec("Z", 1, 1, unitary=np.array([[1, 0], [0, -1]]))
_CNOT = GateSpec("CNOT", 2, 1, unitary=np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]]))


def teleport_statevector(amplitudes, rng: RngStream) -> tuple[np.ndarray, str]:
    """Run the three-qubit teleportation circuit on a co-simulated register.

    Element 0 holds the payload at the source, element 1 the source half of
    the pair, element 2 the destination half. Returns the destination
    amplitudes and the two side-channel bits.
    """
    a = np.asarray(amplitudes, dtype=complex)
    reg = QuantumRegister(3)
    reg.set_state(np.kron(a, np.array([1, 0, 0, 0], dtype=complex)))
    apply_gate(reg, _H, [1])
    apply_gate(reg, _CNOT, [1, 2])
    apply_gate(reg, _CNOT, [0, 1])
    apply_gate(reg, _H, [0])
    bits = reg.measure_elements([0, 1], rng)
    if bits[1] == "1":
        apply_gate(reg, _X, [2])
    if bits[0] == "1":
        apply_gate(reg, _Z, [2])
    psi = reg.state.reshape(2, 2, 2)[int(bits[0]), int(bits[1]), :]
    return psi.copy(), bits
