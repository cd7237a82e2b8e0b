"""Discrete-event kernel: virtual clock, message passing, timers, seeded RNG.

All coordination between agents goes through Message values delivered with a
fixed per-hop latency. The event queue is keyed by (fire_at, seq) where seq is
a monotone insertion counter, so runs with the same seed and scenario replay
in exactly the same order.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .model import MachineReport, Query, ResourceVector, SlaVerdict


class SimulationError(Exception):
    """Raised when the simulation itself is driven incorrectly."""


class MessageKind(Enum):
    USER_REQUEST = "UserRequest"
    RESOURCE_REQUEST = "ResourceRequest"
    STATUS_REQUEST = "StatusRequest"
    STATUS_REPORT = "StatusReport"
    ALLOCATION_RESULT = "AllocationResult"
    SUPERVISION_REPORT = "SupervisionReport"


@dataclass(frozen=True)
class ServiceDescription:
    """Raw user request as it arrives at the analyzer, before validation.

    Fields are Optional so a malformed request can be represented and then
    rejected with a reason instead of crashing the intake path.
    """

    request_id: str
    user_id: str
    cpu: Optional[int]
    ram: Optional[int]
    disk: Optional[int]
    min_cpu: Optional[int]
    min_ram: Optional[int]
    min_disk: Optional[int]
    max_latency_ms: Optional[int]
    max_price: Optional[float]
    lifetime_s: Optional[int]


@dataclass(frozen=True)
class StatusRequestBody:
    round_id: int


@dataclass(frozen=True)
class StatusReportBody:
    report: MachineReport
    # None marks an unsolicited push (e.g. after a VM expired), which must not
    # be mistaken for an answer to an open polling round.
    round_id: Optional[int]


@dataclass(frozen=True)
class AllocationResultBody:
    query_id: str
    verdict: SlaVerdict
    pm_id: Optional[str]
    offered: Optional[ResourceVector]
    latency_ms: int
    price: float
    reason: str


@dataclass(frozen=True)
class SupervisionRecord:
    """One line of the coordinator's ledger: how a query was resolved."""

    time_ms: int
    query_id: str
    verdict: SlaVerdict
    pm_id: Optional[str]
    system_state: str
    option_used: str
    attempts: int
    migrations: int
    reason: str


_KIND_BODY: dict[MessageKind, type] = {
    MessageKind.USER_REQUEST: ServiceDescription,
    MessageKind.RESOURCE_REQUEST: Query,
    MessageKind.STATUS_REQUEST: StatusRequestBody,
    MessageKind.STATUS_REPORT: StatusReportBody,
    MessageKind.ALLOCATION_RESULT: AllocationResultBody,
    MessageKind.SUPERVISION_REPORT: SupervisionRecord,
}


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    sender: str
    recipient: str
    body: object

    def __post_init__(self) -> None:
        expected = _KIND_BODY[self.kind]
        if not isinstance(self.body, expected):
            raise SimulationError(
                f"{self.kind.value} message carries {type(self.body).__name__}, "
                f"expected {expected.__name__}"
            )


# ----------------------------------------------------------------------------
# Event queue payloads


@dataclass(frozen=True)
class MessageDelivery:
    message: Message


@dataclass(frozen=True)
class TimerFired:
    agent: str
    tag: str


@dataclass(frozen=True)
class QueryArrival:
    query: Query


@dataclass(frozen=True)
class VmExpiry:
    vm_id: str


Payload = MessageDelivery | TimerFired | QueryArrival | VmExpiry


@dataclass(frozen=True, order=True)
class Event:
    fire_at: int
    seq: int
    payload: Payload = field(compare=False)


class Kernel:
    """Event queue, virtual clock, and deterministic RNG streams."""

    def __init__(self, seed: int, hop_latency_ms: int = 1):
        if hop_latency_ms < 1:
            raise SimulationError(f"hop latency must be >= 1 ms, got {hop_latency_ms}")
        self.seed = seed
        self.hop_latency_ms = hop_latency_ms
        self.now = 0
        self._queue: list[Event] = []
        self._seq = 0
        self._agents: set[str] = set()
        self._streams: dict[str, random.Random] = {}
        # Installed by the simulation before run_until; kept as a plain
        # callable so the kernel stays ignorant of agent types.
        self.dispatch: Optional[Callable[[Event], None]] = None

    def stream(self, name: str) -> random.Random:
        """Named RNG substream, stable across runs with the same seed."""
        if name not in self._streams:
            self._streams[name] = random.Random(f"{self.seed}:{name}")
        return self._streams[name]

    def register(self, name: str) -> None:
        if name in self._agents:
            raise SimulationError(f"agent name already registered: {name}")
        self._agents.add(name)

    def knows(self, name: str) -> bool:
        return name in self._agents

    def schedule(self, fire_at: int, payload: Payload) -> None:
        if fire_at < self.now:
            raise SimulationError(
                f"cannot schedule event at t={fire_at} before now={self.now}"
            )
        heapq.heappush(self._queue, Event(fire_at, self._seq, payload))
        self._seq += 1

    def send(self, message: Message, latency_ms: Optional[int] = None) -> None:
        """Deliver a message after the given latency (default: one hop)."""
        if message.recipient not in self._agents:
            raise SimulationError(f"message to unknown agent: {message.recipient}")
        delay = self.hop_latency_ms if latency_ms is None else latency_ms
        self.schedule(self.now + delay, MessageDelivery(message))

    def set_timer(self, agent: str, tag: str, delay_ms: int) -> None:
        if delay_ms < 0:
            raise SimulationError(f"negative timer delay: {delay_ms}")
        self.schedule(self.now + delay_ms, TimerFired(agent, tag))

    def pending(self) -> int:
        return len(self._queue)

    def run_until(self, t_end: int) -> None:
        """Process every event with fire_at <= t_end, advancing the clock.

        The clock stops at the last processed event, not at t_end, so an
        empty run leaves it untouched.
        """
        if self.dispatch is None:
            raise SimulationError("no dispatch function installed")
        while self._queue and self._queue[0].fire_at <= t_end:
            event = heapq.heappop(self._queue)
            self.now = event.fire_at
            self.dispatch(event)


@dataclass
class SimulationTrace:
    """Observable outcome of a run, kept separate from live agent state."""

    events: list[str] = field(default_factory=list)
    final_time: int = 0

    def log(self, time_ms: int, text: str) -> None:
        self.events.append(f"[{time_ms:>8d}] {text}")
