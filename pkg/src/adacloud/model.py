"""Domain types and the capacity/QoS algebra shared by every other module.

Everything here is a value type or a pure function; nothing touches the
event kernel. Resource quantities are integers (cores, MiB, GiB) so that
capacity arithmetic is exact and the packing problem stays enumerable.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable


class CapacityUnderflowError(Exception):
    """Resource accounting went negative: always a bookkeeping bug, never bad user input."""


@dataclass(frozen=True)
class ResourceVector:
    """Quantities of cpu (cores), ram (MiB) and disk (GiB)."""

    cpu: int
    ram: int
    disk: int

    def __post_init__(self):
        for name in ("cpu", "ram", "disk"):
            value = getattr(self, name)
            if value < 0:
                raise ValueError(f"{name} must be non-negative, got {value!r}")

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.cpu, self.ram, self.disk)

    def is_zero(self) -> bool:
        return self.cpu == 0 and self.ram == 0 and self.disk == 0


ZERO = ResourceVector(0, 0, 0)


def fits(demand: ResourceVector, free: ResourceVector) -> bool:
    """True iff demand <= free in every component (component-wise sufficiency)."""
    return demand.cpu <= free.cpu and demand.ram <= free.ram and demand.disk <= free.disk


def vec_add(a: ResourceVector, b: ResourceVector) -> ResourceVector:
    return ResourceVector(a.cpu + b.cpu, a.ram + b.ram, a.disk + b.disk)


def vec_sub(a: ResourceVector, b: ResourceVector) -> ResourceVector:
    """Component-wise a - b; raises CapacityUnderflowError if any component of b exceeds a."""
    if b.cpu > a.cpu or b.ram > a.ram or b.disk > a.disk:
        raise CapacityUnderflowError(f"cannot subtract {b} from {a}")
    return ResourceVector(a.cpu - b.cpu, a.ram - b.ram, a.disk - b.disk)


def vec_sum(vectors: Iterable[ResourceVector]) -> ResourceVector:
    total = ZERO
    for v in vectors:
        total = vec_add(total, v)
    return total


class SystemState(Enum):
    """Health of the whole allocation system as seen by the scheduler."""

    NORMAL = "Normal"
    DEGRADED = "Degraded"
    BROKEN = "Broken"


class SlaVerdict(Enum):
    """Outcome of checking an offered allocation against the user's QoS terms."""

    ACCEPTABLE = "Acceptable"
    DEGRADED_ACCEPTABLE = "DegradedAcceptable"
    UNACCEPTABLE = "Unacceptable"


@dataclass(frozen=True)
class QoSSpec:
    """Quality-of-service terms attached to a request.

    min_capacity is the lower edge of the acceptable capacity range; the
    upper edge is the query's requested vector. max_latency_ms bounds the
    delay between request arrival and allocation; max_price bounds cost
    per virtual hour.
    """

    min_capacity: ResourceVector
    max_latency_ms: int
    max_price: float

    def __post_init__(self):
        if self.max_latency_ms <= 0:
            raise ValueError(f"max_latency_ms must be positive, got {self.max_latency_ms}")
        if self.max_price < 0:
            raise ValueError(f"max_price must be non-negative, got {self.max_price}")


@dataclass(frozen=True)
class Query:
    """A user request: demanded capacity plus QoS bounds, arriving at a virtual time."""

    id: str
    user_id: str
    requested: ResourceVector
    qos: QoSSpec
    arrival_ms: int
    lifetime_s: int

    def __post_init__(self):
        if self.requested.is_zero():
            raise ValueError(f"query {self.id}: requested must have a positive component")
        if self.lifetime_s <= 0:
            raise ValueError(f"query {self.id}: lifetime must be positive")
        if self.arrival_ms < 0:
            raise ValueError(f"query {self.id}: arrival must be non-negative")
        if not fits(self.qos.min_capacity, self.requested):
            raise ValueError(
                f"query {self.id}: min_capacity {self.qos.min_capacity} "
                f"exceeds requested {self.requested}"
            )


@dataclass(frozen=True)
class VMInstance:
    """The granted resource bundle created to satisfy one query."""

    id: str
    query_id: str
    granted: ResourceVector
    host: str
    expires_ms: int


def validate_vm_against(vm: VMInstance, query: Query) -> None:
    """Check the granted range invariant: min_capacity <= granted <= requested."""
    if not fits(query.qos.min_capacity, vm.granted):
        raise ValueError(f"vm {vm.id}: granted {vm.granted} below query minimum")
    if not fits(vm.granted, query.requested):
        raise ValueError(f"vm {vm.id}: granted {vm.granted} above query request")


class PhysicalMachine:
    """A simulated server: fixed capacity, a linear power profile, hosted VMs.

    hosted maps vm id -> granted vector; the sum of granted vectors never
    exceeds capacity (commit refuses the overflow).
    """

    def __init__(self, pm_id: str, capacity: ResourceVector, power_idle: float,
                 power_max: float, powered_on: bool = True):
        if capacity.cpu < 1 or capacity.ram < 1 or capacity.disk < 1:
            raise ValueError(f"machine {pm_id}: every capacity component must be >= 1")
        if power_idle <= 0 or power_max <= 0:
            raise ValueError(f"machine {pm_id}: power ratings must be positive")
        if power_idle > power_max:
            raise ValueError(f"machine {pm_id}: power_idle exceeds power_max")
        self.pm_id = pm_id
        self.capacity = capacity
        self.power_idle = float(power_idle)
        self.power_max = float(power_max)
        self.powered_on = powered_on
        self.hosted: dict[str, ResourceVector] = {}

    def used(self) -> ResourceVector:
        return vec_sum(self.hosted.values())

    def free(self) -> ResourceVector:
        return vec_sub(self.capacity, self.used())

    def utilization(self) -> float:
        """Mean over the three normalized resource components of used/capacity."""
        used = self.used()
        return (used.cpu / self.capacity.cpu
                + used.ram / self.capacity.ram
                + used.disk / self.capacity.disk) / 3.0

    def commit(self, vm_id: str, granted: ResourceVector) -> None:
        if vm_id in self.hosted:
            raise CapacityUnderflowError(f"vm {vm_id} already hosted on {self.pm_id}")
        if not self.powered_on:
            raise CapacityUnderflowError(f"commit to powered-off machine {self.pm_id}")
        if not fits(granted, self.free()):
            raise CapacityUnderflowError(
                f"commit of {granted} exceeds free {self.free()} on {self.pm_id}"
            )
        self.hosted[vm_id] = granted

    def release(self, vm_id: str) -> ResourceVector:
        if vm_id not in self.hosted:
            raise CapacityUnderflowError(f"vm {vm_id} not hosted on {self.pm_id}")
        return self.hosted.pop(vm_id)

    def __repr__(self):
        return f"PhysicalMachine({self.pm_id}, free={self.free()}, on={self.powered_on})"


@dataclass(frozen=True)
class MachineReport:
    """One controller's snapshot of its machine: hosted VMs plus free resources.

    Exactness invariant: free + sum of hosted granted vectors == capacity.
    """

    pm_id: str
    hosted: tuple[tuple[str, ResourceVector], ...]
    free: ResourceVector
    report_time: int
    powered_on: bool

    def capacity(self) -> ResourceVector:
        return vec_add(self.free, vec_sum(g for _, g in self.hosted))


def machine_report(machine: PhysicalMachine, now: int) -> MachineReport:
    """Build an exact report from the live machine model."""
    return MachineReport(
        pm_id=machine.pm_id,
        hosted=tuple(sorted(machine.hosted.items())),
        free=machine.free(),
        report_time=now,
        powered_on=machine.powered_on,
    )


def validate_report(report: MachineReport, capacity: ResourceVector) -> None:
    """Check the exactness invariant against the machine's true capacity."""
    total = vec_add(report.free, vec_sum(g for _, g in report.hosted))
    if total != capacity:
        raise CapacityUnderflowError(
            f"report for {report.pm_id} does not account for capacity: "
            f"{total} != {capacity}"
        )


@dataclass(frozen=True)
class AvailabilityRow:
    pm_id: str
    free: ResourceVector
    capacity: ResourceVector
    powered_on: bool


@dataclass(frozen=True)
class AvailabilityMatrix:
    """The scheduler's global snapshot: one row of free resources per reporting machine."""

    snapshot_time: int
    rows: tuple[AvailabilityRow, ...]


@dataclass(frozen=True)
class PriceTable:
    """Unit prices (currency per virtual hour) for each resource kind."""

    per_core: float
    per_mib: float
    per_gib: float

    def __post_init__(self):
        if self.per_core < 0 or self.per_mib < 0 or self.per_gib < 0:
            raise ValueError("unit prices must be non-negative")

    def price(self, v: ResourceVector) -> float:
        return self.per_core * v.cpu + self.per_mib * v.ram + self.per_gib * v.disk


def evaluate_sla(query: Query, offered: ResourceVector, latency_ms: int,
                 price: float) -> SlaVerdict:
    """Judge an offered allocation against the query's QoS terms.

    Acceptable: full requested capacity with latency and price in bounds.
    DegradedAcceptable: reduced capacity that still reaches min_capacity,
    bounds met. Anything else is Unacceptable.
    """
    if not fits(offered, query.requested):
        raise ValueError(f"offered {offered} exceeds requested {query.requested}")
    in_bounds = latency_ms <= query.qos.max_latency_ms and price <= query.qos.max_price
    if not in_bounds:
        return SlaVerdict.UNACCEPTABLE
    if offered == query.requested:
        return SlaVerdict.ACCEPTABLE
    if fits(query.qos.min_capacity, offered):
        return SlaVerdict.DEGRADED_ACCEPTABLE
    return SlaVerdict.UNACCEPTABLE
