"""The four agents: analyzer, scheduler, controllers, coordinator.

Decision logic lives in plain functions over explicit state so it can be
exercised without a kernel; the agent classes are thin adapters that hold
state between events and turn decisions into messages and timers. The
scheduler is the only agent that mutates datacenter state, and it does so
through an executor callback owned by the simulation, which applies the
placement to the physical machines and hands back the refreshed reports.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from .allocation import (
    POLICIES,
    Placement,
    build_availability,
    place,
    reallocate,
    replace,
)
from .kernel import (
    AllocationResultBody,
    Kernel,
    Message,
    MessageKind,
    ServiceDescription,
    StatusReportBody,
    StatusRequestBody,
    SupervisionRecord,
)
from .model import (
    AvailabilityMatrix,
    MachineReport,
    PhysicalMachine,
    PriceTable,
    QoSSpec,
    Query,
    ResourceVector,
    SlaVerdict,
    SystemState,
    VMInstance,
    evaluate_sla,
    machine_report,
)

ANALYZER = "analyzer"
SCHEDULER = "scheduler"
COORDINATOR = "coordinator"
USER = "user"


def controller_name(pm_id: str) -> str:
    return f"controller:{pm_id}"


# ----------------------------------------------------------------------------
# Analyzer


def build_query(desc: ServiceDescription, arrival_ms: int) -> Query | str:
    """Turn a raw service description into a Query, or an error string."""
    required = {
        "cpu": desc.cpu, "ram": desc.ram, "disk": desc.disk,
        "min_cpu": desc.min_cpu, "min_ram": desc.min_ram,
        "min_disk": desc.min_disk, "max_latency_ms": desc.max_latency_ms,
        "max_price": desc.max_price, "lifetime_s": desc.lifetime_s,
    }
    missing = sorted(name for name, value in required.items() if value is None)
    if missing:
        return f"malformed request: missing {', '.join(missing)}"
    try:
        return Query(
            id=desc.request_id,
            user_id=desc.user_id,
            requested=ResourceVector(desc.cpu, desc.ram, desc.disk),
            qos=QoSSpec(
                min_capacity=ResourceVector(desc.min_cpu, desc.min_ram, desc.min_disk),
                max_latency_ms=desc.max_latency_ms,
                max_price=desc.max_price,
            ),
            arrival_ms=arrival_ms,
            lifetime_s=desc.lifetime_s,
        )
    except ValueError as exc:
        return f"malformed request: {exc}"


class AnalyzerAgent:
    """Validates user requests and relays results back to the user layer."""

    def __init__(self, kernel: Kernel):
        self.kernel = kernel
        self.pending: dict[str, ServiceDescription] = {}

    def on_user_request(self, desc: ServiceDescription, now: int) -> None:
        outcome = build_query(desc, now)
        if isinstance(outcome, str):
            body = AllocationResultBody(
                query_id=desc.request_id,
                verdict=SlaVerdict.UNACCEPTABLE,
                pm_id=None,
                offered=None,
                latency_ms=0,
                price=0.0,
                reason=outcome,
            )
            self.kernel.send(
                Message(MessageKind.ALLOCATION_RESULT, ANALYZER, USER, body)
            )
            return
        self.pending[outcome.id] = desc
        self.kernel.send(
            Message(MessageKind.RESOURCE_REQUEST, ANALYZER, SCHEDULER, outcome)
        )

    def on_result(self, body: AllocationResultBody) -> None:
        self.pending.pop(body.query_id, None)
        self.kernel.send(Message(MessageKind.ALLOCATION_RESULT, ANALYZER, USER, body))


# ----------------------------------------------------------------------------
# Controller


class ControllerAgent:
    """One per physical machine: monitors it and answers scheduler polls.

    A muted controller keeps monitoring but sends nothing, which is how test
    scenarios model an unreachable machine.
    """

    def __init__(self, kernel: Kernel, machine: PhysicalMachine,
                 monitor_period_ms: int = 1000, muted: bool = False):
        self.kernel = kernel
        self.machine = machine
        self.name = controller_name(machine.pm_id)
        self.monitor_period_ms = monitor_period_ms
        self.muted = muted
        self.current: MachineReport = machine_report(machine, 0)

    def start(self) -> None:
        self.kernel.set_timer(self.name, "monitor", 0)

    def refresh(self, now: int) -> None:
        self.current = machine_report(self.machine, now)

    def _push(self, round_id: Optional[int]) -> None:
        if self.muted:
            return
        body = StatusReportBody(report=self.current, round_id=round_id)
        self.kernel.send(Message(MessageKind.STATUS_REPORT, self.name, SCHEDULER, body))

    def on_timer(self, tag: str, now: int) -> None:
        if tag != "monitor":
            return
        self.refresh(now)
        self._push(round_id=None)
        self.kernel.set_timer(self.name, "monitor", self.monitor_period_ms)

    def on_status_request(self, body: StatusRequestBody, now: int) -> None:
        self.refresh(now)
        self._push(round_id=body.round_id)

    def apply_commit(self, vm_id: str, granted: ResourceVector, now: int) -> None:
        self.machine.commit(vm_id, granted)
        self.refresh(now)

    def apply_release(self, vm_id: str, now: int, push: bool = False) -> None:
        self.machine.release(vm_id)
        self.refresh(now)
        if push:
            self._push(round_id=None)


# ----------------------------------------------------------------------------
# Coordinator


@dataclass
class CoordinatorLog:
    entries: list[SupervisionRecord] = field(default_factory=list)
    accepted: int = 0
    degraded: int = 0
    rejected: int = 0
    option_usage: dict[str, int] = field(default_factory=dict)


def coordinator_record(log: CoordinatorLog, record: SupervisionRecord) -> None:
    """Append one supervision entry and keep the aggregate counters current."""
    if log.entries and record.time_ms < log.entries[-1].time_ms:
        raise ValueError("supervision entries must arrive in time order")
    log.entries.append(record)
    if record.verdict is SlaVerdict.ACCEPTABLE:
        log.accepted += 1
    elif record.verdict is SlaVerdict.DEGRADED_ACCEPTABLE:
        log.degraded += 1
    else:
        log.rejected += 1
    log.option_usage[record.option_used] = (
        log.option_usage.get(record.option_used, 0) + 1
    )


class CoordinatorAgent:
    def __init__(self) -> None:
        self.log = CoordinatorLog()

    def on_report(self, record: SupervisionRecord) -> None:
        coordinator_record(self.log, record)


# ----------------------------------------------------------------------------
# Scheduler


def aggregate_utilization(reports: list[MachineReport]) -> float:
    """Datacenter-wide load: per-component totals, averaged over components."""
    if not reports:
        return 0.0
    totals_used = [0, 0, 0]
    totals_cap = [0, 0, 0]
    for report in reports:
        cap = report.capacity()
        free = report.free
        for axis, (c, f) in enumerate(zip(cap.as_tuple(), free.as_tuple())):
            totals_used[axis] += c - f
            totals_cap[axis] += c
    return sum(u / c for u, c in zip(totals_used, totals_cap)) / 3.0


def classify_system_state(reports: list[MachineReport], missing: int,
                          aggregate_util: float,
                          watermark: float = 0.9) -> SystemState:
    """Health of the datacenter as seen from one completed polling round."""
    if not reports:
        return SystemState.BROKEN
    if missing > 0 or aggregate_util > watermark:
        return SystemState.DEGRADED
    return SystemState.NORMAL


def admissible(verdict: SlaVerdict, state: SystemState) -> bool:
    """The two branches under which a commit is allowed to happen."""
    if state is SystemState.NORMAL:
        return verdict is SlaVerdict.ACCEPTABLE
    if state is SystemState.DEGRADED:
        return verdict in (SlaVerdict.ACCEPTABLE, SlaVerdict.DEGRADED_ACCEPTABLE)
    return False


@dataclass(frozen=True)
class SchedulerConfig:
    machine_ids: tuple[str, ...]
    price_table: PriceTable
    policy_name: str = "selfadaptive"
    hop_latency_ms: int = 1
    monitor_period_ms: int = 1000
    staleness_periods: int = 2
    watermark: float = 0.9
    poll_timeout_factor: int = 10
    retry_cap: int = 1
    retry_backoff_ms: int = 100
    replacement_cap: int = 1
    reallocation_cap: int = 1

    def option_cap(self, option: str) -> int:
        return {
            "retry": self.retry_cap,
            "replacement": self.replacement_cap,
            "reallocation": self.reallocation_cap,
        }[option]

    @property
    def staleness_bound_ms(self) -> int:
        return self.staleness_periods * self.monitor_period_ms

    @property
    def poll_timeout_ms(self) -> int:
        return self.poll_timeout_factor * self.hop_latency_ms


@dataclass
class PendingQuery:
    query: Query
    attempts: dict[str, int] = field(default_factory=dict)

    def used(self, option: str) -> int:
        return self.attempts.get(option, 0)

    def spend(self, option: str) -> None:
        self.attempts[option] = self.used(option) + 1

    def total_attempts(self) -> int:
        return sum(self.attempts.values())


@dataclass(frozen=True)
class AllocationRow:
    """One line of the allocation log, written to allocations.csv verbatim."""

    time_ms: int
    query_id: str
    verdict: SlaVerdict
    pm_id: Optional[str]
    offered: Optional[ResourceVector]
    option_used: str
    migrations: int


# The executor applies a Placement to the real machines and returns the
# refreshed report of every controller, which becomes the scheduler's new
# knowledge base wholesale.
Executor = Callable[[Placement], dict[str, MachineReport]]


class SchedulerAgent:
    """Polls controllers, verifies system state and SLA, commits or adapts.

    Requests are serviced strictly in arrival order, one polling round per
    serviced request. A round is a broadcast of StatusRequests tagged with a
    round id; it completes when every machine answered or the collection
    timeout fires, whichever comes first. Replies to dead rounds are still
    folded into the knowledge base but decide nothing.
    """

    def __init__(self, kernel: Kernel, config: SchedulerConfig,
                 executor: Executor,
                 on_resolution: Callable[[AllocationRow], None]):
        self.kernel = kernel
        self.config = config
        self.executor = executor
        self.on_resolution = on_resolution
        self.latest_reports: dict[str, MachineReport] = {}
        self.pending: deque[PendingQuery] = deque()
        self.seen_ids: set[str] = set()
        self.system_state = SystemState.NORMAL
        self.round_id = 0
        self.round_active = False
        self.round_replies: dict[str, MachineReport] = {}
        self.waiting_retry = False

    # -- event entry points ---------------------------------------------

    def on_message(self, message: Message, now: int) -> None:
        if message.kind is MessageKind.RESOURCE_REQUEST:
            self._on_request(message.body, now)
        elif message.kind is MessageKind.STATUS_REPORT:
            self._on_status_report(message.body, now)
        else:
            raise ValueError(f"scheduler cannot handle {message.kind.value}")

    def on_timer(self, tag: str, now: int) -> None:
        if tag.startswith("poll-timeout:"):
            if self.round_active and int(tag.split(":", 1)[1]) == self.round_id:
                self._finish_round(now)
        elif tag.startswith("retry:"):
            self.waiting_retry = False
            self._maybe_start_round(now)

    # -- request intake ---------------------------------------------------

    def _on_request(self, query: Query, now: int) -> None:
        if query.id in self.seen_ids:
            self._resolve_reject(query, "duplicate query id", attempts=0, now=now)
            return
        self.seen_ids.add(query.id)
        if self.system_state is SystemState.BROKEN:
            self._resolve_reject(query, "system broken", attempts=0, now=now)
            return
        self.pending.append(PendingQuery(query=query))
        self._maybe_start_round(now)

    # -- polling rounds ---------------------------------------------------

    def _maybe_start_round(self, now: int) -> None:
        if self.round_active or self.waiting_retry or not self.pending:
            return
        self.round_id += 1
        self.round_replies = {}
        self.round_active = True
        for pm_id in self.config.machine_ids:
            self.kernel.send(
                Message(
                    MessageKind.STATUS_REQUEST, SCHEDULER, controller_name(pm_id),
                    StatusRequestBody(round_id=self.round_id),
                )
            )
        self.kernel.set_timer(
            SCHEDULER, f"poll-timeout:{self.round_id}", self.config.poll_timeout_ms
        )

    def _on_status_report(self, body: StatusReportBody, now: int) -> None:
        self.latest_reports[body.report.pm_id] = body.report
        if not self.round_active or body.round_id != self.round_id:
            return
        self.round_replies[body.report.pm_id] = body.report
        if len(self.round_replies) == len(self.config.machine_ids):
            self._finish_round(now)

    def _finish_round(self, now: int) -> None:
        self.round_active = False
        replies = sorted(self.round_replies.values(), key=lambda r: r.pm_id)
        missing = len(self.config.machine_ids) - len(replies)
        state = classify_system_state(
            replies, missing, aggregate_utilization(replies), self.config.watermark
        )
        if self.system_state is not SystemState.BROKEN:
            self.system_state = state
        if self.system_state is SystemState.BROKEN:
            # Irreparable by definition: fail everything we are holding.
            while self.pending:
                entry = self.pending.popleft()
                self._resolve_reject(
                    entry.query, "system broken", attempts=entry.total_attempts(),
                    now=now,
                )
            return
        if not self.pending:
            return
        self._decide(self.pending[0], replies, now)

    # -- verification and allocation --------------------------------------

    def _decide(self, entry: PendingQuery, reports: list[MachineReport],
                now: int) -> None:
        query = entry.query
        matrix = build_availability(reports)
        if now - matrix.snapshot_time > self.config.staleness_bound_ms:
            # Knowledge too old to act on safely; a re-poll is the only cure
            # and it costs the query its retry attempt.
            if entry.used("retry") < self.config.retry_cap:
                entry.spend("retry")
                self._schedule_retry(query, now)
            else:
                self._pop_and_reject(entry, "stale knowledge", now)
            return

        # Plain placement first; the adaptation options only run when it
        # fails to produce an admissible outcome.
        latency = now - query.arrival_ms
        pm_id = place(matrix, query.requested, self.config.policy_name)
        if pm_id is not None:
            offered = query.requested
            verdict = self._verdict(query, offered, latency)
            if admissible(verdict, self.system_state):
                option = "retry" if entry.used("retry") else "none"
                self._commit_simple(entry, matrix, pm_id, offered, verdict,
                                    option, now)
                return

        options = POLICIES[self.config.policy_name].options
        for option in options:
            if entry.used(option) >= self.config.option_cap(option):
                continue
            if option == "retry":
                entry.spend("retry")
                self._schedule_retry(query, now)
                return
            if option == "replacement":
                entry.spend("replacement")
                found = replace(query, matrix, self.config.policy_name)
                if found is not None:
                    repl_pm, offered = found
                    verdict = self._verdict(query, offered, latency)
                    if admissible(verdict, self.system_state):
                        self._commit_simple(entry, matrix, repl_pm, offered,
                                            verdict, "replacement", now)
                        return
            elif option == "reallocation":
                entry.spend("reallocation")
                plan = reallocate(reports, query, f"vm-{query.id}", now)
                if plan is not None:
                    verdict = self._verdict(query, query.requested, latency)
                    if admissible(verdict, self.system_state):
                        self._commit_plan(entry, plan, query.requested, verdict,
                                          "reallocation", now)
                        return
        self._pop_and_reject(entry, "options exhausted", now)

    def _verdict(self, query: Query, offered: ResourceVector,
                 latency: int) -> SlaVerdict:
        return evaluate_sla(
            query, offered, latency, self.config.price_table.price(offered)
        )

    def _schedule_retry(self, query: Query, now: int) -> None:
        self.waiting_retry = True
        self.kernel.set_timer(
            SCHEDULER, f"retry:{query.id}", self.config.retry_backoff_ms
        )

    # -- outcomes ----------------------------------------------------------

    def _commit_simple(self, entry: PendingQuery, matrix: AvailabilityMatrix,
                       pm_id: str, offered: ResourceVector, verdict: SlaVerdict,
                       option: str, now: int) -> None:
        row = next(r for r in matrix.rows if r.pm_id == pm_id)
        vm = VMInstance(
            id=f"vm-{entry.query.id}",
            query_id=entry.query.id,
            granted=offered,
            host=pm_id,
            expires_ms=now + entry.query.lifetime_s * 1000,
        )
        placement = Placement(
            vm=vm,
            machines_powered_on=() if row.powered_on else (pm_id,),
        )
        self._commit_plan(entry, placement, offered, verdict, option, now)

    def _commit_plan(self, entry: PendingQuery, placement: Placement,
                     offered: ResourceVector, verdict: SlaVerdict, option: str,
                     now: int) -> None:
        self.latest_reports = dict(self.executor(placement))
        query = entry.query
        self.pending.popleft()
        result = AllocationResultBody(
            query_id=query.id,
            verdict=verdict,
            pm_id=placement.vm.host,
            offered=offered,
            latency_ms=now - query.arrival_ms,
            price=self.config.price_table.price(offered),
            reason="",
        )
        self._emit(result, entry.total_attempts(), len(placement.migrations),
                   option, now)
        self._maybe_start_round(now)

    def _pop_and_reject(self, entry: PendingQuery, reason: str, now: int) -> None:
        self.pending.popleft()
        self._resolve_reject(
            entry.query, reason, attempts=entry.total_attempts(), now=now
        )
        self._maybe_start_round(now)

    def _resolve_reject(self, query: Query, reason: str, attempts: int,
                        now: int) -> None:
        result = AllocationResultBody(
            query_id=query.id,
            verdict=SlaVerdict.UNACCEPTABLE,
            pm_id=None,
            offered=None,
            latency_ms=now - query.arrival_ms,
            price=0.0,
            reason=reason,
        )
        self._emit(result, attempts, migrations=0, option="none", now=now)

    def _emit(self, result: AllocationResultBody, attempts: int,
              migrations: int, option: str, now: int) -> None:
        self.kernel.send(
            Message(MessageKind.ALLOCATION_RESULT, SCHEDULER, ANALYZER, result)
        )
        record = SupervisionRecord(
            time_ms=now,
            query_id=result.query_id,
            verdict=result.verdict,
            pm_id=result.pm_id,
            system_state=self.system_state.value,
            option_used=option,
            attempts=attempts,
            migrations=migrations,
            reason=result.reason,
        )
        self.kernel.send(
            Message(MessageKind.SUPERVISION_REPORT, SCHEDULER, COORDINATOR, record)
        )
        self.on_resolution(
            AllocationRow(
                time_ms=now,
                query_id=result.query_id,
                verdict=result.verdict,
                pm_id=result.pm_id,
                offered=result.offered,
                option_used=option,
                migrations=migrations,
            )
        )
