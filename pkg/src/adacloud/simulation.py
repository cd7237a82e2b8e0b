"""Wires the agents to the kernel, owns the machines, runs one scenario.

The Simulation is the only component with mutable access to the physical
machines. Agents see them exclusively through controller reports; when the
scheduler decides to commit, the decision comes back here as a Placement
and is applied in one deterministic batch: power-ons, migration releases,
migration commits, the new VM, power-offs. Every batch is followed by a
consistency check of every machine against its controller's report, so a
divergence between the scheduler's knowledge and physical reality cannot
survive a single commit silently.
"""

from __future__ import annotations

from dataclasses import dataclass

from .agents import (
    ANALYZER,
    COORDINATOR,
    SCHEDULER,
    USER,
    AllocationRow,
    AnalyzerAgent,
    ControllerAgent,
    CoordinatorAgent,
    CoordinatorLog,
    SchedulerAgent,
    SchedulerConfig,
)
from .allocation import POLICIES, AccountingError, Placement
from .energy import PowerSample, power
from .kernel import (
    AllocationResultBody,
    Event,
    Kernel,
    Message,
    MessageDelivery,
    MessageKind,
    QueryArrival,
    ServiceDescription,
    SimulationError,
    SimulationTrace,
    TimerFired,
    VmExpiry,
)
from .model import (
    CapacityUnderflowError,
    MachineReport,
    PhysicalMachine,
    Query,
    ResourceVector,
    fits,
    validate_report,
    vec_sum,
)
from .scenario import Scenario, workload_for


class InvariantViolation(Exception):
    """The run caught itself in an inconsistent state; results are void."""


@dataclass
class ActiveVm:
    vm_id: str
    query_id: str
    granted: ResourceVector
    host: str
    expires_ms: int


@dataclass
class SimResult:
    scenario: Scenario
    allocator: str
    queries: list[Query]
    rows: list[AllocationRow]
    power_samples: list[PowerSample]
    coordinator: CoordinatorLog
    user_results: list[tuple[int, AllocationResultBody]]
    trace: SimulationTrace
    horizon_ms: int
    consistency_checks: int


def description_for(query: Query) -> ServiceDescription:
    """The raw request a user submits for a scenario query."""
    return ServiceDescription(
        request_id=query.id,
        user_id=query.user_id,
        cpu=query.requested.cpu,
        ram=query.requested.ram,
        disk=query.requested.disk,
        min_cpu=query.qos.min_capacity.cpu,
        min_ram=query.qos.min_capacity.ram,
        min_disk=query.qos.min_capacity.disk,
        max_latency_ms=query.qos.max_latency_ms,
        max_price=query.qos.max_price,
        lifetime_s=query.lifetime_s,
    )


class Simulation:
    def __init__(self, scenario: Scenario, collect_trace: bool = False):
        self.scenario = scenario
        self.policy = POLICIES[scenario.allocator]
        self.kernel = Kernel(scenario.seed, scenario.hop_latency_ms)
        self.collect_trace = collect_trace
        self.trace = SimulationTrace()

        self.machines: dict[str, PhysicalMachine] = {}
        self.controllers: dict[str, ControllerAgent] = {}
        muted = set(scenario.muted)
        for spec in scenario.machines:
            machine = PhysicalMachine(
                pm_id=spec.pm_id,
                capacity=spec.capacity,
                power_idle=spec.power_idle,
                power_max=spec.power_max,
                powered_on=self.policy.start_powered_on,
            )
            self.machines[spec.pm_id] = machine
            controller = ControllerAgent(
                self.kernel, machine, muted=spec.pm_id in muted
            )
            self.controllers[spec.pm_id] = controller
            self.kernel.register(controller.name)

        machine_ids = tuple(sorted(self.machines))
        self.analyzer = AnalyzerAgent(self.kernel)
        self.scheduler = SchedulerAgent(
            self.kernel,
            SchedulerConfig(
                machine_ids=machine_ids,
                price_table=scenario.prices,
                policy_name=scenario.allocator,
                hop_latency_ms=scenario.hop_latency_ms,
            ),
            executor=self._execute_placement,
            on_resolution=self._record_resolution,
        )
        self.coordinator = CoordinatorAgent()
        for name in (ANALYZER, SCHEDULER, COORDINATOR, USER):
            self.kernel.register(name)
        self.kernel.dispatch = self._dispatch

        self.queries = workload_for(scenario)
        self.rows: list[AllocationRow] = []
        self.user_results: list[tuple[int, AllocationResultBody]] = []
        self.power_samples: list[PowerSample] = []
        self._last_watts: dict[str, float] = {}
        self.vms: dict[str, ActiveVm] = {}
        self.consistency_checks = 0

    # -- logging -----------------------------------------------------------

    def _log(self, text: str) -> None:
        if self.collect_trace:
            self.trace.log(self.kernel.now, text)

    # -- power accounting ----------------------------------------------------

    def _sample(self, pm_id: str) -> None:
        machine = self.machines[pm_id]
        watts = power(machine, machine.utilization())
        if self._last_watts.get(pm_id) == watts:
            return
        self._last_watts[pm_id] = watts
        self.power_samples.append(
            PowerSample(time_ms=self.kernel.now, pm_id=pm_id, watts=watts)
        )
        self._log(f"power {pm_id} -> {watts:g} W")

    # -- consistency sweep ---------------------------------------------------

    def _check_consistency(self) -> None:
        """Machine capacity and report exactness, after every mutation batch."""
        for pm_id in sorted(self.machines):
            machine = self.machines[pm_id]
            used = vec_sum(machine.hosted.values())
            if not fits(used, machine.capacity):
                raise InvariantViolation(
                    f"machine {pm_id} over capacity: {used} > {machine.capacity}"
                )
            try:
                validate_report(self.controllers[pm_id].current, machine.capacity)
            except CapacityUnderflowError as exc:
                raise InvariantViolation(str(exc)) from exc
            self.consistency_checks += 1

    # -- placement execution ---------------------------------------------

    def _execute_placement(self, placement: Placement) -> dict[str, MachineReport]:
        now = self.kernel.now
        touched: set[str] = set()
        try:
            for pm_id in placement.machines_powered_on:
                self.machines[pm_id].powered_on = True
                touched.add(pm_id)
                self._log(f"power on {pm_id}")
            for mig in placement.migrations:
                self.controllers[mig.from_pm].apply_release(mig.vm_id, now)
                touched.add(mig.from_pm)
            for mig in placement.migrations:
                vm = self.vms[mig.vm_id]
                self.controllers[mig.to_pm].apply_commit(mig.vm_id, vm.granted, now)
                vm.host = mig.to_pm
                touched.add(mig.to_pm)
                self._log(f"migrate {mig.vm_id}: {mig.from_pm} -> {mig.to_pm}")
            new = placement.vm
            self.controllers[new.host].apply_commit(new.id, new.granted, now)
            touched.add(new.host)
            self.vms[new.id] = ActiveVm(
                vm_id=new.id, query_id=new.query_id, granted=new.granted,
                host=new.host, expires_ms=new.expires_ms,
            )
            self.kernel.schedule(new.expires_ms, VmExpiry(new.id))
            self._log(f"commit {new.id} on {new.host} until t={new.expires_ms}")
            for pm_id in placement.machines_powered_off:
                machine = self.machines[pm_id]
                if machine.hosted:
                    raise InvariantViolation(
                        f"power-off of non-empty machine {pm_id}"
                    )
                machine.powered_on = False
                touched.add(pm_id)
                self._log(f"power off {pm_id}")
        except (CapacityUnderflowError, KeyError) as exc:
            raise InvariantViolation(f"placement application failed: {exc}") from exc
        for pm_id in sorted(touched):
            self.controllers[pm_id].refresh(now)
            self._sample(pm_id)
        self._check_consistency()
        return {pm_id: c.current for pm_id, c in self.controllers.items()}

    def _record_resolution(self, row: AllocationRow) -> None:
        self.rows.append(row)
        offered = "-" if row.offered is None else row.offered.as_tuple()
        self._log(
            f"resolved {row.query_id}: {row.verdict.value} pm={row.pm_id} "
            f"offered={offered} option={row.option_used}"
        )

    # -- expiry ---------------------------------------------------------------

    def _handle_expiry(self, vm_id: str) -> None:
        vm = self.vms.pop(vm_id, None)
        if vm is None:
            raise InvariantViolation(f"expiry for unknown vm {vm_id}")
        now = self.kernel.now
        machine = self.machines[vm.host]
        try:
            self.controllers[vm.host].apply_release(vm_id, now, push=True)
        except CapacityUnderflowError as exc:
            raise InvariantViolation(str(exc)) from exc
        self._log(f"expire {vm_id} on {vm.host}")
        if self.policy.power_off_empty and not machine.hosted:
            machine.powered_on = False
            self.controllers[vm.host].refresh(now)
            self._log(f"power off {vm.host}")
        self._sample(vm.host)
        self._check_consistency()

    # -- event dispatch ---------------------------------------------------

    def _dispatch(self, event: Event) -> None:
        now = self.kernel.now
        payload = event.payload
        if isinstance(payload, QueryArrival):
            self._log(f"arrival {payload.query.id}")
            message = Message(
                MessageKind.USER_REQUEST, USER, ANALYZER,
                description_for(payload.query),
            )
            self.analyzer.on_user_request(message.body, now)
        elif isinstance(payload, TimerFired):
            if payload.agent == SCHEDULER:
                self.scheduler.on_timer(payload.tag, now)
            elif payload.agent.startswith("controller:"):
                pm_id = payload.agent.split(":", 1)[1]
                self.controllers[pm_id].on_timer(payload.tag, now)
            else:
                raise InvariantViolation(f"timer for unknown agent {payload.agent}")
        elif isinstance(payload, MessageDelivery):
            self._deliver(payload.message, now)
        elif isinstance(payload, VmExpiry):
            self._handle_expiry(payload.vm_id)
        else:
            raise InvariantViolation(f"unknown event payload {payload!r}")

    def _deliver(self, message: Message, now: int) -> None:
        recipient = message.recipient
        if recipient == SCHEDULER:
            self.scheduler.on_message(message, now)
        elif recipient.startswith("controller:"):
            if message.kind is not MessageKind.STATUS_REQUEST:
                raise InvariantViolation(
                    f"controller got {message.kind.value} from {message.sender}"
                )
            pm_id = recipient.split(":", 1)[1]
            self.controllers[pm_id].on_status_request(message.body, now)
        elif recipient == ANALYZER:
            if message.kind is not MessageKind.ALLOCATION_RESULT:
                raise InvariantViolation(
                    f"analyzer got {message.kind.value} from {message.sender}"
                )
            self.analyzer.on_result(message.body)
        elif recipient == COORDINATOR:
            self.coordinator.on_report(message.body)
        elif recipient == USER:
            self.user_results.append((now, message.body))
            self._log(
                f"user result {message.body.query_id}: {message.body.verdict.value}"
            )
        else:
            raise InvariantViolation(f"message to unknown recipient {recipient}")

    # -- run --------------------------------------------------------------

    def run(self) -> SimResult:
        for controller in self.controllers.values():
            controller.start()
        for pm_id in sorted(self.machines):
            self._sample(pm_id)
        for query in self.queries:
            self.kernel.schedule(query.arrival_ms, QueryArrival(query))
        try:
            self.kernel.run_until(self.scenario.horizon_ms)
        except (CapacityUnderflowError, AccountingError, SimulationError) as exc:
            raise InvariantViolation(str(exc)) from exc
        self._check_consistency()
        self.trace.final_time = self.scenario.horizon_ms
        return SimResult(
            scenario=self.scenario,
            allocator=self.scenario.allocator,
            queries=self.queries,
            rows=self.rows,
            power_samples=self.power_samples,
            coordinator=self.coordinator.log,
            user_results=self.user_results,
            trace=self.trace,
            horizon_ms=self.scenario.horizon_ms,
            consistency_checks=self.consistency_checks,
        )


def simulate(scenario: Scenario, collect_trace: bool = False) -> SimResult:
    """Run one scenario start to finish and return everything observable."""
    return Simulation(scenario, collect_trace=collect_trace).run()
