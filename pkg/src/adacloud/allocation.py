"""Placement strategies: energy-aware consolidation, adaptation fallbacks, oracle.

The scheduler delegates every "where does this VM go" decision to this module.
Three strategies are selectable per run:

  selfadaptive  best-fit consolidation that minimizes normalized residual free
                space, powers machines on only when needed and off when empty
  firstfit      lowest machine id that fits, every machine on all the time
  spread        worst-fit (maximize residual), every machine on all the time

On top of plain placement the module implements the two heavier adaptation
options (replace = reduced offer search, reallocate = full repack with
migrations) and a brute-force oracle used by the test suite as ground truth
for feasibility on small instances.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

from .model import (
    AvailabilityMatrix,
    AvailabilityRow,
    MachineReport,
    PhysicalMachine,
    Query,
    ResourceVector,
    VMInstance,
    fits,
    vec_add,
    vec_sub,
)


class AccountingError(Exception):
    """A bookkeeping contradiction: duplicate reports, capacity violation."""


class OracleSizeError(ValueError):
    """Instance too large for exhaustive search; the oracle is test-only."""


SELFADAPTIVE = "selfadaptive"
FIRSTFIT = "firstfit"
SPREAD = "spread"


@dataclass(frozen=True)
class AllocatorPolicy:
    """Behavioral knobs that distinguish the strategies beyond machine choice."""

    name: str
    start_powered_on: bool
    power_off_empty: bool
    # Adaptation options the scheduler may use, in order. Replacement and
    # reallocation only make sense for the consolidating strategy; baselines
    # keep retry so transient staleness is handled equally for all.
    options: tuple[str, ...]


POLICIES: dict[str, AllocatorPolicy] = {
    SELFADAPTIVE: AllocatorPolicy(
        name=SELFADAPTIVE,
        start_powered_on=False,
        power_off_empty=True,
        options=("retry", "replacement", "reallocation"),
    ),
    FIRSTFIT: AllocatorPolicy(
        name=FIRSTFIT,
        start_powered_on=True,
        power_off_empty=False,
        options=("retry",),
    ),
    SPREAD: AllocatorPolicy(
        name=SPREAD,
        start_powered_on=True,
        power_off_empty=False,
        options=("retry",),
    ),
}


@dataclass(frozen=True)
class Migration:
    vm_id: str
    from_pm: str
    to_pm: str


@dataclass(frozen=True)
class Placement:
    """A committable plan: the new VM plus any moves and power transitions."""

    vm: VMInstance
    migrations: tuple[Migration, ...] = ()
    machines_powered_on: tuple[str, ...] = ()
    machines_powered_off: tuple[str, ...] = ()


def residual_score(free: ResourceVector, capacity: ResourceVector) -> float:
    """Mean normalized free space; 0 = packed solid, 1 = completely empty."""
    return (
        free.cpu / capacity.cpu
        + free.ram / capacity.ram
        + free.disk / capacity.disk
    ) / 3.0


def _capacity_scalar(capacity: ResourceVector, fleet_max: ResourceVector) -> float:
    """Machine size normalized against the largest machine in the fleet."""
    return (
        capacity.cpu / fleet_max.cpu
        + capacity.ram / fleet_max.ram
        + capacity.disk / fleet_max.disk
    ) / 3.0


def _fleet_max(rows: list[AvailabilityRow]) -> ResourceVector:
    return ResourceVector(
        cpu=max(r.capacity.cpu for r in rows),
        ram=max(r.capacity.ram for r in rows),
        disk=max(r.capacity.disk for r in rows),
    )


def build_availability(reports: list[MachineReport]) -> AvailabilityMatrix:
    """Assemble the global availability matrix from controller reports.

    Rows are sorted by machine id so every downstream tie-break is stable.
    Two reports claiming the same machine mean the bookkeeping is corrupt,
    which is not recoverable.
    """
    seen: set[str] = set()
    rows = []
    for report in reports:
        if report.pm_id in seen:
            raise AccountingError(f"duplicate report for machine {report.pm_id}")
        seen.add(report.pm_id)
        rows.append(
            AvailabilityRow(
                pm_id=report.pm_id,
                free=report.free,
                capacity=report.capacity(),
                powered_on=report.powered_on,
            )
        )
    rows.sort(key=lambda r: r.pm_id)
    snapshot = max((r.report_time for r in reports), default=0)
    return AvailabilityMatrix(snapshot_time=snapshot, rows=tuple(rows))


def place(matrix: AvailabilityMatrix, demand: ResourceVector,
          policy: str = SELFADAPTIVE) -> Optional[str]:
    """Pick a machine for the demand, or None when nothing fits.

    selfadaptive prefers the powered-on machine left tightest after the
    placement; only when no running machine fits does it wake the smallest
    powered-off machine that can take the load. firstfit and spread never
    look at powered-off machines because under those policies everything
    runs all the time.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown placement policy: {policy}")
    rows = list(matrix.rows)
    if not rows:
        return None

    candidates = [r for r in rows if r.powered_on and fits(demand, r.free)]
    if candidates:
        if policy == FIRSTFIT:
            return min(candidates, key=lambda r: r.pm_id).pm_id
        after = [
            (residual_score(vec_sub(r.free, demand), r.capacity), r.pm_id)
            for r in candidates
        ]
        if policy == SPREAD:
            return min(after, key=lambda t: (-t[0], t[1]))[1]
        return min(after)[1]

    if policy != SELFADAPTIVE:
        return None

    fleet_max = _fleet_max(rows)
    dormant = [r for r in rows if not r.powered_on and fits(demand, r.free)]
    if not dormant:
        return None
    return min(
        dormant, key=lambda r: (_capacity_scalar(r.capacity, fleet_max), r.pm_id)
    ).pm_id


def _offer_levels(requested: int, minimum: int) -> list[int]:
    """Five capacity levels from the full request down to the floor."""
    gap = requested - minimum
    return [requested - (k * gap) // 4 for k in range(5)]


def replace(query: Query, matrix: AvailabilityMatrix,
            policy: str = SELFADAPTIVE) -> Optional[tuple[str, ResourceVector]]:
    """Search for a reduced offer within the query's acceptable range.

    Scans a 5x5x5 grid of per-component levels between requested and
    min_capacity, most generous offers first (highest total fraction of the
    request, then cpu, ram, disk as tie-breaks), and returns the first offer
    some machine can take. The full request sits at the top of the grid, so
    the function stays total even if a caller forgets that plain placement
    already failed.
    """
    req = query.requested
    lo = query.qos.min_capacity
    grid = itertools.product(
        _offer_levels(req.cpu, lo.cpu),
        _offer_levels(req.ram, lo.ram),
        _offer_levels(req.disk, lo.disk),
    )
    offers = {ResourceVector(cpu=c, ram=r, disk=d) for c, r, d in grid}

    def generosity(v: ResourceVector) -> tuple:
        frac = sum(
            o / r if r > 0 else 1.0
            for o, r in zip(v.as_tuple(), req.as_tuple())
        )
        return (-frac, -v.cpu, -v.ram, -v.disk)

    for offered in sorted(offers, key=generosity):
        pm = place(matrix, offered, policy)
        if pm is not None:
            return pm, offered
    return None


@dataclass
class _RepackBin:
    pm_id: str
    capacity: ResourceVector
    was_on: bool
    used: ResourceVector


def _best_fit_decreasing(
    bins: list[_RepackBin], items: list[tuple[str, ResourceVector]],
    fleet_max: ResourceVector,
) -> Optional[dict[str, str]]:
    """Pack items (largest normalized volume first) into empty bins.

    Open bins (already holding something in this plan) are preferred, scored
    by residual after placement; a fresh bin is opened smallest-first only
    when nothing open fits. Returns vm_id -> pm_id, or None if any item
    cannot be placed.
    """
    def item_scalar(d: ResourceVector) -> float:
        return (
            d.cpu / fleet_max.cpu + d.ram / fleet_max.ram + d.disk / fleet_max.disk
        ) / 3.0

    ordered = sorted(items, key=lambda it: (-item_scalar(it[1]), it[0]))
    assignment: dict[str, str] = {}
    for vm_id, demand in ordered:
        open_fits = [
            b for b in bins
            if not b.used.is_zero() and fits(demand, vec_sub(b.capacity, b.used))
        ]
        if open_fits:
            target = min(
                open_fits,
                key=lambda b: (
                    residual_score(
                        vec_sub(b.capacity, vec_add(b.used, demand)), b.capacity
                    ),
                    b.pm_id,
                ),
            )
        else:
            fresh = [
                b for b in bins if b.used.is_zero() and fits(demand, b.capacity)
            ]
            if not fresh:
                return None
            target = min(
                fresh,
                key=lambda b: (_capacity_scalar(b.capacity, fleet_max), b.pm_id),
            )
        target.used = vec_add(target.used, demand)
        assignment[vm_id] = target.pm_id
    return assignment


def reallocate(reports: list[MachineReport], query: Query, vm_id: str,
               now_ms: int) -> Optional[Placement]:
    """Full repack: every hosted VM plus the new one, machine set from scratch.

    The repack ignores current placement while packing and only afterwards
    derives which VMs actually moved, which machines must wake up, and which
    emptied out. Migration count is whatever the packing produces; it is
    reported, not minimized.
    """
    if not reports:
        return None
    bins = [
        _RepackBin(
            pm_id=r.pm_id, capacity=r.capacity(), was_on=r.powered_on,
            used=ResourceVector(0, 0, 0),
        )
        for r in sorted(reports, key=lambda r: r.pm_id)
    ]
    fleet_max = _fleet_max(
        [AvailabilityRow(b.pm_id, b.capacity, b.capacity, b.was_on) for b in bins]
    )

    current_host: dict[str, str] = {}
    items: list[tuple[str, ResourceVector]] = []
    for report in reports:
        for hosted_id, granted in report.hosted:
            current_host[hosted_id] = report.pm_id
            items.append((hosted_id, granted))
    items.append((vm_id, query.requested))

    assignment = _best_fit_decreasing(bins, items, fleet_max)
    if assignment is None:
        return None

    migrations = tuple(
        Migration(vm_id=moved, from_pm=current_host[moved], to_pm=assignment[moved])
        for moved, _ in sorted(items)
        if moved in current_host and assignment[moved] != current_host[moved]
    )
    nonempty = {b.pm_id for b in bins if not b.used.is_zero()}
    powered_on = tuple(
        sorted(b.pm_id for b in bins if not b.was_on and b.pm_id in nonempty)
    )
    powered_off = tuple(
        sorted(b.pm_id for b in bins if b.was_on and b.pm_id not in nonempty)
    )
    vm = VMInstance(
        id=vm_id,
        query_id=query.id,
        granted=query.requested,
        host=assignment[vm_id],
        expires_ms=now_ms + query.lifetime_s * 1000,
    )
    return Placement(
        vm=vm,
        migrations=migrations,
        machines_powered_on=powered_on,
        machines_powered_off=powered_off,
    )


def verify_placement(reports: list[MachineReport], placement: Placement) -> None:
    """Re-derive the post-placement load and check every machine's capacity.

    Raises AccountingError on any violation; used by the test suite and the
    trace sweep as an independent check on whatever the strategies produce.
    """
    capacity: dict[str, ResourceVector] = {}
    load: dict[str, dict[str, ResourceVector]] = {}
    for report in reports:
        capacity[report.pm_id] = report.capacity()
        load[report.pm_id] = {vm_id: granted for vm_id, granted in report.hosted}
    for mig in placement.migrations:
        if mig.vm_id not in load.get(mig.from_pm, {}):
            raise AccountingError(
                f"migration of unknown VM {mig.vm_id} from {mig.from_pm}"
            )
        granted = load[mig.from_pm].pop(mig.vm_id)
        load.setdefault(mig.to_pm, {})[mig.vm_id] = granted
    vm = placement.vm
    if vm.host not in capacity:
        raise AccountingError(f"placement targets unknown machine {vm.host}")
    load[vm.host][vm.id] = vm.granted
    for pm_id, hosted in load.items():
        total = ResourceVector(0, 0, 0)
        for granted in hosted.values():
            total = vec_add(total, granted)
        if not fits(total, capacity[pm_id]):
            raise AccountingError(
                f"capacity exceeded on {pm_id}: load {total.as_tuple()} "
                f"over {capacity[pm_id].as_tuple()}"
            )
    for pm_id in placement.machines_powered_off:
        if load.get(pm_id):
            raise AccountingError(
                f"{pm_id} marked for power-off but still hosts {sorted(load[pm_id])}"
            )


# ----------------------------------------------------------------------------
# Brute-force oracle (test-only)


@dataclass(frozen=True)
class OracleResult:
    feasible: bool
    machines_on: int
    total_power: float
    assignment: Optional[dict[str, str]]


def oracle_allocate(machines: list[PhysicalMachine], query: Query,
                    vm_id: str = "vm-oracle") -> OracleResult:
    """Exhaustive assignment search minimizing (machines on, total power).

    Considers every mapping of every VM (hosted plus the new one) to every
    machine, with branch-and-bound pruning on the objective. Both count and
    power only grow as VMs are added, so a partial assignment already worse
    than the incumbent can be cut off safely. Guarded to tiny instances; this
    exists to keep the heuristics honest, not to be fast.
    """
    if len(machines) > 5:
        raise OracleSizeError(f"oracle limited to 5 machines, got {len(machines)}")
    items: list[tuple[str, ResourceVector]] = []
    for pm in machines:
        for hosted_id, granted in pm.hosted.items():
            items.append((hosted_id, granted))
    items.append((vm_id, query.requested))
    if len(items) > 8:
        raise OracleSizeError(f"oracle limited to 8 VMs, got {len(items)}")
    if not machines:
        return OracleResult(False, 0, 0.0, None)

    pms = sorted(machines, key=lambda m: m.pm_id)
    caps = [m.capacity for m in pms]
    fleet_max = ResourceVector(
        cpu=max(c.cpu for c in caps),
        ram=max(c.ram for c in caps),
        disk=max(c.disk for c in caps),
    )

    # Cheap pigeonhole check before the search.
    for axis in range(3):
        total_demand = sum(it[1].as_tuple()[axis] for it in items)
        total_cap = sum(c.as_tuple()[axis] for c in caps)
        if total_demand > total_cap:
            return OracleResult(False, 0, 0.0, None)

    def scalar(d: ResourceVector) -> float:
        return (
            d.cpu / fleet_max.cpu + d.ram / fleet_max.ram + d.disk / fleet_max.disk
        ) / 3.0

    items.sort(key=lambda it: (-scalar(it[1]), it[0]))
    for _, demand in items:
        if not any(fits(demand, c) for c in caps):
            return OracleResult(False, 0, 0.0, None)

    def machine_power(j: int, used: ResourceVector) -> float:
        if used.is_zero():
            return 0.0
        cap = caps[j]
        u = (used.cpu / cap.cpu + used.ram / cap.ram + used.disk / cap.disk) / 3.0
        return pms[j].power_idle + (pms[j].power_max - pms[j].power_idle) * u

    n = len(pms)
    used = [ResourceVector(0, 0, 0) for _ in range(n)]
    choice: list[int] = []
    best: Optional[tuple[int, float, list[int]]] = None

    def search(idx: int, on_count: int, power_sum: float) -> None:
        nonlocal best
        if best is not None:
            if on_count > best[0]:
                return
            if on_count == best[0] and power_sum >= best[1]:
                return
        if idx == len(items):
            best = (on_count, power_sum, list(choice))
            return
        _, demand = items[idx]
        # Identical empty machines are interchangeable; trying one of each
        # spec is enough and cuts the search space hard.
        tried_empty_specs: set[tuple] = set()
        for j in range(n):
            if not fits(demand, vec_sub(caps[j], used[j])):
                continue
            was_empty = used[j].is_zero()
            if was_empty:
                spec = (caps[j].as_tuple(), pms[j].power_idle, pms[j].power_max)
                if spec in tried_empty_specs:
                    continue
                tried_empty_specs.add(spec)
            old_used = used[j]
            old_power = machine_power(j, old_used)
            used[j] = vec_add(old_used, demand)
            new_power = machine_power(j, used[j])
            choice.append(j)
            search(
                idx + 1,
                on_count + (1 if was_empty else 0),
                power_sum - old_power + new_power,
            )
            choice.pop()
            used[j] = old_used

    search(0, 0, 0.0)
    if best is None:
        return OracleResult(False, 0, 0.0, None)
    on_count, power_sum, final_choice = best
    assignment = {
        items[i][0]: pms[final_choice[i]].pm_id for i in range(len(items))
    }
    return OracleResult(True, on_count, power_sum, assignment)
