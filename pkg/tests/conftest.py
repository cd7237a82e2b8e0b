"""Shared builders for randomized test instances.

Both generators are pure functions of the Random instance handed in, so any
test that seeds its own Random gets a reproducible stream of instances.
"""

from pathlib import Path

import adacloud
from adacloud.allocation import build_availability, place, reallocate, replace
from adacloud.model import (
    PhysicalMachine,
    PriceTable,
    QoSSpec,
    Query,
    ResourceVector,
    fits,
    machine_report,
)
from adacloud.scenario import GeneratorSpec, MachineSpec, Range, Scenario

REFERENCE_SCN = Path(adacloud.__file__).parent / "scenarios" / "reference.scn"


def random_fleet_instance(rng):
    """A small loaded fleet plus one incoming query, oracle-sized.

    The query's minimum equals its request, so every adaptation option has to
    find room for the full demand; that makes heuristic success directly
    comparable with the oracle's feasibility answer.
    """
    machines = []
    for i in range(rng.randint(2, 5)):
        capacity = ResourceVector(
            cpu=rng.randint(2, 8),
            ram=rng.randint(2048, 16384),
            disk=rng.randint(20, 200),
        )
        idle = rng.uniform(50.0, 150.0)
        machines.append(
            PhysicalMachine(f"m{i + 1}", capacity, idle, idle + rng.uniform(50.0, 300.0))
        )
    for k in range(rng.randint(0, 6)):
        demand = ResourceVector(
            cpu=rng.randint(1, 6),
            ram=rng.randint(512, 8192),
            disk=rng.randint(5, 120),
        )
        host = next((m for m in machines if fits(demand, m.free())), None)
        if host is not None:
            host.commit(f"vm{k + 1}", demand)
    for m in machines:
        if not m.hosted and rng.random() < 0.5:
            m.powered_on = False
    demand = ResourceVector(
        cpu=rng.randint(1, 6),
        ram=rng.randint(512, 8192),
        disk=rng.randint(5, 120),
    )
    query = Query(
        id="qx", user_id="u1", requested=demand,
        qos=QoSSpec(min_capacity=demand, max_latency_ms=1000, max_price=1e9),
        arrival_ms=0, lifetime_s=60,
    )
    return machines, query


def adaptation_chain(machines, query):
    """Run the scheduler's option ladder over a static fleet snapshot.

    Returns the name of the first step that finds room for the query, or
    None when the whole ladder fails. Mirrors what the scheduler does, minus
    messaging and retries, so heuristic completeness can be measured against
    the oracle without running a simulation.
    """
    reports = [machine_report(m, 0) for m in machines]
    matrix = build_availability(reports)
    if place(matrix, query.requested) is not None:
        return "place"
    if replace(query, matrix) is not None:
        return "replace"
    if reallocate(reports, query, "vm-new", 0) is not None:
        return "reallocate"
    return None


def random_scenario(rng):
    """A full end-to-end scenario: random fleet, generated workload, any allocator."""
    machines = []
    for i in range(rng.randint(1, 5)):
        capacity = ResourceVector(
            cpu=rng.randint(2, 16),
            ram=rng.randint(2048, 32768),
            disk=rng.randint(40, 400),
        )
        machines.append(
            MachineSpec(
                pm_id=f"m{i + 1}",
                capacity=capacity,
                power_idle=rng.uniform(40.0, 200.0),
                power_max=rng.uniform(220.0, 600.0),
            )
        )
    muted = ()
    if len(machines) > 1 and rng.random() < 0.15:
        muted = (rng.choice([m.pm_id for m in machines]),)
    generator = GeneratorSpec(
        arrival_mean_ms=rng.choice([5000, 15000, 30000]),
        arrival_prefix_ms=(0,),
        cpu=Range(1, rng.randint(2, 6)),
        ram=Range(256, rng.randint(1024, 8192)),
        disk=Range(2, rng.randint(10, 80)),
        lifetime_s=Range(30, rng.randint(60, 240)),
        min_fraction=Range(0.25, 0.75),
        latency_ms=Range(500, 2000),
        price_headroom=Range(1.2, 2.0),
    )
    return Scenario(
        seed=rng.randrange(10**6),
        horizon_ms=rng.choice([120_000, 300_000, 600_000]),
        machines=tuple(machines),
        prices=PriceTable(per_core=0.05, per_mib=2e-05, per_gib=0.003),
        hop_latency_ms=1,
        allocator=rng.choice(["selfadaptive", "firstfit", "spread"]),
        muted=muted,
        generator=generator,
    )
