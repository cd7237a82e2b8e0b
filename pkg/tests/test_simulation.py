"""End-to-end runs: protocol, adaptation paths, power accounting, determinism."""

import dataclasses

import pytest

from adacloud.energy import energy_by_machine
from adacloud.model import (
    PriceTable,
    QoSSpec,
    Query,
    ResourceVector,
    SlaVerdict,
)
from adacloud.scenario import MachineSpec, Scenario, load_scenario
from adacloud.simulation import Simulation, simulate
from conftest import REFERENCE_SCN

PRICES = PriceTable(per_core=0.05, per_mib=2e-05, per_gib=0.003)


def machine(pm_id, cpu, ram, disk, idle=100.0, peak=200.0):
    return MachineSpec(pm_id=pm_id, capacity=ResourceVector(cpu, ram, disk),
                       power_idle=idle, power_max=peak)


def query(qid, arrival_ms, requested, minimum=None, lifetime_s=600,
          latency=1000, price=5.0):
    return Query(
        id=qid, user_id="u1", requested=requested,
        qos=QoSSpec(minimum if minimum is not None else requested,
                    latency, price),
        arrival_ms=arrival_ms, lifetime_s=lifetime_s,
    )


def scenario(machines, queries, horizon_ms=200_000, allocator="selfadaptive",
             muted=()):
    return Scenario(
        seed=1, horizon_ms=horizon_ms, machines=tuple(machines),
        prices=PRICES, allocator=allocator, muted=tuple(muted),
        queries=tuple(queries),
    )


@pytest.fixture(scope="module")
def reference():
    return load_scenario(str(REFERENCE_SCN))


@pytest.fixture(scope="module")
def reference_result(reference):
    return simulate(reference)


class TestReferenceRun:
    def test_every_query_is_resolved_exactly_once(self, reference_result):
        r = reference_result
        n = len(r.queries)
        assert n == len(r.rows)
        assert n == len(r.user_results)
        assert n == len(r.coordinator.entries)
        assert sorted(row.query_id for row in r.rows) \
            == sorted(q.id for q in r.queries)

    def test_first_decisions_land_three_hops_after_arrival(self, reference_result):
        # arrival -> analyzer is instant; analyzer -> scheduler, scheduler ->
        # controllers, controllers -> scheduler are one hop each
        times = [row.time_ms for row in reference_result.rows[:3]]
        assert times == [3, 503, 5003]

    def test_user_hears_back_two_hops_after_the_decision(self, reference_result):
        when, body = reference_result.user_results[0]
        assert when == 5
        assert body.query_id == "q1"
        assert body.latency_ms == 3

    def test_latency_in_results_respects_the_qos_bound(self, reference_result):
        by_id = {q.id: q for q in reference_result.queries}
        for _, body in reference_result.user_results:
            if body.verdict is not SlaVerdict.UNACCEPTABLE:
                assert body.latency_ms <= by_id[body.query_id].qos.max_latency_ms

    def test_consistency_sweep_actually_ran(self, reference_result):
        assert reference_result.consistency_checks > 0

    def test_trace_is_deterministic(self, reference):
        first = simulate(reference, collect_trace=True)
        second = simulate(reference, collect_trace=True)
        assert first.trace.events == second.trace.events
        assert first.rows == second.rows
        assert first.power_samples == second.power_samples

    def test_trace_records_arrivals_at_their_virtual_time(self, reference):
        result = simulate(reference, collect_trace=True)
        assert "[       0] arrival q1" in result.trace.events
        assert "[     500] arrival q2" in result.trace.events
        assert "[    5000] arrival q3" in result.trace.events

    def test_trace_off_by_default(self, reference_result):
        assert reference_result.trace.events == []


class TestSchedulerControllerConsistency:
    def test_knowledge_matches_reality_at_quiescence(self):
        # horizon sits between monitor pushes so no delivery is in flight
        s = scenario(
            [machine("m1", 8, 16384, 200), machine("m2", 4, 8192, 100)],
            [query("q1", 0, ResourceVector(2, 2048, 25), lifetime_s=5)],
            horizon_ms=10_500,
        )
        sim = Simulation(s)
        sim.run()
        for pm_id, controller in sim.controllers.items():
            assert sim.scheduler.latest_reports[pm_id] == controller.current


class TestAdaptationPaths:
    def test_full_machine_exhausts_every_option(self):
        s = scenario(
            [machine("m1", 4, 4096, 50)],
            [
                query("q1", 0, ResourceVector(4, 4096, 50), lifetime_s=60),
                query("q2", 10_000, ResourceVector(4, 4096, 50), lifetime_s=60),
                query("q3", 70_000, ResourceVector(4, 4096, 50), lifetime_s=60),
            ],
            horizon_ms=140_000,
        )
        result = simulate(s)
        q1, q2, q3 = result.rows

        assert (q1.query_id, q1.verdict, q1.pm_id) \
            == ("q1", SlaVerdict.ACCEPTABLE, "m1")
        assert q1.time_ms == 3

        # q2 hits a saturated datacenter: one retry round trip, then the
        # heavier options fail because nothing can free four cores
        assert q2.verdict is SlaVerdict.UNACCEPTABLE
        assert q2.pm_id is None
        assert q2.time_ms == 10_105
        record = result.coordinator.entries[1]
        assert record.reason == "options exhausted"
        assert record.attempts == 3  # retry + replacement + reallocation

        # q3 arrives after q1 expired; the machine was powered off and is
        # woken for it
        assert (q3.verdict, q3.pm_id, q3.time_ms) \
            == (SlaVerdict.ACCEPTABLE, "m1", 70_003)
        assert (result.coordinator.accepted, result.coordinator.rejected) == (2, 1)

    def test_baselines_only_get_the_retry_option(self):
        s = scenario(
            [machine("m1", 4, 4096, 50)],
            [
                query("q1", 0, ResourceVector(4, 4096, 50), lifetime_s=60),
                query("q2", 10_000, ResourceVector(4, 4096, 50), lifetime_s=60),
            ],
            horizon_ms=100_000,
            allocator="firstfit",
        )
        result = simulate(s)
        record = result.coordinator.entries[1]
        assert record.reason == "options exhausted"
        assert record.attempts == 1

    def test_retry_succeeds_when_an_expiry_frees_the_machine(self):
        # q2 arrives 53 ms before q1's VM expires; the retry backoff carries
        # the second placement attempt past the expiry
        s = scenario(
            [machine("m1", 4, 4096, 50)],
            [
                query("q1", 0, ResourceVector(4, 4096, 50), lifetime_s=30),
                query("q2", 29_950, ResourceVector(4, 4096, 50), lifetime_s=30),
            ],
            horizon_ms=100_000,
        )
        result = simulate(s)
        q2 = result.rows[1]
        assert q2.verdict is SlaVerdict.ACCEPTABLE
        assert q2.pm_id == "m1"
        assert q2.option_used == "retry"

    def test_replacement_offers_a_reduced_vector_in_degraded_state(self):
        # m2 is muted, so every round is Degraded and reduced offers are
        # admissible; m1 cannot take q2's full request
        s = scenario(
            [machine("m1", 4, 4096, 50), machine("m2", 8, 8192, 100)],
            [
                query("q1", 0, ResourceVector(2, 2048, 25)),
                query("q2", 10_000, ResourceVector(4, 4096, 50),
                      minimum=ResourceVector(1, 1024, 10), lifetime_s=60),
            ],
            horizon_ms=100_000,
            muted=("m2",),
        )
        result = simulate(s)
        q2 = result.rows[1]
        assert q2.verdict is SlaVerdict.DEGRADED_ACCEPTABLE
        assert q2.option_used == "replacement"
        assert q2.pm_id == "m1"
        # the most generous grid point that fits free = (2, 2048, 25)
        assert q2.offered == ResourceVector(2, 1792, 20)
        assert result.coordinator.entries[1].system_state == "Degraded"

    def test_reallocation_migrates_to_make_room(self):
        # consolidation leaves 4 free cores on each machine; only a repack
        # can host a 6-core VM
        s = scenario(
            [machine("m1", 8, 16384, 200), machine("m2", 6, 16384, 200)],
            [
                query("q1", 0, ResourceVector(4, 512, 5)),
                query("q2", 10_000, ResourceVector(4, 512, 5)),
                query("q3", 20_000, ResourceVector(6, 512, 5)),
            ],
            horizon_ms=100_000,
        )
        result = simulate(s)
        q3 = result.rows[2]
        assert q3.verdict is SlaVerdict.ACCEPTABLE
        assert q3.option_used == "reallocation"
        assert q3.migrations == 1
        assert result.coordinator.entries[2].attempts == 3


class TestDuplicateQueryIds:
    def test_second_submission_is_rejected(self):
        dup = [
            query("q1", 0, ResourceVector(1, 1024, 10), lifetime_s=60),
            query("q1", 5_000, ResourceVector(1, 1024, 10), lifetime_s=60),
        ]
        s = scenario([machine("m1", 8, 16384, 200)], dup, horizon_ms=60_000)
        result = simulate(s)
        verdicts = [body.verdict for _, body in result.user_results]
        assert verdicts == [SlaVerdict.ACCEPTABLE, SlaVerdict.UNACCEPTABLE]
        assert result.coordinator.entries[1].reason == "duplicate query id"


class TestMutedControllers:
    def test_one_muted_machine_degrades_but_still_serves(self, reference):
        s = dataclasses.replace(reference, muted=("m3",))
        result = simulate(s)
        assert len(result.rows) == len(result.queries)
        for record in result.coordinator.entries:
            assert record.system_state == "Degraded"
        committed = [r for r in result.rows
                     if r.verdict is not SlaVerdict.UNACCEPTABLE]
        assert committed, "a degraded system still serves"
        assert all(r.pm_id != "m3" for r in committed)

    def test_all_muted_machines_break_the_system(self, reference):
        s = dataclasses.replace(reference,
                                muted=tuple(m.pm_id for m in reference.machines))
        result = simulate(s)
        assert len(result.rows) == len(result.queries)
        assert result.coordinator.rejected == len(result.queries)
        for record in result.coordinator.entries:
            assert record.verdict is SlaVerdict.UNACCEPTABLE
            assert record.reason == "system broken"
        assert all(not m.powered_on for m in
                   Simulation(s).machines.values())  # nothing was ever started


class TestPowerAccounting:
    def test_hand_computed_energy_for_one_vm(self):
        # 0 W until the commit at t=3, then 60 s at exactly half load:
        # 100 + (200 - 100) * 0.5 = 150 W -> 9000 J, then off again
        s = scenario(
            [machine("m1", 4, 4096, 100)],
            [query("q1", 0, ResourceVector(2, 2048, 50), lifetime_s=60)],
            horizon_ms=100_000,
        )
        result = simulate(s)
        totals = energy_by_machine(result.power_samples, s.horizon_ms)
        assert totals["m1"] == pytest.approx(9000.0)

    def test_same_workload_costs_more_without_power_management(self):
        # the baseline keeps the machine idling before and after the VM:
        # 0.003 s * 100 W + 60 s * 150 W + 39.997 s * 100 W = 13000 J
        s = scenario(
            [machine("m1", 4, 4096, 100)],
            [query("q1", 0, ResourceVector(2, 2048, 50), lifetime_s=60)],
            horizon_ms=100_000,
            allocator="firstfit",
        )
        result = simulate(s)
        totals = energy_by_machine(result.power_samples, s.horizon_ms)
        assert totals["m1"] == pytest.approx(13000.0)

    def test_consolidating_allocator_powers_machines_off_after_expiry(self):
        s = scenario(
            [machine("m1", 4, 4096, 100)],
            [query("q1", 0, ResourceVector(2, 2048, 50), lifetime_s=60)],
            horizon_ms=100_000,
        )
        result = simulate(s)
        zeroes = [p for p in result.power_samples if p.watts == 0.0]
        assert [p.time_ms for p in zeroes] == [0, 60_003]

    def test_baselines_never_power_anything_off(self, reference):
        for allocator in ("firstfit", "spread"):
            result = simulate(reference.with_overrides(allocator=allocator))
            assert all(p.watts > 0.0 for p in result.power_samples)

    def test_power_samples_are_deduplicated(self, reference_result):
        last = {}
        for p in reference_result.power_samples:
            assert last.get(p.pm_id) != p.watts
            last[p.pm_id] = p.watts
