"""Command-line entry point: run a scenario, emit CSVs, plot script, summary.

Exit codes: 0 on success, 1 for anything wrong with the scenario or flags,
2 when the simulation detects an internal inconsistency (which means the
results cannot be trusted and nothing useful can be said about the workload).

The summary is deliberately recomputed from the CSV files on disk rather
than from in-memory results, so the numbers a user reads are the numbers a
spreadsheet would compute from the same files.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace
from typing import Optional

from .allocation import POLICIES, AccountingError
from .energy import PowerSample, energy_by_machine
from .kernel import SimulationError
from .model import CapacityUnderflowError
from .scenario import Scenario, ScenarioError, load_scenario
from .simulation import InvariantViolation, SimResult, simulate

USAGE = "usage: adacloud --scenario PATH [--seed N] [--allocator NAME] [--out DIR] [--trace] [--compare]"


def fmt_number(value) -> str:
    """Integers exact; everything else 6 significant digits."""
    if isinstance(value, bool):
        raise TypeError("refusing to format a bool as a CSV number")
    if isinstance(value, int):
        return str(value)
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return f"{value:.6g}"


def write_power_csv(path: str, samples: list[PowerSample]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["time_ms", "pm_id", "watts"])
        for s in samples:
            writer.writerow([s.time_ms, s.pm_id, fmt_number(s.watts)])


def write_allocations_csv(path: str, result: SimResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow([
            "time_ms", "query_id", "verdict", "pm_id",
            "offered_cpu", "offered_ram", "offered_disk",
            "option_used", "migrations",
        ])
        for row in result.rows:
            offered = row.offered
            writer.writerow([
                row.time_ms,
                row.query_id,
                row.verdict.value,
                row.pm_id if row.pm_id is not None else "",
                offered.cpu if offered is not None else "",
                offered.ram if offered is not None else "",
                offered.disk if offered is not None else "",
                row.option_used,
                row.migrations,
            ])


def write_plot_script(path: str, pm_ids: list[str]) -> None:
    plots = ", \\\n  ".join(
        f'"power.csv" using ($1/60000.0):(strcol(2) eq "{pm}" ? $3 : 1/0) '
        f'with steps title "{pm}"'
        for pm in pm_ids
    )
    text = (
        "# render with: gnuplot -persist plot.gp\n"
        "set datafile separator \",\"\n"
        "set xlabel \"virtual time (minutes)\"\n"
        "set ylabel \"power (W)\"\n"
        "set yrange [0:*]\n"
        "set key outside right\n"
        f"plot \\\n  {plots}\n"
    )
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(text)


def read_power_csv(path: str) -> list[PowerSample]:
    samples = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        for row in reader:
            samples.append(
                PowerSample(
                    time_ms=int(row["time_ms"]),
                    pm_id=row["pm_id"],
                    watts=float(row["watts"]),
                )
            )
    return samples


def summarize_from_csvs(out_dir: str, horizon_ms: int) -> dict:
    """Recompute all reported aggregates from the files just written."""
    energy = energy_by_machine(
        read_power_csv(os.path.join(out_dir, "power.csv")), horizon_ms
    )
    verdicts: dict[str, int] = {}
    options: dict[str, int] = {}
    migrations = 0
    queries = 0
    with open(os.path.join(out_dir, "allocations.csv"), newline="",
              encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            queries += 1
            verdicts[row["verdict"]] = verdicts.get(row["verdict"], 0) + 1
            options[row["option_used"]] = options.get(row["option_used"], 0) + 1
            migrations += int(row["migrations"])
    return {
        "energy_by_machine": energy,
        "total_joules": sum(energy.values()),
        "verdicts": verdicts,
        "options": options,
        "migrations": migrations,
        "queries": queries,
    }


def render_summary(scenario: Scenario, allocator: str, stats: dict) -> str:
    lines = [
        f"allocator: {allocator}",
        f"seed: {scenario.seed}",
        f"horizon_ms: {scenario.horizon_ms}",
        f"machines: {len(scenario.machines)}",
        f"queries: {stats['queries']}",
    ]
    for verdict in ("Acceptable", "DegradedAcceptable", "Unacceptable"):
        lines.append(f"{verdict}: {stats['verdicts'].get(verdict, 0)}")
    lines.append(f"migrations: {stats['migrations']}")
    lines.append("option_usage:")
    for option, count in sorted(stats["options"].items()):
        lines.append(f"  {option}: {count}")
    lines.append("energy_by_machine_joules:")
    for pm_id, joules in sorted(stats["energy_by_machine"].items()):
        lines.append(f"  {pm_id}: {fmt_number(joules)}")
    lines.append(f"total_energy_joules: {fmt_number(stats['total_joules'])}")
    lines.append(
        f"total_energy_kwh: {fmt_number(stats['total_joules'] / 3.6e6)}"
    )
    return "\n".join(lines) + "\n"


def run_and_write(scenario: Scenario, out_dir: str,
                  trace: bool = False) -> tuple[SimResult, dict]:
    os.makedirs(out_dir, exist_ok=True)
    result = simulate(scenario, collect_trace=trace)
    write_power_csv(os.path.join(out_dir, "power.csv"), result.power_samples)
    write_allocations_csv(os.path.join(out_dir, "allocations.csv"), result)
    write_plot_script(
        os.path.join(out_dir, "plot.gp"),
        [m.pm_id for m in scenario.machines],
    )
    stats = summarize_from_csvs(out_dir, scenario.horizon_ms)
    with open(os.path.join(out_dir, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(render_summary(scenario, scenario.allocator, stats))
    return result, stats


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adacloud", add_help=True,
        description="Deterministic datacenter simulation with QoS-aware, "
                    "energy-aware VM allocation.",
    )
    parser.add_argument("--scenario", help="scenario file to run")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the scenario's seed")
    parser.add_argument("--allocator", default=None,
                        help=f"override strategy ({', '.join(sorted(POLICIES))})")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--trace", action="store_true",
                        help="print the event trace to stdout")
    parser.add_argument("--compare", action="store_true",
                        help="run every allocator on the same workload")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    if not args.scenario:
        print(USAGE, file=sys.stderr)
        print("error: --scenario is required", file=sys.stderr)
        return 1
    try:
        scenario = load_scenario(args.scenario)
        if args.allocator is not None and args.allocator not in POLICIES:
            raise ScenarioError(
                f"allocator: unknown strategy {args.allocator!r} "
                f"(choose from {', '.join(sorted(POLICIES))})"
            )
        scenario = scenario.with_overrides(seed=args.seed, allocator=args.allocator)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    try:
        if args.compare:
            return _run_compare(scenario, args)
        return _run_single(scenario, args)
    except (InvariantViolation, SimulationError, AccountingError,
            CapacityUnderflowError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


def _run_single(scenario: Scenario, args) -> int:
    result, stats = run_and_write(scenario, args.out, trace=args.trace)
    if args.trace:
        for line in result.trace.events:
            print(line)
    print(
        f"{scenario.allocator}: {stats['queries']} queries, "
        f"{fmt_number(stats['total_joules'])} J, outputs in {args.out}"
    )
    return 0


def _run_compare(scenario: Scenario, args) -> int:
    totals: dict[str, float] = {}
    for name in sorted(POLICIES):
        sub_dir = os.path.join(args.out, name)
        sub_scenario = replace(scenario, allocator=name)
        _, stats = run_and_write(sub_scenario, sub_dir, trace=False)
        totals[name] = stats["total_joules"]
        print(f"{name}: {fmt_number(stats['total_joules'])} J -> {sub_dir}")
    lines = ["energy_totals_joules:"]
    for name in sorted(totals):
        lines.append(f"  {name}: {fmt_number(totals[name])}")
    if totals.get("selfadaptive", 0) > 0:
        for name in sorted(totals):
            if name != "selfadaptive":
                ratio = totals[name] / totals["selfadaptive"]
                lines.append(f"ratio_{name}_over_selfadaptive: {fmt_number(ratio)}")
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
