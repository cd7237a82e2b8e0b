"""Scenario documents: the machine fleet, prices, and workload for one run.

The format is line-oriented so files stay diffable and need no parser
dependency: top-level `key = value` pairs, one `machine` stanza per physical
machine, and either explicit `query` lines or a generator block described by
`*_range` keys. `#` starts a comment line. parse/serialize round-trip exactly.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, replace
from typing import Optional, Union

from .allocation import POLICIES
from .model import PriceTable, QoSSpec, Query, ResourceVector

ARRIVAL_MARGIN_MS = 30_000


class ScenarioError(Exception):
    """Invalid scenario document; message carries the offending line."""


Number = Union[int, float]


@dataclass(frozen=True)
class Range:
    lo: Number
    hi: Number

    def __post_init__(self) -> None:
        if self.lo > self.hi:
            raise ValueError(f"degenerate range {self.lo}..{self.hi}")


@dataclass(frozen=True)
class MachineSpec:
    pm_id: str
    capacity: ResourceVector
    power_idle: float
    power_max: float


@dataclass(frozen=True)
class GeneratorSpec:
    arrival_mean_ms: int
    arrival_prefix_ms: tuple[int, ...]
    cpu: Range
    ram: Range
    disk: Range
    lifetime_s: Range
    min_fraction: Range
    latency_ms: Range
    price_headroom: Range


@dataclass(frozen=True)
class Scenario:
    seed: int
    horizon_ms: int
    machines: tuple[MachineSpec, ...]
    prices: PriceTable
    hop_latency_ms: int = 1
    allocator: str = "selfadaptive"
    muted: tuple[str, ...] = ()
    generator: Optional[GeneratorSpec] = None
    queries: tuple[Query, ...] = ()

    def with_overrides(self, seed: Optional[int] = None,
                       allocator: Optional[str] = None) -> "Scenario":
        out = self
        if seed is not None:
            out = replace(out, seed=seed)
        if allocator is not None:
            out = replace(out, allocator=allocator)
        return out


_SCALAR_KEYS = {
    "seed", "horizon_ms", "hop_latency_ms", "allocator", "muted",
    "price_per_core", "price_per_mib", "price_per_gib",
    "arrival_mean_ms", "arrival_prefix_ms", "cpu_range", "ram_range",
    "disk_range", "lifetime_range_s", "min_fraction_range",
    "latency_range_ms", "price_headroom_range",
}

_GENERATOR_REQUIRED = (
    "arrival_mean_ms", "cpu_range", "ram_range", "disk_range",
    "lifetime_range_s", "min_fraction_range", "latency_range_ms",
    "price_headroom_range",
)

_MACHINE_KEYS = ("cpu", "ram", "disk", "idle", "max")

_QUERY_KEYS = (
    "user", "arrival", "cpu", "ram", "disk", "min_cpu", "min_ram",
    "min_disk", "latency", "price", "lifetime",
)


def _fail(line_no: int, message: str) -> ScenarioError:
    return ScenarioError(f"line {line_no}: {message}")


def _parse_number(text: str, line_no: int, key: str) -> Number:
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise _fail(line_no, f"{key}: not a number: {text!r}") from None


def _parse_int(text: str, line_no: int, key: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise _fail(line_no, f"{key}: not an integer: {text!r}") from None


def _parse_range(text: str, line_no: int, key: str) -> Range:
    if ".." not in text:
        raise _fail(line_no, f"{key}: expected lo..hi, got {text!r}")
    lo_text, hi_text = text.split("..", 1)
    lo = _parse_number(lo_text.strip(), line_no, key)
    hi = _parse_number(hi_text.strip(), line_no, key)
    try:
        return Range(lo, hi)
    except ValueError as exc:
        raise _fail(line_no, f"{key}: {exc}") from None


def _parse_kv_fields(parts: list[str], allowed: tuple[str, ...],
                     line_no: int, what: str) -> dict[str, str]:
    fields: dict[str, str] = {}
    for part in parts:
        if "=" not in part:
            raise _fail(line_no, f"{what}: expected key=value, got {part!r}")
        key, value = part.split("=", 1)
        if key not in allowed:
            raise _fail(line_no, f"{what}: unknown field {key!r}")
        if key in fields:
            raise _fail(line_no, f"{what}: duplicate field {key!r}")
        fields[key] = value
    missing = [k for k in allowed if k not in fields]
    if missing:
        raise _fail(line_no, f"{what}: missing {', '.join(missing)}")
    return fields


def _parse_machine(parts: list[str], line_no: int) -> MachineSpec:
    if len(parts) < 2:
        raise _fail(line_no, "machine: missing identifier")
    pm_id = parts[1]
    fields = _parse_kv_fields(parts[2:], _MACHINE_KEYS, line_no, f"machine {pm_id}")
    try:
        spec = MachineSpec(
            pm_id=pm_id,
            capacity=ResourceVector(
                cpu=_parse_int(fields["cpu"], line_no, "cpu"),
                ram=_parse_int(fields["ram"], line_no, "ram"),
                disk=_parse_int(fields["disk"], line_no, "disk"),
            ),
            power_idle=float(_parse_number(fields["idle"], line_no, "idle")),
            power_max=float(_parse_number(fields["max"], line_no, "max")),
        )
    except ValueError as exc:
        raise _fail(line_no, f"machine {pm_id}: {exc}") from None
    cap = spec.capacity
    if min(cap.cpu, cap.ram, cap.disk) < 1:
        raise _fail(line_no, f"machine {pm_id}: capacity components must be >= 1")
    if spec.power_idle <= 0 or spec.power_max < spec.power_idle:
        raise _fail(
            line_no, f"machine {pm_id}: need 0 < idle <= max power ratings"
        )
    return spec


def _parse_query(parts: list[str], line_no: int) -> Query:
    if len(parts) < 2:
        raise _fail(line_no, "query: missing identifier")
    qid = parts[1]
    fields = _parse_kv_fields(parts[2:], _QUERY_KEYS, line_no, f"query {qid}")
    try:
        return Query(
            id=qid,
            user_id=fields["user"],
            requested=ResourceVector(
                cpu=_parse_int(fields["cpu"], line_no, "cpu"),
                ram=_parse_int(fields["ram"], line_no, "ram"),
                disk=_parse_int(fields["disk"], line_no, "disk"),
            ),
            qos=QoSSpec(
                min_capacity=ResourceVector(
                    cpu=_parse_int(fields["min_cpu"], line_no, "min_cpu"),
                    ram=_parse_int(fields["min_ram"], line_no, "min_ram"),
                    disk=_parse_int(fields["min_disk"], line_no, "min_disk"),
                ),
                max_latency_ms=_parse_int(fields["latency"], line_no, "latency"),
                max_price=float(_parse_number(fields["price"], line_no, "price")),
            ),
            arrival_ms=_parse_int(fields["arrival"], line_no, "arrival"),
            lifetime_s=_parse_int(fields["lifetime"], line_no, "lifetime"),
        )
    except ValueError as exc:
        raise _fail(line_no, f"query {qid}: {exc}") from None


def parse_scenario(text: str) -> Scenario:
    scalars: dict[str, tuple[str, int]] = {}
    machines: list[MachineSpec] = []
    machine_ids: set[str] = set()
    queries: list[Query] = []
    query_ids: set[str] = set()

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "machine":
            spec = _parse_machine(parts, line_no)
            if spec.pm_id in machine_ids:
                raise _fail(line_no, f"machine: duplicate id {spec.pm_id!r}")
            machine_ids.add(spec.pm_id)
            machines.append(spec)
        elif parts[0] == "query":
            query = _parse_query(parts, line_no)
            if query.id in query_ids:
                raise _fail(line_no, f"query: duplicate id {query.id!r}")
            query_ids.add(query.id)
            queries.append(query)
        elif "=" in line:
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in _SCALAR_KEYS:
                raise _fail(line_no, f"unknown field {key!r}")
            if key in scalars:
                raise _fail(line_no, f"duplicate field {key!r}")
            scalars[key] = (value, line_no)
        else:
            raise _fail(line_no, f"cannot parse line: {line!r}")

    def need(key: str) -> tuple[str, int]:
        if key not in scalars:
            raise ScenarioError(f"missing required field {key!r}")
        return scalars[key]

    seed = _parse_int(*need("seed"), "seed")
    horizon_ms = _parse_int(*need("horizon_ms"), "horizon_ms")
    if horizon_ms <= 0:
        raise ScenarioError("horizon_ms: must be positive")
    if not machines:
        raise ScenarioError("machines: must be non-empty")

    prices = PriceTable(
        per_core=float(_parse_number(*need("price_per_core"), "price_per_core")),
        per_mib=float(_parse_number(*need("price_per_mib"), "price_per_mib")),
        per_gib=float(_parse_number(*need("price_per_gib"), "price_per_gib")),
    )

    hop_latency_ms = 1
    if "hop_latency_ms" in scalars:
        hop_latency_ms = _parse_int(*scalars["hop_latency_ms"], "hop_latency_ms")
        if hop_latency_ms < 1:
            raise ScenarioError("hop_latency_ms: must be >= 1")

    allocator = "selfadaptive"
    if "allocator" in scalars:
        allocator, line_no = scalars["allocator"]
        if allocator not in POLICIES:
            raise _fail(
                line_no,
                f"allocator: unknown strategy {allocator!r} "
                f"(choose from {', '.join(sorted(POLICIES))})",
            )

    muted: tuple[str, ...] = ()
    if "muted" in scalars:
        value, line_no = scalars["muted"]
        muted = tuple(s.strip() for s in value.split(",") if s.strip())
        unknown = [m for m in muted if m not in machine_ids]
        if unknown:
            raise _fail(line_no, f"muted: unknown machine {unknown[0]!r}")

    generator_keys_present = [k for k in _GENERATOR_REQUIRED if k in scalars]
    generator: Optional[GeneratorSpec] = None
    if generator_keys_present:
        missing = [k for k in _GENERATOR_REQUIRED if k not in scalars]
        if missing:
            raise ScenarioError(
                f"generator: missing {', '.join(missing)} "
                f"(saw {generator_keys_present[0]})"
            )
        prefix: tuple[int, ...] = ()
        if "arrival_prefix_ms" in scalars:
            value, line_no = scalars["arrival_prefix_ms"]
            prefix = tuple(
                _parse_int(s.strip(), line_no, "arrival_prefix_ms")
                for s in value.split(",") if s.strip()
            )
        mean = _parse_int(*scalars["arrival_mean_ms"], "arrival_mean_ms")
        if mean <= 0:
            raise ScenarioError("arrival_mean_ms: must be positive")
        generator = GeneratorSpec(
            arrival_mean_ms=mean,
            arrival_prefix_ms=prefix,
            cpu=_parse_range(*scalars["cpu_range"], "cpu_range"),
            ram=_parse_range(*scalars["ram_range"], "ram_range"),
            disk=_parse_range(*scalars["disk_range"], "disk_range"),
            lifetime_s=_parse_range(*scalars["lifetime_range_s"], "lifetime_range_s"),
            min_fraction=_parse_range(
                *scalars["min_fraction_range"], "min_fraction_range"
            ),
            latency_ms=_parse_range(*scalars["latency_range_ms"], "latency_range_ms"),
            price_headroom=_parse_range(
                *scalars["price_headroom_range"], "price_headroom_range"
            ),
        )

    if generator is not None and queries:
        raise ScenarioError("scenario mixes explicit queries with a generator block")
    if generator is None and not queries:
        raise ScenarioError("scenario has no workload (no queries, no generator)")

    return Scenario(
        seed=seed,
        horizon_ms=horizon_ms,
        machines=tuple(machines),
        prices=prices,
        hop_latency_ms=hop_latency_ms,
        allocator=allocator,
        muted=muted,
        generator=generator,
        queries=tuple(queries),
    )


def load_scenario(path: str) -> Scenario:
    try:
        with open(path, encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from None
    return parse_scenario(text)


def _fmt_number(value: Number) -> str:
    # repr round-trips floats exactly, which the parse/serialize property needs
    return repr(value) if isinstance(value, float) else str(value)


def _fmt_range(r: Range) -> str:
    return f"{_fmt_number(r.lo)}..{_fmt_number(r.hi)}"


def serialize_scenario(scenario: Scenario) -> str:
    lines = [
        f"seed = {scenario.seed}",
        f"horizon_ms = {scenario.horizon_ms}",
        f"hop_latency_ms = {scenario.hop_latency_ms}",
        f"allocator = {scenario.allocator}",
        f"price_per_core = {_fmt_number(scenario.prices.per_core)}",
        f"price_per_mib = {_fmt_number(scenario.prices.per_mib)}",
        f"price_per_gib = {_fmt_number(scenario.prices.per_gib)}",
    ]
    if scenario.muted:
        lines.append(f"muted = {','.join(scenario.muted)}")
    lines.append("")
    for m in scenario.machines:
        lines.append(
            f"machine {m.pm_id} cpu={m.capacity.cpu} ram={m.capacity.ram} "
            f"disk={m.capacity.disk} idle={_fmt_number(m.power_idle)} "
            f"max={_fmt_number(m.power_max)}"
        )
    if scenario.generator is not None:
        g = scenario.generator
        lines.append("")
        lines.append(f"arrival_mean_ms = {g.arrival_mean_ms}")
        if g.arrival_prefix_ms:
            lines.append(
                "arrival_prefix_ms = "
                + ",".join(str(t) for t in g.arrival_prefix_ms)
            )
        lines.append(f"cpu_range = {_fmt_range(g.cpu)}")
        lines.append(f"ram_range = {_fmt_range(g.ram)}")
        lines.append(f"disk_range = {_fmt_range(g.disk)}")
        lines.append(f"lifetime_range_s = {_fmt_range(g.lifetime_s)}")
        lines.append(f"min_fraction_range = {_fmt_range(g.min_fraction)}")
        lines.append(f"latency_range_ms = {_fmt_range(g.latency_ms)}")
        lines.append(f"price_headroom_range = {_fmt_range(g.price_headroom)}")
    if scenario.queries:
        lines.append("")
        for q in scenario.queries:
            lines.append(
                f"query {q.id} user={q.user_id} arrival={q.arrival_ms} "
                f"cpu={q.requested.cpu} ram={q.requested.ram} "
                f"disk={q.requested.disk} min_cpu={q.qos.min_capacity.cpu} "
                f"min_ram={q.qos.min_capacity.ram} "
                f"min_disk={q.qos.min_capacity.disk} "
                f"latency={q.qos.max_latency_ms} "
                f"price={_fmt_number(q.qos.max_price)} lifetime={q.lifetime_s}"
            )
    return "\n".join(lines) + "\n"


def _draw_int(rng, r: Range) -> int:
    return rng.randint(int(r.lo), int(r.hi))


def generate_workload(spec: GeneratorSpec, seed: int, horizon_ms: int,
                      prices: PriceTable) -> list[Query]:
    """Seeded random workload: arrivals first, then per-query attributes.

    Arrivals start with the verbatim prefix and continue with exponential
    inter-arrival gaps (at least 1 ms) until close to the horizon; a margin
    is held back so the last queries still complete their protocol round
    before the simulation ends. Demands are uniform in their ranges; the
    price bound is the requested vector's price times a headroom factor, so
    generated queries are priceable by construction.
    """
    rng = random.Random(f"{seed}:workload")
    cutoff = max(0, horizon_ms - ARRIVAL_MARGIN_MS)
    arrivals: list[int] = [t for t in spec.arrival_prefix_ms]
    t = arrivals[-1] if arrivals else 0
    while True:
        gap = max(1, round(rng.expovariate(1.0 / spec.arrival_mean_ms)))
        t += gap
        if t > cutoff:
            break
        arrivals.append(t)

    queries: list[Query] = []
    for index, arrival in enumerate(arrivals, start=1):
        cpu = _draw_int(rng, spec.cpu)
        ram = _draw_int(rng, spec.ram)
        disk = _draw_int(rng, spec.disk)
        fraction = rng.uniform(float(spec.min_fraction.lo),
                               float(spec.min_fraction.hi))
        lifetime = _draw_int(rng, spec.lifetime_s)
        latency = _draw_int(rng, spec.latency_ms)
        headroom = rng.uniform(float(spec.price_headroom.lo),
                               float(spec.price_headroom.hi))
        requested = ResourceVector(cpu=cpu, ram=ram, disk=disk)
        minimum = ResourceVector(
            cpu=max(1, math.floor(cpu * fraction)),
            ram=max(1, math.floor(ram * fraction)),
            disk=max(1, math.floor(disk * fraction)),
        )
        queries.append(
            Query(
                id=f"q{index}",
                user_id=f"u{(index - 1) % 5 + 1}",
                requested=requested,
                qos=QoSSpec(
                    min_capacity=minimum,
                    max_latency_ms=latency,
                    max_price=prices.price(requested) * headroom,
                ),
                arrival_ms=arrival,
                lifetime_s=lifetime,
            )
        )
    return queries


def workload_for(scenario: Scenario) -> list[Query]:
    """The concrete query list a scenario describes, generated or explicit."""
    if scenario.generator is not None:
        return generate_workload(
            scenario.generator, scenario.seed, scenario.horizon_ms, scenario.prices
        )
    return sorted(scenario.queries, key=lambda q: (q.arrival_ms, q.id))
