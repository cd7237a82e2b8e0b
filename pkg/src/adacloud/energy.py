"""Per-machine power model and exact energy integration over a simulation run.

Power follows the standard linear server model: a powered-on machine draws
power_idle at zero utilization and power_max at full utilization; a powered-off
machine draws nothing. Power is piecewise-constant between simulation events,
so integration is an exact step sum, not an approximation.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import PhysicalMachine


@dataclass(frozen=True)
class PowerSample:
    """Instantaneous power of one machine at a virtual time."""

    time_ms: int
    pm_id: str
    watts: float


def power(pm: PhysicalMachine, utilization: float) -> float:
    """Instantaneous draw in watts for a machine at the given utilization.

    utilization is the mean of the three normalized resource components
    (allocated/capacity), in [0, 1]. A powered-off machine draws 0 W.
    """
    if utilization < 0.0 or utilization > 1.0:
        raise ValueError(f"utilization out of range for {pm.pm_id}: {utilization}")
    if not pm.powered_on:
        return 0.0
    return pm.power_idle + (pm.power_max - pm.power_idle) * utilization


def integrate(samples: list[PowerSample], horizon_ms: int) -> float:
    """Energy in joules from time-ordered samples of one machine, up to horizon_ms.

    Each sample holds from its timestamp until the next sample (or the
    horizon). Exact for piecewise-constant power.
    """
    joules = 0.0
    for i, sample in enumerate(samples):
        if i + 1 < len(samples):
            if samples[i + 1].time_ms < sample.time_ms:
                raise ValueError(
                    f"power samples out of order for {sample.pm_id} "
                    f"at t={samples[i + 1].time_ms}"
                )
            end = min(samples[i + 1].time_ms, horizon_ms)
        else:
            end = horizon_ms
        span_ms = end - sample.time_ms
        if span_ms > 0:
            joules += sample.watts * (span_ms / 1000.0)
    return joules


def energy_by_machine(samples: list[PowerSample], horizon_ms: int) -> dict[str, float]:
    """Split a mixed sample stream per machine and integrate each to the horizon."""
    per_machine: dict[str, list[PowerSample]] = {}
    for s in samples:
        per_machine.setdefault(s.pm_id, []).append(s)
    return {pm_id: integrate(rows, horizon_ms) for pm_id, rows in per_machine.items()}
