"""Deterministic datacenter simulation with QoS-aware, energy-aware allocation."""

from .model import (
    PhysicalMachine,
    PriceTable,
    QoSSpec,
    Query,
    ResourceVector,
    SlaVerdict,
    SystemState,
    VMInstance,
    evaluate_sla,
)
from .scenario import Scenario, ScenarioError, load_scenario, parse_scenario
from .simulation import InvariantViolation, SimResult, simulate

__all__ = [
    "InvariantViolation",
    "PhysicalMachine",
    "PriceTable",
    "QoSSpec",
    "Query",
    "ResourceVector",
    "Scenario",
    "ScenarioError",
    "SimResult",
    "SlaVerdict",
    "SystemState",
    "VMInstance",
    "evaluate_sla",
    "load_scenario",
    "parse_scenario",
    "simulate",
]

__version__ = "0.1.0"
