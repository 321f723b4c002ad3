from .core import EventQueue, SimCloud, SimLink, Simulation
from .experiments import (
    measure_formation,
    measure_reconfiguration,
    metadata_costs,
    random_history,
    reconfiguration_run,
)
from .scenario import Report, Scenario, load_scenario, parse_scenario, run_scenario

__all__ = [
    "EventQueue",
    "Report",
    "Scenario",
    "SimCloud",
    "SimLink",
    "Simulation",
    "load_scenario",
    "measure_formation",
    "measure_reconfiguration",
    "metadata_costs",
    "parse_scenario",
    "random_history",
    "reconfiguration_run",
    "run_scenario",
]
