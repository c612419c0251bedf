"""Deterministic discrete-event simulator of hybrid CPU-QPU HPC systems."""

from .scenario import Scenario, load_scenario
from .simulation import Simulation, simulate

__all__ = ["Scenario", "Simulation", "load_scenario", "simulate"]
__version__ = "0.1.0"
