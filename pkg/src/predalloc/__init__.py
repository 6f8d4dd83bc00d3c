"""Predictive gradient allocation of a power reference across flexible loads."""

from .algorithms import DualController, PrimalController, SimTrace, run_controller
from .gradient import HessianOperator, assemble_hessian, step_size_bound
from .harness import ConfigError, RunReport, ScenarioSpec, run_scenario, scenario_s1, scenario_s2
from .model import EnsembleState, LoadQoS, ReferenceWindow, SimConfig, desk_fleet
from .oracle import OracleTracker, solve_optimal
from .qos import QoSPolytope, build_polytope, project
from .signals import ReferenceSignal, ingest_csv, scale_to_capacity, step_signal, synthetic_brd

__version__ = "0.1.0"

__all__ = [
    "DualController",
    "PrimalController",
    "SimTrace",
    "run_controller",
    "HessianOperator",
    "assemble_hessian",
    "step_size_bound",
    "ConfigError",
    "RunReport",
    "ScenarioSpec",
    "run_scenario",
    "scenario_s1",
    "scenario_s2",
    "EnsembleState",
    "LoadQoS",
    "ReferenceWindow",
    "SimConfig",
    "desk_fleet",
    "OracleTracker",
    "solve_optimal",
    "QoSPolytope",
    "build_polytope",
    "project",
    "ReferenceSignal",
    "ingest_csv",
    "scale_to_capacity",
    "step_signal",
    "synthetic_brd",
]
