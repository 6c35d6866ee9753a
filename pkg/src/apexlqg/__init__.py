"""Adaptive LQG stabilization of a levitated particle at the apex of an optical double well."""

from .control import ControllerVariant, LqgWeights, SynthesisError, synthesize
from .dynamics import ParticleLost, RunRecord, run_closed_loop
from .potential import PotentialParams, calibrate_potential, find_apex
from .scenario import Scenario, ScenarioError, load_scenario

__version__ = "0.1.0"

__all__ = [
    "ControllerVariant",
    "LqgWeights",
    "ParticleLost",
    "PotentialParams",
    "RunRecord",
    "Scenario",
    "ScenarioError",
    "SynthesisError",
    "calibrate_potential",
    "find_apex",
    "load_scenario",
    "run_closed_loop",
    "synthesize",
]
