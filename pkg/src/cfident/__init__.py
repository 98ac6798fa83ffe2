"""Structural and practical identifiability of car-following models."""
__version__ = "0.1.0"

from .directtest import DirectTestProblem, GPSSettings, solve, sweep, verdict
from .models import BUILTINS, ModelSpec, State, builtin_model, equilibrium_ic
from .simulate import Scenario, error_grid, lead_profile, output_error, simulate
from .structural import equilibrium_mode, generic_mode, generic_rank, oi_matrix, table1

__all__ = [
    "BUILTINS",
    "DirectTestProblem",
    "GPSSettings",
    "ModelSpec",
    "Scenario",
    "State",
    "builtin_model",
    "equilibrium_ic",
    "equilibrium_mode",
    "error_grid",
    "generic_mode",
    "generic_rank",
    "lead_profile",
    "oi_matrix",
    "output_error",
    "simulate",
    "solve",
    "sweep",
    "table1",
    "verdict",
]
