"""Travelling invasion waves of an oncolytic virus reaction-diffusion model."""

from .dispersion import CriticalPoints, find_critical_rhos, lambda2, minimize_S, speed_curve_S
from .model import DimensionalParams, ModelParams, bifurcation_scan, coexistence_state, equilibria, nondimensionalize
from .pde import InitialCondition, SimConfig, measure_front_speed, run, simulate
from .wave import Profile, WaveEnvelope, build_envelope, operator_T, picard_iterate

__version__ = "0.1.0"

__all__ = [
    "CriticalPoints",
    "DimensionalParams",
    "InitialCondition",
    "ModelParams",
    "Profile",
    "SimConfig",
    "WaveEnvelope",
    "bifurcation_scan",
    "build_envelope",
    "coexistence_state",
    "equilibria",
    "find_critical_rhos",
    "lambda2",
    "measure_front_speed",
    "minimize_S",
    "nondimensionalize",
    "operator_T",
    "picard_iterate",
    "run",
    "simulate",
    "speed_curve_S",
]
