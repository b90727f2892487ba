"""Stochastic unraveling of Lindblad dynamics for non-interacting fermions
represented by single Slater determinants on a 1D Fourier grid."""

from .config import ConfigError, SimConfig, parse_config
from .grid import Grid, make_grid
from .operators import LindbladChannel, Potential, double_well, eigenstates, harmonic, make_channel
from .state import SlaterState, observables
from .unravel import EngineSettings, Model, build_model, run_ensemble, run_trajectory

__all__ = [
    "ConfigError",
    "EngineSettings",
    "Grid",
    "LindbladChannel",
    "Model",
    "Potential",
    "SimConfig",
    "SlaterState",
    "build_model",
    "double_well",
    "eigenstates",
    "harmonic",
    "make_channel",
    "make_grid",
    "observables",
    "parse_config",
    "run_ensemble",
    "run_trajectory",
]

__version__ = "0.1.0"
