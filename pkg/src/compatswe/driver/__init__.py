"""Configuration, scenarios, output and the command line interface."""
from .analysis import (ConvergenceRow, angular_speed, convergence_study, crest_angle,
                       format_table, track_crest)
from .config import Config, ConfigError, config_from_dict, load_config, save_config
from .output import CSV_COLUMNS, read_csv, read_vtk, write_csv, write_vtk
from .scenarios import Scenario, ScenarioError, Setup, build_mesh, initial_state, setup

__all__ = [
    "Config", "ConfigError", "ConvergenceRow", "CSV_COLUMNS", "Scenario", "ScenarioError", "Setup",
    "angular_speed", "build_mesh", "config_from_dict", "convergence_study", "crest_angle",
    "format_table", "initial_state", "load_config", "read_csv", "read_vtk", "save_config",
    "setup", "track_crest", "write_csv", "write_vtk",
]
