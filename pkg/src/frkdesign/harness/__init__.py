"""Experiment orchestration: configs, Monte Carlo studies and their outputs."""
from .config import ExperimentConfig, load_config, load_profile, profiles
from .experiments import (build_scenario, realize, run_batch_study, run_factorial, run_osse,
                          station_layout_clustered, summarize_differences)

__all__ = ["ExperimentConfig", "load_config", "load_profile", "profiles", "build_scenario",
           "realize", "run_batch_study", "run_factorial", "run_osse",
           "station_layout_clustered", "summarize_differences"]
