"""Configuration, orchestration, rate fitting and output files."""
from .config import ConfigError, load_config, prepare
from .experiments import Check, ExperimentResult, run_experiment
from .fitting import FitImpossibleError, RateFit, chaos_scaling, fit_rate
from .presets import PRESETS, PresetResult, run_preset

__all__ = [
    "Check", "ConfigError", "ExperimentResult", "FitImpossibleError", "PRESETS", "PresetResult",
    "RateFit", "chaos_scaling", "fit_rate", "load_config", "prepare", "run_experiment",
    "run_preset",
]
