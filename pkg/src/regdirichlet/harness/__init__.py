"""Experiment registry, configuration and command line."""

from .config import ExperimentConfig, load_config, parse_config_text
from .experiments import REGISTRY, Check, Context

__all__ = ["ExperimentConfig", "load_config", "parse_config_text", "REGISTRY", "Check",
           "Context"]
