"""Ensemble actor-critic agents with a std-Q-target uncertainty penalty,
plus a tabular workbench for over/under-estimation bias."""

from .agent import Agent, TrainingConfig, variant_config

__version__ = "0.1.0"

__all__ = ["Agent", "TrainingConfig", "variant_config", "__version__"]
