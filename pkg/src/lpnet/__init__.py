"""Backpropagation-free training of soft-threshold transform networks by local goal propagation."""

from .core import (DynamicGoal, FixedGoal, HyperParams, LevelLambdas, Network, NoGoal,
                   RepresentationSet, build_network)
from .errors import LPNetError
from .training import theorem1_experiment, train

__all__ = [
    "DynamicGoal", "FixedGoal", "HyperParams", "LevelLambdas", "Network", "NoGoal",
    "RepresentationSet", "build_network", "LPNetError", "theorem1_experiment", "train",
]
__version__ = "0.1.0"
