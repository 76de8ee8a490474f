"""Benchmark toolkit for feature-importance transfer attacks on small CNNs."""

from .core import ImageBatch, LabelledExample, PerturbationBudget, clip_to_budget, linf_distance
from .featimp import AggregationConfig, aggregate_gradient, importance_heatmap, raw_gradient

__version__ = "0.1.0"

__all__ = [
    "AggregationConfig", "ImageBatch", "LabelledExample", "PerturbationBudget", "aggregate_gradient",
    "clip_to_budget", "importance_heatmap", "linf_distance", "raw_gradient",
]
