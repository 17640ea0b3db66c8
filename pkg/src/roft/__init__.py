"""Robust fine-tuning toolkit for small graph neural networks."""

from .model import GinConfig, GraphBatch, ParamSet, interpolate
from .strategies import RunArtifacts, StrategyConfig, finetune

__all__ = [
    "GinConfig",
    "GraphBatch",
    "ParamSet",
    "RunArtifacts",
    "StrategyConfig",
    "finetune",
    "interpolate",
]
