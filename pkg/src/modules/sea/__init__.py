"""
SEA

The assembled attention layer: estimate, mask, sparse attention and
global-context mixing, bidirectional and causal.
"""
from .config import SeaConfig
from .pipeline import SeaOutput, global_context, importance, mix, pipeline_stage, sea_forward
from .weights import SeaWeights

__all__ = [
    "SeaConfig",
    "SeaWeights",
    "SeaOutput",
    "sea_forward",
    "global_context",
    "importance",
    "mix",
    "pipeline_stage",
]
