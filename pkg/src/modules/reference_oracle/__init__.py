"""
Reference Oracle

Dense O(T^2) implementations used as ground truth for the sparse path.
"""
from .oracle import (
    causal_mask,
    dense_attention,
    dense_emulation,
    dense_interpolate_mask,
    dense_probs,
    dense_scores,
)

__all__ = [
    "causal_mask",
    "dense_scores",
    "dense_probs",
    "dense_attention",
    "dense_interpolate_mask",
    "dense_emulation",
]
