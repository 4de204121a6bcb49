"""
Performer

FAVOR+ positive random-feature attention, bidirectional and causal.
"""
from .favor import build_v_cat, favor_plus, identity_rows, phi
from .feature_map import FeatureMap

__all__ = ["FeatureMap", "phi", "favor_plus", "build_v_cat", "identity_rows"]
