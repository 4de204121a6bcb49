"""
Estimator

Decodes Performer context into the compressed attention matrix Â and the
per-token scalers s_prob / s_mix.
"""
from .decoder import decode, encode, estimate, scalers
from .weights import Conv, EstimatorWeights, Linear

__all__ = ["EstimatorWeights", "Linear", "Conv", "estimate", "encode", "decode", "scalers"]
