"""
Mask

Grouped top-k̂ selection on the compressed attention and its sparse
nearest-neighbour expansion into the FlatCSR mask M*.
"""
from .modes import TopKMode
from .topk import CompressedMask, compress_k, grouped_topk
from .interpolate import inject_off_by_one, interpolate_mask

__all__ = [
    "TopKMode",
    "CompressedMask",
    "compress_k",
    "grouped_topk",
    "interpolate_mask",
    "inject_off_by_one",
]
