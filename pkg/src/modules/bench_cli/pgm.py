"""
Binary greyscale (P5) heatmaps.
"""
from pathlib import Path

import aiofiles
import numpy as np

from src.modules.tensor_core import DimensionError


def to_grey(image) -> np.ndarray:
    """
    Min-max scale to uint8 per image. A constant image is 255 when its value
    is positive, 0 otherwise.
    """
    values = np.asarray(image, dtype=np.float64)
    if values.ndim != 2:
        raise DimensionError(f"heatmap must be 2-D, got shape {values.shape}")
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.full(values.shape, 255 if hi > 0 else 0, dtype=np.uint8)
    return np.rint((values - lo) / (hi - lo) * 255.0).astype(np.uint8)


def encode_pgm(image) -> bytes:
    grey = to_grey(image)
    rows, cols = grey.shape
    return f"P5\n{cols} {rows}\n255\n".encode("ascii") + grey.tobytes(order="C")


def decode_pgm(blob: bytes) -> np.ndarray:
    """Parse what encode_pgm writes (no comments, maxval 255)."""
    magic, size, maxval, pixels = blob.split(b"\n", 3)
    if magic != b"P5" or maxval != b"255":
        raise ValueError("not an 8-bit P5 image")
    cols, rows = (int(v) for v in size.split())
    return np.frombuffer(pixels, dtype=np.uint8, count=rows * cols).reshape(rows, cols)


async def write_pgm(path: str | Path, image) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    async with aiofiles.open(path, "wb") as f:
        await f.write(encode_pgm(image))
    return path
