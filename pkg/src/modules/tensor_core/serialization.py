"""
Weight container.

Layout of a weights file:

    b"SEAW" | u32 version | u64 manifest length | manifest (JSON, utf-8) | payload

All integers little-endian. The manifest maps every tensor name to its shape,
dtype ("<f4") and byte offset into the payload, and carries free-form
metadata (model configuration, training provenance). Tensors are stored as
little-endian float32; saving what was loaded reproduces the file bit for bit.
"""
import json
import struct
from pathlib import Path
from typing import Any, Mapping, Union

import numpy as np

from src.modules.tensor_core.errors import StructuralError
from src.modules.tensor_core.tensor import DenseTensor
from src.utils.logger import get_logger

logger = get_logger("serialization")

MAGIC = b"SEAW"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQ")

ArrayLike = Union[DenseTensor, np.ndarray]


def encode_weights(tensors: Mapping[str, ArrayLike], metadata: Mapping[str, Any] | None = None) -> bytes:
    entries = {}
    chunks = []
    offset = 0
    for name in sorted(tensors):
        value = tensors[name]
        arr = value.data if isinstance(value, DenseTensor) else np.asarray(value)
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries[name] = {"shape": list(arr.shape), "dtype": "<f4", "offset": offset, "nbytes": len(raw)}
        chunks.append(raw)
        offset += len(raw)

    manifest = json.dumps({"tensors": entries, "metadata": dict(metadata or {})},
                          sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(MAGIC, FORMAT_VERSION, len(manifest)) + manifest + b"".join(chunks)


def decode_weights(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    if len(blob) < _HEADER.size:
        raise StructuralError("weights blob is shorter than its header")
    magic, version, manifest_len = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise StructuralError(f"not a weights file (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise StructuralError(f"unsupported weights format version {version}")

    start = _HEADER.size
    manifest = json.loads(blob[start:start + manifest_len].decode("utf-8"))
    payload = memoryview(blob)[start + manifest_len:]

    tensors = {}
    for name, entry in manifest["tensors"].items():
        begin, nbytes = entry["offset"], entry["nbytes"]
        if begin + nbytes > len(payload):
            raise StructuralError(f"tensor '{name}' runs past the end of the payload")
        arr = np.frombuffer(payload[begin:begin + nbytes], dtype=entry["dtype"])
        tensors[name] = arr.reshape(entry["shape"]).astype(np.float32)
    return tensors, manifest.get("metadata", {})


def save_weights(path: str | Path, tensors: Mapping[str, ArrayLike],
                 metadata: Mapping[str, Any] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = encode_weights(tensors, metadata)
    path.write_bytes(blob)
    logger.info(f"Saved {len(tensors)} tensors ({len(blob)} bytes) to {path}")
    return path


def load_weights(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Weights file not found: {path}")
    tensors, metadata = decode_weights(path.read_bytes())
    logger.info(f"Loaded {len(tensors)} tensors from {path}")
    return tensors, metadata
