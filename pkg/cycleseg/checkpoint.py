"""
Checkpoint files: named float64 tensors in a little-endian binary container.

Layout:
    magic "CSGN" | u32 version=1 | u32 tensor count
    per tensor: u16 name length | UTF-8 name | u8 rank | u32 dims[rank] | raw <f8 values
"""

import logging
import struct
from pathlib import Path
from typing import Dict, Mapping

import numpy as np

from .errors import FormatError, IoError

logger = logging.getLogger(__name__)

MAGIC = b"CSGN"
VERSION = 1


def encode_checkpoint(tensors: Mapping[str, np.ndarray]) -> bytes:
    """Serialize named arrays in the given order."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, values in tensors.items():
        array = np.asarray(values, dtype="<f8")
        encoded_name = name.encode("utf-8")
        if len(encoded_name) > 0xFFFF or array.ndim > 0xFF:
            raise FormatError(f"Tensor {name!r} cannot be stored (name or rank too large)")
        chunks.append(struct.pack("<H", len(encoded_name)))
        chunks.append(encoded_name)
        chunks.append(struct.pack("<B", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(np.ascontiguousarray(array).tobytes())
    return b"".join(chunks)


def decode_checkpoint(payload: bytes) -> Dict[str, np.ndarray]:
    """Parse a checkpoint payload back into named arrays (insertion-ordered).

    Raises:
        FormatError: On a bad magic, unknown version or truncated payload
    """
    view = memoryview(payload)
    offset = 0

    def take(count: int) -> memoryview:
        nonlocal offset
        if offset + count > len(view):
            raise FormatError("Checkpoint payload is truncated")
        chunk = view[offset:offset + count]
        offset += count
        return chunk

    if bytes(take(4)) != MAGIC:
        raise FormatError("Not a checkpoint file (bad magic)")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise FormatError(f"Unsupported checkpoint version {version}")

    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_length,) = struct.unpack("<H", take(2))
        name = bytes(take(name_length)).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        n_values = int(np.prod(shape)) if rank else 1
        values = np.frombuffer(bytes(take(8 * n_values)), dtype="<f8").reshape(shape)
        tensors[name] = values.astype(np.float64)
    if offset != len(view):
        raise FormatError(f"Checkpoint has {len(view) - offset} trailing bytes")
    return tensors


def save_checkpoint(path, tensors: Mapping[str, np.ndarray]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_checkpoint(tensors))
    except OSError as e:
        raise IoError(f"Could not write checkpoint {path}: {e}") from e
    logger.info(f"[Checkpoint] wrote {len(tensors)} tensors to {path}")
    return path


def load_checkpoint(path) -> Dict[str, np.ndarray]:
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise IoError(f"Could not read checkpoint {path}: {e}") from e
    return decode_checkpoint(payload)
