"""Reader and writer for the big-endian IDX tensor format used by MNIST.

Layout: two zero bytes, a type code (0x08 = unsigned byte), the number of
dimensions, one big-endian uint32 per dimension, then the raw data.  Files
ending in ``.gz`` are transparently (de)compressed.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
UBYTE = 0x08


def _open(path, mode):
    path = Path(path)
    return gzip.open(path, mode) if path.suffix == ".gz" else open(path, mode)


def read_idx(path, expected_magic=None) -> np.ndarray:
    """Read an unsigned-byte IDX file into a uint8 array of its stored shape."""
    with _open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: file too short for an IDX header", offset=len(raw))
    magic = struct.unpack(">I", raw[:4])[0]
    if raw[0] != 0 or raw[1] != 0:
        raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}", offset=0)
    if raw[2] != UBYTE:
        raise FormatError(f"{path}: unsupported IDX type code 0x{raw[2]:02x}", offset=2)
    if expected_magic is not None and magic != expected_magic:
        raise FormatError(f"{path}: IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}", offset=0)
    ndim = raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated dimension header", offset=len(raw))
    shape = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(shape, dtype=np.int64))
    if len(raw) - header != size:
        raise FormatError(
            f"{path}: expected {size} data bytes for shape {shape}, found {len(raw) - header}",
            offset=header,
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(shape)


def write_idx(path, array) -> None:
    """Write a uint8 array as IDX; magic is derived from its rank."""
    array = np.ascontiguousarray(array)
    if array.dtype != np.uint8:
        raise FormatError(f"only uint8 arrays can be written, got {array.dtype}")
    header = bytes([0, 0, UBYTE, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    with _open(path, "wb") as fh:
        fh.write(header)
        fh.write(array.tobytes())
