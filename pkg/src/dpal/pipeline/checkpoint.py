"""Model checkpoints and their binary file format.

File layout, all integers little-endian::

    8 bytes   magic "DPAL0001"
    u32       header length H
    H bytes   header: u32 input_dim, u32 num_classes, u8 activation
              (0 relu, 1 tanh), u32 n_hidden, n_hidden x u32 widths,
              u32 epoch, i64 seed, f64 test_accuracy
    u32       CRC-32 of the H header bytes
    ...       float32 weights then biases for each layer, in layer order
    u64       ledger length L
    L bytes   ledger JSON (UTF-8)

Parameters are rounded to float32 when a Checkpoint is built, so a save and
load round trip is bit-exact.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from ..errors import FormatError
from ..model import Architecture, ModelParams
from ..privacy import PrivacyLedger

MAGIC = b"DPAL0001"
_ACTIVATION_CODES = {"relu": 0, "tanh": 1}


@dataclass(frozen=True)
class Checkpoint:
    params: ModelParams
    epoch: int
    ledger: PrivacyLedger
    test_accuracy: float
    seed: int

    @property
    def arch(self) -> Architecture:
        return self.params.arch

    @cached_property
    def epsilon(self) -> float:
        return self.ledger.compose()[0]

    @classmethod
    def create(cls, params, epoch, ledger, test_accuracy, seed):
        """Snapshot ``ledger`` and round ``params`` to float32 precision."""
        return cls(params.as_float32(), int(epoch), ledger.snapshot(), float(test_accuracy), int(seed))


def _encode_header(ckpt: Checkpoint) -> bytes:
    arch = ckpt.arch
    hidden = arch.hidden_dims
    return (
        struct.pack("<IIBI", arch.input_dim, arch.num_classes, _ACTIVATION_CODES[arch.activation], len(hidden))
        + struct.pack(f"<{len(hidden)}I", *hidden)
        + struct.pack("<Iqd", ckpt.epoch, ckpt.seed, ckpt.test_accuracy)
    )


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    header = _encode_header(ckpt)
    parts = [MAGIC, struct.pack("<I", len(header)), header, struct.pack("<I", zlib.crc32(header))]
    for w, b in zip(ckpt.params.weights, ckpt.params.biases):
        parts.append(w.astype("<f4").tobytes())
        parts.append(b.astype("<f4").tobytes())
    ledger = ckpt.ledger.to_json().encode("utf-8")
    parts.append(struct.pack("<Q", len(ledger)))
    parts.append(ledger)
    return b"".join(parts)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(encode_checkpoint(ckpt))


class _Reader:
    def __init__(self, raw):
        self.raw = raw
        self.pos = 0

    def take(self, n, what):
        if n < 0 or self.pos + n > len(self.raw):
            raise FormatError(f"truncated checkpoint while reading {what}", offset=self.pos)
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(raw: bytes) -> Checkpoint:
    r = _Reader(raw)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise FormatError("not a DPAL0001 checkpoint", offset=0)
    (hlen,) = r.unpack("<I", "header length")
    header_at = r.pos
    header = r.take(hlen, "header")
    (crc,) = r.unpack("<I", "header checksum")
    if zlib.crc32(header) != crc:
        raise FormatError("header checksum mismatch", offset=header_at)
    h = _Reader(header)
    try:
        input_dim, num_classes, act_code, n_hidden = h.unpack("<IIBI", "architecture")
        hidden = h.unpack(f"<{n_hidden}I", "hidden widths")
        epoch, seed, acc = h.unpack("<Iqd", "epoch/seed/accuracy")
    except FormatError as exc:
        raise FormatError(f"malformed header: {exc}", offset=header_at) from exc
    if h.pos != hlen:
        raise FormatError("header has trailing bytes", offset=header_at + h.pos)
    codes = {v: k for k, v in _ACTIVATION_CODES.items()}
    if act_code not in codes:
        raise FormatError(f"unknown activation code {act_code}", offset=header_at + 8)
    try:
        arch = Architecture(input_dim, tuple(hidden), num_classes, codes[act_code])
    except ValueError as exc:
        raise FormatError(f"invalid architecture in header: {exc}", offset=header_at) from exc
    weights, biases = [], []
    for fi, fo in arch.layer_dims:
        weights.append(np.frombuffer(r.take(4 * fi * fo, "weights"), dtype="<f4").reshape(fi, fo).astype(np.float64))
        biases.append(np.frombuffer(r.take(4 * fo, "biases"), dtype="<f4").astype(np.float64))
    (llen,) = r.unpack("<Q", "ledger length")
    ledger_at = r.pos
    ledger_raw = r.take(llen, "ledger")
    if r.pos != len(raw):
        raise FormatError("unexpected bytes after the ledger", offset=r.pos)
    try:
        ledger = PrivacyLedger.from_json(ledger_raw.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise FormatError("ledger is not UTF-8", offset=ledger_at) from exc
    params = ModelParams(arch, tuple(weights), tuple(biases))
    if not all(np.all(np.isfinite(a)) for a in params.arrays):
        raise FormatError("non-finite parameter values", offset=header_at + hlen + 4)
    return Checkpoint(params, epoch, ledger, acc, seed)


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())
