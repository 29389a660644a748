"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic     10 bytes  b"CHRONOREC\\0"
    version   u32
    header    u32 length + UTF-8 JSON (dimensions, periods, training config)
    n_blocks  u32
    block     u16 name length, name, u8 ndim, ndim x u32 shape, float64 data

Round trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError, IncompatibleCheckpointError
from .trainer import ParamSet

MAGIC = b"CHRONOREC\x00"
VERSION = 1


def to_bytes(params: ParamSet, config: dict | None = None) -> bytes:
    blocks = params.blocks()
    header = {
        "d": params.d,
        "m": params.m,
        "periods": sorted(params.theta),
        "meta": params.meta_info,
        "config": config or {},
    }
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<II", VERSION, len(hdr)))
    out.write(hdr)
    out.write(struct.pack("<I", len(blocks)))
    for name, arr in blocks.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        out.write(struct.pack("<H", len(raw)))
        out.write(raw)
        out.write(struct.pack("<B", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(arr.tobytes())
    return out.getvalue()


def save(params: ParamSet, path, config: dict | None = None) -> str:
    """Write a checkpoint; returns its SHA-256 digest."""
    data = to_bytes(params, config)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError(f"checkpoint truncated at byte {self.pos} (needed {n} more)")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(data: bytes) -> tuple[ParamSet, dict]:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise IncompatibleCheckpointError(f"checkpoint format version {version}, this build reads version {VERSION}")
    (hlen,) = r.unpack("<I")
    try:
        header = json.loads(r.take(hlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"corrupted header: {exc}") from None
    (n_blocks,) = r.unpack("<I")
    blocks = {}
    for _ in range(n_blocks):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8", errors="replace")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
        blocks[name] = arr
    if r.pos != len(data):
        raise CheckpointFormatError(f"{len(data) - r.pos} trailing bytes after last block")
    return _assemble(blocks, header), header


def _assemble(blocks: dict, header: dict) -> ParamSet:
    theta: dict[int, dict] = {}
    omega, emb = {}, {}
    mask = None
    for name, arr in blocks.items():
        parts = name.split(".")
        if parts[0] == "omega":
            omega[parts[1]] = arr
        elif parts[0] == "emb":
            emb[parts[1]] = arr
        elif parts[0] == "theta":
            theta.setdefault(int(parts[1]), {})[parts[2]] = arr
        elif name == "mask":
            mask = arr
        else:
            raise CheckpointFormatError(f"unknown block {name!r}")
    if "E" not in emb:
        raise CheckpointFormatError("checkpoint has no embedding matrix")
    return ParamSet(theta, omega, emb, mask, header.get("meta", {}))


def load(path) -> tuple[ParamSet, dict]:
    return from_bytes(Path(path).read_bytes())


def digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def check_compatible(params: ParamSet, catalog) -> None:
    if params.m != catalog.n_attributes:
        raise IncompatibleCheckpointError(
            f"checkpoint (format v{VERSION}) expects {params.m} item attributes, data has {catalog.n_attributes}"
        )
