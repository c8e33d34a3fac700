"""Weight checkpoint container.

Layout (little-endian)::

    magic  b"ITDLCKPT"  | u32 version
    u32 len | architecture JSON (sorted keys, UTF-8)
    32 bytes  sha256 of the architecture JSON
    u32 tensor count
    per tensor: u16 len | name | u8 ndim | ndim x u32 dims | float32 values
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ITDLCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def arch_hash(arch: dict) -> bytes:
    return hashlib.sha256(_arch_json(arch)).digest()


def _arch_json(arch: dict) -> bytes:
    return json.dumps(arch, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, arch: dict, state: dict[str, np.ndarray]):
    blob = _arch_json(arch)
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(blob)), blob,
             hashlib.sha256(blob).digest(), struct.pack("<I", len(state))]
    for name, value in state.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(value, dtype="<f4")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a checkpoint, verifying the stored architecture hash."""
    data = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(8) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (n,) = struct.unpack("<I", take(4))
    blob = take(n)
    if hashlib.sha256(blob).digest() != take(32):
        raise CheckpointError(f"{path}: architecture hash mismatch")
    arch = json.loads(blob.decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    state = {}
    for _ in range(count):
        (ln,) = struct.unpack("<H", take(2))
        name = take(ln).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if shape else 1
        state[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes after last tensor")
    return arch, state
