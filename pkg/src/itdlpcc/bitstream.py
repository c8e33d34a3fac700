"""Bitstream container: fixed header followed by self-delimiting block records.

All fields are little-endian::

    header  "IPCC" | u8 version | u8 flags | u8 precision | u16 blk_size
            | f32 sf | f32 qs | u8 model_id | u32 block count
    record  3 x u16 grid position | u32 k_codec | u32 k_abu | u8 octant mask
            | u32 len | side payload | u32 len | main payload

flags: bit 0 colour, bit 1 ABU. A record with an empty side payload is
direct-coded: its main payload lists the block's k_codec voxels explicitly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"IPCC"
VERSION = 1
FLAG_COLOR = 1
FLAG_ABU = 2

_HEADER = struct.Struct("<4sBBBHffBI")
_RECORD = struct.Struct("<3HIIB")
_LEN = struct.Struct("<I")


class BitstreamError(ValueError):
    pass


def as_f32(x: float) -> float:
    """The value a float takes after a round trip through the header."""
    return float(np.float32(x))


@dataclass(frozen=True)
class Header:
    precision: int
    blk_size: int
    sf: float
    qs: float
    model_id: int
    count: int
    with_color: bool = False
    abu: bool = False
    version: int = VERSION

    @property
    def flags(self) -> int:
        return (FLAG_COLOR if self.with_color else 0) | (FLAG_ABU if self.abu else 0)

    def pack(self) -> bytes:
        if not 1 <= self.precision <= 255:
            raise BitstreamError(f"precision {self.precision} out of range")
        if not 1 <= self.blk_size < 1 << 16:
            raise BitstreamError(f"block size {self.blk_size} does not fit in 16 bits")
        return _HEADER.pack(MAGIC, self.version, self.flags, self.precision, self.blk_size,
                            self.sf, self.qs, self.model_id, self.count)

    @classmethod
    def unpack(cls, data: bytes) -> Header:
        if len(data) < _HEADER.size:
            raise BitstreamError("truncated header")
        magic, version, flags, precision, blk, sf, qs, model_id, count = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise BitstreamError(f"bad magic {magic!r}")
        if version != VERSION:
            raise BitstreamError(f"unsupported bitstream version {version}")
        if flags & ~(FLAG_COLOR | FLAG_ABU):
            raise BitstreamError(f"unknown flags 0x{flags:02x}")
        return cls(precision, blk, float(sf), float(qs), model_id, count,
                   bool(flags & FLAG_COLOR), bool(flags & FLAG_ABU), version)


HEADER_SIZE = _HEADER.size


@dataclass(frozen=True)
class BlockRecord:
    position: tuple[int, int, int]
    k_codec: int
    k_abu: int
    mask: int
    side: bytes
    main: bytes

    def pack(self) -> bytes:
        if self.k_codec < 1:
            raise BitstreamError("k_codec must be >= 1")
        if any(not 0 <= p < 1 << 16 for p in self.position):
            raise BitstreamError(f"block position {self.position} does not fit in 16 bits")
        return b"".join([_RECORD.pack(*self.position, self.k_codec, self.k_abu, self.mask),
                         _LEN.pack(len(self.side)), self.side, _LEN.pack(len(self.main)), self.main])

    @property
    def nbytes(self) -> int:
        return _RECORD.size + 2 * _LEN.size + len(self.side) + len(self.main)


def _take(data: bytes, pos: int, n: int) -> tuple[bytes, int]:
    if pos + n > len(data):
        raise BitstreamError("truncated block record")
    return data[pos:pos + n], pos + n


def _unpack_record(data: bytes, pos: int) -> tuple[BlockRecord, int]:
    raw, pos = _take(data, pos, _RECORD.size)
    x, y, z, k_codec, k_abu, mask = _RECORD.unpack(raw)
    if k_codec < 1:
        raise BitstreamError("k_codec must be >= 1")
    payloads = []
    for _ in range(2):
        raw, pos = _take(data, pos, _LEN.size)
        chunk, pos = _take(data, pos, _LEN.unpack(raw)[0])
        payloads.append(chunk)
    return BlockRecord((x, y, z), k_codec, k_abu, mask, *payloads), pos


def pack(header: Header, records) -> bytes:
    records = list(records)
    if header.count != len(records):
        raise BitstreamError(f"header announces {header.count} blocks, got {len(records)}")
    return header.pack() + b"".join(r.pack() for r in records)


def unpack(data: bytes) -> tuple[Header, list[BlockRecord]]:
    """Parse a whole bitstream; framing errors raise before anything is returned."""
    header = Header.unpack(data)
    pos = HEADER_SIZE
    records = []
    for _ in range(header.count):
        rec, pos = _unpack_record(data, pos)
        records.append(rec)
    if pos != len(data):
        raise BitstreamError(f"{len(data) - pos} trailing bytes after the last block")
    return header, records


# direct-coded blocks

def _coord_bits(size: int) -> int:
    return max(1, int(size - 1).bit_length())


def pack_direct(local: np.ndarray, colors: np.ndarray | None, size: int) -> bytes:
    """Local voxel coordinates (z-major order) bit-packed, then 8-bit RGB if present."""
    local = np.asarray(local, dtype=np.int64).reshape(-1, 3)
    nb = _coord_bits(size)
    shifts = np.arange(nb - 1, -1, -1)
    bits = ((local[:, :, None] >> shifts) & 1).astype(np.uint8).ravel()
    out = np.packbits(bits).tobytes()
    if colors is not None:
        out += np.asarray(colors, dtype=np.uint8).tobytes()
    return out


def unpack_direct(data: bytes, k: int, size: int, with_color: bool) -> tuple[np.ndarray, np.ndarray | None]:
    nb = _coord_bits(size)
    geo = -(-3 * nb * k // 8)
    expected = geo + (3 * k if with_color else 0)
    if len(data) != expected:
        raise BitstreamError(f"direct block of {k} voxels needs {expected} bytes, got {len(data)}")
    bits = np.unpackbits(np.frombuffer(data[:geo], np.uint8))[:3 * nb * k].reshape(k, 3, nb)
    local = (bits.astype(np.int64) << np.arange(nb - 1, -1, -1)).sum(axis=2)
    if np.any(local >= size):
        raise BitstreamError("direct-coded voxel outside its block")
    cols = np.frombuffer(data[geo:], np.uint8).reshape(k, 3).copy() if with_color else None
    return local, cols
