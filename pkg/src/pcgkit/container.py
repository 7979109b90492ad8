"""Versioned binary container for trained models.

Layout (all integers little-endian):

    magic  b"PCGM"
    u16    format version (currently 1)
    u8     model kind
    u32    number of named blocks
    blocks u16 name length, UTF-8 name, u8 rank, rank * u32 dims,
           prod(dims) * float32 values
    u32    CRC32 of every preceding byte

Corruption anywhere flips the trailing checksum; unknown versions fail
before any parameter is read.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"PCGM"
VERSION = 1

KIND_CNN1D = 1
KIND_CNN2D = 2
KIND_ECNN = 3
KIND_HMM = 4

_KIND_NAMES = {KIND_CNN1D: "cnn1d", KIND_CNN2D: "cnn2d", KIND_ECNN: "ecnn", KIND_HMM: "hmm"}


def save_blocks(path: str | Path, kind: int, blocks: dict[str, np.ndarray]) -> None:
    if kind not in _KIND_NAMES:
        raise FormatError(f"unknown model kind {kind}")
    chunks = [MAGIC, struct.pack("<HBI", VERSION, kind, len(blocks))]
    for name, array in blocks.items():
        data = np.ascontiguousarray(array, dtype="<f4")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    payload = b"".join(chunks)
    Path(path).write_bytes(payload + struct.pack("<I", zlib.crc32(payload)))


def load_blocks(path: str | Path) -> tuple[int, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 7 + 4:
        raise FormatError(f"{path}: truncated container")
    if data[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a model container (bad magic)")
    (stored_crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != stored_crc:
        raise FormatError(f"{path}: checksum mismatch, file is corrupted")
    offset = len(MAGIC)
    version, kind, n_blocks = struct.unpack_from("<HBI", data, offset)
    offset += 7
    if version != VERSION:
        raise FormatError(f"{path}: unsupported container version {version} (expected {VERSION})")
    if kind not in _KIND_NAMES:
        raise FormatError(f"{path}: unknown model kind byte {kind}")
    end = len(data) - 4
    blocks: dict[str, np.ndarray] = {}
    for _ in range(n_blocks):
        if offset + 2 > end:
            raise FormatError(f"{path}: truncated block table")
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        if offset + 1 > end:
            raise FormatError(f"{path}: truncated block {name!r}")
        rank = data[offset]
        offset += 1
        if offset + 4 * rank > end:
            raise FormatError(f"{path}: truncated dims of block {name!r}")
        dims = struct.unpack_from(f"<{rank}I", data, offset)
        offset += 4 * rank
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        nbytes = 4 * count
        if offset + nbytes > end:
            raise FormatError(f"{path}: truncated values of block {name!r}")
        values = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        blocks[name] = values.reshape(dims).copy()
        offset += nbytes
    if offset != end:
        raise FormatError(f"{path}: {end - offset} unexpected trailing bytes")
    return kind, blocks


def kind_name(kind: int) -> str:
    return _KIND_NAMES[kind]
