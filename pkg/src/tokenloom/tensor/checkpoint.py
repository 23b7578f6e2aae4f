"""The checkpoint container: a flat sequence of named array records.

Specification:
    A checkpoint starts with MAGIC, a format version and the record count.
    Each record is framed as
        name length (u32) | utf-8 name | dtype tag (2 ascii bytes) |
        ndim (u32) | shape (ndim × i64) | row-major data
    with every integer and float little-endian. Float32 data round-trips bit
    for bit. A text manifest listing `name dtype shape` per line is written
    next to the container.

Constants:
    MAGIC: Leading bytes identifying a checkpoint.
    FRAME_SIZE: Width of the u32 length/count frames.

Classes:
    Record: A named array that encodes to and decodes from bytes.

Functions:
    encode: Serialize named arrays to bytes.
    decode: Parse bytes back to named arrays.
    manifest: The text manifest of named arrays.
    save_checkpoint: Write container and manifest with aiofiles.
    load_checkpoint: Read a container with aiofiles.
    diff_checkpoints: Names whose bytes differ between two snapshots.
"""
# Imports
from __future__ import annotations
from collections.abc import Mapping
from dataclasses import dataclass, field
import logging
import pathlib
import struct
from typing import ClassVar, Self

import aiofiles
import numpy as np

from tokenloom.errors import CheckpointError


# Consts
MAGIC = b'TLCK'
VERSION = 1
FRAME_SIZE = 4
SHAPE_SIZE = 8
_logger = logging.getLogger(__name__)


# Classes
@dataclass
class _Reader:
    """Sequential reader over a checkpoint buffer."""
    data: bytes
    offset: int = field(default=0)

    def read(self, size: int) -> bytes:
        if size < 0 or self.offset + size > len(self.data):
            raise CheckpointError(f"Checkpoint truncated at byte {self.offset}, wanted {size} more.")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def read_frame(self) -> int:
        return struct.unpack('<I', self.read(FRAME_SIZE))[0]

    @property
    def exhausted(self) -> bool:
        return self.offset == len(self.data)


@dataclass
class Record:
    """A named array inside a checkpoint."""
    dtype_tags: ClassVar[dict[str, np.dtype]] = {
        'f4': np.dtype('<f4'),
        'f8': np.dtype('<f8'),
        'i8': np.dtype('<i8'),
    }
    name: str
    array: np.ndarray

    @property
    def dtype_tag(self) -> str:
        for tag, dtype in self.dtype_tags.items():
            if self.array.dtype == dtype:
                return tag
        raise CheckpointError(f"{self.name}: unsupported dtype {self.array.dtype}.")

    def __bytes__(self) -> bytes:
        name = self.name.encode('utf-8')
        tag = self.dtype_tag
        shape = self.array.shape
        return b''.join((
            struct.pack('<I', len(name)),
            name,
            tag.encode('ascii'),
            struct.pack('<I', len(shape)),
            struct.pack(f'<{len(shape)}q', *shape),
            np.ascontiguousarray(self.array, dtype=self.dtype_tags[tag]).tobytes(),
        ))

    @classmethod
    def read_from(cls, reader: _Reader) -> Self:
        try:
            name = reader.read(reader.read_frame()).decode('utf-8')
            tag = reader.read(2).decode('ascii')
        except UnicodeDecodeError:
            raise CheckpointError(f"Corrupt record header at byte {reader.offset}.")
        if tag not in cls.dtype_tags:
            raise CheckpointError(f"{name}: unknown dtype tag {tag!r}.")
        ndim = reader.read_frame()
        shape = struct.unpack(f'<{ndim}q', reader.read(ndim * SHAPE_SIZE))
        if any(n < 0 for n in shape):
            raise CheckpointError(f"{name}: negative dimension in shape {shape}.")
        dtype = cls.dtype_tags[tag]
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(reader.read(count * dtype.itemsize), dtype=dtype).reshape(shape)
        return cls(name, data.copy())


# Functions
def encode(arrays: Mapping[str, np.ndarray]) -> bytes:
    """Serialize named arrays, in mapping order."""
    body = b''.join(bytes(Record(name, np.asarray(array))) for name, array in arrays.items())
    return MAGIC + struct.pack('<II', VERSION, len(arrays)) + body


def decode(data: bytes) -> dict[str, np.ndarray]:
    """Parse a checkpoint produced by `encode`.

    Raises:
        CheckpointError: On a bad header, truncated data or trailing bytes.
    """
    reader = _Reader(data)
    if reader.read(len(MAGIC)) != MAGIC:
        raise CheckpointError("Not a checkpoint: bad magic bytes.")
    version = reader.read_frame()
    if version != VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version}.")
    count = reader.read_frame()
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        record = Record.read_from(reader)
        if record.name in arrays:
            raise CheckpointError(f"Duplicate record {record.name}.")
        arrays[record.name] = record.array
    if not reader.exhausted:
        raise CheckpointError(f"{len(data) - reader.offset} trailing bytes after the last record.")
    return arrays


def manifest(arrays: Mapping[str, np.ndarray]) -> str:
    lines = [f"{name}\t{Record(name, np.asarray(a)).dtype_tag}\t{'x'.join(map(str, np.shape(a)))}" for name, a in arrays.items()]
    return '\n'.join(lines) + '\n'


def manifest_path(path: pathlib.Path) -> pathlib.Path:
    return path.with_name(path.name + '.manifest')


async def save_checkpoint(path: pathlib.Path, arrays: Mapping[str, np.ndarray]) -> None:
    """Write the container and its manifest."""
    path = pathlib.Path(path)
    async with aiofiles.open(path, 'wb') as f:
        await f.write(encode(arrays))
    async with aiofiles.open(manifest_path(path), 'w') as f:
        await f.write(manifest(arrays))
    _logger.info(f"Wrote checkpoint with {len(arrays)} records to {path}.")


async def load_checkpoint(path: pathlib.Path) -> dict[str, np.ndarray]:
    async with aiofiles.open(pathlib.Path(path), 'rb') as f:
        data = await f.read()
    return decode(data)


def diff_checkpoints(before: Mapping[str, np.ndarray], after: Mapping[str, np.ndarray]) -> list[str]:
    """Names that are missing on one side or whose bytes differ."""
    changed = sorted(set(before) ^ set(after))
    for name in sorted(set(before) & set(after)):
        a, b = np.asarray(before[name]), np.asarray(after[name])
        if a.shape != b.shape or a.dtype != b.dtype or a.tobytes() != b.tobytes():
            changed.append(name)
    return sorted(changed)
