"""
Graphfeed - Binary Encoding Helpers

Little-endian primitives shared by every on-disk format, and the
page reader that issues positioned reads against a data file.
"""
from __future__ import annotations

import logging
import mmap
import os
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from core.exceptions import StorageFormatError

logger = logging.getLogger(__name__)

PAGE_SIZE = 4096
FORMAT_VERSION = 1

# NodeIds are unsigned 64-bit on disk, int64 in memory
DISK_NODE_DTYPE = np.dtype("<u8")
NODE_DTYPE = np.dtype(np.int64)
LOCAL_DTYPE = np.dtype("<u4")
SCALAR_DTYPE = np.dtype("<f4")

U32 = struct.Struct("<I")
U64 = struct.Struct("<Q")


def align_up(value: int, alignment: int = PAGE_SIZE) -> int:
    """Round value up to the next multiple of alignment."""
    return -(-value // alignment) * alignment


def pages_spanned(offset: int, length: int, page_size: int = PAGE_SIZE) -> int:
    """Number of distinct pages covering bytes [offset, offset + length)."""
    if length <= 0:
        return 0
    return (offset + length - 1) // page_size - offset // page_size + 1


def read_exact(fh: BinaryIO, size: int, path: Path | str) -> bytes:
    """
    Read exactly size bytes.

    Raises:
        StorageFormatError: If the file ends early.
    """
    data = fh.read(size)
    if len(data) != size:
        raise StorageFormatError(f"{path}: truncated (wanted {size} bytes, got {len(data)})")
    return data


def check_magic(raw: bytes, expected: bytes, path: Path | str) -> None:
    """Compare a file's leading magic against the expected one."""
    if raw != expected:
        raise StorageFormatError(f"{path}: bad magic {raw!r}, expected {expected!r}")


def check_version(version: int, path: Path | str) -> None:
    """Reject format versions this build does not read."""
    if version != FORMAT_VERSION:
        raise StorageFormatError(f"{path}: unsupported format version {version}")


def write_u64_array(fh: BinaryIO, values: np.ndarray) -> None:
    """Write an array as little-endian u64 values."""
    fh.write(np.ascontiguousarray(values, dtype=DISK_NODE_DTYPE).tobytes())


def read_u64_array(fh: BinaryIO, count: int, path: Path | str) -> np.ndarray:
    """Read count u64 values into an in-memory int64 array."""
    raw = read_exact(fh, count * DISK_NODE_DTYPE.itemsize, path)
    return np.frombuffer(raw, dtype=DISK_NODE_DTYPE).astype(NODE_DTYPE)


def write_counted_u64(fh: BinaryIO, values: np.ndarray) -> None:
    """Write a u64 length prefix followed by the values."""
    fh.write(U64.pack(len(values)))
    write_u64_array(fh, values)


def read_counted_u64(fh: BinaryIO, path: Path | str) -> np.ndarray:
    """Read a u64 length prefix and that many u64 values."""
    (count,) = U64.unpack(read_exact(fh, U64.size, path))
    return read_u64_array(fh, count, path)


def pad_to(fh: BinaryIO, offset: int) -> None:
    """Zero-fill the file up to an absolute offset."""
    position = fh.tell()
    if position > offset:
        raise StorageFormatError(f"Header overran payload offset ({position} > {offset})")
    fh.write(b"\0" * (offset - position))


class PageReader:
    """
    Positioned reads against a data file.

    Reads use ``os.pread`` so concurrent readers never share a file offset.
    With ``direct_io`` the file is opened with ``O_DIRECT`` where the platform
    allows it, and whole aligned pages are read into an anonymous
    (page-aligned) mmap buffer. Page accounting is done by the callers and is
    the same in both modes.
    """

    def __init__(self, path: Path | str, page_size: int = PAGE_SIZE, direct_io: bool = False) -> None:
        self.path = Path(path)
        self.page_size = page_size
        self.direct_io = False
        self._fd = -1

        if direct_io and hasattr(os, "O_DIRECT"):
            try:
                self._fd = os.open(self.path, os.O_RDONLY | os.O_DIRECT)
                self.direct_io = True
            except OSError as e:
                logger.warning(f"O_DIRECT unavailable for {self.path}, using buffered reads: {e}")

        if self._fd < 0:
            self._fd = os.open(self.path, os.O_RDONLY)

    def read(self, offset: int, length: int) -> bytes:
        """
        Read bytes [offset, offset + length).

        Raises:
            StorageFormatError: If the file is shorter than requested.
        """
        if length == 0:
            return b""

        if self.direct_io:
            start = offset // self.page_size * self.page_size
            end = align_up(offset + length, self.page_size)
            buf = mmap.mmap(-1, end - start)
            try:
                got = os.preadv(self._fd, [buf], start)
                lo = offset - start
                if got < lo + length:
                    raise StorageFormatError(f"{self.path}: short read at offset {offset}")
                return bytes(buf[lo:lo + length])
            finally:
                buf.close()

        data = os.pread(self._fd, length, offset)
        if len(data) != length:
            raise StorageFormatError(f"{self.path}: short read at offset {offset}")
        return data

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    def __repr__(self) -> str:
        return f"<PageReader(path='{self.path}', direct_io={self.direct_io})>"
