"""
Graphfeed - Feature Store

Fixed-width float32 feature table on disk, read row by row with
per-row page accounting (no coalescing across rows, which models
independent random reads on the device).
"""
from __future__ import annotations

import logging
import struct
from collections.abc import Iterable
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from core.exceptions import NodeRangeError, StorageFormatError
from core.storage.binary import (
    FORMAT_VERSION,
    NODE_DTYPE,
    PAGE_SIZE,
    SCALAR_DTYPE,
    PageReader,
    check_magic,
    check_version,
    pad_to,
    read_exact,
)
from core.storage.stats import IoStats, page_count_for_row

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"GXFEAT01"

# magic, version, reserved, num_nodes, dim, scalar_width, payload_offset
FEATURE_HEADER = struct.Struct("<8sIIQIIQ")


def persist_features(
    path: Path | str,
    num_nodes: int,
    dim: int,
    chunks: np.ndarray | Iterable[np.ndarray],
) -> Path:
    """
    Write a feature table to ``features.bin`` format.

    Args:
        path: Destination file.
        num_nodes: Number of rows.
        dim: Scalars per row.
        chunks: Either the full (num_nodes, dim) matrix or an iterable of
            row blocks, written in order.

    Returns:
        The written path.

    Raises:
        ValueError: If the rows written do not add up to num_nodes.
    """
    if dim <= 0:
        raise ValueError(f"dim must be positive, got {dim}")

    path = Path(path)
    if isinstance(chunks, np.ndarray):
        chunks = [chunks]

    rows_written = 0
    with path.open("wb") as fh:
        fh.write(FEATURE_HEADER.pack(
            FEATURE_MAGIC, FORMAT_VERSION, 0, num_nodes, dim, SCALAR_DTYPE.itemsize, PAGE_SIZE,
        ))
        pad_to(fh, PAGE_SIZE)
        for block in chunks:
            block = np.asarray(block, dtype=SCALAR_DTYPE).reshape(-1, dim)
            fh.write(np.ascontiguousarray(block).tobytes())
            rows_written += len(block)

    if rows_written != num_nodes:
        raise ValueError(f"Wrote {rows_written} feature rows, expected {num_nodes}")

    logger.info(f"Wrote features {path} ({num_nodes} x {dim})")
    return path


class FeatureStore:
    """
    Read handle over a persisted feature table.

    Row i occupies bytes [i * row_bytes, (i + 1) * row_bytes) of the
    payload region, which starts on a page boundary.
    """

    def __init__(
        self,
        path: Path,
        num_nodes: int,
        dim: int,
        scalar_width: int,
        payload_offset: int,
        page_size: int = PAGE_SIZE,
        direct_io: bool = False,
    ) -> None:
        self.path = path
        self.num_nodes = num_nodes
        self.dim = dim
        self.scalar_width = scalar_width
        self.row_bytes = dim * scalar_width
        self.payload_offset = payload_offset
        self.page_size = page_size
        self._reader = PageReader(path, page_size=page_size, direct_io=direct_io)

    def check_range(self, ids: np.ndarray) -> None:
        bad = (ids < 0) | (ids >= self.num_nodes)
        if bad.any():
            raise NodeRangeError(int(ids[bad][0]), self.num_nodes)

    def read_rows_into(self, out: np.ndarray, rows: np.ndarray, ids: np.ndarray, stats: IoStats) -> None:
        """
        Read ids[k] into out[rows[k]] for every k.

        Each row is one positioned read charged its own page count.
        """
        for row, node in zip(rows.tolist(), ids.tolist()):
            offset = self.payload_offset + node * self.row_bytes
            raw = self._reader.read(offset, self.row_bytes)
            out[row] = np.frombuffer(raw, dtype=SCALAR_DTYPE)
            stats.rows_read += 1
            stats.pages_read += page_count_for_row(self.row_bytes, node, self.page_size)
            stats.bytes_read += self.row_bytes

    def read_feature_rows(self, ids: np.ndarray | list[int], stats: IoStats, workers: int = 1) -> np.ndarray:
        """
        Gather rows for ids into a new (len(ids), dim) buffer.

        Args:
            ids: Node IDs; output row k holds ids[k].
            stats: Counters charged with the reads.
            workers: Parallel read workers; each writes disjoint output rows.

        Returns:
            float32 matrix in ids order.

        Raises:
            NodeRangeError: If an id is out of range.
        """
        ids = np.asarray(ids, dtype=NODE_DTYPE)
        self.check_range(ids)
        out = np.empty((len(ids), self.dim), dtype=SCALAR_DTYPE)
        self.fill_rows(out, np.arange(len(ids)), ids, stats, workers=workers)
        return out

    def fill_rows(
        self,
        out: np.ndarray,
        rows: np.ndarray,
        ids: np.ndarray,
        stats: IoStats,
        workers: int = 1,
    ) -> None:
        """Read ids into the given rows of out, optionally with a thread pool."""
        if workers <= 1 or len(ids) < 2 * workers:
            self.read_rows_into(out, rows, ids, stats)
            return

        row_chunks = np.array_split(rows, workers)
        id_chunks = np.array_split(ids, workers)
        worker_stats = [IoStats() for _ in range(workers)]

        with ThreadPoolExecutor(max_workers=workers) as executor:
            futures = [
                executor.submit(self.read_rows_into, out, r, i, s)
                for r, i, s in zip(row_chunks, id_chunks, worker_stats)
            ]
            for future in futures:
                future.result()

        for worker in worker_stats:
            stats.merge(worker)

    def close(self) -> None:
        self._reader.close()

    def __enter__(self) -> FeatureStore:
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def __repr__(self) -> str:
        return f"<FeatureStore(path='{self.path}', nodes={self.num_nodes}, dim={self.dim})>"


def open_features(path: Path | str, page_size: int = PAGE_SIZE, direct_io: bool = False) -> FeatureStore:
    """
    Open a persisted feature table.

    Raises:
        StorageFormatError: On bad magic, unsupported version or truncation.
    """
    path = Path(path)
    with path.open("rb") as fh:
        magic, version, _, num_nodes, dim, scalar_width, payload_offset = FEATURE_HEADER.unpack(
            read_exact(fh, FEATURE_HEADER.size, path)
        )
    check_magic(magic, FEATURE_MAGIC, path)
    check_version(version, path)

    if scalar_width != SCALAR_DTYPE.itemsize:
        raise StorageFormatError(f"{path}: unsupported scalar width {scalar_width}")
    if payload_offset % page_size:
        raise StorageFormatError(f"{path}: payload offset {payload_offset} not page-aligned")

    expected_size = payload_offset + num_nodes * dim * scalar_width
    if path.stat().st_size < expected_size:
        raise StorageFormatError(f"{path}: truncated (expected {expected_size} bytes)")

    return FeatureStore(
        path=path,
        num_nodes=num_nodes,
        dim=dim,
        scalar_width=scalar_width,
        payload_offset=payload_offset,
        page_size=page_size,
        direct_io=direct_io,
    )
