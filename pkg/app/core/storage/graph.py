"""
Graphfeed - Graph Store

Compressed-sparse-column adjacency: construction, persistence, and
disk-resident in-neighbor reads with page accounting.

The pointer array (indptr) is held in memory; the in-neighbor IDs
(indices) stay on disk and are fetched with positioned reads.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from core.exceptions import NodeRangeError, StorageFormatError
from core.storage.binary import (
    DISK_NODE_DTYPE,
    FORMAT_VERSION,
    NODE_DTYPE,
    PAGE_SIZE,
    PageReader,
    align_up,
    check_magic,
    check_version,
    pad_to,
    pages_spanned,
    read_exact,
    read_u64_array,
    write_u64_array,
)
from core.storage.stats import IoStats

logger = logging.getLogger(__name__)

GRAPH_MAGIC = b"GXGRAPH1"

# magic, version, reserved, num_nodes, num_edges, indices_offset
GRAPH_HEADER = struct.Struct("<8sIIQQQ")


@dataclass
class CscGraph:
    """
    In-memory CSC adjacency.

    indptr[v] .. indptr[v + 1] delimits the sorted in-neighbor list of v
    inside indices.
    """

    num_nodes: int
    indptr: np.ndarray
    indices: np.ndarray

    @property
    def num_edges(self) -> int:
        return len(self.indices)

    def in_neighbors(self, node: int) -> np.ndarray:
        if not 0 <= node < self.num_nodes:
            raise NodeRangeError(node, self.num_nodes)
        return self.indices[self.indptr[node]:self.indptr[node + 1]]

    def in_degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def out_degrees(self) -> np.ndarray:
        return np.bincount(self.indices, minlength=self.num_nodes).astype(NODE_DTYPE)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CscGraph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )


def build_csc(edges: np.ndarray | list[tuple[int, int]], num_nodes: int) -> CscGraph:
    """
    Build a CSC graph from (src, dst) pairs.

    Each node's in-neighbor list is deduplicated and sorted ascending.

    Args:
        edges: Array-like of shape (E, 2) holding (src, dst) pairs.
        num_nodes: Number of nodes; every endpoint must be below it.

    Returns:
        The CSC graph.

    Raises:
        NodeRangeError: If an endpoint is out of range.
    """
    if num_nodes < 0:
        raise ValueError(f"num_nodes must be non-negative, got {num_nodes}")

    pairs = np.asarray(edges, dtype=NODE_DTYPE).reshape(-1, 2)
    if len(pairs):
        bad = (pairs < 0) | (pairs >= num_nodes)
        if bad.any():
            row, col = np.argwhere(bad)[0]
            raise NodeRangeError(int(pairs[row, col]), num_nodes)

    # Sorting by (dst, src) groups each column and orders its in-neighbors
    order = np.lexsort((pairs[:, 0], pairs[:, 1]))
    dst = pairs[order, 1]
    src = pairs[order, 0]
    if len(order):
        first = np.ones(len(order), dtype=bool)
        first[1:] = (dst[1:] != dst[:-1]) | (src[1:] != src[:-1])
        dst, src = dst[first], src[first]

    indptr = np.zeros(num_nodes + 1, dtype=NODE_DTYPE)
    np.cumsum(np.bincount(dst, minlength=num_nodes), out=indptr[1:])

    logger.debug(f"Built CSC graph: {num_nodes} nodes, {len(src)} edges")
    return CscGraph(num_nodes=num_nodes, indptr=indptr, indices=src.astype(NODE_DTYPE))


def persist_graph(graph: CscGraph, path: Path | str) -> Path:
    """
    Write a graph to ``graph.bin`` format.

    Layout: header, indptr (num_nodes + 1 u64), zero padding, then the
    indices region starting on a page boundary.
    """
    path = Path(path)
    indices_offset = align_up(GRAPH_HEADER.size + (graph.num_nodes + 1) * DISK_NODE_DTYPE.itemsize)

    with path.open("wb") as fh:
        fh.write(GRAPH_HEADER.pack(
            GRAPH_MAGIC, FORMAT_VERSION, 0, graph.num_nodes, graph.num_edges, indices_offset,
        ))
        write_u64_array(fh, graph.indptr)
        pad_to(fh, indices_offset)
        write_u64_array(fh, graph.indices)

    logger.info(f"Wrote graph {path} ({graph.num_nodes} nodes, {graph.num_edges} edges)")
    return path


class GraphHandle:
    """
    Read handle over a persisted graph.

    Safe for concurrent readers as long as each passes its own IoStats.

    Usage:
        with open_graph("data/graph.bin") as graph:
            neighbors = graph.read_in_neighbors(42, stats)
    """

    def __init__(
        self,
        path: Path,
        num_nodes: int,
        num_edges: int,
        indptr: np.ndarray,
        indices_offset: int,
        page_size: int = PAGE_SIZE,
        direct_io: bool = False,
    ) -> None:
        self.path = path
        self.num_nodes = num_nodes
        self.num_edges = num_edges
        self.indptr = indptr
        self.indices_offset = indices_offset
        self.page_size = page_size
        self._reader = PageReader(path, page_size=page_size, direct_io=direct_io)

    def in_degree(self, node: int) -> int:
        return int(self.indptr[node + 1] - self.indptr[node])

    def in_degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def read_in_neighbors(self, node: int, stats: IoStats) -> np.ndarray:
        """
        Read one node's in-neighbor list from disk.

        Charges the distinct pages covering the list's bytes.

        Raises:
            NodeRangeError: If node is out of range.
        """
        if not 0 <= node < self.num_nodes:
            raise NodeRangeError(node, self.num_nodes)

        start = int(self.indptr[node])
        count = int(self.indptr[node + 1]) - start
        offset = self.indices_offset + start * DISK_NODE_DTYPE.itemsize
        length = count * DISK_NODE_DTYPE.itemsize

        stats.neighbor_lists_read += 1
        stats.pages_read += pages_spanned(offset, length, self.page_size)
        stats.bytes_read += length

        raw = self._reader.read(offset, length)
        return np.frombuffer(raw, dtype=DISK_NODE_DTYPE).astype(NODE_DTYPE)

    def _indices_view(self) -> np.ndarray:
        if self.num_edges == 0:
            return np.zeros(0, dtype=DISK_NODE_DTYPE)
        return np.memmap(
            self.path, dtype=DISK_NODE_DTYPE, mode="r",
            offset=self.indices_offset, shape=(self.num_edges,),
        )

    def out_degrees(self) -> np.ndarray:
        """Out-degree of every node, from a sequential scan of indices."""
        indices = np.asarray(self._indices_view()).astype(NODE_DTYPE)
        return np.bincount(indices, minlength=self.num_nodes).astype(NODE_DTYPE)

    def load(self) -> CscGraph:
        """Load the whole graph into memory (offline preprocessing only)."""
        indices = np.asarray(self._indices_view()).astype(NODE_DTYPE)
        return CscGraph(num_nodes=self.num_nodes, indptr=self.indptr.copy(), indices=indices)

    def close(self) -> None:
        self._reader.close()

    def __enter__(self) -> GraphHandle:
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def __repr__(self) -> str:
        return f"<GraphHandle(path='{self.path}', nodes={self.num_nodes}, edges={self.num_edges})>"


def open_graph(path: Path | str, page_size: int = PAGE_SIZE, direct_io: bool = False) -> GraphHandle:
    """
    Open a persisted graph, loading indptr into memory.

    Raises:
        StorageFormatError: On bad magic, unsupported version or truncation.
    """
    path = Path(path)
    with path.open("rb") as fh:
        magic, version, _, num_nodes, num_edges, indices_offset = GRAPH_HEADER.unpack(
            read_exact(fh, GRAPH_HEADER.size, path)
        )
        check_magic(magic, GRAPH_MAGIC, path)
        check_version(version, path)
        indptr = read_u64_array(fh, num_nodes + 1, path)

    if indptr[0] != 0 or indptr[-1] != num_edges or np.any(np.diff(indptr) < 0):
        raise StorageFormatError(f"{path}: inconsistent indptr")

    expected_size = indices_offset + num_edges * DISK_NODE_DTYPE.itemsize
    if path.stat().st_size < expected_size:
        raise StorageFormatError(f"{path}: truncated (expected at least {expected_size} bytes)")

    return GraphHandle(
        path=path,
        num_nodes=num_nodes,
        num_edges=num_edges,
        indptr=indptr,
        indices_offset=indices_offset,
        page_size=page_size,
        direct_io=direct_io,
    )
