"""
Graphfeed - Neighbor Cache

Static, direct-addressed cache of in-neighbor lists for important nodes.

Built once during preprocessing, dumped to ``ncache.bin`` and reloaded
at each superbatch sample stage.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from core.exceptions import CacheBudgetError, NodeRangeError
from core.storage.binary import check_magic, read_exact
from core.storage.graph import CscGraph, GraphHandle

logger = logging.getLogger(__name__)

NCACHE_MAGIC = b"GXNCACH1"
NCACHE_HEADER = struct.Struct("<8sQQ")

# Byte accounting: one 8-byte slot per address-table entry and per region word
ENTRY_BYTES = 8

ADDRESS_DTYPE = np.dtype("<i8")
CACHE_ARRAY_DTYPE = np.dtype("<u8")


class DegreeSource(Protocol):
    num_nodes: int

    def in_degrees(self) -> np.ndarray: ...

    def out_degrees(self) -> np.ndarray: ...


@dataclass
class NeighborCache:
    """
    Direct-addressed in-neighbor cache.

    address_table[v] >= 0 is the offset of v's region in cache_array; the
    region is [count, neighbor_0, ..., neighbor_{count-1}]. A negative entry
    is a miss.
    """

    address_table: np.ndarray
    cache_array: np.ndarray

    @property
    def num_nodes(self) -> int:
        return len(self.address_table)

    @property
    def num_cached(self) -> int:
        return int(np.count_nonzero(self.address_table >= 0))

    @property
    def size_bytes(self) -> int:
        return (len(self.address_table) + len(self.cache_array)) * ENTRY_BYTES

    def cached_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.address_table >= 0)

    def lookup(self, node: int) -> np.ndarray | None:
        """
        Return node's in-neighbor list, or None on a miss.

        A hit costs three memory accesses: the address table, the count,
        then the neighbor slice.
        """
        if not 0 <= node < len(self.address_table):
            raise NodeRangeError(node, len(self.address_table))
        offset = int(self.address_table[node])
        if offset < 0:
            return None
        count = int(self.cache_array[offset])
        return self.cache_array[offset + 1:offset + 1 + count].astype(np.int64)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, NeighborCache):
            return NotImplemented
        return (
            np.array_equal(self.address_table, other.address_table)
            and np.array_equal(self.cache_array, other.cache_array)
        )

    def __repr__(self) -> str:
        return f"<NeighborCache(cached={self.num_cached}/{self.num_nodes}, bytes={self.size_bytes})>"


def score_nodes(graph: DegreeSource) -> np.ndarray:
    """
    Importance of caching each node's in-neighbor list.

    score(v) = out_degree(v) / in_degree(v). Nodes with no in-neighbors
    have nothing to cache and score NaN (excluded).
    """
    in_deg = graph.in_degrees().astype(np.float64)
    out_deg = graph.out_degrees().astype(np.float64)
    scores = np.full(graph.num_nodes, np.nan)
    has_in = in_deg > 0
    scores[has_in] = out_deg[has_in] / in_deg[has_in]
    return scores


def admission_order(scores: np.ndarray) -> np.ndarray:
    """Eligible nodes by descending score, ties by ascending NodeId."""
    eligible = np.flatnonzero(~np.isnan(scores))
    order = np.lexsort((eligible, -scores[eligible]))
    return eligible[order]


def build_neighbor_cache(graph: CscGraph | GraphHandle, budget_bytes: int) -> NeighborCache:
    """
    Build the cache greedily under a byte budget.

    Nodes are admitted in admission_order while the address table plus the
    admitted regions fit the budget. A node whose region alone would overflow
    the remaining budget is skipped and admission continues.

    Args:
        graph: In-memory graph, or a handle that is loaded into memory.
        budget_bytes: Total bytes for address table and cache array.

    Returns:
        The built cache.

    Raises:
        CacheBudgetError: If the budget cannot hold the address table.
    """
    if isinstance(graph, GraphHandle):
        graph = graph.load()

    table_bytes = graph.num_nodes * ENTRY_BYTES
    if budget_bytes < table_bytes:
        raise CacheBudgetError(
            f"Budget {budget_bytes} B is below the address table size {table_bytes} B"
        )

    in_deg = graph.in_degrees()
    remaining = budget_bytes - table_bytes
    admitted: list[int] = []
    skipped = 0

    for node in admission_order(score_nodes(graph)).tolist():
        region = (1 + int(in_deg[node])) * ENTRY_BYTES
        if region <= remaining:
            admitted.append(node)
            remaining -= region
        else:
            skipped += 1
        if remaining < 2 * ENTRY_BYTES:
            break

    address_table = np.full(graph.num_nodes, -1, dtype=ADDRESS_DTYPE)
    regions = []
    offset = 0
    for node in admitted:
        neighbors = graph.in_neighbors(node)
        address_table[node] = offset
        regions.append(np.concatenate(([len(neighbors)], neighbors)))
        offset += 1 + len(neighbors)

    cache_array = (
        np.concatenate(regions).astype(CACHE_ARRAY_DTYPE) if regions
        else np.zeros(0, dtype=CACHE_ARRAY_DTYPE)
    )

    cache = NeighborCache(address_table=address_table, cache_array=cache_array)
    if skipped:
        logger.debug(f"Neighbor cache skipped {skipped} nodes whose regions overflowed the budget")
    logger.info(f"Built {cache!r} under a {budget_bytes} B budget")
    return cache


def persist_neighbor_cache(cache: NeighborCache, path: Path | str) -> Path:
    """Dump the cache: header, address table (i64), cache array (u64)."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(NCACHE_HEADER.pack(NCACHE_MAGIC, cache.num_nodes, len(cache.cache_array)))
        fh.write(np.ascontiguousarray(cache.address_table, dtype=ADDRESS_DTYPE).tobytes())
        fh.write(np.ascontiguousarray(cache.cache_array, dtype=CACHE_ARRAY_DTYPE).tobytes())
    logger.info(f"Saved neighbor cache to {path}")
    return path


def load_neighbor_cache(path: Path | str) -> NeighborCache:
    """
    Load a dumped cache with two bulk sequential reads.

    Raises:
        StorageFormatError: On bad magic or truncation.
    """
    path = Path(path)
    with path.open("rb") as fh:
        magic, num_nodes, array_len = NCACHE_HEADER.unpack(read_exact(fh, NCACHE_HEADER.size, path))
        check_magic(magic, NCACHE_MAGIC, path)
        address_table = np.frombuffer(
            read_exact(fh, num_nodes * ADDRESS_DTYPE.itemsize, path), dtype=ADDRESS_DTYPE,
        ).copy()
        cache_array = np.frombuffer(
            read_exact(fh, array_len * CACHE_ARRAY_DTYPE.itemsize, path), dtype=CACHE_ARRAY_DTYPE,
        ).copy()
    return NeighborCache(address_table=address_table, cache_array=cache_array)


__all__ = [
    "ENTRY_BYTES",
    "NeighborCache",
    "admission_order",
    "build_neighbor_cache",
    "load_neighbor_cache",
    "persist_neighbor_cache",
    "score_nodes",
]
