"""
Graphfeed - Feature Cache

Executor-side feature cache: direct-addressed rows, gather into a
contiguous batch buffer, and in-place changeset application.

Rebuilt for every superbatch from its init file.
"""
from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from core.exceptions import ChangesetError
from core.storage import FeatureStore, IoStats
from core.storage.binary import NODE_DTYPE, SCALAR_DTYPE
from services.changeset import Changeset

logger = logging.getLogger(__name__)


@dataclass
class BatchFeatures:
    """Gathered rows of one iteration, row k for ids[k]."""

    rows: np.ndarray
    hits: int = 0
    misses: int = 0

    def __len__(self) -> int:
        return len(self.rows)


class FeatureCache:
    """
    Dynamic feature cache of num_entries rows.

    address_table[v] = r >= 0 means cache_rows[r] holds v's features.
    Rows not mapped by any node are on the free_slots stack.
    """

    def __init__(self, num_nodes: int, num_entries: int, dim: int) -> None:
        if num_entries < 0:
            raise ValueError(f"num_entries must be >= 0, got {num_entries}")
        self.num_entries = num_entries
        self.dim = dim
        self.address_table = np.full(num_nodes, -1, dtype=np.int64)
        self.cache_rows = np.empty((num_entries, dim), dtype=SCALAR_DTYPE)
        # Popped from the end, so row 0 is handed out first
        self.free_slots: list[int] = list(range(num_entries - 1, -1, -1))

    @property
    def num_resident(self) -> int:
        return self.num_entries - len(self.free_slots)

    def resident_nodes(self) -> np.ndarray:
        """Sorted NodeIds currently cached."""
        return np.flatnonzero(self.address_table >= 0)

    def lookup(self, node: int) -> np.ndarray | None:
        slot = self.address_table[node]
        if slot < 0:
            return None
        return self.cache_rows[slot]

    def check_invariants(self) -> None:
        """
        Raises:
            ChangesetError: If occupied and free rows do not partition the cache.
        """
        occupied = self.address_table[self.address_table >= 0]
        if len(np.unique(occupied)) != len(occupied):
            raise ChangesetError("Two nodes share a cache row")
        rows = np.concatenate((occupied, np.asarray(self.free_slots, dtype=np.int64)))
        if not np.array_equal(np.sort(rows), np.arange(self.num_entries)):
            raise ChangesetError("Occupied and free rows do not partition the cache")

    def gather(
        self,
        store: FeatureStore,
        ids: np.ndarray | Sequence[int],
        stats: IoStats,
        workers: int = 1,
    ) -> BatchFeatures:
        """
        Collect the rows of ids into a new batch buffer.

        Hits are copied from the cache, misses read from the store.

        Raises:
            NodeRangeError: If an id is out of range.
        """
        ids = np.asarray(ids, dtype=NODE_DTYPE)
        store.check_range(ids)

        rows = np.empty((len(ids), self.dim), dtype=SCALAR_DTYPE)
        slots = self.address_table[ids]
        hit = slots >= 0
        rows[hit] = self.cache_rows[slots[hit]]

        miss_rows = np.flatnonzero(~hit)
        store.fill_rows(rows, miss_rows, ids[miss_rows], stats, workers=workers)

        return BatchFeatures(rows=rows, hits=int(hit.sum()), misses=len(miss_rows))

    def apply_changeset(self, batch: BatchFeatures, ids: np.ndarray, changeset: Changeset) -> None:
        """
        Evict out_ids and insert in_ids from the batch buffer.

        Inserted rows take the evicted slots first (in out_ids order), then
        the free list. Nothing is re-read from disk.

        Raises:
            ChangesetError: If an in_id is already cached, an out_id is not
                cached, or in_positions do not match ids.
        """
        ids = np.asarray(ids, dtype=NODE_DTYPE)
        changeset.check_against(ids)

        in_ids = changeset.in_ids
        out_ids = changeset.out_ids
        if (self.address_table[in_ids] >= 0).any():
            raise ChangesetError("Changeset inserts a node that is already cached")
        evicted = self.address_table[out_ids]
        if (evicted < 0).any():
            raise ChangesetError("Changeset evicts a node that is not cached")
        if len(in_ids) > len(evicted) + len(self.free_slots):
            raise ChangesetError(
                f"Changeset inserts {len(in_ids)} rows with {len(evicted) + len(self.free_slots)} available"
            )

        self.address_table[out_ids] = -1

        reused = evicted[:len(in_ids)].tolist()
        self.free_slots.extend(reversed(evicted[len(in_ids):].tolist()))
        targets = reused + [self.free_slots.pop() for _ in range(len(in_ids) - len(reused))]

        targets = np.asarray(targets, dtype=np.int64)
        self.cache_rows[targets] = batch.rows[changeset.in_positions]
        self.address_table[in_ids] = targets

    def __repr__(self) -> str:
        return f"<FeatureCache(resident={self.num_resident}/{self.num_entries}, dim={self.dim})>"


def init_feature_cache(
    store: FeatureStore,
    init_ids: np.ndarray | Sequence[int],
    num_entries: int,
    stats: IoStats,
    workers: int = 1,
) -> FeatureCache:
    """
    Prefetch init_ids into a fresh cache; row k holds init_ids[k].

    Raises:
        ChangesetError: If init_ids repeat a node or exceed num_entries.
        NodeRangeError: If an id is out of range.
    """
    init_ids = np.asarray(init_ids, dtype=NODE_DTYPE)
    if len(init_ids) > num_entries:
        raise ChangesetError(f"Init set of {len(init_ids)} nodes exceeds {num_entries} entries")
    if len(np.unique(init_ids)) != len(init_ids):
        raise ChangesetError("Init set repeats a node")
    store.check_range(init_ids)

    cache = FeatureCache(store.num_nodes, num_entries, store.dim)
    rows = np.arange(len(init_ids))
    store.fill_rows(cache.cache_rows, rows, init_ids, stats, workers=workers)
    cache.address_table[init_ids] = rows
    del cache.free_slots[len(cache.free_slots) - len(init_ids):]

    logger.debug(f"Initialized {cache!r}")
    return cache
