"""
Graphfeed - Neighborhood Sampler

Multi-layer uniform neighborhood sampling, seed planning, and the
superbatch sample stage that writes per-batch runtime files.

Determinism: every batch draws from its own generator seeded by
(global_seed, global_batch_index), so outputs do not depend on the
worker pool or on neighbor-cache hits.
"""
from __future__ import annotations

import logging
import math
from collections.abc import Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from core.exceptions import ConfigurationError, NodeRangeError
from core.storage import GraphHandle, IoStats, RuntimeDirectory
from core.storage.binary import NODE_DTYPE

if TYPE_CHECKING:
    from services.neighbor_cache import NeighborCache

logger = logging.getLogger(__name__)

Fanouts = tuple[int, ...]


def validate_fanouts(fanouts: Sequence[int]) -> Fanouts:
    """Normalize fanouts to a tuple; every hop samples at least one neighbor."""
    fanouts = tuple(int(f) for f in fanouts)
    if not fanouts:
        raise ConfigurationError("Fanouts must name at least one layer")
    if any(f < 1 for f in fanouts):
        raise ConfigurationError(f"Fanouts must all be >= 1, got {fanouts}")
    return fanouts


def make_generator(entropy: int | Sequence[int]) -> np.random.Generator:
    """PCG64 generator for a seed or a (seed, index) tuple."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


# =============================================================================
# Seed Planning
# =============================================================================


@dataclass
class SeedPlan:
    """Ordered partition of the training nodes into seed batches."""

    batch_size: int
    batches: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.batches)

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.batches)

    def __getitem__(self, index: int) -> np.ndarray:
        return self.batches[index]

    def superbatches(self, size: int) -> Iterator[tuple[int, list[np.ndarray]]]:
        """Yield (first batch index, batches) for consecutive groups of size."""
        for start in range(0, len(self.batches), size):
            yield start, self.batches[start:start + size]

    @property
    def num_seeds(self) -> int:
        return sum(len(b) for b in self.batches)


def select_training_nodes(num_nodes: int, train_fraction: float, global_seed: int) -> np.ndarray:
    """
    Seeded subset of ceil(train_fraction * num_nodes) nodes, sorted ascending.

    A fraction of 1.0 selects every node.
    """
    if not 0.0 < train_fraction <= 1.0:
        raise ConfigurationError(f"train_fraction must be in (0, 1], got {train_fraction}")

    count = math.ceil(train_fraction * num_nodes)
    if count >= num_nodes:
        return np.arange(num_nodes, dtype=NODE_DTYPE)

    rng = make_generator(global_seed)
    return np.sort(rng.choice(num_nodes, size=count, replace=False)).astype(NODE_DTYPE)


def plan_seed_batches(
    train_ids: np.ndarray | Sequence[int],
    batch_size: int,
    epoch_seed: int | Sequence[int],
) -> SeedPlan:
    """
    Shuffle the training nodes and cut them into batches.

    Args:
        train_ids: Training node IDs.
        batch_size: Seeds per batch; the last batch may be short.
        epoch_seed: Seed material for the shuffle, typically (global_seed, epoch).

    Returns:
        ceil(len(train_ids) / batch_size) disjoint batches covering train_ids.

    Raises:
        ConfigurationError: On an empty training set or batch_size < 1.
    """
    if batch_size < 1:
        raise ConfigurationError(f"batch_size must be >= 1, got {batch_size}")

    train_ids = np.asarray(train_ids, dtype=NODE_DTYPE)
    if len(train_ids) == 0:
        raise ConfigurationError("Training set is empty")

    shuffled = make_generator(epoch_seed).permutation(train_ids)
    batches = [shuffled[i:i + batch_size] for i in range(0, len(shuffled), batch_size)]
    return SeedPlan(batch_size=batch_size, batches=batches)


# =============================================================================
# Batch Sampling
# =============================================================================


@dataclass
class SampleOutput:
    """
    Sampled computational graph of one batch.

    ids holds the seeds first, then newly discovered nodes in discovery
    order. adj[l] is an (E, 2) array of (src_local, dst_local) edges of hop
    l, where dst is the node being expanded and src the sampled in-neighbor.
    """

    ids: np.ndarray
    adj: list[np.ndarray]

    @property
    def num_edges(self) -> int:
        return sum(len(layer) for layer in self.adj)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SampleOutput):
            return NotImplemented
        return (
            np.array_equal(self.ids, other.ids)
            and len(self.adj) == len(other.adj)
            and all(np.array_equal(a, b) for a, b in zip(self.adj, other.adj))
        )


def _pick_neighbors(neighbors: np.ndarray, fanout: int, rng: np.random.Generator) -> np.ndarray:
    """Partial Fisher-Yates: the first min(fanout, degree) slots of a shuffle."""
    degree = len(neighbors)
    if degree <= fanout:
        return neighbors
    pool = neighbors.copy()
    draws = rng.integers(np.arange(fanout), degree)
    for j, k in enumerate(draws.tolist()):
        pool[j], pool[k] = pool[k], pool[j]
    return pool[:fanout]


def _fetch_neighbors(
    graph: GraphHandle,
    neighbor_cache: NeighborCache | None,
    node: int,
    stats: IoStats,
) -> np.ndarray:
    if neighbor_cache is not None:
        cached = neighbor_cache.lookup(node)
        if cached is not None:
            return cached
    return graph.read_in_neighbors(node, stats)


def sample_batch(
    graph: GraphHandle,
    neighbor_cache: NeighborCache | None,
    seeds: np.ndarray | Sequence[int],
    fanouts: Sequence[int],
    batch_seed: int | Sequence[int],
    stats: IoStats,
) -> SampleOutput:
    """
    Sample the k-hop computational graph of a batch.

    Hop l expands every distinct node selected in hop l - 1 (the seeds for
    hop 0), in first-selection order, whether or not it was already in ids,
    drawing min(fanouts[l], in_degree) distinct in-neighbors per node.
    Neighbor lists come from the neighbor cache on a hit, else from disk.

    Raises:
        NodeRangeError: If a seed is out of range.
        ValueError: If seeds are empty or repeated.
    """
    seeds = np.asarray(seeds, dtype=NODE_DTYPE)
    fanouts = validate_fanouts(fanouts)
    if len(seeds) == 0:
        raise ValueError("Cannot sample an empty batch")
    out_of_range = (seeds < 0) | (seeds >= graph.num_nodes)
    if out_of_range.any():
        raise NodeRangeError(int(seeds[out_of_range][0]), graph.num_nodes)

    ids: list[int] = seeds.tolist()
    local = {node: i for i, node in enumerate(ids)}
    if len(local) != len(ids):
        raise ValueError("Seeds must be distinct")

    rng = make_generator(batch_seed)
    frontier = list(ids)
    adj = []

    for fanout in fanouts:
        src_local: list[int] = []
        dst_local: list[int] = []
        selected: dict[int, None] = {}

        for node in frontier:
            if graph.in_degree(node) == 0:
                continue
            picked = _pick_neighbors(_fetch_neighbors(graph, neighbor_cache, node, stats), fanout, rng)
            parent = local[node]
            for neighbor in picked.tolist():
                child = local.get(neighbor)
                if child is None:
                    child = len(ids)
                    local[neighbor] = child
                    ids.append(neighbor)
                selected.setdefault(neighbor)
                src_local.append(child)
                dst_local.append(parent)

        adj.append(np.column_stack((
            np.asarray(src_local, dtype=NODE_DTYPE),
            np.asarray(dst_local, dtype=NODE_DTYPE),
        )))
        frontier = list(selected)

    return SampleOutput(ids=np.asarray(ids, dtype=NODE_DTYPE), adj=adj)


# =============================================================================
# Superbatch Sample Stage
# =============================================================================


@dataclass
class SampleStageResult:
    """Outcome of sampling one superbatch."""

    superbatch: int
    num_batches: int
    files: list[Path]
    stats: IoStats
    accesses: int = 0
    edges: int = 0


def superbatch_sample(
    graph: GraphHandle,
    neighbor_cache: NeighborCache | None,
    runtime: RuntimeDirectory,
    superbatch: int,
    seed_batches: Sequence[np.ndarray],
    *,
    fanouts: Sequence[int],
    global_seed: int,
    first_batch_index: int,
    workers: int = 1,
) -> SampleStageResult:
    """
    Sample every batch of a superbatch and write ids/adj runtime files.

    Each job writes its own two files; 2 x len(seed_batches) files in total.

    Args:
        graph: Open graph handle (indptr in memory).
        neighbor_cache: Loaded neighbor cache, or None to read every list from disk.
        runtime: Runtime directory receiving the files.
        superbatch: Superbatch index used in file names.
        seed_batches: Seed arrays of this superbatch, in batch order.
        fanouts: Per-hop sample counts.
        global_seed: Run seed.
        first_batch_index: Global index of seed_batches[0]; batch i is
            seeded with (global_seed, first_batch_index + i).
        workers: Sampling threads.

    Returns:
        Written files and merged I/O counters.
    """
    fanouts = validate_fanouts(fanouts)

    def job(i: int, seeds: np.ndarray) -> tuple[IoStats, int, int]:
        stats = IoStats()
        output = sample_batch(
            graph, neighbor_cache, seeds, fanouts, (global_seed, first_batch_index + i), stats,
        )
        runtime.write_ids(superbatch, i, output.ids)
        runtime.write_adj(superbatch, i, output.adj)
        return stats, len(output.ids), output.num_edges

    if workers <= 1 or len(seed_batches) <= 1:
        results = [job(i, seeds) for i, seeds in enumerate(seed_batches)]
    else:
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="sampler") as executor:
            futures = [executor.submit(job, i, seeds) for i, seeds in enumerate(seed_batches)]
            results = [future.result() for future in futures]

    stats = IoStats()
    accesses = 0
    edges = 0
    files = []
    for i, (job_stats, count, num_edges) in enumerate(results):
        stats.merge(job_stats)
        accesses += count
        edges += num_edges
        files.extend([runtime.ids_path(superbatch, i), runtime.adj_path(superbatch, i)])

    logger.info(
        f"Sampled superbatch {superbatch}: {len(seed_batches)} batches, "
        f"{accesses} sampled nodes, {edges} edges, {stats.neighbor_lists_read} lists from disk"
    )
    return SampleStageResult(
        superbatch=superbatch,
        num_batches=len(seed_batches),
        files=files,
        stats=stats,
        accesses=accesses,
        edges=edges,
    )
